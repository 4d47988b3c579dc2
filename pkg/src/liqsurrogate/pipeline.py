"""End-to-end batch pipeline driven by a TOML config.

Stages, in dependency order::

    standardize -> curves -> train -> predict -> krige -> [event] -> [evaluate]

Every stage declares its input files and parameters. A stage is skipped
when the SHA-256 of all inputs and parameters matches the cache entry and
its recorded outputs are still present with their recorded hashes. The
manifest (artifacts, input hashes, seeds) is written atomically only after
all stages succeed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cpt as cptmod
from .curves import LoadingArray, read_curve_table, site_curves, write_curve_table
from .errors import ConfigError, LiqError, SchemaMismatch, StageError
from .evalkit import compare_models, read_cases
from .forward import load_fragility, run_event
from .geostat import NEIGHBORHOOD_M, SemivariogramModel, field_from_stations, read_stations, update_raster, write_stations
from .indices import MIKind
from .raster import AbRaster, BandKind, Geometry, Mask, MaskSet, apply_masks, read_abgrid, write_abgrid
from .surrogate import (
    TrainingSet,
    augment_groundwater,
    density_weights,
    grid_search,
    impute_table,
    kfold_assign,
    make_grid,
    oof_predictions,
    read_feature_table,
    save_model,
    train_bagged,
)
from .surrogate.modelio import load_model

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)

CACHE_NAME = ".liq_cache.json"
MANIFEST_NAME = "manifest.json"


def resolve_jobs(jobs=None) -> int:
    if jobs:
        return max(1, int(jobs))
    env = os.environ.get("LIQ_JOBS")
    return max(1, int(env)) if env else 1


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write_text(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def _opt_depth(v):
    if v is None or (isinstance(v, str) and v.lower() in ("none", "inf", "unlimited")) or v == -1:
        return None
    return int(v)


@dataclass
class PipelineConfig:
    base: Path
    cpt_dir: Path
    features: Path
    grid_features: Path
    out_dir: Path
    template: Path | None = None
    grid: Geometry | None = None
    masks: tuple = ()
    fragility: Path | None = None
    shakemap: str | None = None
    cases: Path | None = None
    kinds: tuple = (MIKind.LPI,)
    region: str = "global"
    seed: int = 0
    jobs: int = 1
    interval: float = cptmod.DEFAULT_INTERVAL
    loading: LoadingArray = field(default_factory=LoadingArray.default)
    grid_search: dict = field(default_factory=lambda: {"n_trees": [50], "min_leaf": [5], "max_depth": [None]})
    folds: int = 10
    augment: bool = True
    gwt_max: float = 50.0
    density_radius: float = 1000.0
    density_floor: float = 0.5
    krige_model: dict | None = None
    fix_nugget_zero: bool = True
    ensemble: bool = False
    control: str | None = None
    reps: int = 10000
    level: float = 0.99

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text())
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw, path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base=Path(".")) -> "PipelineConfig":
        base = Path(base).resolve()
        paths = raw.get("paths", {})

        def p(key, required=True):
            v = paths.get(key)
            if v is None:
                if required:
                    raise ConfigError(f"[paths] {key} is required")
                return None
            return (base / v).resolve()

        if "seed" not in raw:
            raise ConfigError("an explicit top-level seed is required")
        grid = None
        if "grid" in raw:
            g = raw["grid"]
            grid = Geometry(int(g["width"]), int(g["height"]), float(g["west"]), float(g["north"]), float(g.get("cell_size", 0.000833)))
        template = p("template", required=False)
        if grid is None and template is None:
            raise ConfigError("give either [paths] template or a [grid] block")
        load = raw.get("loading", {})
        loading = LoadingArray(tuple(load["pga"]), tuple(load["magnitude"])) if load else LoadingArray.default()
        train = raw.get("train", {})
        gs = {
            "n_trees": [int(v) for v in train.get("n_trees", [50])],
            "min_leaf": [int(v) for v in train.get("min_leaf", [5])],
            "max_depth": [_opt_depth(v) for v in train.get("max_depth", ["none"])],
        }
        krige = raw.get("krige", {})
        ev = raw.get("evaluate", {})
        shakemap = paths.get("shakemap")
        if shakemap and not str(shakemap).startswith(("http://", "https://")):
            shakemap = str((base / shakemap).resolve())
        cfg = cls(
            base=base,
            cpt_dir=p("cpt_dir"),
            features=p("features"),
            grid_features=p("grid_features"),
            out_dir=p("out_dir"),
            template=template,
            grid=grid,
            masks=tuple((base / m).resolve() for m in paths.get("masks", [])),
            fragility=p("fragility", required=False),
            shakemap=shakemap,
            cases=p("cases", required=False),
            kinds=tuple(MIKind.parse(k) for k in raw.get("kinds", ["lpi"])),
            region=str(raw.get("region", "global")),
            seed=int(raw["seed"]),
            jobs=int(raw.get("jobs", 1)),
            interval=float(raw.get("interval", cptmod.DEFAULT_INTERVAL)),
            loading=loading,
            grid_search=gs,
            folds=int(train.get("folds", 10)),
            augment=bool(train.get("augment", True)),
            gwt_max=float(train.get("gwt_max", 50.0)),
            density_radius=float(train.get("density_radius", 1000.0)),
            density_floor=float(train.get("density_floor", 0.5)),
            krige_model=krige.get("model"),
            fix_nugget_zero=bool(krige.get("fix_nugget_zero", True)),
            ensemble=bool(raw.get("event", {}).get("ensemble", False)),
            control=ev.get("control"),
            reps=int(ev.get("reps", 10000)),
            level=float(ev.get("level", 0.99)),
        )
        cfg.validate()
        return cfg

    def validate(self):
        if self.region not in ("global", "nz"):
            raise ConfigError(f"region must be 'global' or 'nz', got {self.region!r}")
        for label, path in (("cpt_dir", self.cpt_dir), ("features", self.features), ("grid_features", self.grid_features)):
            if not path.exists():
                raise ConfigError(f"{label} {path} does not exist")
        for label, path in (("template", self.template), ("fragility", self.fragility), ("cases", self.cases)):
            if path is not None and not path.exists():
                raise ConfigError(f"{label} {path} does not exist")
        for m in self.masks:
            if not m.exists():
                raise ConfigError(f"mask {m} does not exist")
        if self.shakemap and self.fragility is None:
            raise ConfigError("an event run needs an explicit fragility config")
        if self.shakemap and not str(self.shakemap).startswith(("http://", "https://")) and not Path(self.shakemap).exists():
            raise ConfigError(f"shakemap {self.shakemap} does not exist")

    def params(self) -> dict:
        """JSON-serializable view of every setting that affects outputs."""
        return {
            "kinds": [k.value for k in self.kinds],
            "region": self.region,
            "seed": self.seed,
            "interval": self.interval,
            "loading": {"pga": list(self.loading.pga_values), "magnitude": list(self.loading.magnitude_values)},
            "grid_search": self.grid_search,
            "folds": self.folds,
            "augment": self.augment,
            "gwt_max": self.gwt_max,
            "density": [self.density_radius, self.density_floor],
            "grid": None if self.grid is None else [self.grid.width, self.grid.height, self.grid.origin_lon, self.grid.origin_lat, self.grid.cell_size],
            "krige_model": self.krige_model,
            "fix_nugget_zero": self.fix_nugget_zero,
            "ensemble": self.ensemble,
            "control": self.control,
            "reps": self.reps,
            "level": self.level,
            "shakemap": self.shakemap,
        }


# ---------------------------------------------------------------------------
# stage helpers
# ---------------------------------------------------------------------------

def _site_job(args):
    profile, loading, kinds, region = args
    return profile.id, site_curves(profile, loading, kinds, region)


def compute_curves(profiles, loading, kinds, region="global", jobs=1):
    """``{site_id: {kind: ResponseCurve}}`` for standardized profiles."""
    tasks = [(p, loading, kinds, region) for p in profiles]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_site_job, tasks))
    else:
        results = [_site_job(t) for t in tasks]
    return dict(results)


def build_training_set(schema, ids, lon, lat, X, curves_by_site, kind, target):
    """Rows of the feature table that have a fitted curve of ``kind``."""
    rows = [i for i, s in enumerate(ids) if s in curves_by_site and kind in curves_by_site[s]]
    if not rows:
        raise ConfigError(f"no feature rows match curve sites for {kind.value}")
    y = np.array([getattr(curves_by_site[ids[i]][kind], target) for i in rows])
    Xi = impute_table(X, lon, lat)[rows]
    return TrainingSet.build(schema, Xi, y, lon[rows], lat[rows], site_id=tuple(ids[i] for i in rows))


def train_target(tset: TrainingSet, profiles_by_id, cfg: PipelineConfig, kind, target, jobs=1, gwt_cache=None):
    """Weighting, augmentation, grid search and final fit for one (kind, target).

    Returns ``(ensemble, hyperparams, station residuals)``; residuals are
    out-of-fold ``observed - predicted`` at real sites.
    """
    w = density_weights(tset.lon, tset.lat, cfg.density_radius, cfg.density_floor)
    tset = tset.with_weight(w)
    if cfg.augment:
        cache = gwt_cache if gwt_cache is not None else {}

        def recompute(i, gwt):
            sid = tset.site_id[i]
            key = (sid, gwt)
            if key not in cache:
                prof = profiles_by_id[sid].with_gwt(gwt)
                cache[key] = site_curves(prof, cfg.loading, cfg.kinds, cfg.region)
            return getattr(cache[key][kind], target)

        tset = augment_groundwater(tset, recompute, cfg.gwt_max, cfg.seed)
    grid = make_grid(cfg.grid_search["n_trees"], cfg.grid_search["min_leaf"], cfg.grid_search["max_depth"])
    k = min(cfg.folds, len(np.unique(tset.group)))
    hp, _ = grid_search(tset, grid, k=k, seed=cfg.seed, jobs=jobs)
    ens = train_bagged(tset.X, tset.y, tset.weight, hp, cfg.seed, tset.schema, target, kind.value)
    folds = kfold_assign(tset.group, k, cfg.seed)
    oof = oof_predictions(tset, hp, folds, cfg.seed)
    real = ~tset.synthetic
    residual = tset.y[real] - oof[real]
    return ens, hp, (tuple(np.array(tset.site_id)[real]), tset.lon[real], tset.lat[real], residual)


def predict_raster(ens, schema_names, cell_ids, lon, lat, X, geom: Geometry, target, kind, masks=None) -> AbRaster:
    """Predict at feature-table points and place each in the cell containing it."""
    if tuple(schema_names) != tuple(ens.feature_names):
        raise SchemaMismatch("grid feature columns differ from the model schema")
    X = impute_table(X, lon, lat)
    pred = ens.predict_batch(X)
    i, j = geom.cell_of(lon, lat)
    inside = (i >= 0) & (i < geom.height) & (j >= 0) & (j < geom.width)
    data = np.full(geom.shape, np.nan)
    data[i[inside], j[inside]] = pred[inside]
    band = BandKind.A if target == "A" else BandKind.B
    r = AbRaster.from_float(data, geom, band, MIKind.parse(kind).code)
    return apply_masks(r, masks) if masks else r


def load_masks(paths, geom) -> MaskSet | None:
    if not paths:
        return None
    ms = MaskSet()
    for pth in paths:
        m = read_abgrid(pth)
        # nonzero, non-nodata cells are excluded
        ms.add(Path(pth).stem, Mask(m.geometry, m.mask & (m.values > 0)))
    return ms


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------

class Runner:
    def __init__(self, cfg: PipelineConfig, jobs=None):
        self.cfg = cfg
        self.jobs = resolve_jobs(jobs or cfg.jobs)
        self.out = cfg.out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.cache_path = self.out / CACHE_NAME
        try:
            self.cache = json.loads(self.cache_path.read_text())
        except (OSError, ValueError):
            self.cache = {}
        self.status = {}
        self.manifest = {"seed": cfg.seed, "stages": {}, "artifacts": {}}

    def _rel(self, path) -> str:
        path = Path(path).resolve()
        try:
            return str(path.relative_to(self.out))
        except ValueError:
            return str(path)

    def stage(self, name, inputs, params, outputs, fn):
        """Run ``fn()`` unless the cached key matches and outputs are intact."""
        input_hashes = {}
        for pth in inputs:
            pth = Path(pth)
            files = sorted(q for q in pth.rglob("*") if q.is_file()) if pth.is_dir() else [pth]
            for q in files:
                input_hashes[self._rel(q)] = sha256_file(q)
        key = hashlib.sha256(json.dumps({"inputs": input_hashes, "params": params}, sort_keys=True).encode()).hexdigest()
        cached = self.cache.get(name)
        intact = cached is not None and cached["key"] == key and all(
            (self.out / rel).exists() and sha256_file(self.out / rel) == h for rel, h in cached["outputs"].items()
        )
        if intact:
            self.status[name] = "skipped"
            out_hashes = cached["outputs"]
        else:
            try:
                fn()
            except LiqError as exc:
                raise StageError(name, exc) from exc
            except (OSError, ValueError, KeyError) as exc:
                raise StageError(name, exc) from exc
            out_hashes = {}
            for pth in outputs():
                out_hashes[self._rel(pth)] = sha256_file(pth)
            self.cache[name] = {"key": key, "outputs": out_hashes}
            _atomic_write_text(self.cache_path, json.dumps(self.cache, indent=1, sort_keys=True))
            self.status[name] = "ran"
        self.manifest["stages"][name] = {"inputs": input_hashes, "params_key": key, "outputs": sorted(out_hashes)}
        self.manifest["artifacts"].update(out_hashes)
        log.info("stage %s: %s", name, self.status[name])

    def run(self):
        cfg = self.cfg
        std_dir = self.out / "cpt_std"
        curves_csv = self.out / "curves.csv"
        model_dir = self.out / "models"
        raster_dir = self.out / "rasters"
        updated_dir = self.out / "updated"
        event_dir = self.out / "event"
        manifest_path = self.out / MANIFEST_NAME
        if manifest_path.exists():
            manifest_path.unlink()
        params = cfg.params()
        combos = [(k, t) for k in cfg.kinds for t in ("A", "B")]

        def std_outputs():
            return sorted(std_dir.glob("*"))

        def do_standardize():
            std_dir.mkdir(exist_ok=True)
            for old in std_dir.glob("*"):
                old.unlink()
            for raw in cptmod.read_cpt_dir(cfg.cpt_dir):
                cptmod.write_cpt(cptmod.standardize(raw, cfg.interval), std_dir)

        self.stage("standardize", [cfg.cpt_dir], {"interval": cfg.interval}, std_outputs, do_standardize)

        curve_params = {k: params[k] for k in ("kinds", "region", "loading")}

        def do_curves():
            profiles = cptmod.read_cpt_dir(std_dir)
            curves = compute_curves(profiles, cfg.loading, cfg.kinds, cfg.region, self.jobs)
            rows = [(sid, c) for sid in sorted(curves) for c in curves[sid].values()]
            write_curve_table(rows, curves_csv)

        self.stage("curves", [std_dir], curve_params, lambda: [curves_csv], do_curves)

        def train_outputs():
            return [model_dir / f"{k.value}_{t}.liqt" for k, t in combos] + [model_dir / f"{k.value}_{t}_residuals.csv" for k, t in combos]

        def do_train():
            model_dir.mkdir(exist_ok=True)
            curves = {}
            for sid, c in read_curve_table(curves_csv):
                curves.setdefault(sid, {})[c.kind] = c
            schema, ids, lon, lat, X = read_feature_table(cfg.features)
            profiles = {p.id: p for p in cptmod.read_cpt_dir(std_dir)}
            cache = {}
            for kind, target in combos:
                tset = build_training_set(schema, ids, lon, lat, X, curves, kind, target)
                ens, hp, res = train_target(tset, profiles, cfg, kind, target, self.jobs, cache)
                save_model(ens, model_dir / f"{kind.value}_{target}.liqt")
                write_stations(model_dir / f"{kind.value}_{target}_residuals.csv", *res)

        train_params = {k: params[k] for k in ("kinds", "region", "loading", "seed", "grid_search", "folds", "augment", "gwt_max", "density")}
        self.stage("train", [curves_csv, cfg.features, std_dir], train_params, train_outputs, do_train)

        def geometry():
            return read_abgrid(cfg.template).geometry if cfg.template else cfg.grid

        def predict_outputs():
            return [raster_dir / f"{k.value}_{t}.abg" for k, t in combos]

        def do_predict():
            raster_dir.mkdir(exist_ok=True)
            geom = geometry()
            masks = load_masks(cfg.masks, geom)
            schema, ids, lon, lat, X = read_feature_table(cfg.grid_features)
            for kind, target in combos:
                ens = load_model(model_dir / f"{kind.value}_{target}.liqt")
                r = predict_raster(ens, schema.names, ids, lon, lat, X, geom, target, kind, masks)
                write_abgrid(r, raster_dir / f"{kind.value}_{target}.abg")

        pred_inputs = [model_dir, cfg.grid_features] + list(cfg.masks) + ([cfg.template] if cfg.template else [])
        self.stage("predict", pred_inputs, {"grid": params["grid"]}, predict_outputs, do_predict)

        def krige_outputs():
            out = []
            for k, t in combos:
                out += [updated_dir / f"{k.value}_{t}.abg", updated_dir / f"{k.value}_{t}_class.abg"]
            return out

        def do_krige():
            updated_dir.mkdir(exist_ok=True)
            for kind, target in combos:
                ids, lon, lat, res = read_stations(model_dir / f"{kind.value}_{target}_residuals.csv")
                model = SemivariogramModel(**cfg.krige_model) if cfg.krige_model else None
                fld = field_from_stations(ids, lon, lat, res, model, cfg.fix_nugget_zero, neighborhood_radius=NEIGHBORHOOD_M)
                raster = read_abgrid(raster_dir / f"{kind.value}_{target}.abg")
                upd, cls = update_raster(raster, fld)
                write_abgrid(upd, updated_dir / f"{kind.value}_{target}.abg")
                write_abgrid(cls, updated_dir / f"{kind.value}_{target}_class.abg")

        self.stage("krige", [raster_dir, model_dir], {"krige_model": cfg.krige_model, "nugget0": cfg.fix_nugget_zero}, krige_outputs, do_krige)

        if cfg.shakemap:
            def event_outputs():
                return sorted(event_dir.glob("*.abg"))

            def do_event():
                frags = load_fragility(cfg.fragility)
                models = [
                    (read_abgrid(updated_dir / f"{k.value}_A.abg"), read_abgrid(updated_dir / f"{k.value}_B.abg"))
                    for k in cfg.kinds
                ]
                run_event(models, cfg.shakemap, frags, event_dir, ensemble=cfg.ensemble)

            ev_inputs = [updated_dir, cfg.fragility]
            if not str(cfg.shakemap).startswith(("http://", "https://")):
                ev_inputs.append(Path(cfg.shakemap))
            self.stage("event", ev_inputs, {"ensemble": cfg.ensemble, "shakemap": cfg.shakemap}, event_outputs, do_event)

        if cfg.cases:
            report_path = self.out / "report.json"

            def do_evaluate():
                report = compare_models(read_cases(cfg.cases), cfg.control, cfg.reps, cfg.level, cfg.seed)
                report_path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True))

            self.stage(
                "evaluate",
                [cfg.cases],
                {"control": cfg.control, "reps": cfg.reps, "level": cfg.level, "seed": cfg.seed},
                lambda: [report_path],
                do_evaluate,
            )

        _atomic_write_text(manifest_path, json.dumps(self.manifest, indent=2, sort_keys=True))
        return self.manifest


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def run_pipeline(config, jobs=None):
    """Run a pipeline from a config path or :class:`PipelineConfig`.

    Returns ``(manifest, stage_status)``.
    """
    cfg = config if isinstance(config, PipelineConfig) else PipelineConfig.load(config)
    runner = Runner(cfg, jobs)
    manifest = runner.run()
    return manifest, runner.status
