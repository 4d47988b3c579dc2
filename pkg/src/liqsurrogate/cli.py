"""``liq`` command-line interface."""

from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import cpt as cptmod
from .errors import ConfigError, LiqError
from .indices import MIKind
from .raster import BandKind

log = logging.getLogger("liqsurrogate")


def _setup_logging(verbose):
    logging.basicConfig(level=logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


def _kinds(text):
    return tuple(MIKind.parse(k) for k in text.split(",") if k.strip())


def _fail(exc):
    click.echo(f"error: {exc}", err=True)
    sys.exit(1)


class _Group(click.Group):
    """Turns package errors into a one-line message and exit status 1."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except LiqError as exc:
            _fail(exc)
        except (OSError, ValueError, KeyError) as exc:
            _fail(exc)


@click.group(cls=_Group)
@click.option("-v", "--verbose", count=True, help="Increase log verbosity (repeatable).")
@click.option("--jobs", type=int, default=None, envvar="LIQ_JOBS", help="Worker processes (falls back to LIQ_JOBS, then 1).")
@click.pass_context
def main(ctx, verbose, jobs):
    """Liquefaction surrogate pipeline: CPT mechanics to event-time ground-failure maps."""
    _setup_logging(verbose)
    ctx.obj = {"jobs": jobs or 1}


# --- cpt ---------------------------------------------------------------------

@main.group("cpt", cls=_Group)
def cpt_group():
    """CPT sounding utilities."""


@cpt_group.command("standardize")
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False), help="Directory of raw <id>.csv/<id>.json soundings.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--interval", default=cptmod.DEFAULT_INTERVAL, show_default=True, type=float, help="Sampling interval, m.")
def cpt_standardize(in_dir, out_dir, interval):
    """Resample soundings onto a uniform depth grid."""
    n = 0
    for raw in cptmod.read_cpt_dir(in_dir):
        cptmod.write_cpt(cptmod.standardize(raw, interval), out_dir)
        n += 1
    click.echo(f"standardized {n} soundings -> {out_dir}")


# --- fs ----------------------------------------------------------------------

@main.command("fs")
@click.option("--cpt", "cpt_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Sounding CSV (sidecar JSON alongside).")
@click.option("--pga", required=True, type=float, help="Peak ground acceleration, g.")
@click.option("--magnitude", required=True, type=float, help="Moment magnitude.")
@click.option("--region", type=click.Choice(["global", "nz"]), default="global", show_default=True, help="Fines-content correlation.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Output CSV.")
def fs_cmd(cpt_path, pga, magnitude, region, out_path):
    """Factor-of-safety profile for one loading, plus LPI/LPI_ISH/LSN."""
    from .indices import compute
    from .mechanics import LoadingScenario, factor_of_safety

    prof = cptmod.read_cpt(cpt_path)
    if not prof.is_standardized:
        prof = cptmod.standardize(prof)
    fsp = factor_of_safety(prof, LoadingScenario(pga, magnitude), region)
    cols, rows = fsp.to_rows()
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(float(v)) if not isinstance(v, (bool, np.bool_)) else int(v) for v in r])
    for k in MIKind:
        click.echo(f"{k.value} {compute(k, fsp).value:.6g}")


# --- curves ------------------------------------------------------------------

@main.command("curves")
@click.option("--cpts", required=True, type=click.Path(exists=True, file_okay=False), help="Directory of soundings.")
@click.option("--kinds", default="lpi,lpish,lsn", show_default=True, help="Comma-separated manifestation indices.")
@click.option("--region", type=click.Choice(["global", "nz"]), default="global", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Curve table CSV.")
@click.pass_context
def curves_cmd(ctx, cpts, kinds, region, out_path):
    """Sweep soundings over the loading array and fit response curves."""
    from .curves import LoadingArray, write_curve_table
    from .pipeline import compute_curves

    profiles = [p if p.is_standardized else cptmod.standardize(p) for p in cptmod.read_cpt_dir(cpts)]
    curves = compute_curves(profiles, LoadingArray.default(), _kinds(kinds), region, ctx.obj["jobs"])
    write_curve_table([(sid, c) for sid in sorted(curves) for c in curves[sid].values()], out_path)
    click.echo(f"fitted {len(curves)} sites -> {out_path}")


# --- train -------------------------------------------------------------------

def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _depth_list(text):
    from .pipeline import _opt_depth

    return [_opt_depth(v.strip()) for v in text.split(",") if v.strip()]


@main.command("train")
@click.option("--features", required=True, type=click.Path(exists=True, dir_okay=False), help="Feature table CSV (site_id,lon,lat,...).")
@click.option("--curves", "curves_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Curve table CSV.")
@click.option("--target", required=True, type=click.Choice(["A", "B"]), help="Curve parameter to learn.")
@click.option("--kind", required=True, help="Manifestation index (lpi, lpish, lsn).")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Model file (.liqt).")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--n-trees", default="50", show_default=True, help="Grid values, comma-separated.")
@click.option("--min-leaf", default="5", show_default=True, help="Grid values, comma-separated.")
@click.option("--max-depth", default="none", show_default=True, help="Grid values, comma-separated; 'none' = unlimited.")
@click.option("--folds", default=10, show_default=True, type=int)
@click.option("--cpts", type=click.Path(exists=True, file_okay=False), default=None, help="Soundings for groundwater augmentation.")
@click.option("--augment/--no-augment", default=False, show_default=True, help="Add groundwater-augmented duplicates (needs --cpts).")
@click.option("--region", type=click.Choice(["global", "nz"]), default="global", show_default=True)
@click.option("--density-radius", default=1000.0, show_default=True, type=float, help="Density-weighting radius, m.")
@click.option("--density-floor", default=0.5, show_default=True, type=float)
@click.option("--residuals", type=click.Path(dir_okay=False), default=None, help="Write out-of-fold station residuals CSV.")
@click.pass_context
def train_cmd(ctx, features, curves_path, target, kind, out_path, seed, n_trees, min_leaf, max_depth, folds, cpts, augment, region, density_radius, density_floor, residuals):
    """Grid-search and train a bagged tree ensemble for A or B."""
    from .curves import read_curve_table
    from .geostat import write_stations
    from .pipeline import PipelineConfig, build_training_set, train_target
    from .surrogate import read_feature_table, save_model

    kind = MIKind.parse(kind)
    if augment and not cpts:
        raise click.UsageError("--augment needs --cpts")
    curves = {}
    for sid, c in read_curve_table(curves_path):
        curves.setdefault(sid, {})[c.kind] = c
    schema, ids, lon, lat, X = read_feature_table(features)
    tset = build_training_set(schema, ids, lon, lat, X, curves, kind, target)
    profiles = {}
    if cpts:
        profiles = {p.id: (p if p.is_standardized else cptmod.standardize(p)) for p in cptmod.read_cpt_dir(cpts)}
    cfg = PipelineConfig(
        base=Path("."),
        cpt_dir=Path(cpts or "."),
        features=Path(features),
        grid_features=Path(features),
        out_dir=Path("."),
        kinds=(kind,),
        region=region,
        seed=seed,
        grid_search={"n_trees": _int_list(n_trees), "min_leaf": _int_list(min_leaf), "max_depth": _depth_list(max_depth)},
        folds=folds,
        augment=augment,
        density_radius=density_radius,
        density_floor=density_floor,
    )
    ens, hp, res = train_target(tset, profiles, cfg, kind, target, ctx.obj["jobs"])
    save_model(ens, out_path)
    if residuals:
        write_stations(residuals, *res)
    click.echo(f"trained {hp} -> {out_path}")


# --- predict -----------------------------------------------------------------

def _geometry(like, west, north, cell_size, width, height):
    from .raster import Geometry, read_abgrid

    if like:
        return read_abgrid(like).geometry
    if None in (west, north, width, height):
        raise click.UsageError("give --like or all of --west/--north/--width/--height")
    return Geometry(width, height, west, north, cell_size)


@main.command("predict")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--features", required=True, type=click.Path(exists=True, dir_okay=False), help="Cell feature table CSV.")
@click.option("--like", type=click.Path(exists=True, dir_okay=False), default=None, help="Template raster supplying the grid.")
@click.option("--west", type=float, default=None)
@click.option("--north", type=float, default=None)
@click.option("--cell-size", type=float, default=0.000833, show_default=True)
@click.option("--width", type=int, default=None)
@click.option("--height", type=int, default=None)
@click.option("--mask", "masks", multiple=True, type=click.Path(exists=True, dir_okay=False), help="Exclusion raster (nonzero = excluded); repeatable.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def predict_cmd(model_path, features, like, west, north, cell_size, width, height, masks, out_path):
    """Predict an A or B raster from a trained model."""
    from .pipeline import load_masks, predict_raster
    from .raster import write_abgrid
    from .surrogate import load_model, read_feature_table

    ens = load_model(model_path)
    geom = _geometry(like, west, north, cell_size, width, height)
    schema, ids, lon, lat, X = read_feature_table(features)
    r = predict_raster(ens, schema.names, ids, lon, lat, X, geom, ens.target or "A", ens.kind or "lpi", load_masks(masks, geom))
    write_abgrid(r, out_path)
    click.echo(f"wrote {out_path}")


# --- krige -------------------------------------------------------------------

@main.command("krige")
@click.option("--raster", "raster_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--stations", required=True, type=click.Path(exists=True, dir_okay=False), help="CSV site_id,lon,lat,residual (observed - predicted).")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--classes", "classes_path", required=True, type=click.Path(dir_okay=False))
@click.option("--sill", type=float, default=None, help="Fixed model sill c0 (skip fitting).")
@click.option("--range", "range_m", type=float, default=None, help="Fixed model range r, m.")
@click.option("--alpha", type=float, default=None, help="Fixed model shape alpha.")
@click.option("--nugget", type=float, default=0.0, show_default=True, help="Nugget b for a fixed model.")
def krige_cmd(raster_path, stations, out_path, classes_path, sill, range_m, alpha, nugget):
    """Update an A/B raster with kriged station residuals."""
    from .geostat import SemivariogramModel, field_from_stations, read_stations, update_raster
    from .raster import read_abgrid, write_abgrid

    ids, lon, lat, res = read_stations(stations)
    fixed = [sill, range_m, alpha]
    if any(v is not None for v in fixed) and None in fixed:
        raise click.UsageError("--sill, --range and --alpha go together")
    model = SemivariogramModel(nugget, sill, range_m, alpha) if sill is not None else None
    fld = field_from_stations(ids, lon, lat, res, model)
    upd, cls = update_raster(read_abgrid(raster_path), fld)
    write_abgrid(upd, out_path)
    write_abgrid(cls, classes_path)
    m = fld.model
    click.echo(f"model b={m.b:.6g} c0={m.c0:.6g} r={m.r:.6g} alpha={m.alpha:.6g}; wrote {out_path}, {classes_path}")


# --- event -------------------------------------------------------------------

@main.command("event")
@click.option("--a", "a_paths", required=True, multiple=True, type=click.Path(exists=True, dir_okay=False), help="A raster; repeat once per MI kind.")
@click.option("--b", "b_paths", required=True, multiple=True, type=click.Path(exists=True, dir_okay=False), help="B raster, in the same order as --a.")
@click.option("--shakemap", required=True, help="ShakeMap grid.xml path or URL.")
@click.option("--fragility", required=True, type=click.Path(exists=True, dir_okay=False), help="Fragility JSON (required; no built-in defaults).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--ensemble", is_flag=True, help="Also write the mean PGF over all kinds.")
@click.option("--ascii", "ascii_out", is_flag=True, help="Also write ESRI ASCII grids.")
def event_cmd(a_paths, b_paths, shakemap, fragility, out_dir, ensemble, ascii_out):
    """Produce PGA, PGA_M, MI and PGF rasters for one earthquake."""
    from .forward import load_fragility, run_event
    from .raster import read_abgrid

    if len(a_paths) != len(b_paths):
        raise click.UsageError("--a and --b must be given the same number of times")
    models = [(read_abgrid(a), read_abgrid(b)) for a, b in zip(a_paths, b_paths)]
    written = run_event(models, shakemap, load_fragility(fragility), out_dir, ensemble=ensemble, ascii=ascii_out)
    for name, pth in written.items():
        click.echo(f"{name}: {pth}")


# --- evaluate ----------------------------------------------------------------

@main.command("evaluate")
@click.option("--cases", required=True, type=click.Path(exists=True, dir_okay=False), help="CSV lon,lat,observed,p_<model>...")
@click.option("--control", default=None, help="Control model name (column p_<name>).")
@click.option("--reps", default=10000, show_default=True, type=int)
@click.option("--level", default=0.99, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="Report JSON (default: stdout).")
def evaluate_cmd(cases, control, reps, level, seed, out_path):
    """Brier-score comparison report."""
    from .evalkit import compare_models, read_cases
    from .pipeline import _jsonable

    report = json.dumps(_jsonable(compare_models(read_cases(cases), control, reps, level, seed)), indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(report)
    else:
        click.echo(report)


# --- raster ------------------------------------------------------------------

@main.group("raster", cls=_Group)
def raster_group():
    """ABG1 / ESRI ASCII raster utilities."""


@raster_group.command("convert")
@click.argument("src", type=click.Path(exists=True, dir_okay=False))
@click.argument("dst", type=click.Path(dir_okay=False))
@click.option("--kind", "band", type=click.Choice([k.name for k in BandKind]), default="A", show_default=True, help="Band kind for ASCII import.")
@click.option("--mi-kind", default=None, help="MI kind for ASCII import (lpi, lpish, lsn).")
@click.option("--scale", type=float, default=None, help="Quantization scale for ASCII import.")
def raster_convert(src, dst, band, mi_kind, scale):
    """Convert between .abg and .asc (chosen by file extension)."""
    from .raster import MI_NONE, export_ascii_grid, import_ascii_grid, read_abgrid, write_abgrid

    if src.endswith(".asc"):
        mk = MIKind.parse(mi_kind).code if mi_kind else MI_NONE
        r = import_ascii_grid(src, BandKind[band], mk, scale)
    else:
        r = read_abgrid(src)
    if dst.endswith(".asc"):
        export_ascii_grid(r, dst)
    else:
        write_abgrid(r, dst)
    click.echo(f"wrote {dst}")


@raster_group.command("info")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
def raster_info(path):
    """Print header fields and value statistics as JSON."""
    from .raster import describe, read_abgrid

    click.echo(json.dumps(describe(read_abgrid(path)), indent=2))


@raster_group.command("mask")
@click.argument("src", type=click.Path(exists=True, dir_okay=False))
@click.argument("dst", type=click.Path(dir_okay=False))
@click.option("--mask", "masks", multiple=True, type=click.Path(exists=True, dir_okay=False), help="Exclusion raster (nonzero = excluded); repeatable.")
@click.option("--slope", type=click.Path(exists=True, dir_okay=False), default=None, help="Slope raster in degrees.")
@click.option("--slope-threshold", default=5.0, show_default=True, type=float, help="Cells with slope >= this are excluded.")
def raster_mask(src, dst, masks, slope, slope_threshold):
    """Set excluded cells to nodata."""
    from .pipeline import load_masks
    from .raster import MaskSet, apply_masks, read_abgrid, slope_mask, write_abgrid

    r = read_abgrid(src)
    ms = load_masks(masks, r.geometry) or MaskSet()
    if slope:
        ms.add("slope", slope_mask(read_abgrid(slope), slope_threshold))
    out = apply_masks(r, ms)
    write_abgrid(out, dst)
    click.echo(f"masked {int((~out.mask).sum() - (~r.mask).sum())} cells -> {dst}")


# --- pipeline ----------------------------------------------------------------

@main.group("pipeline", cls=_Group)
def pipeline_group():
    """Config-driven end-to-end runs."""


@pipeline_group.command("run")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def pipeline_run(ctx, config):
    """Run every stage of CONFIG (TOML), skipping up-to-date stages."""
    from .pipeline import PipelineConfig, run_pipeline

    try:
        cfg = PipelineConfig.load(config)
    except ConfigError as exc:
        _fail(exc)
    jobs = ctx.find_root().params.get("jobs")
    _, status = run_pipeline(cfg, jobs)
    for name, st in status.items():
        click.echo(f"{name}: {st}")
    click.echo(f"manifest: {cfg.out_dir / 'manifest.json'}")


if __name__ == "__main__":  # pragma: no cover
    main()
