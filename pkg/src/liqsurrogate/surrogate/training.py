"""Cross-validation, hyperparameter grid search and train/test splitting.

Folds are assigned by group so a groundwater-augmented duplicate always
lands in the same fold as its source row, and synthetic rows never enter a
validation score.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..errors import EmptyGrid
from .features import TrainingSet
from .trees import Hyperparams, train_bagged

log = logging.getLogger(__name__)


def default_grid():
    return [
        Hyperparams(n_trees=t, min_leaf=m, max_depth=d)
        for t, m, d in itertools.product((50, 100, 200), (1, 5, 20), (None, 20))
    ]


def make_grid(n_trees=(50, 100, 200), min_leaf=(1, 5, 20), max_depth=(None, 20)):
    return [Hyperparams(n_trees=t, min_leaf=m, max_depth=d) for t, m, d in itertools.product(n_trees, min_leaf, max_depth)]


def kfold_assign(groups, k: int, seed=0) -> np.ndarray:
    """Fold index per row; whole groups are dealt round-robin in shuffled order."""
    if k < 2:
        raise ValueError("k must be >= 2")
    groups = np.asarray(groups)
    uniq, inverse = np.unique(groups, return_inverse=True)
    if len(uniq) < k:
        raise ValueError(f"{len(uniq)} groups cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(len(uniq))
    fold_of_group = np.empty(len(uniq), dtype=np.int64)
    fold_of_group[perm] = np.arange(len(uniq)) % k
    return fold_of_group[inverse]


def cv_mse(tset: TrainingSet, hp: Hyperparams, folds: np.ndarray, seed=0) -> float:
    """Weighted mean squared error of out-of-fold predictions on real rows."""
    sse = 0.0
    wsum = 0.0
    for f in np.unique(folds):
        test = folds == f
        train = ~test
        ens = train_bagged(tset.X[train], tset.y[train], tset.weight[train], hp, seed)
        score = test & ~tset.synthetic
        if not score.any():
            continue
        err = ens.predict_raw(tset.X[score]) - tset.y[score]
        w = tset.weight[score]
        sse += float(np.dot(w, err * err))
        wsum += float(w.sum())
    return sse / wsum if wsum > 0 else math.nan


def _cell(args):
    tset, hp, folds, seed = args
    return cv_mse(tset, hp, folds, seed)


def grid_search(tset: TrainingSet, grid, k: int = 10, seed=0, jobs: int = 1):
    """Return ``(best_hyperparams, scores)``, every lattice point scored on the same folds.

    Ties (equal CV-MSE) go to the fewest trees, then the smallest depth.
    """
    grid = list(grid)
    if not grid:
        raise EmptyGrid("hyperparameter grid is empty")
    folds = kfold_assign(tset.group, k, seed)
    if len(grid) == 1:
        return grid[0], [math.nan]
    tasks = [(tset, hp, folds, seed) for hp in grid]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            scores = list(ex.map(_cell, tasks))
    else:
        scores = [_cell(t) for t in tasks]
    for hp, s in zip(grid, scores):
        log.debug("grid %s -> cv mse %.6g", hp, s)
    best = min(range(len(grid)), key=lambda i: (scores[i], grid[i].n_trees, grid[i].depth_key, i))
    return grid[best], scores


def spatial_split(lon, lat, groups=None, test_frac=0.1, cell_deg=0.5, seed=0):
    """Boolean test mask holding out whole coarse lon/lat cells.

    Cells are taken in shuffled order until ``test_frac`` of the groups (or
    rows) are held out. Rows of one group always share a side.
    """
    lon = np.asarray(lon, float)
    lat = np.asarray(lat, float)
    groups = np.arange(len(lon)) if groups is None else np.asarray(groups)
    uniq, first = np.unique(groups, return_index=True)
    inv = np.unique(groups, return_inverse=True)[1]
    cx = np.floor(lon[first] / cell_deg).astype(np.int64)
    cy = np.floor(lat[first] / cell_deg).astype(np.int64)
    cells, cell_of = np.unique(np.stack([cx, cy], axis=1), axis=0, return_inverse=True)
    cell_of = cell_of.ravel()
    order = np.random.default_rng(seed).permutation(len(cells))
    target = test_frac * len(uniq)
    held = np.zeros(len(cells), bool)
    taken = 0
    sizes = np.bincount(cell_of, minlength=len(cells))
    for c in order:
        if taken >= target:
            break
        held[c] = True
        taken += sizes[c]
    return held[cell_of][inv]



def oof_predictions(tset: TrainingSet, hp: Hyperparams, folds: np.ndarray, seed=0) -> np.ndarray:
    """Out-of-fold predictions for every row (clamped like the deployed model)."""
    out = np.empty(len(tset))
    for f in np.unique(folds):
        test = folds == f
        ens = train_bagged(tset.X[~test], tset.y[~test], tset.weight[~test], hp, seed)
        out[test] = ens.predict_batch(tset.X[test])
    return out
