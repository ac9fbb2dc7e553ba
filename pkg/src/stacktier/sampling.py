"""SMOTE minority oversampling."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .tabular import Dataset, round_half_up

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SmoteParams:
    k_neighbors: int = 5
    target_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise DataError("k_neighbors must be >= 1")
        if not 0.0 < self.target_ratio <= 1.0:
            raise DataError("target_ratio must lie in (0, 1]")


def nearest_neighbors(points: np.ndarray, k: int, chunk: int = 256) -> np.ndarray:
    """Indices of the ``k`` nearest other points (Euclidean, ties to lower index)."""
    n = points.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        block = points[start:start + chunk]
        d2 = ((block[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        d2[np.arange(block.shape[0]), np.arange(start, start + block.shape[0])] = np.inf
        out[start:start + chunk] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def smote_target_count(majority: int, target_ratio: float) -> int:
    return round_half_up(target_ratio * majority)


def _minority(ds: Dataset) -> tuple[int, int, int]:
    n_neg, n_pos = ds.class_counts()
    if n_pos <= n_neg:
        return 1, n_pos, n_neg
    return 0, n_neg, n_pos


def smote_samples(ds: Dataset, params: SmoteParams):
    """Draw the synthetic minority rows without appending them.

    Returns:
        (synthetic, parents, neighbors): the new rows and, for each, the row
        indices in ``ds`` of its parent and of the neighbour it was
        interpolated towards. Empty when the target is already met.
    """
    if ds.missing_mask.any():
        raise DataError("SMOTE requires imputed data")
    minority, n_min, n_maj = _minority(ds)
    target = smote_target_count(n_maj, params.target_ratio)
    if n_min >= target:
        logger.warning("SMOTE skipped: minority count %d already meets target %d", n_min, target)
        empty = np.empty(0, dtype=np.int64)
        return np.empty((0, ds.n_features)), empty, empty
    if n_min <= params.k_neighbors:
        raise DataError(
            f"minority class has {n_min} rows; SMOTE needs more than k_neighbors={params.k_neighbors}"
        )
    rows = np.flatnonzero(ds.labels == minority)
    pts = ds.X[rows]
    nn = nearest_neighbors(pts, params.k_neighbors)
    n_new = target - n_min
    synth = np.empty((n_new, ds.n_features))
    parents = np.empty(n_new, dtype=np.int64)
    neighbors = np.empty(n_new, dtype=np.int64)
    for s in range(n_new):
        # one generator per sample keeps the stream independent of batching
        rng = np.random.default_rng([params.seed, s])
        p = int(rng.integers(n_min))
        q = int(nn[p, rng.integers(params.k_neighbors)])
        u = rng.random()
        synth[s] = pts[p] + u * (pts[q] - pts[p])
        parents[s], neighbors[s] = rows[p], rows[q]
    return synth, parents, neighbors


def smote_oversample(ds: Dataset, params: SmoteParams) -> Dataset:
    """Append synthetic minority rows until minority = round(ratio * majority).

    Each synthetic row is ``x + u * (x_nn - x)`` for a uniformly drawn minority
    row ``x``, one of its ``k`` nearest minority neighbours ``x_nn`` and
    ``u ~ U[0, 1]``. Original rows are returned unchanged, in front.
    """
    synth, _, _ = smote_samples(ds, params)
    if synth.shape[0] == 0:
        return ds
    minority = _minority(ds)[0]
    extra = Dataset(ds.feature_names, synth, np.zeros(synth.shape, dtype=bool),
                    np.full(synth.shape[0], minority, dtype=np.int8))
    return ds.append(extra)
