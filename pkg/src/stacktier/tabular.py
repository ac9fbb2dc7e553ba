"""Tabular data: CSV ingestion, preprocessing, splitting and synthetic data."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._io import atomic_write_text
from .errors import DataError
from .seeding import derive_seed, stable_id

DEFAULT_MISSING_TOKENS = frozenset({"", "NA", "NaN"})


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable feature matrix with a missing-value mask and binary labels.

    Masked cells hold NaN in ``values`` and must not be read.
    """

    feature_names: tuple[str, ...]
    values: np.ndarray
    missing_mask: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        names = tuple(str(n) for n in self.feature_names)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError("values must be a 2-D matrix")
        n, d = values.shape
        mask = np.asarray(self.missing_mask, dtype=bool)
        labels = np.asarray(self.labels)
        if len(names) != d:
            raise DataError(f"{len(names)} feature names for {d} columns")
        if len(set(names)) != d:
            raise DataError("feature names must be unique")
        if mask.shape != (n, d):
            raise DataError("missing_mask shape does not match values")
        if labels.shape != (n,):
            raise DataError("labels must have one entry per row")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise DataError("non-binary label")
        values = np.where(mask, np.nan, values)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "missing_mask", _frozen(mask))
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int8)))

    @classmethod
    def from_arrays(cls, X, y, feature_names: Sequence[str] | None = None,
                    missing_mask=None) -> "Dataset":
        X = np.asarray(X, dtype=np.float64)
        if feature_names is None:
            feature_names = [f"f{i:02d}" for i in range(1, X.shape[1] + 1)]
        if missing_mask is None:
            missing_mask = np.isnan(X)
        return cls(tuple(feature_names), X, missing_mask, np.asarray(y))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def X(self) -> np.ndarray:
        if self.missing_mask.any():
            raise DataError("dataset still has missing values")
        return self.values

    @property
    def y(self) -> np.ndarray:
        return self.labels.astype(np.float64)

    def class_counts(self) -> tuple[int, int]:
        pos = int(self.labels.sum())
        return self.n_rows - pos, pos

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.feature_names, self.values[rows], self.missing_mask[rows],
                       self.labels[rows])

    def select(self, names: Iterable[str]) -> "Dataset":
        names = list(names)
        index = {n: i for i, n in enumerate(self.feature_names)}
        missing = [n for n in names if n not in index]
        if missing:
            raise DataError(f"unknown columns: {', '.join(missing)}")
        cols = [index[n] for n in names]
        return Dataset(tuple(names), self.values[:, cols], self.missing_mask[:, cols], self.labels)

    def replace(self, values=None, missing_mask=None, labels=None) -> "Dataset":
        return Dataset(
            self.feature_names,
            self.values if values is None else values,
            self.missing_mask if missing_mask is None else missing_mask,
            self.labels if labels is None else labels,
        )

    def append(self, other: "Dataset") -> "Dataset":
        if other.feature_names != self.feature_names:
            raise DataError("cannot append datasets with different schemas")
        return Dataset(
            self.feature_names,
            np.vstack([self.values, other.values]),
            np.vstack([self.missing_mask, other.missing_mask]),
            np.concatenate([self.labels, other.labels]),
        )

    def fingerprint(self) -> str:
        return stable_id([self.feature_names, np.nan_to_num(self.values).tobytes().hex(),
                          self.missing_mask.tobytes().hex(), self.labels.tobytes().hex()])


# --------------------------------------------------------------------- CSV

def load_csv(path, label_column: str, missing_tokens=DEFAULT_MISSING_TOKENS) -> Dataset:
    """Read a headered CSV; cells equal to a missing token are masked."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DataError(f"{path}: empty file, header row required")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise DataError(f"{path}: label column {label_column!r} not found")
    li = header.index(label_column)
    names = [h for i, h in enumerate(header) if i != li]
    tokens = {t.strip() for t in missing_tokens}

    body = [r for r in rows[1:] if r]
    values = np.zeros((len(body), len(names)))
    mask = np.zeros((len(body), len(names)), dtype=bool)
    labels = np.zeros(len(body), dtype=np.int8)
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: ragged row {r} ({len(row)} cells, expected {len(header)})")
        raw_label = row[li].strip()
        try:
            lab = float(raw_label)
        except ValueError:
            lab = math.nan
        if lab not in (0.0, 1.0):
            raise DataError(f"{path}: non-binary label {raw_label!r} at row {r}")
        labels[r - 2] = int(lab)
        j = 0
        for i, cell in enumerate(row):
            if i == li:
                continue
            cell = cell.strip()
            if cell in tokens:
                mask[r - 2, j] = True
            else:
                try:
                    values[r - 2, j] = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} at row {r}, column {names[j]!r}"
                    ) from None
            j += 1
    return Dataset(tuple(names), values, mask, labels)


def to_csv_text(ds: Dataset, label_column: str = "label") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*ds.feature_names, label_column])
    for i in range(ds.n_rows):
        cells = ["" if m else repr(float(v)) for v, m in zip(ds.values[i], ds.missing_mask[i])]
        w.writerow([*cells, int(ds.labels[i])])
    return buf.getvalue()


def write_csv(ds: Dataset, path, label_column: str = "label") -> Path:
    return atomic_write_text(path, to_csv_text(ds, label_column))


# ------------------------------------------------------------ preprocessing

def missing_fractions(ds: Dataset) -> np.ndarray:
    if ds.n_rows == 0:
        raise DataError("empty dataset")
    return ds.missing_mask.sum(axis=0) / ds.n_rows


def drop_high_missing(ds: Dataset, max_missing_fraction: float) -> Dataset:
    """Drop features whose missing fraction is strictly above the threshold."""
    if not 0.0 <= max_missing_fraction < 1.0:
        raise DataError("max_missing_fraction must lie in [0, 1)")
    frac = missing_fractions(ds)
    keep = [n for n, f in zip(ds.feature_names, frac) if not f > max_missing_fraction]
    if not keep:
        raise DataError("every feature exceeds the missingness threshold")
    return ds.select(keep)


def apply_imputation(ds: Dataset, means: np.ndarray) -> Dataset:
    means = np.asarray(means, dtype=np.float64)
    if means.shape != (ds.n_features,):
        raise DataError("imputation means do not match the feature count")
    filled = np.where(ds.missing_mask, means[None, :], ds.values)
    return ds.replace(values=filled, missing_mask=np.zeros_like(ds.missing_mask))


def impute_mean(ds: Dataset) -> tuple[Dataset, np.ndarray]:
    """Fill masked cells with the column mean of observed cells.

    Returns the imputed dataset and the per-feature means for reuse on unseen rows.
    """
    observed = ~ds.missing_mask
    counts = observed.sum(axis=0)
    empty = [n for n, c in zip(ds.feature_names, counts) if c == 0]
    if empty:
        raise DataError(f"no observed values in: {', '.join(empty)}")
    totals = np.where(observed, ds.values, 0.0).sum(axis=0)
    means = totals / counts
    return apply_imputation(ds, means), means


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray
    constant: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.mean.shape[0]:
            raise DataError("standardizer width does not match data")
        Z = (X - self.mean) / self.scale
        Z[:, self.constant] = 0.0
        return Z


def fit_standardizer(ds: Dataset) -> Standardizer:
    """Per-feature mean and population standard deviation."""
    if ds.n_rows == 0:
        raise DataError("cannot standardize an empty dataset")
    X = ds.X
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    constant = np.ptp(X, axis=0) == 0
    scale = np.where(constant | (std == 0), 1.0, std)
    return Standardizer(_frozen(mean), _frozen(scale), _frozen(constant))


def apply_standardizer(s: Standardizer, ds: Dataset) -> Dataset:
    return ds.replace(values=s.transform(ds.X))


# ----------------------------------------------------------------- splitting

def _content_order(ds: Dataset, rows: np.ndarray) -> np.ndarray:
    # Rows ordered by content so assignments do not depend on file order.
    vals = np.nan_to_num(ds.values[rows])
    keys = np.hstack([vals, ds.missing_mask[rows].astype(np.float64)])
    return rows[np.lexsort(keys.T[::-1])]


def _shuffled_class_rows(ds: Dataset, cls: int, seed: int, tag: str) -> np.ndarray:
    rows = np.flatnonzero(ds.labels == cls)
    rows = _content_order(ds, rows)
    rng = np.random.default_rng(derive_seed(seed, tag, cls))
    return rows[rng.permutation(rows.size)]


def stratified_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Per-class split; each class contributes ``round(count * test_fraction)`` test rows."""
    if not 0.0 < test_fraction < 1.0:
        raise DataError("test_fraction must lie in (0, 1)")
    test_rows = []
    for cls in (0, 1):
        rows = _shuffled_class_rows(ds, cls, seed, "split")
        if rows.size < 2:
            raise DataError(f"class {cls} has fewer than 2 rows")
        test_rows.append(rows[: round_half_up(rows.size * test_fraction)])
    in_test = np.zeros(ds.n_rows, dtype=bool)
    in_test[np.concatenate(test_rows)] = True
    return ds.take(np.flatnonzero(~in_test)), ds.take(np.flatnonzero(in_test))


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    assignment: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        if self.k < 2 or a.size == 0 or a.min() < 0 or a.max() >= self.k:
            raise DataError("invalid fold assignment")
        object.__setattr__(self, "assignment", _frozen(a))

    @property
    def n_rows(self) -> int:
        return self.assignment.size

    @property
    def plan_id(self) -> str:
        return stable_id([self.k, self.assignment.tolist()])

    def rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def rows_excluding(self, folds: Iterable[int]) -> np.ndarray:
        return np.flatnonzero(~np.isin(self.assignment, list(folds)))


def make_folds(ds: Dataset, k: int, seed: int) -> FoldPlan:
    """Stratified round-robin fold assignment over content-ordered, shuffled rows."""
    if k < 2:
        raise DataError("k must be at least 2")
    assignment = np.empty(ds.n_rows, dtype=np.int64)
    offset = 0
    for cls in (0, 1):
        rows = _shuffled_class_rows(ds, cls, seed, "folds")
        if rows.size < k:
            raise DataError(f"k={k} exceeds the {rows.size} rows of class {cls}")
        assignment[rows] = (offset + np.arange(rows.size)) % k
        offset = (offset + rows.size) % k
    return FoldPlan(k, assignment)


# ------------------------------------------------------------------ synthetic

@dataclass(frozen=True)
class SyntheticSpec:
    n_rows: int = 2000
    n_features: int = 25
    n_informative: int = 10
    positive_fraction: float = 0.2
    class_separation: float = 1.5
    seed: int = 7

    def __post_init__(self):
        if self.n_informative > self.n_features:
            raise DataError("n_informative cannot exceed n_features")
        if not 0.0 < self.positive_fraction < 1.0:
            raise DataError("positive_fraction must lie in (0, 1)")
        if self.class_separation < 0:
            raise DataError("class_separation must be non-negative")
        if self.n_rows < 1 or self.n_features < 1 or self.n_informative < 0:
            raise DataError("row and feature counts must be positive")

    @property
    def n_positive(self) -> int:
        return round_half_up(self.n_rows * self.positive_fraction)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Class-conditional unit Gaussians; the first ``n_informative`` columns carry
    a class-mean shift of ``class_separation``, the rest are noise."""
    rng = np.random.default_rng(spec.seed)
    labels = np.zeros(spec.n_rows, dtype=np.int8)
    labels[: spec.n_positive] = 1
    labels = labels[rng.permutation(spec.n_rows)]
    X = rng.standard_normal((spec.n_rows, spec.n_features))
    X[labels == 1, : spec.n_informative] += spec.class_separation
    names = [f"f{i:02d}" for i in range(1, spec.n_features + 1)]
    return Dataset.from_arrays(X, labels, names)


@dataclass(frozen=True, eq=False)
class Preprocessing:
    """Frozen training-side statistics applied to raw rows at prediction time."""

    raw_features: tuple[str, ...]
    kept_features: tuple[str, ...]
    impute_means: np.ndarray
    standardizer: Standardizer

    def check_schema(self, raw: Dataset) -> None:
        expected = set(self.raw_features)
        got = set(raw.feature_names)
        problems = []
        if got - expected:
            problems.append("unknown columns: " + ", ".join(sorted(got - expected)))
        if expected - got:
            problems.append("missing columns: " + ", ".join(sorted(expected - got)))
        if problems:
            raise DataError("; ".join(problems))

    def transform(self, raw: Dataset) -> np.ndarray:
        self.check_schema(raw)
        kept = apply_imputation(raw.select(self.kept_features), self.impute_means)
        return self.standardizer.transform(kept.values)

    def to_state(self) -> dict:
        s = self.standardizer
        return {"raw_features": list(self.raw_features), "kept_features": list(self.kept_features),
                "impute_means": self.impute_means, "mean": s.mean, "scale": s.scale,
                "constant": s.constant}

    @classmethod
    def from_state(cls, state: dict) -> "Preprocessing":
        std = Standardizer(_frozen(state["mean"]), _frozen(state["scale"]),
                           _frozen(np.asarray(state["constant"], dtype=bool)))
        return cls(tuple(state["raw_features"]), tuple(state["kept_features"]),
                   _frozen(state["impute_means"]), std)
