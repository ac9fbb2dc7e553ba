"""Cross-validated grid search and per-metric configuration selection."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._parallel import pmap
from .errors import ConfigError, DataError
from .learners import FittedModel, LearnerSpec, fit_learner, predict_score
from .metrics import confusion_at_threshold, roc_auc, threshold_metrics
from .sampling import SmoteParams, smote_oversample, smote_target_count
from .seeding import derive_seed
from .tabular import Dataset, FoldPlan

logger = logging.getLogger(__name__)

SELECTION_METRICS = ("accuracy", "precision", "recall", "roc_auc")
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class SelectionPolicy:
    metrics: tuple[str, ...] = SELECTION_METRICS
    per_metric_top: int = 1

    def __post_init__(self):
        object.__setattr__(self, "metrics", tuple(self.metrics))
        if not self.metrics:
            raise ConfigError("selection policy needs at least one metric")
        bad = [m for m in self.metrics if m not in SELECTION_METRICS]
        if bad:
            raise ConfigError(f"unknown selection metrics {bad}; choose from {SELECTION_METRICS}")
        if self.per_metric_top < 1:
            raise ConfigError("per_metric_top must be >= 1")


@dataclass(frozen=True, eq=False)
class ConfigScore:
    spec: LearnerSpec
    fold_values: dict[str, tuple[float, ...]]
    valid: bool = True
    error: str = ""
    oof_scores: np.ndarray | None = field(default=None, repr=False)
    plan_id: str = ""

    @property
    def cv_mean(self) -> dict[str, float]:
        return {m: float(np.mean(v)) for m, v in self.fold_values.items()}


def model_seed(seed: int, spec: LearnerSpec, excluded=()) -> int:
    """Seed of the model for ``spec`` trained without the folds in ``excluded``."""
    return derive_seed(seed, "fit", spec.spec_id, sorted(int(f) for f in excluded))


def fit_excluding(spec: LearnerSpec, ds: Dataset, folds: FoldPlan | None, excluded,
                  seed: int, smote: SmoteParams | None = None) -> FittedModel:
    """Fit ``spec`` on the rows outside ``excluded`` folds, balancing them first if asked."""
    excluded = tuple(sorted(int(f) for f in excluded))
    train = ds if not excluded else ds.take(folds.rows_excluding(excluded))
    if smote is not None:
        n_neg, n_pos = train.class_counts()
        if min(n_neg, n_pos) < smote_target_count(max(n_neg, n_pos), smote.target_ratio):
            params = SmoteParams(smote.k_neighbors, smote.target_ratio,
                                 derive_seed(smote.seed, "cv", excluded))
            train = smote_oversample(train, params)
    return fit_learner(spec, train.X, train.y, model_seed(seed, spec, excluded))


def selection_metrics(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> dict:
    tm = threshold_metrics(confusion_at_threshold(scores, labels, threshold))
    return {"accuracy": tm.accuracy, "precision": tm.precision, "recall": tm.recall,
            "roc_auc": roc_auc(scores, labels)}


def _fold_scores(spec, ds, folds, fold, seed, smote):
    model = fit_excluding(spec, ds, folds, (fold,), seed, smote)
    rows = folds.rows(fold)
    return rows, predict_score(model, ds.X[rows])


def _assemble(spec, ds, folds, parts, threshold) -> ConfigScore:
    values = {m: [] for m in SELECTION_METRICS}
    oof = np.full(ds.n_rows, np.nan)
    try:
        for rows, s in parts:
            oof[rows] = s
            for m, v in selection_metrics(s, ds.labels[rows], threshold).items():
                values[m].append(v)
    except DataError as exc:
        return ConfigScore(spec, {}, valid=False, error=str(exc), plan_id=folds.plan_id)
    oof.setflags(write=False)
    return ConfigScore(spec, {m: tuple(v) for m, v in values.items()}, oof_scores=oof,
                       plan_id=folds.plan_id)


def cv_score(spec: LearnerSpec, ds: Dataset, folds: FoldPlan, seed: int,
             smote: SmoteParams | None = None, threshold: float = 0.5) -> ConfigScore:
    """k-fold scores of one configuration; also keeps its out-of-fold predictions."""
    if folds.n_rows != ds.n_rows:
        raise DataError("fold plan does not match the dataset")
    parts = [_fold_scores(spec, ds, folds, f, seed, smote) for f in range(folds.k)]
    return _assemble(spec, ds, folds, parts, threshold)


def grid_search(grid: list[LearnerSpec], ds: Dataset, folds: FoldPlan, seed: int,
                smote: SmoteParams | None = None, threads: int = 1,
                threshold: float = 0.5) -> list[ConfigScore]:
    """Score every distinct spec; valid results ordered by ``spec_id``."""
    if not grid:
        raise ConfigError("empty hyperparameter grid")
    if folds.n_rows != ds.n_rows:
        raise DataError("fold plan does not match the dataset")
    specs = sorted({s.spec_id: s for s in grid}.values(), key=lambda s: s.spec_id)
    tasks = [(s, f) for s in specs for f in range(folds.k)]
    parts = pmap(lambda t: _fold_scores(t[0], ds, folds, t[1], seed, smote), tasks, threads)
    out = []
    for i, spec in enumerate(specs):
        cs = _assemble(spec, ds, folds, parts[i * folds.k:(i + 1) * folds.k], threshold)
        if cs.valid:
            out.append(cs)
        else:
            logger.warning("config %s invalid: %s", spec, cs.error)
    if not out:
        raise DataError("every configuration in the grid was invalid")
    return out


def select_top_configs(scores: list[ConfigScore], policy: SelectionPolicy) -> list[LearnerSpec]:
    """Union of the ``per_metric_top`` best specs per metric; near-ties go to the lower spec_id."""
    valid = [s for s in scores if s.valid]
    if not valid:
        raise DataError("no valid configurations to select from")
    chosen: dict[str, LearnerSpec] = {}
    for metric in policy.metrics:
        pool = list(valid)
        for _ in range(min(policy.per_metric_top, len(pool))):
            best = max(s.cv_mean[metric] for s in pool)
            tied = [s for s in pool if s.cv_mean[metric] >= best - TIE_TOLERANCE]
            pick = min(tied, key=lambda s: s.spec.spec_id)
            pool.remove(pick)
            chosen.setdefault(pick.spec.spec_id, pick.spec)
    return list(chosen.values())
