"""Permutation feature importance and top-k feature ablation."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ._parallel import pmap
from .errors import ConfigError, DataError
from .metrics import (MetricReport, average_precision, confusion_at_threshold, full_report,
                      report_csv, roc_auc, threshold_metrics)
from .pipeline import fit_on_partition
from .seeding import derive_seed
from .stacking import predict_model
from .tabular import Dataset

logger = logging.getLogger(__name__)

METRICS = ("roc_auc", "auprc", "accuracy", "precision", "recall", "f1")


def metric_value(name: str, scores, labels, threshold: float = 0.5) -> float:
    if name == "roc_auc":
        return roc_auc(scores, labels)
    if name == "auprc":
        return average_precision(scores, labels)
    if name in METRICS:
        return getattr(threshold_metrics(confusion_at_threshold(scores, labels, threshold)), name)
    raise ConfigError(f"unknown metric {name!r}; choose from {METRICS}")


@dataclass(frozen=True)
class FeatureImportance:
    feature: str
    mean_drop: float
    std_drop: float
    rank: int
    drops: tuple[float, ...]


@dataclass(frozen=True)
class ImportanceReport:
    metric: str
    baseline: float
    features: tuple[FeatureImportance, ...]   # sorted by rank

    def ranked_features(self) -> list[str]:
        return [f.feature for f in self.features]

    def by_name(self) -> dict[str, FeatureImportance]:
        return {f.feature: f for f in self.features}

    def to_csv(self) -> str:
        lines = ["rank,feature,mean_drop,std_drop"]
        lines += [f"{f.rank},{f.feature},{f.mean_drop:.6f},{f.std_drop:.6f}" for f in self.features]
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"metric": self.metric, "baseline": self.baseline,
                "features": [{"rank": f.rank, "feature": f.feature, "mean_drop": f.mean_drop,
                              "std_drop": f.std_drop, "drops": list(f.drops)}
                             for f in self.features]}


def _permuted(ds: Dataset, j: int, perm: np.ndarray) -> Dataset:
    # value and mask move together so a masked cell stays masked
    values = ds.values.copy()
    mask = ds.missing_mask.copy()
    values[:, j] = ds.values[perm, j]
    mask[:, j] = ds.missing_mask[perm, j]
    return ds.replace(values=values, missing_mask=mask)


def permutation_importance(model, data: Dataset, metric: str = "roc_auc", repeats: int = 10,
                           seed: int = 0, threshold: float = 0.5,
                           threads: int = 1) -> ImportanceReport:
    """Drop in ``metric`` when one raw column is shuffled, averaged over ``repeats``.

    Each (feature, repeat) pair draws its permutation from its own seed, so
    results do not depend on evaluation order or thread count.
    """
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    n_neg, n_pos = data.class_counts()
    if metric in ("roc_auc", "auprc") and (n_neg == 0 or n_pos == 0):
        raise DataError(f"{metric} is undefined on single-class data")
    baseline = metric_value(metric, predict_model(model, data), data.labels, threshold)

    def run(j: int) -> list[float]:
        name = data.feature_names[j]
        out = []
        for r in range(repeats):
            rng = np.random.default_rng(derive_seed(seed, "permute", name, r))
            perm = rng.permutation(data.n_rows)
            scores = predict_model(model, _permuted(data, j, perm))
            out.append(baseline - metric_value(metric, scores, data.labels, threshold))
        return out

    drops = pmap(run, range(data.n_features), threads)
    means = np.array([np.mean(d) for d in drops])
    order = np.argsort(-means, kind="stable")
    feats = tuple(
        FeatureImportance(data.feature_names[j], float(means[j]), float(np.std(drops[j])),
                          rank + 1, tuple(float(v) for v in drops[j]))
        for rank, j in enumerate(order))
    return ImportanceReport(metric, float(baseline), feats)


# ------------------------------------------------------------------ ablation

@dataclass(frozen=True)
class AblationRow:
    feature_count: int
    features: tuple[str, ...]
    report: MetricReport

    @property
    def label(self) -> str:
        return f"{self.feature_count} Features"


def _check_counts(counts, available: int) -> list[int]:
    counts = [int(c) for c in counts]
    if not counts:
        raise ConfigError("no feature counts given")
    if counts != sorted(counts):
        raise ConfigError("feature counts must be sorted ascending")
    for c in counts:
        if not 1 <= c <= available:
            raise DataError(f"feature count {c} exceeds the {available} available features")
    return counts


def top_k(ranked_features, k: int, schema) -> tuple[str, ...]:
    """The ``k`` highest-ranked names, kept in the dataset's column order."""
    chosen = set(ranked_features[:k])
    return tuple(n for n in schema if n in chosen)


def feature_ablation(train: Dataset, test: Dataset, ranked_features, counts, config,
                     seed: int | None = None) -> list[AblationRow]:
    """Retrain the full pipeline on the top-k ranked raw features for each k.

    ``config`` is a :class:`~stacktier.config.PipelineConfig`; ``train`` and
    ``test`` are raw partitions.
    """
    ranked = list(ranked_features)
    unknown = [n for n in ranked if n not in train.feature_names]
    if unknown:
        raise DataError(f"ranked features not in data: {', '.join(unknown)}")
    counts = _check_counts(counts, len(ranked))
    if seed is not None:
        config = config.with_overrides(seed=seed)
    rows = []
    for k in counts:
        names = top_k(ranked, k, train.feature_names)
        model, _, _ = fit_on_partition(train.select(names), config)
        scores = predict_model(model, test.select(names))
        rep = full_report(scores, test.labels, config.stack.threshold)
        logger.info("[ablate] %d features: ROC-AUC %.4f", k, rep.roc_auc)
        rows.append(AblationRow(k, names, rep))
    return rows


def masked_ablation(model, test: Dataset, ranked_features, counts,
                    threshold: float = 0.5) -> list[AblationRow]:
    """Cheap preview: keep one fitted model and mask all but the top-k columns.

    Masked cells are filled with the frozen training means, so the dropped
    features carry no row-specific information.
    """
    ranked = list(ranked_features)
    counts = _check_counts(counts, len(ranked))
    rows = []
    for k in counts:
        names = top_k(ranked, k, test.feature_names)
        keep = np.array([n in names for n in test.feature_names])
        masked = test.replace(missing_mask=test.missing_mask | ~keep[None, :])
        rep = full_report(predict_model(model, masked), test.labels, threshold)
        rows.append(AblationRow(k, names, rep))
    return rows


def ablation_csv(rows: list[AblationRow]) -> str:
    return report_csv([(r.label, r.report) for r in rows], key="Feature Set")

