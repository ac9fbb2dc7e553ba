"""End-to-end training pipeline, model persistence and evaluation.

Order of operations (training):

    split raw rows -> missingness filter (train stats) -> mean imputation
    (train stats) -> standardization (train stats) -> stack fitting, with SMOTE
    applied to the training rows of every individual model fit.

With ``compat_presplit_smote`` the data are imputed and balanced before the
split instead, reproducing the listed order of the original protocol.
"""
from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass

from . import container
from .config import PipelineConfig
from .errors import DataError, ModelFormatError, StacktierError
from .metrics import MetricReport, full_report
from .sampling import smote_oversample
from .seeding import stable_id
from .stacking import (FamilyBank, OneLevelModel, TwoLevelModel, build_banks, fit_one_level,
                       fit_two_level, model_from_state, predict_model)
from .tabular import (Dataset, FoldPlan, Preprocessing, apply_standardizer,
                      drop_high_missing, fit_standardizer, impute_mean, stratified_split)

logger = logging.getLogger("stacktier")

FORMAT_NAME = "stacktier-model"


class StageError(StacktierError):
    """An error raised inside a named pipeline stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except (StacktierError, ValueError) as exc:
        logger.debug("[%s] failed: %s", name, exc)
        raise StageError(name, exc) from exc


def _shape(ds: Dataset) -> str:
    n_neg, n_pos = ds.class_counts()
    return f"{ds.n_rows} rows x {ds.n_features} features ({n_pos} positive, {n_neg} negative)"


@dataclass
class TrainResult:
    model: TwoLevelModel | OneLevelModel
    preprocessing: Preprocessing
    train_raw: Dataset
    test_raw: Dataset
    train_report: MetricReport
    test_report: MetricReport
    folds: FoldPlan
    banks: dict[str, FamilyBank]
    fingerprint: str


def fit_preprocessing(train_raw: Dataset, cfg: PipelineConfig) -> tuple[Preprocessing, Dataset]:
    """Fit the frozen preprocessing on the training partition; return it and the transformed data."""
    with stage("missingness"):
        kept = drop_high_missing(train_raw, cfg.max_missing_fraction)
        dropped = sorted(set(train_raw.feature_names) - set(kept.feature_names))
        logger.info("[missingness] kept %d of %d features%s", kept.n_features,
                    train_raw.n_features, f"; dropped {', '.join(dropped)}" if dropped else "")
    with stage("impute"):
        imputed, means = impute_mean(kept)
        logger.info("[impute] filled %d cells", int(kept.missing_mask.sum()))
    with stage("standardize"):
        std = fit_standardizer(imputed)
        out = apply_standardizer(std, imputed)
        logger.info("[standardize] %d constant features", int(std.constant.sum()))
    pre = Preprocessing(train_raw.feature_names, kept.feature_names, means, std)
    return pre, out


def fit_on_partition(train_raw: Dataset, cfg: PipelineConfig, banks=None):
    """Preprocess and fit the configured model on an already-split training partition."""
    pre, train = fit_preprocessing(train_raw, cfg)
    with stage("fit"):
        if banks is None:
            banks = build_banks(train, cfg.stack)
        fit = fit_two_level if cfg.levels == 2 else fit_one_level
        model = fit(train, cfg.stack, pre, banks)
        logger.info("[fit] %s model on %s", model.name, _shape(train))
    return model, pre, banks


def split_raw(raw: Dataset, cfg: PipelineConfig) -> tuple[Dataset, Dataset]:
    with stage("split"):
        if cfg.compat_presplit_smote:
            if cfg.smote is None:
                raise DataError("compat_presplit_smote needs SMOTE enabled")
            logger.warning("[split] compat mode: imputing and balancing BEFORE the split; "
                           "test rows influence training statistics and synthetic rows")
            imputed, _ = impute_mean(drop_high_missing(raw, cfg.max_missing_fraction))
            raw = smote_oversample(imputed, cfg.smote)
            logger.info("[smote] balanced full data: %s", _shape(raw))
        else:
            logger.info("[smote] applied to training rows of each model fit only")
        train, test = stratified_split(raw, cfg.test_fraction, cfg.seed)
        logger.info("[split] train %s", _shape(train))
        logger.info("[split] test %s", _shape(test))
    return train, test


def train_pipeline(raw: Dataset, cfg: PipelineConfig) -> TrainResult:
    logger.info("[load] %s", _shape(raw))
    train_raw, test_raw = split_raw(raw, cfg)
    model, pre, (folds, banks) = fit_on_partition(train_raw, cfg)
    with stage("evaluate"):
        train_report = full_report(predict_model(model, train_raw), train_raw.labels,
                                   cfg.stack.threshold)
        test_report = full_report(predict_model(model, test_raw), test_raw.labels,
                                  cfg.stack.threshold)
        logger.info("[evaluate] test ROC-AUC %.4f, accuracy %.4f", test_report.roc_auc,
                    test_report.accuracy)
    return TrainResult(model, pre, train_raw, test_raw, train_report, test_report, folds, banks,
                       cfg.fingerprint())


# --------------------------------------------------------------- persistence

def model_container_state(model, cfg: PipelineConfig) -> dict:
    return {"format": FORMAT_NAME, "fingerprint": cfg.fingerprint(),
            "config": cfg.model_state(), "model": model.to_state()}


def save_model(path, model, cfg: PipelineConfig):
    return container.save(path, model_container_state(model, cfg))


def load_model(path):
    """Load and verify a container; returns ``(model, config_state)``."""
    state = container.load(path)
    if not isinstance(state, dict) or state.get("format") != FORMAT_NAME:
        raise ModelFormatError("container does not hold a stacktier model")
    cfg_state = state["config"]
    if stable_id(cfg_state, length=16) != state["fingerprint"]:
        raise ModelFormatError("config fingerprint mismatch; container is corrupt")
    model_state = state["model"]
    if model_state["fingerprint"] != stable_id(cfg_state["stack"], length=16):
        raise ModelFormatError("model was not produced by the stored config")
    if model_state["preprocessing"] is None:
        raise ModelFormatError("container lacks frozen preprocessing")
    try:
        model = model_from_state(model_state)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model state: {exc}") from None
    return model, cfg_state


def evaluate(model, raw: Dataset, threshold: float = 0.5) -> MetricReport:
    with stage("evaluate"):
        scores = predict_model(model, raw)
        return full_report(scores, raw.labels, threshold)


def grid_diagnostics_csv(banks: dict[str, FamilyBank]) -> str:
    lines = ["family,spec_id,hyperparameters,selected,accuracy,precision,recall,roc_auc"]
    for fam, bank in banks.items():
        chosen = {s.spec_id for s in bank.selected}
        for cs in bank.scores:
            m = cs.cv_mean
            hp = ";".join(f"{k}={v}" for k, v in cs.spec.hyperparameters)
            lines.append(",".join([fam, cs.spec.spec_id, hp, str(int(cs.spec.spec_id in chosen)),
                                   *(f"{m[k]:.4f}" for k in
                                     ("accuracy", "precision", "recall", "roc_auc"))]))
    return "\n".join(lines) + "\n"

