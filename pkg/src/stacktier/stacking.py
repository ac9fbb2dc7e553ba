"""Internal per-family stacks, the second-level meta stack, and the one-level baseline.

Level 1 (per family): several tuned configurations of one learner family are
combined by a small combiner model trained on their out-of-fold scores.
Level 2: a meta-learner combines the per-family stack outputs.

Leakage control. A single stratified fold plan is shared by everything. For
fold ``f`` the level-2 training column is produced by a stack fitted without
fold ``f``: its members are the models trained without ``f`` and its combiner
is trained on scores of rows in fold ``g != f`` from models trained without
both ``f`` and ``g``.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from ._parallel import pmap
from .errors import ConfigError, DataError
from .learners import FittedModel, LearnerSpec, fit_learner, predict_score
from .sampling import SmoteParams
from .seeding import derive_seed, stable_id
from .tabular import Dataset, FoldPlan, Preprocessing, make_folds
from .tuning import (ConfigScore, SelectionPolicy, fit_excluding, grid_search,
                     select_top_configs)

logger = logging.getLogger(__name__)

BASE_FAMILIES = ("random_forest", "gbm", "xgb", "linear_svc")
COMBINER_KINDS = ("LR", "RF")


def _grid(family: str, **axes) -> list[LearnerSpec]:
    keys = list(axes)
    return [LearnerSpec.create(family, **dict(zip(keys, combo)))
            for combo in itertools.product(*(axes[k] for k in keys))]


def default_grids() -> dict[str, list[LearnerSpec]]:
    return {
        "tree": _grid("tree", max_depth=[3, 5, 8, None]),
        "random_forest": _grid("random_forest", n_trees=[100, 300], max_depth=[3, 5, 8, None]),
        "gbm": _grid("gbm", n_rounds=[100, 300], learning_rate=[0.05, 0.1, 0.3], max_depth=[2, 3]),
        "xgb": _grid("xgb", n_rounds=[100, 300], learning_rate=[0.05, 0.1, 0.3], max_depth=[2, 3],
                     **{"lambda": [1.0, 10.0]}, gamma=[0.0, 1.0]),
        "linear_svc": _grid("linear_svc", C=[0.1, 1.0, 10.0]),
        "logreg": _grid("logreg", l2=[0.01, 1.0]),
    }


def default_combiner_specs() -> dict[str, LearnerSpec]:
    return {
        "LR": LearnerSpec.create("logreg", l2=1e-3),
        "RF": LearnerSpec.create("random_forest", n_trees=300, max_depth=None, max_features="sqrt"),
    }


def parse_stacking_name(name: str) -> tuple[str, str]:
    """``"A-B"`` means internal combiner ``A`` and meta-learner ``B``."""
    parts = name.upper().split("-")
    if len(parts) != 2 or any(p not in COMBINER_KINDS for p in parts):
        raise ConfigError(f"stacking name must be one of LR-LR, LR-RF, RF-LR, RF-RF; got {name!r}")
    return parts[0], parts[1]


@dataclass
class StackConfig:
    families: tuple[str, ...] = BASE_FAMILIES
    grids: dict[str, list[LearnerSpec]] = field(default_factory=default_grids)
    policy: SelectionPolicy = field(default_factory=SelectionPolicy)
    combiner: str = "RF"
    meta: str = "RF"
    k: int = 5
    seed: int = 0
    combiner_specs: dict[str, LearnerSpec] = field(default_factory=default_combiner_specs)
    smote: SmoteParams | None = None
    threshold: float = 0.5
    threads: int = 1

    def __post_init__(self):
        self.families = tuple(self.families)
        for kind in (self.combiner, self.meta):
            if kind not in COMBINER_KINDS:
                raise ConfigError(f"combiner kind must be LR or RF, got {kind!r}")
        missing = [f for f in self.families if not self.grids.get(f)]
        if missing:
            raise ConfigError(f"no hyperparameter grid for families {missing}")

    @property
    def name(self) -> str:
        return f"{self.combiner}-{self.meta}"

    def with_stacking(self, name: str) -> "StackConfig":
        combiner, meta = parse_stacking_name(name)
        d = dict(self.__dict__)
        d.update(combiner=combiner, meta=meta)
        return StackConfig(**d)

    def to_state(self) -> dict:
        # threads is excluded: it must never change the fitted model
        return {
            "families": list(self.families),
            "grids": {f: [s.to_state() for s in self.grids[f]] for f in self.families},
            "policy": {"metrics": list(self.policy.metrics),
                       "per_metric_top": self.policy.per_metric_top},
            "combiner": self.combiner,
            "meta": self.meta,
            "k": self.k,
            "seed": self.seed,
            "combiner_specs": {k: s.to_state() for k, s in sorted(self.combiner_specs.items())},
            "smote": None if self.smote is None else self.smote.__dict__,
            "threshold": self.threshold,
        }

    def fingerprint(self) -> str:
        return stable_id(self.to_state(), length=16)


# ------------------------------------------------------------ meta features

@dataclass(frozen=True, eq=False)
class MetaFeatures:
    """Stacking inputs plus provenance.

    ``excluded[i, f]`` is True when every model that produced row ``i`` was
    trained without fold ``f``.
    """

    values: np.ndarray
    spec_ids: tuple[str, ...]
    plan_id: str
    excluded: np.ndarray

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def assert_no_leakage(self, folds: FoldPlan, rows=None) -> None:
        if folds.plan_id != self.plan_id:
            raise AssertionError("meta features were built on a different fold plan")
        rows = np.arange(folds.n_rows) if rows is None else np.asarray(rows)
        own = self.excluded[rows, folds.assignment[rows]]
        if not own.all():
            raise AssertionError(f"{int((~own).sum())} rows scored by models that saw them")


def _oof_excluded(folds: FoldPlan) -> np.ndarray:
    ex = np.zeros((folds.n_rows, folds.k), dtype=bool)
    ex[np.arange(folds.n_rows), folds.assignment] = True
    return ex


def oof_meta_features(specs: list[LearnerSpec], ds: Dataset, folds: FoldPlan, seed: int,
                      smote: SmoteParams | None = None, threads: int = 1) -> MetaFeatures:
    """Entry ``(i, j)``: spec ``j`` trained without row ``i``'s fold, scored on row ``i``."""
    if folds.n_rows != ds.n_rows:
        raise DataError("fold plan does not match the dataset")
    tasks = [(j, f) for j in range(len(specs)) for f in range(folds.k)]

    def run(task):
        j, f = task
        model = fit_excluding(specs[j], ds, folds, (f,), seed, smote)
        return predict_score(model, ds.X[folds.rows(f)])

    out = np.empty((ds.n_rows, len(specs)))
    for (j, f), s in zip(tasks, pmap(run, tasks, threads)):
        out[folds.rows(f), j] = s
    return MetaFeatures(out, tuple(s.spec_id for s in specs), folds.plan_id, _oof_excluded(folds))


def meta_from_scores(scores: list[ConfigScore], folds: FoldPlan) -> MetaFeatures:
    """Reuse the out-of-fold predictions already computed during grid search."""
    for s in scores:
        if s.plan_id != folds.plan_id or s.oof_scores is None:
            raise DataError("config scores were not computed on this fold plan")
    values = np.column_stack([s.oof_scores for s in scores])
    return MetaFeatures(values, tuple(s.spec.spec_id for s in scores), folds.plan_id,
                        _oof_excluded(folds))


# ----------------------------------------------------------- family members

@dataclass(frozen=True, eq=False)
class FamilyBank:
    """Everything the combiners of one family need, fitted once per dataset.

    ``inner[f]`` holds, for rows outside fold ``f``, the member scores from
    models trained without both ``f`` and the row's own fold (NaN on fold ``f``).
    """

    family: str
    scores: list[ConfigScore]
    selected: list[LearnerSpec]
    oof: MetaFeatures
    inner: list[MetaFeatures]
    full_models: list[FittedModel]


def build_family_bank(family: str, ds: Dataset, folds: FoldPlan, config: StackConfig,
                      grid: list[LearnerSpec] | None = None) -> FamilyBank:
    grid = config.grids[family] if grid is None else grid
    if any(s.family != family for s in grid):
        raise ConfigError(f"grid for {family} contains other families")
    seed, k = config.seed, folds.k
    scores = grid_search(grid, ds, folds, seed, config.smote, config.threads, config.threshold)
    selected = select_top_configs(scores, config.policy)
    by_id = {s.spec.spec_id: s for s in scores}
    oof = meta_from_scores([by_id[s.spec_id] for s in selected], folds)
    logger.info("%s: %d configs scored, %d selected", family, len(scores), len(selected))

    m = len(selected)
    pairs = [(j, f, g) for j in range(m) for f in range(k) for g in range(f + 1, k)]

    def run_pair(task):
        j, f, g = task
        model = fit_excluding(selected[j], ds, folds, (f, g), seed, config.smote)
        return (predict_score(model, ds.X[folds.rows(f)]),
                predict_score(model, ds.X[folds.rows(g)]))

    inner_vals = [np.full((ds.n_rows, m), np.nan) for _ in range(k)]
    inner_ex = [np.zeros((ds.n_rows, k), dtype=bool) for _ in range(k)]
    for (j, f, g), (sf, sg) in zip(pairs, pmap(run_pair, pairs, config.threads)):
        inner_vals[g][folds.rows(f), j] = sf
        inner_vals[f][folds.rows(g), j] = sg
    for f in range(k):
        rows = folds.rows_excluding([f])
        inner_ex[f][rows, f] = True
        inner_ex[f][rows, folds.assignment[rows]] = True
    ids = tuple(s.spec_id for s in selected)
    inner = [MetaFeatures(inner_vals[f], ids, folds.plan_id, inner_ex[f]) for f in range(k)]

    full = pmap(lambda s: fit_excluding(s, ds, None, (), seed, config.smote), selected,
                config.threads)
    return FamilyBank(family, scores, selected, oof, inner, full)


def build_banks(train: Dataset, config: StackConfig) -> tuple[FoldPlan, dict[str, FamilyBank]]:
    folds = make_folds(train, config.k, config.seed)
    banks = {fam: build_family_bank(fam, train, folds, config) for fam in config.families}
    return folds, banks


# ---------------------------------------------------------------- level one

def _fit_combiner(kind: str, Z: np.ndarray, y: np.ndarray, seed: int,
                  config: StackConfig) -> FittedModel:
    return fit_learner(config.combiner_specs[kind], Z, y, seed)


@dataclass(frozen=True, eq=False)
class InternalStack:
    family: str
    member_specs: tuple[LearnerSpec, ...]
    members: tuple[FittedModel, ...]
    combiner_kind: str
    combiner: FittedModel

    def __post_init__(self):
        if not self.members or len(self.members) != len(self.member_specs):
            raise ConfigError("an internal stack needs m >= 1 fitted members")
        if any(s.family != self.family for s in self.member_specs):
            raise ConfigError("internal stack members must share one family")
        if self.combiner.n_features != len(self.members):
            raise ConfigError("combiner width must equal the member count")

    @property
    def n_features(self) -> int:
        return self.members[0].n_features

    def to_state(self) -> dict:
        return {"family": self.family, "combiner_kind": self.combiner_kind,
                "members": [m.to_state() for m in self.members],
                "combiner": self.combiner.to_state()}

    @classmethod
    def from_state(cls, state: dict) -> "InternalStack":
        members = tuple(FittedModel.from_state(m) for m in state["members"])
        return cls(state["family"], tuple(m.spec for m in members), members,
                   state["combiner_kind"], FittedModel.from_state(state["combiner"]))


def member_scores(models, X: np.ndarray) -> np.ndarray:
    return np.column_stack([predict_score(m, X) for m in models])


def stack_from_bank(bank: FamilyBank, y: np.ndarray, kind: str,
                    config: StackConfig) -> InternalStack:
    combiner = _fit_combiner(kind, bank.oof.values, y,
                             derive_seed(config.seed, "combiner", bank.family, "full"), config)
    return InternalStack(bank.family, tuple(bank.selected), tuple(bank.full_models), kind, combiner)


def fit_internal_stack(family: str, ds: Dataset, folds: FoldPlan, policy: SelectionPolicy,
                       combiner_kind: str, seed: int, config: StackConfig | None = None,
                       grid: list[LearnerSpec] | None = None) -> InternalStack:
    """Tune one family, keep the per-metric winners, and fit their combiner."""
    config = config or StackConfig()
    d = dict(config.__dict__)
    d.update(policy=policy, combiner=combiner_kind, seed=seed, k=folds.k)
    if grid is not None:
        d["grids"] = {**config.grids, family: grid}
    cfg = StackConfig(**d)
    bank = build_family_bank(family, ds, folds, cfg, grid)
    return stack_from_bank(bank, ds.y, combiner_kind, cfg)


def predict_internal(stack: InternalStack, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != stack.n_features:
        raise DataError(f"stack expects {stack.n_features} features")
    return predict_score(stack.combiner, member_scores(stack.members, X))


def second_level_column(bank: FamilyBank, y: np.ndarray, folds: FoldPlan, kind: str,
                        config: StackConfig) -> np.ndarray:
    """Out-of-fold output of this family's stack, one fold-complement stack per fold."""
    col = np.empty(folds.n_rows)
    for f in range(folds.k):
        train_rows = folds.rows_excluding([f])
        comb = _fit_combiner(kind, bank.inner[f].values[train_rows], y[train_rows],
                             derive_seed(config.seed, "combiner", bank.family, f), config)
        rows = folds.rows(f)
        col[rows] = predict_score(comb, bank.oof.values[rows])
    return col


# ---------------------------------------------------------------- level two

@dataclass(frozen=True, eq=False)
class TwoLevelModel:
    stacks: tuple[InternalStack, ...]
    meta_kind: str
    meta: FittedModel
    preprocessing: Preprocessing | None
    fingerprint: str
    level2: MetaFeatures | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.meta.n_features != len(self.stacks):
            raise ConfigError("meta-learner width must equal the number of stacks")
        widths = {s.n_features for s in self.stacks}
        if len(widths) != 1:
            raise ConfigError("all stacks must share one feature schema")

    @property
    def name(self) -> str:
        return f"{self.stacks[0].combiner_kind}-{self.meta_kind}"

    def to_state(self) -> dict:
        return {"kind": "two_level", "meta_kind": self.meta_kind,
                "stacks": [s.to_state() for s in self.stacks], "meta": self.meta.to_state(),
                "preprocessing": None if self.preprocessing is None else self.preprocessing.to_state(),
                "fingerprint": self.fingerprint}


@dataclass(frozen=True, eq=False)
class OneLevelModel:
    members: tuple[FittedModel, ...]
    meta_kind: str
    meta: FittedModel
    preprocessing: Preprocessing | None
    fingerprint: str

    @property
    def name(self) -> str:
        return f"one-level-{self.meta_kind}"

    def to_state(self) -> dict:
        return {"kind": "one_level", "meta_kind": self.meta_kind,
                "members": [m.to_state() for m in self.members], "meta": self.meta.to_state(),
                "preprocessing": None if self.preprocessing is None else self.preprocessing.to_state(),
                "fingerprint": self.fingerprint}


def model_from_state(state: dict):
    pre = state["preprocessing"]
    pre = None if pre is None else Preprocessing.from_state(pre)
    meta = FittedModel.from_state(state["meta"])
    if state["kind"] == "two_level":
        stacks = tuple(InternalStack.from_state(s) for s in state["stacks"])
        return TwoLevelModel(stacks, state["meta_kind"], meta, pre, state["fingerprint"])
    if state["kind"] == "one_level":
        members = tuple(FittedModel.from_state(m) for m in state["members"])
        return OneLevelModel(members, state["meta_kind"], meta, pre, state["fingerprint"])
    raise DataError(f"unknown model kind {state['kind']!r}")


def fit_two_level(train: Dataset, config: StackConfig, preprocessing: Preprocessing | None = None,
                  banks: tuple[FoldPlan, dict[str, FamilyBank]] | None = None) -> TwoLevelModel:
    """Fit one internal stack per family and a meta-learner over their outputs.

    ``train`` must already be preprocessed; ``banks`` (from :func:`build_banks`)
    lets several combiner configurations share the expensive member fits.
    """
    folds, bank_map = banks if banks is not None else build_banks(train, config)
    y = train.y
    stacks, cols = [], []
    for fam in config.families:
        bank = bank_map[fam]
        stacks.append(stack_from_bank(bank, y, config.combiner, config))
        cols.append(second_level_column(bank, y, folds, config.combiner, config))
    Z = np.column_stack(cols)
    level2 = MetaFeatures(Z, tuple(config.families), folds.plan_id, _oof_excluded(folds))
    meta = _fit_combiner(config.meta, Z, y, derive_seed(config.seed, "meta"), config)
    return TwoLevelModel(tuple(stacks), config.meta, meta, preprocessing, config.fingerprint(),
                         level2)


def fit_one_level(train: Dataset, config: StackConfig, preprocessing: Preprocessing | None = None,
                  banks: tuple[FoldPlan, dict[str, FamilyBank]] | None = None) -> OneLevelModel:
    """Pool every family's selected configs and fit a single meta-learner on them."""
    folds, bank_map = banks if banks is not None else build_banks(train, config)
    members, cols = [], []
    for fam in config.families:
        members.extend(bank_map[fam].full_models)
        cols.append(bank_map[fam].oof.values)
    Z = np.hstack(cols)
    meta = _fit_combiner(config.meta, Z, train.y, derive_seed(config.seed, "one_level"), config)
    return OneLevelModel(tuple(members), config.meta, meta, preprocessing, config.fingerprint())


def _features(model, data) -> np.ndarray:
    if isinstance(data, Dataset):
        if model.preprocessing is not None:
            return model.preprocessing.transform(data)
        return data.X
    return np.asarray(data, dtype=np.float64)


def internal_outputs(model: TwoLevelModel, data) -> np.ndarray:
    X = _features(model, data)
    return np.column_stack([predict_internal(s, X) for s in model.stacks])


def predict_two_level(model: TwoLevelModel, data) -> np.ndarray:
    """Final scores. ``data`` is a raw Dataset (frozen preprocessing is applied)
    or an already-preprocessed matrix."""
    return predict_score(model.meta, internal_outputs(model, data))


def predict_one_level(model: OneLevelModel, data) -> np.ndarray:
    return predict_score(model.meta, member_scores(model.members, _features(model, data)))


def predict_model(model, data) -> np.ndarray:
    if isinstance(model, TwoLevelModel):
        return predict_two_level(model, data)
    return predict_one_level(model, data)
