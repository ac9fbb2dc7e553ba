"""Base learner families with a uniform ``fit_learner`` / ``predict_score`` interface.

Families: ``tree`` (CART, Gini), ``random_forest``, ``gbm`` (logistic-loss
gradient boosting with Newton leaves), ``xgb`` (second-order regularized
boosting), ``linear_svc`` (Pegasos hinge-loss SGD) and ``logreg``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .errors import ConfigError, DataError
from .seeding import derive_seed, stable_id

logger = logging.getLogger(__name__)

FAMILIES = ("tree", "random_forest", "gbm", "xgb", "linear_svc", "logreg")

DEFAULTS: dict[str, dict] = {
    "tree": {"max_depth": None, "min_samples_leaf": 1},
    "random_forest": {"n_trees": 100, "max_depth": None, "min_samples_leaf": 1,
                      "max_features": "sqrt", "bootstrap": True},
    "gbm": {"n_rounds": 100, "learning_rate": 0.1, "max_depth": 3, "min_samples_leaf": 1},
    "xgb": {"n_rounds": 100, "learning_rate": 0.3, "max_depth": 3, "lambda": 1.0,
            "gamma": 0.0, "min_child_weight": 1.0},
    "linear_svc": {"C": 1.0, "epochs": 30, "calibration": 2.0},
    "logreg": {"l2": 0.01, "tol": 1e-6, "max_iter": 20000},
}

# Line-search halvings before a boosting round is dropped entirely.
_MAX_HALVINGS = 40


def _check(cond: bool, family: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{family}: {msg}")


def _validate(family: str, hp: dict) -> None:
    depth = hp.get("max_depth", 1)
    _check(depth is None or (isinstance(depth, int) and depth >= 0), family,
           "max_depth must be None or a non-negative integer")
    if "min_samples_leaf" in hp:
        _check(hp["min_samples_leaf"] >= 1, family, "min_samples_leaf must be >= 1")
    if family == "random_forest":
        _check(int(hp["n_trees"]) >= 1, family, "n_trees must be >= 1")
        mf = hp["max_features"]
        _check(mf in ("sqrt", "all") or (isinstance(mf, int) and mf >= 1), family,
               "max_features must be 'sqrt', 'all' or a positive integer")
    if family in ("gbm", "xgb"):
        _check(int(hp["n_rounds"]) >= 0, family, "n_rounds must be >= 0")
        _check(hp["learning_rate"] > 0, family, "learning_rate must be > 0")
    if family == "xgb":
        _check(hp["lambda"] >= 0 and hp["gamma"] >= 0, family, "lambda and gamma must be >= 0")
        _check(hp["min_child_weight"] >= 0, family, "min_child_weight must be >= 0")
        _check(hp["lambda"] > 0 or hp["min_child_weight"] > 0, family,
               "lambda = 0 requires min_child_weight > 0")
    if family == "linear_svc":
        _check(hp["C"] > 0, family, "C must be > 0")
        _check(int(hp["epochs"]) >= 1, family, "epochs must be >= 1")
        _check(hp["calibration"] > 0, family, "calibration must be > 0")
    if family == "logreg":
        _check(hp["l2"] >= 0, family, "l2 must be >= 0")
        _check(hp["tol"] > 0 and int(hp["max_iter"]) >= 1, family, "tol > 0 and max_iter >= 1")


@dataclass(frozen=True)
class LearnerSpec:
    """A learner family plus a full hyperparameter assignment (defaults filled in)."""

    family: str
    hyperparameters: tuple = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown learner family {self.family!r}")
        given = dict(self.hyperparameters)
        defaults = DEFAULTS[self.family]
        unknown = sorted(set(given) - set(defaults))
        if unknown:
            raise ConfigError(f"{self.family}: unknown hyperparameters {unknown}")
        hp = {**defaults, **given}
        for k in ("n_trees", "n_rounds", "epochs", "max_iter"):
            if k in hp:
                hp[k] = int(hp[k])
        _validate(self.family, hp)
        object.__setattr__(self, "hyperparameters", tuple(sorted(hp.items())))

    @classmethod
    def create(cls, family: str, **hyperparameters) -> "LearnerSpec":
        return cls(family, tuple(hyperparameters.items()))

    @property
    def params(self) -> dict:
        return dict(self.hyperparameters)

    @cached_property
    def spec_id(self) -> str:
        return stable_id([self.family, [list(p) for p in self.hyperparameters]])

    def to_state(self) -> dict:
        return {"family": self.family, "hyperparameters": self.params}

    @classmethod
    def from_state(cls, state: dict) -> "LearnerSpec":
        return cls(state["family"], tuple(state["hyperparameters"].items()))

    def __repr__(self) -> str:
        hp = ", ".join(f"{k}={v!r}" for k, v in self.hyperparameters)
        return f"LearnerSpec({self.family}: {hp})"


# ------------------------------------------------------------------ helpers

def sigmoid(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def logistic_loss(margin: np.ndarray, y: np.ndarray) -> float:
    """Mean logistic loss of margins against 0/1 labels."""
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


def gini_impurity(class_counts) -> float:
    n0, n1 = class_counts
    if n0 < 0 or n1 < 0:
        raise ValueError("class counts must be non-negative")
    total = n0 + n1
    if total == 0:
        raise ValueError("gini impurity of an empty node is undefined")
    p0, p1 = n0 / total, n1 / total
    return 1.0 - p0 * p0 - p1 * p1


def xgb_split_gain(grad_left: float, hess_left: float, grad_right: float, hess_right: float,
                   lam: float = 1.0, gamma: float = 0.0) -> float:
    """Second-order structure-score improvement of a split, minus ``gamma``."""
    if lam < 0 or gamma < 0:
        raise ValueError("lambda and gamma must be >= 0")
    if hess_left + lam <= 0 or hess_right + lam <= 0:
        raise ValueError("non-positive denominator in split gain")
    G, H = grad_left + grad_right, hess_left + hess_right
    return 0.5 * (grad_left ** 2 / (hess_left + lam) + grad_right ** 2 / (hess_right + lam)
                  - G ** 2 / (H + lam)) - gamma


def _presort(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    XT = np.ascontiguousarray(X.T)
    order = np.ascontiguousarray(np.argsort(XT, axis=1, kind="stable").astype(np.int32))
    return XT, order


# --------------------------------------------------------------- tree storage

@dataclass(frozen=True, eq=False)
class TreeEnsemble:
    """Flat storage for a list of binary trees; child indices are tree-local."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    offsets: np.ndarray

    @classmethod
    def from_trees(cls, trees) -> "TreeEnsemble":
        sizes = [len(t[0]) for t in trees]
        offsets = np.zeros(len(trees) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum(sizes)

        def cat(i, dtype):
            if not trees:
                return np.zeros(0, dtype=dtype)
            return np.ascontiguousarray(np.concatenate([t[i] for t in trees]).astype(dtype))

        return cls(cat(0, np.int32), cat(1, np.float64), cat(2, np.int32), cat(3, np.int32),
                   cat(4, np.float64), offsets)

    @property
    def n_trees(self) -> int:
        return len(self.offsets) - 1

    def tree(self, i: int) -> dict:
        s, e = self.offsets[i], self.offsets[i + 1]
        return {"feature": self.feature[s:e], "threshold": self.threshold[s:e],
                "left": self.left[s:e], "right": self.right[s:e], "value": self.value[s:e]}

    def features_used(self) -> set[int]:
        return {int(f) for f in np.unique(self.feature) if f >= 0}

    def accumulate(self, X: np.ndarray, init: np.ndarray, vote: bool = False,
                   trees: slice | None = None) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.array(init, dtype=np.float64, copy=True)
        offsets = self.offsets if trees is None else self.offsets[trees]
        if len(offsets) > 1:
            kernels.ensemble_apply(X, self.feature, self.threshold, self.left, self.right,
                                   self.value, np.ascontiguousarray(offsets), out, vote)
        return out

    def to_state(self) -> dict:
        return {"feature": self.feature, "threshold": self.threshold, "left": self.left,
                "right": self.right, "value": self.value, "offsets": self.offsets}

    @classmethod
    def from_state(cls, state: dict) -> "TreeEnsemble":
        return cls(**{k: np.ascontiguousarray(state[k]) for k in
                      ("feature", "threshold", "left", "right", "value", "offsets")})


@dataclass(frozen=True, eq=False)
class FittedModel:
    spec: LearnerSpec
    n_features: int
    seed: int
    trees: TreeEnsemble | None = None
    base_margin: float = 0.0
    coef: np.ndarray | None = None
    intercept: float = 0.0
    converged: bool = True
    loss_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def family(self) -> str:
        return self.spec.family

    def features_used(self) -> set[int]:
        if self.trees is not None:
            return self.trees.features_used()
        return {int(i) for i in np.flatnonzero(self.coef != 0)}

    def to_state(self) -> dict:
        return {
            "spec": self.spec.to_state(),
            "n_features": self.n_features,
            "seed": self.seed,
            "trees": None if self.trees is None else self.trees.to_state(),
            "base_margin": self.base_margin,
            "coef": self.coef,
            "intercept": self.intercept,
            "converged": self.converged,
            "loss_trace": self.loss_trace,
        }

    @classmethod
    def from_state(cls, state: dict) -> "FittedModel":
        trees = state["trees"]
        return cls(
            spec=LearnerSpec.from_state(state["spec"]),
            n_features=int(state["n_features"]),
            seed=int(state["seed"]),
            trees=None if trees is None else TreeEnsemble.from_state(trees),
            base_margin=float(state["base_margin"]),
            coef=None if state["coef"] is None else np.asarray(state["coef"]),
            intercept=float(state["intercept"]),
            converged=bool(state["converged"]),
            loss_trace=np.asarray(state["loss_trace"]),
        )


# ------------------------------------------------------------------ families

def _depth(hp: dict) -> int:
    return -1 if hp["max_depth"] is None else int(hp["max_depth"])


def _gini_tree(XT, order, y, w, hp, max_features, seed):
    n = y.size
    feat, thr, left, right, leaf_of = kernels.build_tree(
        XT, order, w, w * y, np.zeros(n), kernels.MODE_GINI, _depth(hp),
        float(hp["min_samples_leaf"]), 0.0, int(max_features), 0.0, 0.0, seed)
    active = leaf_of >= 0
    pos = np.bincount(leaf_of[active], weights=(w * y)[active], minlength=feat.size)
    tot = np.bincount(leaf_of[active], weights=w[active], minlength=feat.size)
    value = np.zeros(feat.size)
    leaves = feat < 0
    value[leaves] = pos[leaves] / tot[leaves]
    return feat, thr, left, right, value


def _fit_tree(spec, X, y, seed):
    XT, order = _presort(X)
    t = _gini_tree(XT, order, y, np.ones(y.size), spec.params, X.shape[1], seed)
    return FittedModel(spec, X.shape[1], seed, trees=TreeEnsemble.from_trees([t]))


def forest_max_features(setting, d: int) -> int:
    if setting == "sqrt":
        return max(1, math.ceil(math.sqrt(d)))
    if setting == "all":
        return d
    return min(int(setting), d)


def _fit_forest(spec, X, y, seed):
    hp = spec.params
    n, d = X.shape
    XT, order = _presort(X)
    mf = forest_max_features(hp["max_features"], d)
    trees = []
    for t in range(hp["n_trees"]):
        ts = derive_seed(seed, "tree", t)
        if hp["bootstrap"]:
            rng = np.random.default_rng(ts)
            w = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
        else:
            w = np.ones(n)
        trees.append(_gini_tree(XT, order, y, w, hp, mf, ts))
    return FittedModel(spec, d, seed, trees=TreeEnsemble.from_trees(trees))


def _fit_boosting(spec, X, y, seed):
    hp = spec.params
    n, d = X.shape
    prevalence = float(y.mean())
    if prevalence in (0.0, 1.0):
        raise DataError(f"{spec.family} needs both classes in the training data")
    base = math.log(prevalence / (1.0 - prevalence))
    XT, order = _presort(X)
    ones = np.ones(n)
    xgb = spec.family == "xgb"
    lam = float(hp["lambda"]) if xgb else 0.0
    margin = np.full(n, base)
    losses = [logistic_loss(margin, y)]
    trees = []
    for r in range(hp["n_rounds"]):
        p = sigmoid(margin)
        g = p - y
        h = p * (1.0 - p)
        if xgb:
            feat, thr, left, right, leaf_of = kernels.build_tree(
                XT, order, ones, g, h, kernels.MODE_NEWTON, _depth(hp), 1.0,
                float(hp["min_child_weight"]), d, lam, float(hp["gamma"]), derive_seed(seed, r))
        else:
            # squared-error split on the residuals, Newton step in the leaves
            feat, thr, left, right, leaf_of = kernels.build_tree(
                XT, order, ones, g, ones, kernels.MODE_NEWTON, _depth(hp),
                float(hp["min_samples_leaf"]), 0.0, d, 0.0, 0.0, derive_seed(seed, r))
        G = np.bincount(leaf_of, weights=g, minlength=feat.size)
        H = np.bincount(leaf_of, weights=h, minlength=feat.size) + lam
        raw = np.zeros(feat.size)
        leaves = (feat < 0) & (H > 1e-12)
        raw[leaves] = -G[leaves] / H[leaves]

        # Halve the step until the training loss does not increase.
        step = float(hp["learning_rate"])
        for _ in range(_MAX_HALVINGS):
            value = raw * step
            candidate = margin + value[leaf_of]
            loss = logistic_loss(candidate, y)
            if loss <= losses[-1]:
                break
            step *= 0.5
        else:
            value = np.zeros(feat.size)
            candidate, loss = margin, losses[-1]
        margin = candidate
        losses.append(loss)
        trees.append((feat, thr, left, right, value))
    return FittedModel(spec, d, seed, trees=TreeEnsemble.from_trees(trees), base_margin=base,
                       loss_trace=np.asarray(losses))


def logreg_loss_and_grad(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean logistic loss plus ``l2/2 * ||w||^2`` (bias unpenalized) and its gradient."""
    z = X @ w + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))
    r = (sigmoid(z) - y) / y.size
    return loss, X.T @ r + l2 * w, float(r.sum())


def _fit_logreg(spec, X, y, seed):
    hp = spec.params
    n, d = X.shape
    if y.min() == y.max():
        raise DataError("logreg needs both classes in the training data")
    l2, tol, max_iter = float(hp["l2"]), float(hp["tol"]), hp["max_iter"]
    Xa = np.hstack([X, np.ones((n, 1))])
    lipschitz = 0.25 * np.linalg.norm(Xa, 2) ** 2 / n + l2
    step = 1.0 / lipschitz

    # Nesterov-accelerated gradient descent with gradient-based restart.
    theta = np.zeros(d + 1)
    look = theta.copy()
    t = 1.0
    best = (math.inf, theta.copy(), math.inf)
    converged = False
    for _ in range(max_iter):
        loss, gw, gb = logreg_loss_and_grad(look[:d], look[d], X, y, l2)
        grad = np.append(gw, gb)
        gnorm = float(np.abs(grad).max())
        if loss < best[0] or gnorm <= tol:
            best = (loss, look.copy(), gnorm)
        if gnorm <= tol:
            converged = True
            break
        new = look - step * grad
        if grad @ (new - theta) > 0:  # momentum points uphill
            theta, look, t = new, new.copy(), 1.0
            continue
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        look = new + ((t - 1.0) / t_next) * (new - theta)
        theta, t = new, t_next
    if not converged:
        logger.warning("logreg stopped at max_iter=%d with gradient norm %.3g", max_iter, best[2])
    w = best[1]
    return FittedModel(spec, d, seed, coef=w[:d].copy(), intercept=float(w[d]),
                       converged=converged)


def _fit_svc(spec, X, y, seed):
    hp = spec.params
    n, d = X.shape
    if y.min() == y.max():
        raise DataError("linear_svc needs both classes in the training data")
    rng = np.random.default_rng(seed)
    perm = np.ascontiguousarray(np.stack([rng.permutation(n) for _ in range(hp["epochs"])]))
    lam = 1.0 / (float(hp["C"]) * n)
    avg_start = n if hp["epochs"] > 1 else 0
    w, b = kernels.pegasos(np.ascontiguousarray(X, dtype=np.float64), 2.0 * y - 1.0,
                           perm.astype(np.int64), lam, avg_start)
    return FittedModel(spec, d, seed, coef=np.asarray(w), intercept=float(b))


_FITTERS = {
    "tree": _fit_tree,
    "random_forest": _fit_forest,
    "gbm": _fit_boosting,
    "xgb": _fit_boosting,
    "logreg": _fit_logreg,
    "linear_svc": _fit_svc,
}


def fit_learner(spec: LearnerSpec, X, y, seed: int) -> FittedModel:
    """Train one learner; deterministic in ``(spec, X, y, seed)``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise DataError("training matrix must be non-empty and 2-D")
    if y.shape != (X.shape[0],):
        raise DataError("label count does not match training rows")
    if not np.isfinite(X).all():
        raise DataError("training matrix contains missing or non-finite values")
    return _FITTERS[spec.family](spec, X, y, int(seed))


def margin(model: FittedModel, X) -> np.ndarray:
    """Raw additive score for boosting and linear families."""
    X = _check_width(model, X)
    if model.family in ("gbm", "xgb"):
        return model.trees.accumulate(X, np.full(X.shape[0], model.base_margin))
    if model.family in ("logreg", "linear_svc"):
        return X @ model.coef + model.intercept
    raise ValueError(f"{model.family} has no additive margin")


def staged_margins(model: FittedModel, X):
    """Yield boosting margins after 0, 1, ..., n_rounds rounds."""
    X = _check_width(model, X)
    m = np.full(X.shape[0], model.base_margin)
    yield m.copy()
    for t in range(model.trees.n_trees):
        m = model.trees.accumulate(X, m, trees=slice(t, t + 2))
        yield m.copy()


def _check_width(model: FittedModel, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DataError(
            f"model expects {model.n_features} features, got {X.shape[-1] if X.ndim else 0}")
    return X


def predict_score(model: FittedModel, X) -> np.ndarray:
    """Positive-class scores in [0, 1], one per row of ``X``."""
    X = _check_width(model, X)
    fam = model.family
    if fam == "tree":
        return model.trees.accumulate(X, np.zeros(X.shape[0]))
    if fam == "random_forest":
        votes = model.trees.accumulate(X, np.zeros(X.shape[0]), vote=True)
        return votes / model.trees.n_trees
    if fam == "linear_svc":
        return sigmoid(model.spec.params["calibration"] * margin(model, X))
    return sigmoid(margin(model, X))
