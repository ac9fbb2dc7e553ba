"""Pipeline configuration: one YAML file, validated strictly."""
from __future__ import annotations

import difflib
import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .errors import ConfigError
from .learners import DEFAULTS, LearnerSpec
from .sampling import SmoteParams
from .seeding import stable_id
from .stacking import (BASE_FAMILIES, COMBINER_KINDS, StackConfig, default_combiner_specs,
                       default_grids, parse_stacking_name)
from .tabular import DEFAULT_MISSING_TOKENS
from .tuning import SELECTION_METRICS, SelectionPolicy

# Every accepted key with its default. Nested sections list their own keys.
_SMOTE_KEYS = {"enabled": True, "k_neighbors": 5, "target_ratio": 1.0}
_SELECTION_KEYS = {"metrics": list(SELECTION_METRICS), "per_metric_top": 1}
_IMPORTANCE_KEYS = {"metric": "roc_auc", "repeats": 10}
_ABLATION_KEYS = {"counts": [5, 6, 7, 25]}
_TOP_KEYS = {
    "data": None,
    "label_column": "label",
    "missing_tokens": sorted(DEFAULT_MISSING_TOKENS),
    "max_missing_fraction": 0.20,
    "test_fraction": 0.20,
    "smote": _SMOTE_KEYS,
    "compat_presplit_smote": False,
    "k": 5,
    "families": list(BASE_FAMILIES),
    "grids": {},
    "selection": _SELECTION_KEYS,
    "stacking": None,
    "combiner_kind": "RF",
    "meta_kind": "RF",
    "combiner_params": {},
    "levels": 2,
    "threshold": 0.5,
    "seed": 0,
    "output_dir": "out",
    "threads": 1,
    "importance": _IMPORTANCE_KEYS,
    "ablation": _ABLATION_KEYS,
}
_SECTIONS = {"smote": _SMOTE_KEYS, "selection": _SELECTION_KEYS,
             "importance": _IMPORTANCE_KEYS, "ablation": _ABLATION_KEYS}


@dataclass
class PipelineConfig:
    data: str | None = None
    label_column: str = "label"
    missing_tokens: frozenset[str] = frozenset(DEFAULT_MISSING_TOKENS)
    max_missing_fraction: float = 0.20
    test_fraction: float = 0.20
    smote: SmoteParams | None = field(default_factory=SmoteParams)
    compat_presplit_smote: bool = False
    levels: int = 2
    stack: StackConfig = field(default_factory=StackConfig)
    output_dir: str = "out"
    importance_metric: str = "roc_auc"
    importance_repeats: int = 10
    ablation_counts: tuple[int, ...] = (5, 6, 7, 25)

    @property
    def seed(self) -> int:
        return self.stack.seed

    def with_overrides(self, *, seed=None, threads=None, output_dir=None, data=None,
                       compat_presplit_smote=None) -> "PipelineConfig":
        """Copy with command-line overrides applied."""
        cfg = replace(self)
        if seed is not None:
            seed = _int("seed", int(seed), 0)
            if cfg.smote is not None:
                cfg.smote = replace(cfg.smote, seed=seed)
            cfg.stack = replace(cfg.stack, seed=seed)
        if threads is not None:
            cfg.stack = replace(cfg.stack, threads=_int("threads", int(threads), 1))
        if compat_presplit_smote:
            cfg.compat_presplit_smote = True
        cfg.stack = replace(cfg.stack, smote=None if cfg.compat_presplit_smote else cfg.smote)
        if output_dir is not None:
            cfg.output_dir = str(output_dir)
        if data is not None:
            cfg.data = str(data)
        return cfg

    def model_state(self) -> dict:
        """Everything that can change the fitted model; paths and threads excluded."""
        return {
            "label_column": self.label_column,
            "missing_tokens": sorted(self.missing_tokens),
            "max_missing_fraction": self.max_missing_fraction,
            "test_fraction": self.test_fraction,
            "smote": None if self.smote is None else dict(self.smote.__dict__),
            "compat_presplit_smote": self.compat_presplit_smote,
            "levels": self.levels,
            "stack": self.stack.to_state(),
        }

    def fingerprint(self) -> str:
        return stable_id(self.model_state(), length=16)


def _unknown(key: str, valid, where: str) -> ConfigError:
    near = difflib.get_close_matches(key, list(valid), n=1, cutoff=0.0)
    hint = f"; did you mean {near[0]!r}?" if near else ""
    return ConfigError(f"unknown key {key!r} in {where}{hint} (valid: {', '.join(sorted(valid))})")


def _check_keys(d: dict, valid, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    for key in d:
        if key not in valid:
            raise _unknown(str(key), valid, where)


def _expand_grid(family: str, raw) -> list[LearnerSpec]:
    """A mapping of lists is a cartesian product; a list of such mappings is their union."""
    blocks = raw if isinstance(raw, list) else [raw]
    specs = []
    for block in blocks:
        _check_keys(block, DEFAULTS[family], f"grids.{family}")
        keys = sorted(block)
        axes = [v if isinstance(v, list) else [v] for v in (block[k] for k in keys)]
        if any(len(a) == 0 for a in axes):
            raise ConfigError(f"grids.{family}: empty value list")
        for combo in itertools.product(*axes):
            specs.append(LearnerSpec.create(family, **dict(zip(keys, combo))))
    if not specs:
        raise ConfigError(f"grids.{family} is empty")
    return specs


def _range(name: str, value, lo, hi, lo_open=False, hi_open=False):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if (v < lo or (lo_open and v == lo)) or (v > hi or (hi_open and v == hi)):
        lb = "(" if lo_open else "["
        rb = ")" if hi_open else "]"
        raise ConfigError(f"{name}={value} outside {lb}{lo}, {hi}{rb}")
    return v


def _int(name: str, value, lo: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < lo:
        raise ConfigError(f"{name} must be an integer >= {lo}, got {value!r}")
    return value


def config_from_dict(raw: dict | None, base_dir: Path | None = None) -> PipelineConfig:
    raw = dict(raw or {})
    _check_keys(raw, _TOP_KEYS, "config")
    merged = {}
    for key, default in _TOP_KEYS.items():
        if key in _SECTIONS:
            sub = raw.get(key) or {}
            _check_keys(sub, _SECTIONS[key], key)
            merged[key] = {**default, **sub}
        else:
            merged[key] = raw.get(key, default)

    seed = _int("seed", merged["seed"], 0)
    threads = _int("threads", merged["threads"], 1)
    k = _int("k", merged["k"], 2)
    levels = merged["levels"]
    if levels not in (1, 2):
        raise ConfigError(f"levels must be 1 or 2, got {levels!r}")

    families = tuple(merged["families"])
    bad = [f for f in families if f not in BASE_FAMILIES]
    if bad or not families:
        raise ConfigError(f"families must be drawn from {list(BASE_FAMILIES)}; got {bad or families}")
    if len(set(families)) != len(families):
        raise ConfigError("families listed twice")

    grids = default_grids()
    _check_keys(merged["grids"], DEFAULTS, "grids")
    for fam, g in merged["grids"].items():
        grids[fam] = _expand_grid(fam, g)

    sel = merged["selection"]
    try:
        policy = SelectionPolicy(tuple(sel["metrics"]), _int("selection.per_metric_top",
                                                            sel["per_metric_top"], 1))
    except TypeError:
        raise ConfigError("selection.metrics must be a list") from None

    combiner, meta = merged["combiner_kind"], merged["meta_kind"]
    if merged["stacking"] is not None:
        if "combiner_kind" in raw or "meta_kind" in raw:
            raise ConfigError("give either 'stacking' or combiner_kind/meta_kind, not both")
        combiner, meta = parse_stacking_name(str(merged["stacking"]))
    for name, kind in (("combiner_kind", combiner), ("meta_kind", meta)):
        if kind not in COMBINER_KINDS:
            raise ConfigError(f"{name} must be one of {COMBINER_KINDS}, got {kind!r}")

    combiner_specs = default_combiner_specs()
    _check_keys(merged["combiner_params"], COMBINER_KINDS, "combiner_params")
    for kind, params in merged["combiner_params"].items():
        base = combiner_specs[kind]
        _check_keys(params, DEFAULTS[base.family], f"combiner_params.{kind}")
        combiner_specs[kind] = LearnerSpec.create(base.family, **{**base.params, **params})

    sm = merged["smote"]
    smote = None
    if sm["enabled"]:
        smote = SmoteParams(_int("smote.k_neighbors", sm["k_neighbors"], 1),
                            _range("smote.target_ratio", sm["target_ratio"], 0, 1, lo_open=True),
                            seed)
    compat = bool(merged["compat_presplit_smote"])

    stack = StackConfig(families=families, grids=grids, policy=policy, combiner=combiner,
                        meta=meta, k=k, seed=seed, combiner_specs=combiner_specs,
                        smote=None if compat else smote,
                        threshold=_range("threshold", merged["threshold"], 0, 1),
                        threads=threads)

    data = merged["data"]
    if data is not None and base_dir is not None and not Path(data).is_absolute():
        data = str(base_dir / data)

    imp = merged["importance"]
    if imp["metric"] not in SELECTION_METRICS + ("auprc", "f1"):
        raise ConfigError(f"importance.metric {imp['metric']!r} is not a known metric")
    counts = merged["ablation"]["counts"]
    if not isinstance(counts, list) or not counts:
        raise ConfigError("ablation.counts must be a non-empty list")
    counts = tuple(_int("ablation.counts", c, 1) for c in counts)

    tokens = merged["missing_tokens"]
    if not isinstance(tokens, list):
        raise ConfigError("missing_tokens must be a list")

    return PipelineConfig(
        data=data,
        label_column=str(merged["label_column"]),
        missing_tokens=frozenset(str(t) for t in tokens),
        max_missing_fraction=_range("max_missing_fraction", merged["max_missing_fraction"], 0, 1,
                                    hi_open=True),
        test_fraction=_range("test_fraction", merged["test_fraction"], 0, 1, lo_open=True,
                             hi_open=True),
        smote=smote,
        compat_presplit_smote=compat,
        levels=levels,
        stack=stack,
        output_dir=str(merged["output_dir"]),
        importance_metric=imp["metric"],
        importance_repeats=_int("importance.repeats", imp["repeats"], 1),
        ablation_counts=counts,
    )


def parse_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return config_from_dict(raw, base_dir=path.parent)
