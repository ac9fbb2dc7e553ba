"""Command-line interface: train, evaluate, importance, ablate, benchgen."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from ._io import atomic_write_text
from .config import PipelineConfig, config_from_dict, parse_config
from .errors import ConfigError, StacktierError
from .importance import ablation_csv, feature_ablation, masked_ablation, permutation_importance
from .metrics import report_csv
from .pipeline import (evaluate, grid_diagnostics_csv, load_model, save_model, split_raw, stage,
                       train_pipeline, fit_on_partition)
from .tabular import SyntheticSpec, generate_synthetic, load_csv, write_csv

logger = logging.getLogger("stacktier")

MODEL_FILE = "model.tlens"
_LEVELS = {"0": logging.ERROR, "1": logging.WARNING, "2": logging.INFO, "3": logging.DEBUG}


def setup_logging() -> None:
    """Verbosity from ``STACKTIER_LOG``: a level name or 0 (errors) .. 3 (debug)."""
    raw = os.environ.get("STACKTIER_LOG", "INFO").strip().upper()
    level = _LEVELS.get(raw) or logging.getLevelName(raw)
    if not isinstance(level, int):
        level = logging.INFO
    root = logging.getLogger("stacktier")
    root.handlers[:] = []
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("stacktier %(levelname)s %(message)s"))
    root.addHandler(handler)
    root.setLevel(level)
    root.propagate = False


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _counts(text: str) -> list[int]:
    try:
        return [int(c) for c in text.split(",") if c.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--counts expects integers like 5,6,7,25; got {text!r}")


def load_config(args) -> PipelineConfig:
    cfg = parse_config(args.config) if args.config else config_from_dict({})
    return cfg.with_overrides(seed=args.seed, threads=args.threads, output_dir=args.out,
                              data=args.data, compat_presplit_smote=args.compat_presplit_smote)


def _load_data(cfg: PipelineConfig, path=None):
    path = path or cfg.data
    if path is None:
        raise ConfigError("no data file: set 'data' in the config or pass --data")
    with stage("load"):
        return load_csv(path, cfg.label_column, cfg.missing_tokens)


# ------------------------------------------------------------------ commands

def train_command(cfg: PipelineConfig) -> dict:
    """Run the full training pipeline and write every artifact under ``cfg.output_dir``."""
    raw = _load_data(cfg)
    res = train_pipeline(raw, cfg)
    out = Path(cfg.output_dir)
    name = res.model.name
    with stage("persist"):
        save_model(out / MODEL_FILE, res.model, cfg)
        atomic_write_text(out / "report.csv", report_csv([(name, res.test_report)]))
        atomic_write_text(out / "train_report.csv", report_csv([(name, res.train_report)]))
        atomic_write_text(out / "report.json", _dump_json({
            "model": name,
            "fingerprint": res.fingerprint,
            "kept_features": list(res.preprocessing.kept_features),
            "test": res.test_report.as_dict(),
            "train": res.train_report.as_dict(),
            "selected": {f: [s.spec_id for s in b.selected] for f, b in res.banks.items()},
        }))
        atomic_write_text(out / "grid_diagnostics.csv", grid_diagnostics_csv(res.banks))
        write_csv(res.train_raw, out / "train.csv", cfg.label_column)
        write_csv(res.test_raw, out / "test.csv", cfg.label_column)
        logger.info("[persist] wrote %s", out)
    return {"result": res, "out": out}


def evaluate_command(model_path, data_path, out_dir=None) -> str:
    model, cfg_state = load_model(model_path)
    with stage("load"):
        raw = load_csv(data_path, cfg_state["label_column"], cfg_state["missing_tokens"])
    rep = evaluate(model, raw, cfg_state["stack"]["threshold"])
    text = report_csv([(model.name, rep)])
    if out_dir is not None:
        atomic_write_text(Path(out_dir) / "evaluation.csv", text)
    return text


def importance_command(model_path, data_path, out_dir, seed=0, repeats=10, metric="roc_auc",
                       threads=1):
    model, cfg_state = load_model(model_path)
    with stage("load"):
        raw = load_csv(data_path, cfg_state["label_column"], cfg_state["missing_tokens"])
    with stage("importance"):
        rep = permutation_importance(model, raw, metric, repeats, seed,
                                     cfg_state["stack"]["threshold"], threads)
    out = Path(out_dir)
    atomic_write_text(out / "importance.csv", rep.to_csv())
    atomic_write_text(out / "importance.json", _dump_json(rep.to_dict()))
    return rep


def ablate_command(cfg: PipelineConfig, counts=None, mask_only: bool = False):
    """Rank features by permutation importance on the test partition, then ablate."""
    counts = list(cfg.ablation_counts if counts is None else counts)
    raw = _load_data(cfg)
    train_raw, test_raw = split_raw(raw, cfg)
    model, pre, banks = fit_on_partition(train_raw, cfg)
    with stage("importance"):
        imp = permutation_importance(model, test_raw, cfg.importance_metric,
                                     cfg.importance_repeats, cfg.seed, cfg.stack.threshold,
                                     cfg.stack.threads)
    # features dropped by the missingness filter rank last and cannot be selected
    ranked = [n for n in imp.ranked_features() if n in pre.kept_features]
    with stage("ablate"):
        if mask_only:
            rows = masked_ablation(model, test_raw, ranked, counts, cfg.stack.threshold)
        else:
            rows = feature_ablation(train_raw.select(pre.kept_features),
                                    test_raw.select(pre.kept_features), ranked, counts, cfg)
    out = Path(cfg.output_dir)
    atomic_write_text(out / "importance.csv", imp.to_csv())
    atomic_write_text(out / "ablation.csv", ablation_csv(rows))
    atomic_write_text(out / "ablation.json", _dump_json({
        "mode": "mask" if mask_only else "retrain",
        "rows": [{"feature_count": r.feature_count, "features": list(r.features),
                  "report": r.report.as_dict()} for r in rows]}))
    return rows


def benchgen_command(spec: SyntheticSpec, path, label_column: str = "label") -> Path:
    ds = generate_synthetic(spec)
    return write_csv(ds, path, label_column)


# ---------------------------------------------------------------------- argv

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stacktier", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", metavar="PATH", help="YAML pipeline config")
            sp.add_argument("--compat-presplit-smote", action="store_true",
                            help="impute and balance before the train/test split")
        sp.add_argument("--seed", type=int, metavar="N")
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--threads", type=int, metavar="N")
        sp.add_argument("--data", metavar="PATH")

    sp = sub.add_parser("train", help="fit a model and write it with its reports")
    common(sp)

    sp = sub.add_parser("evaluate", help="score a CSV with a saved model")
    common(sp, config=False)
    sp.add_argument("--model", metavar="PATH", required=True)

    sp = sub.add_parser("importance", help="permutation importance of a saved model")
    common(sp, config=False)
    sp.add_argument("--model", metavar="PATH", required=True)
    sp.add_argument("--repeats", type=int, default=10)
    sp.add_argument("--metric", default="roc_auc")

    sp = sub.add_parser("ablate", help="retrain on the top-k most important features")
    common(sp)
    sp.add_argument("--counts", type=_counts, metavar="LIST", help="e.g. 5,6,7,25")
    sp.add_argument("--mask-only", action="store_true",
                    help="preview: mask features in one fitted model instead of retraining")

    sp = sub.add_parser("benchgen", help="write a synthetic benchmark CSV")
    sp.add_argument("--seed", type=int, default=SyntheticSpec.seed, metavar="N")
    sp.add_argument("--out", metavar="DIR", default=".")
    sp.add_argument("--data", metavar="PATH", help="output file (default DIR/synthetic.csv)")
    sp.add_argument("--rows", type=int, default=SyntheticSpec.n_rows)
    sp.add_argument("--features", type=int, default=SyntheticSpec.n_features)
    sp.add_argument("--informative", type=int, default=SyntheticSpec.n_informative)
    sp.add_argument("--positive-fraction", type=float, default=SyntheticSpec.positive_fraction)
    sp.add_argument("--separation", type=float, default=SyntheticSpec.class_separation)
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cmd = args.command
    if cmd == "train":
        cfg = load_config(args)
        train_command(cfg)
        print(Path(cfg.output_dir) / "report.csv")
    elif cmd == "evaluate":
        if not args.data:
            raise ConfigError("evaluate needs --data")
        sys.stdout.write(evaluate_command(args.model, args.data, args.out))
    elif cmd == "importance":
        if not args.data:
            raise ConfigError("importance needs --data")
        rep = importance_command(args.model, args.data, args.out or ".", args.seed or 0,
                                 args.repeats, args.metric, args.threads or 1)
        sys.stdout.write(rep.to_csv())
    elif cmd == "ablate":
        cfg = load_config(args)
        rows = ablate_command(cfg, args.counts, args.mask_only)
        sys.stdout.write(ablation_csv(rows))
    elif cmd == "benchgen":
        spec = SyntheticSpec(args.rows, args.features, args.informative, args.positive_fraction,
                             args.separation, args.seed)
        path = args.data or Path(args.out) / "synthetic.csv"
        print(benchgen_command(spec, path))
    return 0


def main(argv=None) -> int:
    setup_logging()
    try:
        return run(argv)
    except ConfigError as exc:
        logger.error("%s", exc)
        return 2
    except StacktierError as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
