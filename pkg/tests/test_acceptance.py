"""Acceptance criteria, one PASS/FAIL line each.

Run on its own with ``pytest tests/test_acceptance.py -v``; the verdict lines
are printed straight to the terminal (not captured).
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from stacktier import cli
from stacktier.config import config_from_dict
from stacktier.importance import feature_ablation, permutation_importance
from stacktier.learners import (LearnerSpec, fit_learner, logistic_loss, logreg_loss_and_grad,
                                predict_score, staged_margins)
from stacktier.metrics import REPORT_COLUMNS, average_precision, full_report, report_csv, roc_auc
from stacktier.pipeline import fit_on_partition, split_raw
from stacktier.sampling import SmoteParams
from stacktier.stacking import (StackConfig, build_banks, fit_two_level, member_scores,
                                oof_meta_features, predict_internal, predict_model,
                                predict_two_level)
from stacktier.tabular import SyntheticSpec, generate_synthetic, make_folds, write_csv

from test_learners import blobs
from test_metrics import ap_prefix, auc_pairs, random_instance
from test_sampling import check_geometry, imbalanced

# Reduced grid used for the desk-scale benchmark; one or two values per axis.
DESK = {
    "grids": {
        "random_forest": {"n_trees": [100], "max_depth": [8, None]},
        "gbm": {"n_rounds": [100], "learning_rate": [0.1, 0.3], "max_depth": [2, 3]},
        "xgb": {"n_rounds": [100], "learning_rate": [0.1, 0.3], "max_depth": [2]},
        "linear_svc": {"C": [0.1, 1.0]},
    },
}
CONFIGS = ("LR-LR", "RF-LR", "RF-RF", "LR-RF")


@pytest.fixture
def verdict(capsys):
    """Call ``verdict(n, ok, detail, seconds, budget)``; prints and asserts."""
    def emit(n, ok, detail, seconds, budget):
        in_time = seconds < budget
        line = (f"{'PASS' if ok and in_time else 'FAIL'} criterion {n}: {detail} "
                f"[{seconds:.1f}s, budget {budget}s]")
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
        assert in_time, line
    return emit


def test_1_metric_oracles(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(200):
        s, l = random_instance(rng)
        worst = max(worst,
                    abs(roc_auc(s, l) - float(auc_pairs(s.tolist(), l.tolist()))),
                    abs(average_precision(s, l) - float(ap_prefix(s.tolist(), l.tolist()))))
    verdict(1, worst <= 1e-12, f"metric oracles, 200 instances, max error {worst:.1e}",
            time.perf_counter() - t, 5)


def test_2_smote_geometry(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(202)
    failures = 0
    for i in range(50):
        n_min = int(rng.integers(7, 30))
        ds = imbalanced(n_min, int(rng.integers(n_min + 1, 90)), d=int(rng.integers(1, 5)),
                        seed=1000 + i)
        if rng.random() < 0.5:
            ds = ds.replace(labels=1 - ds.labels)
        params = SmoteParams(int(rng.integers(1, 6)), float(rng.uniform(0.5, 1.0)), i)
        try:
            check_geometry(ds, params)
        except AssertionError:
            failures += 1
    verdict(2, failures == 0, f"SMOTE geometry and balance, 50 instances, {failures} failures",
            time.perf_counter() - t, 5)


def test_3_no_leakage(verdict):
    t = time.perf_counter()
    ds = generate_synthetic(SyntheticSpec(n_rows=240, n_features=6, n_informative=3, seed=3))
    folds = make_folds(ds, 5, 0)
    specs = [LearnerSpec.create("random_forest", n_trees=20),
             LearnerSpec.create("gbm", n_rounds=20, max_depth=2),
             LearnerSpec.create("xgb", n_rounds=20, max_depth=2),
             LearnerSpec.create("linear_svc", epochs=5)]
    smote = SmoteParams(seed=5)
    base = oof_meta_features(specs, ds, folds, 11, smote)
    base.assert_no_leakage(folds)
    rows = np.random.default_rng(303).choice(ds.n_rows, 20, replace=False)
    changed = 0
    for i in rows:
        labels = ds.labels.copy()
        labels[i] = 1 - labels[i]
        flipped = oof_meta_features(specs, ds.replace(labels=labels), folds, 11, smote)
        changed += flipped.values[i].tobytes() != base.values[i].tobytes()
    verdict(3, changed == 0, f"label flips on 20 rows, {changed} meta-feature rows changed",
            time.perf_counter() - t, 60)


def test_4_boosting_monotone(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(404)
    worst = -np.inf
    for i in range(20):
        X, y = blobs(int(rng.integers(20, 120)), d=int(rng.integers(1, 5)), seed=400 + i,
                     sep=float(rng.uniform(0, 2)))
        for fam, extra in (("gbm", {}), ("xgb", {"lambda": float(rng.choice([0.0, 1.0, 10.0])),
                                                  "gamma": float(rng.choice([0.0, 0.5]))})):
            spec = LearnerSpec.create(fam, n_rounds=40, learning_rate=float(rng.uniform(0.1, 1)),
                                      max_depth=int(rng.integers(1, 4)), **extra)
            m = fit_learner(spec, X, y, i)
            losses = [logistic_loss(z, y) for z in staged_margins(m, X)]
            worst = max(worst, float(np.max(np.diff(losses))))
    verdict(4, worst <= 1e-12, f"GBM/XGB loss non-increasing, 20 instances, "
            f"max per-round increase {worst:.1e}", time.perf_counter() - t, 30)


def test_5_gradient_check(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(505)
    worst = 0.0
    for _ in range(20):
        n, d = int(rng.integers(5, 30)), int(rng.integers(1, 6))
        X = rng.normal(size=(n, d))
        y = rng.integers(0, 2, n).astype(float)
        w, b, l2 = rng.normal(size=d), float(rng.normal()), float(rng.uniform(0, 1))
        _, gw, gb = logreg_loss_and_grad(w, b, X, y, l2)
        h = 1e-6
        num = []
        for j in range(d + 1):
            e = np.zeros(d + 1)
            e[j] = h
            lp = logreg_loss_and_grad(w + e[:d], b + e[d], X, y, l2)[0]
            lm = logreg_loss_and_grad(w - e[:d], b - e[d], X, y, l2)[0]
            num.append((lp - lm) / (2 * h))
        ana = np.append(gw, gb)
        rel = np.abs(np.array(num) - ana) / np.maximum(np.abs(ana), 1e-8)
        worst = max(worst, float(rel.max()))
    verdict(5, worst < 1e-5, f"logreg gradient vs central differences, 20 instances, "
            f"max relative error {worst:.1e}", time.perf_counter() - t, 5)


def test_6_structural_identities(verdict, tiny_grids, tiny_combiners):
    t = time.perf_counter()
    ds = generate_synthetic(SyntheticSpec(n_rows=200, n_features=5, n_informative=3, seed=6))
    cfg = StackConfig(grids=tiny_grids, combiner_specs=tiny_combiners, seed=6)
    banks = build_banks(ds, cfg)
    X = generate_synthetic(SyntheticSpec(n_rows=80, n_features=5, n_informative=3, seed=7)).X
    bad = []
    for name in CONFIGS:
        model = fit_two_level(ds, cfg.with_stacking(name), banks=banks)
        for s in model.stacks:
            if predict_internal(s, X).tobytes() != \
                    predict_score(s.combiner, member_scores(s.members, X)).tobytes():
                bad.append(f"{name}/{s.family}")
        composed = predict_score(model.meta,
                                 np.column_stack([predict_internal(s, X) for s in model.stacks]))
        if predict_two_level(model, X).tobytes() != composed.tobytes():
            bad.append(name)
    verdict(6, not bad, f"two-level and internal-stack compositions bit-exact for "
            f"{', '.join(CONFIGS)}{'; mismatches ' + str(bad) if bad else ''}",
            time.perf_counter() - t, 10)


@pytest.mark.slow
def test_7_synthetic_benchmark(verdict):
    t = time.perf_counter()
    aucs = {name: [] for name in (*CONFIGS, "one-level")}
    shaped = True
    for seed in range(5):
        cfg = config_from_dict({**DESK, "seed": seed})
        train, test = split_raw(generate_synthetic(SyntheticSpec(seed=seed)), cfg)
        banks = None   # base-learner banks are shared by every combiner config
        for name in aucs:
            c = (replace(cfg, levels=1) if name == "one-level"
                 else replace(cfg, stack=cfg.stack.with_stacking(name)))
            model, _, banks = fit_on_partition(train, c, banks)
            rep = full_report(predict_model(model, test), test.labels, c.stack.threshold)
            text = report_csv([(model.name, rep)]).splitlines()
            shaped &= (len(text) == 2 and text[0].split(",")[1:] == list(REPORT_COLUMNS)
                       and len(text[1].split(",")) == 1 + len(REPORT_COLUMNS))
            aucs[name].append(rep.roc_auc)
    mean = {k: float(np.mean(v)) for k, v in aucs.items()}
    ok = shaped and mean["RF-RF"] >= 0.93 and mean["RF-RF"] >= mean["one-level"] - 0.01
    detail = ", ".join(f"{k} {v:.4f}" for k, v in mean.items())
    verdict(7, ok, f"mean test ROC-AUC over 5 seeds: {detail}; reports shaped: {shaped}",
            time.perf_counter() - t, 600)


@pytest.mark.slow
def test_8_ablation(verdict):
    t = time.perf_counter()
    spec = SyntheticSpec(seed=0)
    cfg = config_from_dict({**DESK, "seed": 0})
    train, test = split_raw(generate_synthetic(spec), cfg)
    model, _, _ = fit_on_partition(train, cfg)
    full = roc_auc(predict_model(model, test), test.labels)
    imp = permutation_importance(model, test, "roc_auc", 10, cfg.seed)
    (row,) = feature_ablation(train, test, imp.ranked_features(), [10], cfg)
    noise = [f.mean_drop for f in imp.features
             if int(f.feature[1:]) > spec.n_informative]   # columns after the informative ones
    worst = float(np.max(np.abs(noise)))
    ratio = row.report.roc_auc / full
    verdict(8, ratio >= 0.95 and worst <= 0.01,
            f"top-10 ROC-AUC {row.report.roc_auc:.4f} = {ratio:.3f}x full {full:.4f}; "
            f"max |noise importance| {worst:.4f}", time.perf_counter() - t, 180)


@pytest.mark.slow
def test_9_thread_determinism(verdict, tmp_path):
    t = time.perf_counter()
    data = write_csv(generate_synthetic(SyntheticSpec(seed=9)), tmp_path / "bench.csv")
    base = config_from_dict({**DESK, "seed": 9, "data": str(data)})
    outs = []
    for threads in (1, 4):
        out = tmp_path / f"t{threads}"
        cli.train_command(base.with_overrides(threads=threads, output_dir=out))
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    differ = [n for n in names if (outs[0] / n).read_bytes() != (outs[1] / n).read_bytes()]
    ok = not differ and sorted(p.name for p in outs[1].iterdir()) == names
    verdict(9, ok, f"train_command 1 vs 4 threads: {len(names)} files compared, "
            f"{len(differ)} differ {differ or ''}".rstrip(), time.perf_counter() - t, 120)
