"""Acceptance criteria, one test (or group of tests) per criterion.

Each test records a verdict in ``RESULTS``; ``conftest.py`` prints one
PASS/FAIL line per criterion at the end of the session. Criteria that the
faithful implementation does not meet are marked ``xfail(strict=True)``:
they still run and still print FAIL, and they turn the suite red if they
ever start passing, so the analysis in the decisions ledger gets revisited.
"""

import json
import time
from collections import defaultdict
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

from ctxsim import cli
from ctxsim.autodiff import Tensor
from ctxsim.config import ExperimentConfig
from ctxsim.experiments import run_toy
from ctxsim.losses import LossConfig, combined_loss, context_term, loss_l1, loss_l2
from ctxsim.metrics import map_at_r, mean_average_precision, rank_gallery, recall_at_k
from ctxsim.similarity import Batch
from ctxsim.verify import gradcheck_suite, oracle_check

THRESHOLDS = json.loads((Path(__file__).parent / "acceptance_thresholds.json").read_text())

TITLES = {
    1: "oracle equivalence",
    2: "definition/pipeline affine relation",
    3: "gradient suite",
    4: "zero-loss fixed points",
    5: "toy reproduction Recall@1",
    6: "regularizer fixed point",
    7: "M- ablation distance diagnostic",
    8: "metric correctness",
    9: "context loss vs Recall@1 rank correlation",
    10: "determinism",
}

RESULTS = defaultdict(list)  # criterion -> [(passed, detail)]

KNOWN_FAILURE = pytest.mark.xfail(strict=True, reason="unmet by the faithful loss on the toy; see decisions ledger")


def record(criterion: int, passed: bool, detail: str) -> None:
    RESULTS[criterion].append((bool(passed), detail))
    assert passed, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------------------
# shared toy runs

_RUNS = {}


def toy(**overrides):
    key = tuple(sorted(overrides.items()))
    if key not in _RUNS:
        start = time.perf_counter()
        run = run_toy(ExperimentConfig.default().with_overrides(**overrides))
        run.seconds = time.perf_counter() - start
        _RUNS[key] = run
    return _RUNS[key]


RUN_KINDS = {
    "l1_only": dict(lam=1.0, gamma=0.0, variant="l1_only"),
    "context_only": dict(lam=1.0, gamma=0.0, variant="full"),
    "combined": dict(),
}


# ---------------------------------------------------------------------------
# 1, 2


@pytest.fixture(scope="module")
def oracle_report():
    return oracle_check(ExperimentConfig.default())


def test_c1_oracle_equivalence(oracle_report):
    r = oracle_report
    cfg = ExperimentConfig.default()
    assert r["batches"] >= 200 and set(cfg.oracle_sizes) == {8, 16, 32} and set(cfg.oracle_epsilons) == {0.0, 0.05}
    record(
        1,
        r["max_abs_deviation"] <= 1e-9 and r["seconds"] < 30,
        f"{r['batches']} batches, max |dW| = {r['max_abs_deviation']:.2e} (tol 1e-9), {r['seconds']:.1f}s (limit 30s)",
    )


def test_c2_affine_relation(oracle_report):
    r = oracle_report
    record(
        2,
        r["affine_batches"] > 0 and r["affine_max_abs_deviation"] <= 1e-9,
        f"{r['affine_batches']} tie-free epsilon=0 batches, max deviation {r['affine_max_abs_deviation']:.2e} "
        "(tol 1e-9)",
    )


# ---------------------------------------------------------------------------
# 3


def test_c3_gradient_suite():
    cfg = ExperimentConfig.default()
    assert cfg.alpha == 10.0
    rows, sign_rows, _ = gradcheck_suite(cfg)
    failed = [r.name for r in rows if not r.passed]
    record(3, not failed, f"{len(rows) - len(failed)}/{len(rows)} checks pass" + (f"; failed: {failed}" if failed else ""))


# ---------------------------------------------------------------------------
# 4


def test_c4_zero_loss_fixed_points():
    # four coincident clusters on orthogonal axes: s = 1 within, 0 across,
    # so mean(S) = 64 / 256 = 0.25 exactly
    F = np.repeat(np.eye(4), 4, axis=0)
    labels = np.repeat(np.arange(4), 4)
    batch = Batch(Tensor(F), labels)
    cfg = LossConfig()
    values = {
        "L_context": context_term(batch, cfg).item(),
        "L1": loss_l1(batch, cfg).item(),
        "L2": loss_l2(batch, cfg).item(),
        **combined_loss(batch, cfg).floats(),
    }
    nonzero = {k: v for k, v in values.items() if v != 0.0}
    record(4, not nonzero, "all exactly 0" if not nonzero else f"nonzero: {nonzero}")


# ---------------------------------------------------------------------------
# 5, 6


def _check_recall(kind):
    threshold = THRESHOLDS["recall_at_1_min"][kind]
    parts, ok = [], True
    for noise in THRESHOLDS["noise_levels"]:
        run = toy(**RUN_KINDS[kind], train_noise=noise)
        good = run.recall_at_1 >= threshold and run.seconds < THRESHOLDS["max_run_seconds"]
        ok &= good
        parts.append(f"{run.recall_at_1:.3f}@{noise}")
    record(5, ok, f"{kind}: R@1 {' '.join(parts)} (min {threshold})")


@pytest.mark.slow
def test_c5_l1_only():
    _check_recall("l1_only")


@pytest.mark.slow
@KNOWN_FAILURE
def test_c5_context_only():
    _check_recall("context_only")


@pytest.mark.slow
@KNOWN_FAILURE
def test_c5_combined():
    _check_recall("combined")


@pytest.mark.slow
@KNOWN_FAILURE
def test_c6_regularizer_fixed_point():
    run = toy(**RUN_KINDS["combined"], train_noise=0.02)
    cfg = run.config
    assert cfg.gamma == 0.1 and cfg.s_tilde == 0.25
    gap = abs(run.mean_similarity - cfg.s_tilde)
    record(6, gap < THRESHOLDS["mean_similarity_tolerance"], f"mean(S) = {run.mean_similarity:.4f}, |gap| = {gap:.4f} (tol 0.05)")


# ---------------------------------------------------------------------------
# 7


@pytest.mark.slow
@KNOWN_FAILURE
def test_c7_m_minus_distance():
    lam = THRESHOLDS["m_minus_lambda"]
    parts, ok = [], True
    for seed in THRESHOLDS["m_minus_seeds"]:
        full = toy(lam=lam, gamma=0.0, variant="full", train_noise=0.02, seed=seed)
        plus = toy(lam=lam, gamma=0.0, variant="m_plus_only", train_noise=0.02, seed=seed)
        assert len(full.report.steps) == len(plus.report.steps)
        d_full = abs(full.mean_pairwise_distance - np.sqrt(2))
        d_plus = abs(plus.mean_pairwise_distance - np.sqrt(2))
        ok &= d_full < d_plus
        parts.append(f"seed {seed}: {full.mean_pairwise_distance:.3f} vs {plus.mean_pairwise_distance:.3f}")
    record(7, ok, "mean distance full vs m_plus_only, " + "; ".join(parts))


# ---------------------------------------------------------------------------
# 8


def _exact_metrics(x, labels, ks):
    """Rational-arithmetic reference with ascending-index tie-breaks."""
    n = len(labels)
    hits = {k: 0 for k in ks}
    ap, ap_r = Fraction(0), Fraction(0)
    for q in range(n):
        order = sorted((g for g in range(n) if g != q), key=lambda g: (float(((x[q] - x[g]) ** 2).sum()), g))
        rel = [labels[g] == labels[q] for g in order]
        for k in ks:
            hits[k] += any(rel[:k])
        R = sum(rel)
        found, total, total_r = 0, Fraction(0), Fraction(0)
        for rank, r in enumerate(rel, start=1):
            if r:
                found += 1
                total += Fraction(found, rank)
                total_r += Fraction(found, rank) if rank <= R else 0
        ap += total / R
        ap_r += total_r / R
    return {k: Fraction(hits[k], n) for k in ks}, ap / n, ap_r / n


def test_c8_metric_correctness():
    rng = np.random.default_rng(8)
    ks = (1, 2, 4, 8)
    worst, ordered, instances = 0.0, True, 60
    recall_exact = True
    for _ in range(instances):
        n = int(rng.integers(4, 101))
        num_labels = int(rng.integers(2, n // 2 + 1))
        labels = rng.permutation(np.concatenate([np.repeat(np.arange(num_labels), 2), rng.integers(0, num_labels, n)])[:n])
        x = rng.integers(0, 5, size=(n, 2)).astype(np.float64) if rng.random() < 0.5 else rng.normal(size=(n, 3))
        rec, m, mr = _exact_metrics(x, labels, ks)
        got = recall_at_k(x, labels, ks)
        recall_exact &= all(got[k] == float(rec[k]) for k in ks)
        res = rank_gallery(x, labels)
        got_m, got_mr = mean_average_precision(res), map_at_r(res)
        worst = max(worst, abs(got_m - float(m)), abs(got_mr - float(mr)))
        ordered &= got_mr <= got_m and mr <= m
    record(
        8,
        recall_exact and worst <= 1e-12 and ordered,
        f"{instances} instances: recall bit-exact={recall_exact}, max AP deviation {worst:.1e} from rational "
        f"reference (tol 1e-12), mAP@R <= mAP on all={ordered}",
    )


# ---------------------------------------------------------------------------
# 9


@pytest.mark.slow
def test_c9_context_recall_rank_correlation():
    runs = [toy(lam=0.0, gamma=0.0, train_noise=0.02)]
    for lam in THRESHOLDS["sweep_lambdas"]:
        if lam == 0.0:
            continue  # the variant is irrelevant without the contextual term
        for variant in THRESHOLDS["sweep_variants"]:
            runs.append(toy(lam=lam, gamma=0.0, variant=variant, train_noise=0.02))
    ctx = [r.eval_context_loss() for r in runs]
    r1 = [r.recall_at_1 for r in runs]
    rho = spearmanr(ctx, r1).statistic
    record(9, rho < 0, f"Spearman rho = {rho:.3f} over {len(runs)} runs (need < 0)")


# ---------------------------------------------------------------------------
# 10


def _csv_bytes(directory: Path) -> dict:
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*.csv"))}


def test_c10_determinism(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"epochs": 3, "batches_per_epoch": 5, "points_per_circle": 40, "oracle_batches": 12}))
    outputs = []
    for rep in ("a", "b"):
        out = tmp_path / rep
        codes = [
            cli.main(["train", str(cfg_path), "--out-dir", str(out / "train")]),
            cli.main(["eval", str(out / "train" / "checkpoint"), str(out / "train" / "eval_data.csv"),
                      "--out-dir", str(out / "eval")]),
            cli.main(["gen-data", str(cfg_path), "--out-dir", str(out / "data"), "--seed", "5"]),
            cli.main(["gradcheck", str(cfg_path), "--out-dir", str(out / "grad")]),
        ]
        assert codes == [0, 0, 0, 0]
        outputs.append(_csv_bytes(out))
    capsys.readouterr()
    a, b = outputs
    differing = sorted(k for k in a if a[k] != b.get(k))
    record(
        10,
        a.keys() == b.keys() and not differing and len(a) >= 8,
        f"{len(a)} CSV files from train/eval/gen-data/gradcheck reruns, byte-identical"
        + (f"; differing: {differing}" if differing else ""),
    )
