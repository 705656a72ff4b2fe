"""Gating acceptance criteria, one test per criterion.

Each test records a single PASS/FAIL line (see the terminal summary) and
then asserts on it. Criteria 7-9 need the Emotions data set; point
``SMTL_EMOTIONS`` at a multi-label file to run them.
"""

import json
import os
import shutil
import time

import numpy as np
import pytest

from smtl import admm, cli, losses
from smtl.inner import InnerProblem, primal_value, solve_column
from smtl.model import LossKind, LossMetric, MultiTaskDataset, Regularizer, SmtlConfig, TaskDataset
from smtl.oracle import OracleBudget, brute_infer, brute_infer_auc_patterns, brute_inner, brute_objective
from smtl.prox import prox, regularizer_value

from conftest import exact_objective, random_data, random_labels, random_task, record_criterion

F1, AUC, HAM = LossMetric(LossKind.F1), LossMetric(LossKind.AUC), LossMetric(LossKind.HAMMING)
LOSSES = [F1, AUC, HAM]
PAIR_BUDGET = OracleBudget(max_labelings=10**5)


def random_scores(rng, n):
    kind = rng.integers(3)
    if kind == 0:
        return rng.normal(size=n) * rng.uniform(0.1, 3)
    if kind == 1:
        # coarse grid: many exact ties, and pair gaps landing on 1/2
        return np.round(rng.normal(size=n) * 2) / 4
    return rng.integers(-2, 3, size=n) * 0.5


# ---- 1 ---------------------------------------------------------------------------

def test_criterion_1_inference_equals_brute_force():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    mismatches = {"f1": 0, "auc": 0, "hamming": 0}
    ulp_only = {"f1": 0, "auc": 0, "hamming": 0}
    for loss in LOSSES:
        key = loss.kind.value
        for k in range(500):
            if loss is AUC and k % 2 == 0:
                # exhaustive over every swap pattern: Pos * Neg <= 12
                p = int(rng.integers(1, 5))
                q = int(rng.integers(1, 12 // p + 1))
                y = np.r_[np.ones(p), -np.ones(q)]
                rng.shuffle(y)
                n = p + q
            else:
                n = int(rng.integers(1, 13)) if loss is not AUC else int(rng.integers(2, 201))
                y = random_labels(rng, n) if loss is AUC or rng.random() < 0.8 else rng.choice([-1.0, 1.0], n)
                if loss is F1 and y.max() < 0:
                    y[0] = 1.0
            X = rng.normal(size=(n, 2))
            s = random_scores(rng, n)
            fast = losses.infer(loss, s, X, y)
            if loss is AUC and k % 2 == 0:
                ref = brute_infer_auc_patterns(s, X, y)
            else:
                ref = brute_infer(s, X, y, loss, PAIR_BUDGET)
            if fast.objective != ref.objective:
                same = exact_objective(loss, s, y, fast.coef) == exact_objective(loss, s, y, ref.coef)
                mismatches[key] += not same
                ulp_only[key] += same
    elapsed = time.perf_counter() - t0
    ok = sum(mismatches.values()) == 0 and elapsed <= 60
    record_criterion(1, ok, f"exact-arithmetic mismatches {mismatches} over 3x500 instances; "
                            f"tied maximizers differing only in float rounding {ulp_only}; "
                            f"{elapsed:.1f}s (limit 60s)")
    assert ok


# ---- 2 ---------------------------------------------------------------------------

def test_criterion_2_inner_solver_optimal():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst_err, worst_gap, bad = 0.0, np.inf, 0
    for k in range(100):
        loss = LOSSES[k % 3]
        task = random_task(rng, int(rng.integers(2, 9)), int(rng.integers(1, 5)))
        p = InnerProblem(task, rng.normal(size=task.n_features), float(rng.uniform(0.2, 2.0)),
                         loss, 1e-5, 2 * 10**6)
        res = solve_column(p)
        err = abs(primal_value(p, res.w) - brute_inner(p).value)
        worst_err = max(worst_err, err)
        if res.gaps:
            worst_gap = min(worst_gap, min(res.gaps))
        bad += err > 1e-4
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and worst_gap >= -1e-9 and elapsed <= 120
    record_criterion(2, ok, f"worst |primal - oracle| {worst_err:.2e} (limit 1e-4), "
                            f"min gap {worst_gap:.2e} (limit -1e-9), {elapsed:.1f}s (limit 120s)")
    assert ok


# ---- 3 ---------------------------------------------------------------------------

def prox_objectives(reg, S, M, mu):
    """Vectorized over a leading batch axis of ``S``."""
    if reg is Regularizer.L11:
        omega = np.abs(S).sum(axis=(1, 2))
    elif reg is Regularizer.L21:
        omega = np.sqrt((S ** 2).sum(axis=2)).sum(axis=1)
    else:
        omega = np.linalg.svd(S, compute_uv=False).sum(axis=1)
    return omega + 0.5 * mu * ((S - M) ** 2).sum(axis=(1, 2))


def test_criterion_3_prox_optimal_and_nonexpansive():
    rng = np.random.default_rng(303)
    t0 = time.perf_counter()
    beaten, expand, worst = 0, 0, np.inf
    for reg in Regularizer:
        for _ in range(200):
            d, m = rng.integers(1, 6, size=2)
            M = rng.normal(size=(d, m)) * rng.uniform(0.1, 4)
            mu = float(np.exp(rng.uniform(-2, 2)))
            S = prox(reg, M, mu)
            base = regularizer_value(reg, S) + 0.5 * mu * np.sum((S - M) ** 2)
            P = S + rng.uniform(-0.1, 0.1, size=(10_000, d, m))
            margin = float(np.min(prox_objectives(reg, P, M, mu)) - base)
            worst = min(worst, margin)
            beaten += margin < -1e-12
        for _ in range(200):
            d, m = rng.integers(1, 6, size=2)
            mu = float(np.exp(rng.uniform(-2, 2)))
            A = rng.normal(size=(d, m)) * 2
            B = A + rng.normal(size=(d, m)) * rng.uniform(0.01, 2)
            expand += (np.linalg.norm(prox(reg, A, mu) - prox(reg, B, mu))
                       > np.linalg.norm(A - B) * (1 + 1e-12) + 1e-15)
    elapsed = time.perf_counter() - t0
    ok = beaten == 0 and expand == 0 and elapsed <= 60
    record_criterion(3, ok, f"perturbations beating prox {beaten}, worst margin {worst:.2e}, "
                            f"expanding pairs {expand}, {elapsed:.1f}s (limit 60s)")
    assert ok


# ---- 4 ---------------------------------------------------------------------------

def test_criterion_4_admm_converges_to_reference():
    pytest.importorskip("cvxpy")
    from smtl.oracle import reference_minimum

    rng = np.random.default_rng(404)
    t0 = time.perf_counter()
    cells, failures, worst = [], [], 0.0
    for reg in Regularizer:
        for loss in LOSSES:
            converged = 0
            for _ in range(50):
                data = random_data(rng, int(rng.integers(1, 4)), int(rng.integers(1, 4)), 2, 6)
                cfg = SmtlConfig(reg, loss, lam=float(rng.uniform(0.2, 2.0)), outer_tol=1e-4,
                                 outer_max_iter=200, warm_start=True, inner_max_iter=20000)
                state, rep = admm.run(data, cfg)
                converged += (rep.outer_iterations <= 200
                              and float(np.max(np.abs(state.S - state.W))) <= 1e-4 and rep.converged)
                if data.feature_dim <= 2:
                    _, ref = reference_minimum(data, cfg)
                    err = abs(admm.objective(data, state.W, cfg) - ref)
                    worst = max(worst, err)
                    if err > 1e-3:
                        failures.append((reg.value, loss.kind.value, err))
            cells.append(f"{reg.value}/{loss.kind.value}={converged}")
            if converged < 48:
                failures.append((reg.value, loss.kind.value, f"{converged}/50 converged"))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed <= 600
    record_criterion(4, ok, f"converged per cell {' '.join(cells)}; worst objective error "
                            f"{worst:.2e} (limit 1e-3); failures {failures[:5]}; {elapsed:.0f}s (limit 600s)")
    assert ok


# ---- 5 ---------------------------------------------------------------------------

def best_gap_through(gaps, t):
    # gaps[0] belongs to iteration 2 (the first feasible iterate); a solve that
    # stopped early keeps its last certificate
    upto = gaps[:max(t - 1, 1)]
    return max(min(upto), 0.0)


def test_criterion_5_gap_decay():
    rng = np.random.default_rng(505)
    traces = []
    for k in range(20):
        task = random_task(rng, int(rng.integers(4, 9)), int(rng.integers(2, 5)))
        p = InnerProblem(task, rng.normal(size=task.n_features), float(rng.uniform(0.2, 2.0)),
                         LOSSES[k % 3], 0.0, 400)
        traces.append(solve_column(p).gaps)
    ratios = {}
    for T in (50, 100, 200):
        g_t = np.mean([best_gap_through(g, T) for g in traces])
        g_2t = np.mean([best_gap_through(g, 2 * T) for g in traces])
        ratios[T] = (g_t, g_2t, g_2t <= 0.75 * g_t)
    ok = all(r[2] for r in ratios.values())
    record_criterion(5, ok, "; ".join(f"T={T}: gap {a:.3e} -> {b:.3e} (ratio {b / a if a else 0:.3f}, limit 0.75)"
                                      for T, (a, b, _) in ratios.items()))
    assert ok


# ---- 6 ---------------------------------------------------------------------------

# wall-clock timings live apart from numeric outputs and are not compared
NON_NUMERIC = {"timing.json"}


def snapshot(root):
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.name not in NON_NUMERIC:
            out[str(path.relative_to(root))] = path.read_bytes()
    return out


def test_criterion_6_cli_determinism(tmp_path):
    from test_cli import make_fixture
    data = make_fixture(tmp_path / "toy.svm", n=30, names=("a", "b", "c"))
    fast = ["--outer-max-iter", "20", "--inner-max-iter", "3000", "--warm-start"]
    commands = {
        "train": ["train", "--dataset", data, "--loss", "auc", "--reg", "trace", "--lambda", "0.7", *fast],
        "eval": None,
        "cv": ["cv", "--dataset", data, "--loss", "f1", "--lambda", "0.1,1,10", "--cv-folds", "3", *fast],
        "experiment": ["experiment", "--dataset", data, "--methods", "smtl-f1,smtl-auc:l11,mtl-cls",
                       "--partitions", "2", "--cv-folds", "3", "--lambda", "0.1,1", *fast],
        "imbalance": ["imbalance", "--dataset", data, "--ratios", "1:1,1:4", "--methods", "smtl-auc",
                      "--partitions", "1", "--cv-folds", "2", "--lambda", "1", *fast],
    }
    differing = []
    for name, argv in commands.items():
        out = tmp_path / name
        if name == "eval":
            argv = ["eval", "--model", tmp_path / "train" / "model.txt", "--dataset", data,
                    "--format", "json"]
        runs = []
        for _ in range(2):
            shutil.rmtree(out, ignore_errors=True)
            assert cli.main([str(a) for a in argv] + ["--out", str(out)]) == 0
            runs.append(snapshot(out))
        if runs[0] != runs[1] or not runs[0]:
            differing.append(name)
    ok = not differing
    record_criterion(6, ok, f"byte-identical reruns for {sorted(commands)}; differing {differing}")
    assert ok


# ---- 7-9 (need the Emotions data set) ----------------------------------------------

EMOTIONS = os.environ.get("SMTL_EMOTIONS")


def emotions_experiment(tmp_path, methods, extra=()):
    out = tmp_path / "emotions"
    argv = ["experiment", "--dataset", EMOTIONS, "--methods", methods, "--out", str(out),
            "--warm-start", *extra]
    assert cli.main(argv) == 0
    return {(s["method"], s["regularizer"]): s
            for s in json.loads((out / "summary.json").read_text())}


def need_emotions(number):
    if not EMOTIONS or not os.path.exists(EMOTIONS):
        record_criterion(number, "UNAVAILABLE", "Emotions data not present; set SMTL_EMOTIONS to run")
        pytest.skip("Emotions data set not available offline")


@pytest.mark.slow
def test_criterion_7_emotions_f1(tmp_path):
    need_emotions(7)
    t0 = time.perf_counter()
    s = emotions_experiment(tmp_path, "smtl-f1:l21,mtl-cls:l21")
    smtl, base = s[("smtl-f1", "l21")], s[("mtl-cls", "l21")]
    elapsed = time.perf_counter() - t0
    ok = abs(smtl["macro_f1"] - 66.244) <= 5 and smtl["macro_f1"] >= base["macro_f1"]
    record_criterion(7, ok, f"macro F1 {smtl['macro_f1']:.3f}±{smtl['macro_f1_std']:.3f} "
                            f"(target 66.244±5), baseline {base['macro_f1']:.3f}, {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_8_emotions_auc(tmp_path):
    need_emotions(8)
    s = emotions_experiment(tmp_path, "smtl-auc:l21,mtl-cls:l21")
    smtl, base = s[("smtl-auc", "l21")], s[("mtl-cls", "l21")]
    ok = abs(smtl["avg_auc"] - 83.378) <= 4 and smtl["avg_auc"] >= base["avg_auc"]
    record_criterion(8, ok, f"average AUC {smtl['avg_auc']:.3f}±{smtl['avg_auc_std']:.3f} "
                            f"(target 83.378±4), baseline {base['avg_auc']:.3f}")
    assert ok


@pytest.mark.slow
def test_criterion_9_emotions_imbalance(tmp_path):
    need_emotions(9)
    out = tmp_path / "imb"
    assert cli.main(["imbalance", "--dataset", EMOTIONS, "--ratios", "1:1,1:10", "--methods",
                     "smtl-auc:l21,mtl-cls:l21", "--out", str(out), "--warm-start"]) == 0
    rows = (out / "comparison.csv").read_text().strip().split("\n")
    cols = rows[0].split(",")
    auc = {}
    for line in rows[1:]:
        r = dict(zip(cols, line.split(",")))
        auc[(r["ratio"], r["method"])] = float(r["avg_auc"])
    margin = {ratio: auc[(ratio, "smtl-auc")] - auc[(ratio, "mtl-cls")] for ratio in ("1:1", "1:10")}
    ok = margin["1:10"] > 0 and margin["1:10"] >= margin["1:1"]
    record_criterion(9, ok, f"SMTL-MTL AUC margin 1:1 {margin['1:1']:+.3f}, 1:10 {margin['1:10']:+.3f}")
    assert ok


def test_exact_objective_separates_distinct_values():
    # guards criterion 1's comparison: a non-maximal labeling must not compare equal
    y = np.array([1.0, -1.0, -1.0])
    s = np.array([0.3, 0.1, -0.2])
    best = losses.infer(AUC, s, np.zeros((3, 1)), y)
    other = np.zeros(3)
    assert exact_objective(AUC, s, y, best.coef) != exact_objective(AUC, s, y, other)
    assert float(exact_objective(AUC, s, y, best.coef)) == pytest.approx(best.objective, abs=1e-15)
