import numpy as np
import pytest

from smtl import losses
from smtl.errors import DegenerateTaskError, ValidationError
from smtl.inner import InnerProblem, primal_value, solve_column
from smtl.model import LossKind, LossMetric, TaskDataset
from smtl.oracle import brute_inner, labelings_iterative, materialize_columns

from conftest import random_task

F1, AUC, HAM = LossMetric(LossKind.F1), LossMetric(LossKind.AUC), LossMetric(LossKind.HAMMING)


def problem(rng, loss, n, d, tol=1e-5, cap=5000):
    task = random_task(rng, n, d)
    return InnerProblem(task, rng.normal(size=d), float(rng.uniform(0.2, 2.0)), loss, tol, cap)


@pytest.mark.parametrize("loss", [F1, AUC, HAM])
def test_zero_design_returns_b(loss):
    task = TaskDataset(np.zeros((4, 3)), [1, -1, 1, -1])
    b = np.array([0.3, -1.2, 2.0])
    res = solve_column(InnerProblem(task, b, 0.7, loss))
    assert np.allclose(res.w, b)


def test_hamming_small_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        task = random_task(rng, 3, 2)
        p = InnerProblem(task, rng.normal(size=2), 0.5, HAM, 1e-7, 10**6)
        res = solve_column(p)
        assert primal_value(p, res.w) == pytest.approx(brute_inner(p).value, abs=1e-5)


def test_f1_matches_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        p = problem(rng, F1, int(rng.integers(2, 9)), int(rng.integers(1, 5)), 1e-5, 10**6)
        res = solve_column(p)
        opt = brute_inner(p).value
        assert primal_value(p, res.w) - opt <= max(1e-4, res.gap)
        assert primal_value(p, res.w) >= opt - 1e-7


def test_gap_bounds_suboptimality():
    rng = np.random.default_rng(2)
    for loss in (F1, HAM):
        for _ in range(5):
            p = problem(rng, loss, 5, 2, tol=1e-12, cap=300)
            res = solve_column(p)
            assert primal_value(p, res.w) - brute_inner(p).value <= res.gap + 1e-8


def _column_index(y, coef):
    lab = y - coef
    table = labelings_iterative(y.shape[0])
    return int(np.flatnonzero(np.all(table == lab, axis=1))[0])


@pytest.mark.parametrize("loss", [F1, HAM])
def test_shadow_alpha_consistency(loss):
    rng = np.random.default_rng(3)
    for _ in range(5):
        p = problem(rng, loss, 5, 3, tol=1e-12, cap=150)
        A, D = materialize_columns(p.task.features, p.task.labels, loss)
        c = p.lambda_over_mu
        K = A + (p.b / c)[:, None]
        alpha = np.zeros(D.shape[0])

        def check(it, r, gamma, state):
            nonlocal alpha
            assert 0.0 <= gamma <= 1.0
            j = _column_index(p.task.labels, r.coef)
            alpha = (1 - gamma) * alpha
            alpha[j] += gamma * c
            assert np.all(alpha >= 0) and alpha.sum() == pytest.approx(c, abs=1e-12)
            assert np.allclose(state.w_hat, K @ alpha, atol=1e-10)
            assert state.v == pytest.approx(alpha @ D, abs=1e-10)

        solve_column(p, callback=check)


@pytest.mark.parametrize("loss", [F1, AUC, HAM])
def test_dual_monotone_and_gap_nonnegative(loss):
    rng = np.random.default_rng(4)
    for _ in range(5):
        p = problem(rng, loss, 7, 3, tol=1e-12, cap=400)
        duals = []
        solve_column(p, callback=lambda it, r, g, s: duals.append(s.dual_value))
        assert np.all(np.diff(duals) >= -1e-10)
        res = solve_column(p)
        assert min(res.gaps) >= -1e-9


@pytest.mark.parametrize("loss", [F1, AUC, HAM])
def test_compiled_loop_matches_reference_loop(loss):
    rng = np.random.default_rng(5)
    for _ in range(5):
        p = problem(rng, loss, 6, 3, tol=1e-12, cap=200)
        fast = solve_column(p)
        ref = solve_column(p, callback=lambda *a: None)
        assert fast.iterations == ref.iterations
        assert np.allclose(fast.w, ref.w, atol=1e-9)
        assert fast.state.v == pytest.approx(ref.state.v, abs=1e-9)


def test_warm_start_after_b_change():
    rng = np.random.default_rng(6)
    p = problem(rng, HAM, 6, 2, tol=1e-7, cap=10**6)
    first = solve_column(p)
    p2 = InnerProblem(p.task, p.b + 0.05, p.lambda_over_mu * 1.3, HAM, 1e-7, 10**6)
    warm = solve_column(p2, warm=first)
    cold = solve_column(p2)
    # each value is within its own certified gap of the optimum
    slack = max(warm.gap, cold.gap) + 1e-9
    assert abs(primal_value(p2, warm.w) - primal_value(p2, cold.w)) <= slack


def test_errors():
    task = TaskDataset(np.ones((2, 2)), [-1, -1], "empty")
    with pytest.raises(DegenerateTaskError, match="'empty'"):
        solve_column(InnerProblem(task, np.zeros(2), 1.0, F1))
    with pytest.raises(ValidationError):
        InnerProblem(task, np.zeros(3), 1.0, HAM)
    with pytest.raises(ValidationError):
        InnerProblem(task, np.zeros(2), 0.0, HAM)


def test_cap_reports_certified_gap():
    rng = np.random.default_rng(7)
    p = problem(rng, F1, 8, 3, tol=1e-12, cap=10)
    res = solve_column(p)
    assert res.iterations == 10
    r = losses.infer(F1, p.task.features @ res.w, p.task.features, p.task.labels)
    expect = res.w @ res.w + p.lambda_over_mu * (r.objective - res.w @ p.b / p.lambda_over_mu) - res.state.v
    assert res.gap == pytest.approx(expect, abs=1e-12)
