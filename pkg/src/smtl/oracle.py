"""Brute-force references for small instances.

Everything here enumerates candidates explicitly and shares no search logic
with the fast paths in :mod:`smtl.losses` and :mod:`smtl.inner`. Only small
problems are admissible (a few thousand labelings); :class:`OracleBudget`
enforces that.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceededError, DegenerateTaskError
from .losses import InferenceResult, delta as loss_delta
from .model import LossKind, LossMetric, MultiTaskDataset, Regularizer, SmtlConfig


@dataclass(frozen=True)
class OracleBudget:
    max_labelings: int = 4096
    max_qp_iterations: int = 200_000
    qp_tol: float = 1e-9

    def __post_init__(self):
        if self.max_labelings < 1 or self.max_qp_iterations < 1 or not self.qp_tol > 0:
            raise ValueError("oracle budget caps must be positive")


DEFAULT_BUDGET = OracleBudget()


def labelings_iterative(n):
    """All 2**n sign vectors, in binary counting order."""
    return np.array(list(itertools.product((-1.0, 1.0), repeat=n)))


def labelings_recursive(n):
    """All 2**n sign vectors, built by recursive doubling (different order)."""
    if n == 0:
        return np.zeros((1, 0))
    rest = labelings_recursive(n - 1)
    return np.vstack([np.hstack([rest, np.full((len(rest), 1), s)]) for s in (1.0, -1.0)])


def _auc_counts(y, swapped_pairs):
    """Integer per-sample swap counts from an explicit list of swapped (i, j) pairs."""
    counts = np.zeros(y.shape[0])
    for i, j in swapped_pairs:
        counts[i] += 1
        counts[j] += 1
    return counts


def _auc_result(X, y, s, counts):
    n_pos = int(np.sum(y > 0))
    n_neg = y.shape[0] - n_pos
    scale = 2.0 / (n_pos * n_neg)
    coef = np.where(y > 0, scale * counts, -scale * counts)
    dlt = float(np.sum(counts[y > 0])) / (n_pos * n_neg)
    return InferenceResult(dlt, X.T @ coef, float(dlt - coef @ s), coef)


def _pairs(y):
    pos = np.flatnonzero(y > 0)
    neg = np.flatnonzero(y < 0)
    if pos.size == 0 or neg.size == 0:
        raise DegenerateTaskError("AUC needs both classes")
    return [(int(i), int(j)) for i in pos for j in neg]


def brute_infer(scores, features, truth, loss: LossMetric, budget=DEFAULT_BUDGET,
                enumerate_fn=labelings_iterative) -> InferenceResult:
    """Exact loss-augmented argmax by enumeration.

    F1 and Hamming try every labeling; AUC decides each (positive, negative)
    pair on its own, which is exact because the AUC objective is a sum of
    per-pair terms.
    """
    s = np.asarray(scores, dtype=float).ravel()
    X = np.asarray(features, dtype=float)
    y = np.asarray(truth, dtype=float).ravel()
    n = y.shape[0]
    if LossKind(loss.kind) is LossKind.AUC:
        pairs = _pairs(y)
        if len(pairs) > budget.max_labelings:
            raise BudgetExceededError(f"{len(pairs)} pairs exceed budget {budget.max_labelings}")
        n_pn = len(pairs)
        # pair term (1 - 2 (s_i - s_j)) / (Pos Neg) is positive iff swapping pays
        swapped = [(i, j) for i, j in pairs if (1.0 - 2.0 * (s[i] - s[j])) / n_pn > 0]
        return _auc_result(X, y, s, _auc_counts(y, swapped))

    if 2 ** n > budget.max_labelings:
        raise BudgetExceededError(f"2**{n} labelings exceed budget {budget.max_labelings}")
    best = None
    for lab in enumerate_fn(n):
        dlt = loss_delta(loss, y, lab)
        val = float(dlt - (y - lab) @ s)
        if best is None or val > best[0]:
            best = (val, dlt, lab)
    val, dlt, lab = best
    coef = y - lab
    return InferenceResult(dlt, X.T @ coef, val, coef)


def brute_infer_auc_patterns(scores, features, truth, budget=DEFAULT_BUDGET) -> InferenceResult:
    """AUC argmax over all 2**(Pos*Neg) swap patterns (no decomposition assumed)."""
    s = np.asarray(scores, dtype=float).ravel()
    X = np.asarray(features, dtype=float)
    y = np.asarray(truth, dtype=float).ravel()
    pairs = _pairs(y)
    if 2 ** len(pairs) > budget.max_labelings:
        raise BudgetExceededError(f"2**{len(pairs)} swap patterns exceed budget")
    best = None
    for mask in itertools.product((False, True), repeat=len(pairs)):
        res = _auc_result(X, y, s, _auc_counts(y, [p for p, on in zip(pairs, mask) if on]))
        if best is None or res.objective > best.objective:
            best = res
    return best


def materialize_columns(features, truth, loss: LossMetric, budget=DEFAULT_BUDGET):
    """Every candidate's ``(direction, delta)`` as arrays ``A`` (d x p) and ``D`` (p,)."""
    X = np.asarray(features, dtype=float)
    y = np.asarray(truth, dtype=float).ravel()
    dirs, deltas = [], []
    if LossKind(loss.kind) is LossKind.AUC:
        pairs = _pairs(y)
        if 2 ** len(pairs) > budget.max_labelings:
            raise BudgetExceededError(f"2**{len(pairs)} swap patterns exceed budget")
        for mask in itertools.product((False, True), repeat=len(pairs)):
            res = _auc_result(X, y, np.zeros_like(y),
                              _auc_counts(y, [p for p, on in zip(pairs, mask) if on]))
            dirs.append(res.direction)
            deltas.append(res.delta)
    else:
        n = y.shape[0]
        if 2 ** n > budget.max_labelings:
            raise BudgetExceededError(f"2**{n} labelings exceed budget {budget.max_labelings}")
        for lab in labelings_iterative(n):
            dirs.append(X.T @ (y - lab))
            deltas.append(loss_delta(loss, y, lab))
    return np.array(dirs).T, np.array(deltas)


def project_simplex(v, radius=1.0):
    """Euclidean projection onto ``{x >= 0, sum(x) = radius}`` (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - radius
    ind = np.arange(1, v.shape[0] + 1)
    rho = np.flatnonzero(u - css / ind > 0)[-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


@dataclass
class QPResult:
    value: float
    w: np.ndarray
    alpha: np.ndarray
    dual_value: float
    gap: float
    iterations: int
    dual_trace: list


def solve_dual_qp(K, D, radius, budget=DEFAULT_BUDGET) -> QPResult:
    """Maximize ``-1/2 ||K a||^2 + D^T a`` over the simplex of given radius.

    Accelerated projected gradient with adaptive restart; stops once the
    primal-dual gap of ``w = K a`` is below ``budget.qp_tol``.
    """
    p = K.shape[1]
    L = max(np.linalg.norm(K, 2) ** 2, 1e-12)
    alpha = np.full(p, radius / p)
    z = alpha.copy()
    t = 1.0

    def dual(a):
        w = K @ a
        return float(-0.5 * w @ w + D @ a)

    def primal(w):
        return float(0.5 * w @ w + radius * np.max(D - K.T @ w))

    trace = [dual(alpha)]
    gap = np.inf
    it = 0
    for it in range(1, budget.max_qp_iterations + 1):
        grad = D - K.T @ (K @ z)
        new = project_simplex(z + grad / L, radius)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        d_new = dual(new)
        if d_new < trace[-1]:
            # restart momentum and take a plain projected step
            new = project_simplex(alpha + (D - K.T @ (K @ alpha)) / L, radius)
            d_new = dual(new)
            z, t = new.copy(), 1.0
        else:
            z = new + ((t - 1.0) / t_new) * (new - alpha)
            t = t_new
        alpha = new
        trace.append(d_new)
        if it % 25 == 0 or it == budget.max_qp_iterations:
            gap = primal(K @ alpha) - d_new
            if gap <= budget.qp_tol:
                break
    w = K @ alpha
    return QPResult(primal(w), w, alpha, dual(alpha), primal(w) - dual(alpha), it, trace)


def _cvx_hinge(cp, task, loss, w, budget):
    """Exact cvxpy expression of one task's structured hinge at variable ``w``.

    AUC is written as its per-pair sum (one hinge per positive/negative pair),
    everything else as the max over materialized candidates.
    """
    X, y = task.features, task.labels
    if LossKind(loss.kind) is LossKind.AUC:
        pairs = _pairs(y)
        if len(pairs) > budget.max_labelings:
            raise BudgetExceededError(f"{len(pairs)} pairs exceed budget {budget.max_labelings}")
        P = np.array([X[i] - X[j] for i, j in pairs])
        return cp.sum(cp.pos(1.0 - 2.0 * (P @ w))) / len(pairs)
    A, D = materialize_columns(X, y, loss, budget)
    return cp.max(D - A.T @ w)


def brute_inner(problem, budget=DEFAULT_BUDGET) -> QPResult:
    """Optimal value of an :class:`~smtl.inner.InnerProblem`.

    F1 and Hamming solve the full dual over every labeling; AUC, whose
    candidate set is exponential in the number of pairs, solves the primal
    with the per-pair hinge in a conic solver (``cvxpy`` required).
    """
    task = problem.task
    c = problem.lambda_over_mu
    if LossKind(problem.loss.kind) is not LossKind.AUC:
        A, D = materialize_columns(task.features, task.labels, problem.loss, budget)
        K = A + (problem.b / c)[:, None]
        return solve_dual_qp(K, D, c, budget)
    import cvxpy as cp

    w = cp.Variable(task.n_features)
    hinge = _cvx_hinge(cp, task, problem.loss, w, budget)
    prob = cp.Problem(cp.Minimize(0.5 * cp.sum_squares(w) + c * hinge - problem.b @ w))
    prob.solve(solver=cp.CLARABEL)
    w_opt = np.asarray(w.value, dtype=float)
    s = task.features @ w_opt
    h = brute_infer(s, task.features, task.labels, problem.loss, budget).objective
    value = float(0.5 * w_opt @ w_opt + c * h - w_opt @ problem.b)
    return QPResult(value, w_opt, np.zeros(0), float(prob.value), value - float(prob.value), 0, [])


def _omega(reg, W):
    reg = Regularizer(reg)
    if reg is Regularizer.L11:
        return float(np.abs(W).sum())
    if reg is Regularizer.L21:
        return float(np.sqrt((W ** 2).sum(axis=1)).sum())
    return float(np.linalg.svd(W, compute_uv=False).sum())


def brute_objective(data: MultiTaskDataset, W, config: SmtlConfig, budget=DEFAULT_BUDGET) -> float:
    """Regularizer plus lambda times the exhaustively evaluated structured hinges."""
    W = np.asarray(W, dtype=float)
    total = 0.0
    for i, task in enumerate(data.tasks):
        s = task.features @ W[:, i]
        total += brute_infer(s, task.features, task.labels, config.loss, budget).objective
    return _omega(config.regularizer, W) + config.lam * total


def reference_minimum(data: MultiTaskDataset, config: SmtlConfig, budget=DEFAULT_BUDGET):
    """Global minimizer of the full objective via a generic conic solver.

    Each hinge is written exactly (max over materialized candidates, or the
    per-pair sum for AUC), so the problem is a convex program. Requires ``cvxpy``.
    Returns ``(W, value)`` with the value re-evaluated by :func:`brute_objective`.
    """
    import cvxpy as cp

    d, m = data.feature_dim, data.n_tasks
    W = cp.Variable((d, m))
    hinge = 0
    for i, task in enumerate(data.tasks):
        hinge = hinge + _cvx_hinge(cp, task, config.loss, W[:, i], budget)
    reg = Regularizer(config.regularizer)
    if reg is Regularizer.L11:
        omega = cp.sum(cp.abs(W))
    elif reg is Regularizer.L21:
        omega = cp.sum(cp.norm(W, 2, axis=1))
    else:
        omega = cp.normNuc(W)
    prob = cp.Problem(cp.Minimize(omega + config.lam * hinge))
    prob.solve(solver=cp.CLARABEL)
    W_opt = np.asarray(W.value)
    return W_opt, brute_objective(data, W_opt, config, budget)
