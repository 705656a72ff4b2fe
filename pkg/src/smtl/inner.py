"""Per-task primal-dual coordinate ascent for the W-column subproblem.

Solves, for one task,

    min_w  1/2 ||w||^2 + c * max_j [Delta_j - w^T K_j],    c = lam / mu,

with columns ``K_j = a_j + b / c`` where ``a_j`` is the inference direction of
candidate ``j``. The dual is a concave quadratic over the scaled simplex
``{alpha >= 0, sum(alpha) = c}`` with one coordinate per candidate, far too
many to store, so only ``w_hat = K alpha`` and ``v = alpha^T Delta`` are kept.
Each step moves alpha toward the vertex ``c e_j`` of the most violated
candidate with an exact, clamped line search.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels, losses
from .errors import NumericalError, ValidationError
from .model import LossKind, LossMetric, TaskDataset

DENOM_FLOOR = 1e-24


@dataclass
class InnerProblem:
    task: TaskDataset
    b: np.ndarray
    lambda_over_mu: float
    loss: LossMetric
    inner_tol: float = 1e-5
    inner_max_iter: int = 5000

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.b.shape[0] != self.task.n_features:
            raise ValidationError(
                f"b has length {self.b.shape[0]}, task {self.task.task_name!r} has d={self.task.n_features}")
        if not self.lambda_over_mu > 0:
            raise ValidationError(f"lambda/mu must be positive, got {self.lambda_over_mu!r}")


@dataclass
class InnerState:
    """Implicit dual iterate.

    ``loss_part`` is ``w_hat - b``: the mixture of inference directions alone,
    which stays valid when ``b`` changes and is what a warm start reuses.
    """

    w_hat: np.ndarray
    v: float
    lambda_over_mu: float
    iterations: int = 0
    last_gap: float = np.inf

    @property
    def dual_value(self) -> float:
        return float(-0.5 * self.w_hat @ self.w_hat + self.v)


@dataclass
class InnerResult:
    w: np.ndarray
    iterations: int
    gap: float
    state: InnerState
    gaps: list = field(default_factory=list)
    loss_part: Optional[np.ndarray] = None


def primal_value(problem: InnerProblem, w) -> float:
    """Rescaled subproblem objective ``1/2||w||^2 + c * max_j [Delta_j - w^T K_j]``."""
    w = np.asarray(w, dtype=float)
    task = problem.task
    c = problem.lambda_over_mu
    r = losses.infer(problem.loss, task.features @ w, task.features, task.labels)
    return float(0.5 * w @ w + c * r.objective - w @ problem.b)


def solve_column(problem: InnerProblem, warm: Optional[InnerResult] = None,
                 callback: Optional[Callable] = None) -> InnerResult:
    """Run coordinate ascent until the duality gap drops below ``inner_tol``.

    ``warm`` reuses the dual mixture of a previous solve on the same task
    (rescaled if ``lambda/mu`` changed). ``callback(iteration, inference,
    gamma, state)`` is invoked after every update.
    """
    task = problem.task
    X, y = task.features, task.labels
    losses.check_task_supports(problem.loss, y, task.task_name)
    c = float(problem.lambda_over_mu)
    b = problem.b
    b_over_c = b / c

    if warm is not None and warm.loss_part is not None:
        scale = c / warm.state.lambda_over_mu
        w_hat = scale * warm.loss_part + b
        v = scale * warm.state.v
        feasible = True
    else:
        w_hat = np.zeros(task.n_features)
        v = 0.0
        feasible = False  # alpha = 0 is off the simplex until the first step

    if callback is None:
        return _solve_compiled(problem, X, y, c, b, w_hat, v, feasible)

    gaps = []
    gap = np.inf
    it = 0
    exact = False
    while it < problem.inner_max_iter:
        it += 1
        r = losses.infer(problem.loss, X @ w_hat, X, y)
        # Delta_j - w_hat^T K_j with K_j = direction + b / c
        violation = r.objective - w_hat @ b_over_c
        ww = w_hat @ w_hat
        if feasible:
            gap = ww + c * violation - v
            gaps.append(gap)
            if gap <= problem.inner_tol:
                it -= 1
                break
        u = c * (r.direction + b_over_c) - w_hat
        denom = u @ u
        if not feasible:
            gamma = 1.0
        elif denom < DENOM_FLOOR:
            # the chosen vertex is the current iterate: gap is exact
            gamma = 0.0
            exact = True
        else:
            gamma = min(max((c * violation + ww - v) / denom, 0.0), 1.0)
        w_hat = w_hat + gamma * u
        v = (1.0 - gamma) * v + gamma * c * r.delta
        feasible = True
        if not (np.isfinite(v) and np.all(np.isfinite(w_hat))):
            raise NumericalError(f"non-finite iterate in inner solver for task {task.task_name!r}")
        if callback is not None:
            callback(it, r, gamma, InnerState(w_hat.copy(), v, c, it, gap))
        if exact:
            break
    else:
        # iteration cap: certify the returned point with one more inference
        r = losses.infer(problem.loss, X @ w_hat, X, y)
        gap = w_hat @ w_hat + c * (r.objective - w_hat @ b_over_c) - v
        gaps.append(gap)

    state = InnerState(w_hat, float(v), c, it, float(gap))
    return InnerResult(w_hat.copy(), it, float(gap), state, gaps, w_hat - b)


def _solve_compiled(problem, X, y, c, b, w_hat, v, feasible) :
    """Same iteration as the reference loop in :func:`solve_column`, compiled."""
    X = np.ascontiguousarray(X, dtype=float)
    w_hat, v, it, gap, gaps = _kernels.coordinate_ascent(
        X, np.ascontiguousarray(X.T), np.ascontiguousarray(y, dtype=float),
        np.ascontiguousarray(b), c, losses.LOSS_CODES[LossKind(problem.loss.kind)],
        float(problem.loss.beta), float(problem.inner_tol), int(problem.inner_max_iter),
        np.ascontiguousarray(w_hat, dtype=float), float(v), bool(feasible), DENOM_FLOOR)
    if not (np.isfinite(v) and np.all(np.isfinite(w_hat))):
        raise NumericalError(f"non-finite iterate in inner solver for task {problem.task.task_name!r}")
    state = InnerState(w_hat, float(v), c, int(it), float(gap))
    return InnerResult(w_hat.copy(), int(it), float(gap), state, gaps.tolist(), w_hat - b)
