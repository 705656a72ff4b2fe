"""Outer ADMM loop for ``min_W Omega(W) + lam * sum_i G_i(W_.i)``.

The split ``W = S`` puts the regularizer on ``S`` (closed-form prox) and the
structured hinges on the columns of ``W`` (one independent inner solve per
task). Each outer iteration runs, in order: the S-step with the old ``W`` and
``Z``, the column solves with the new ``S`` and the old ``Z``, then the
multiplier update.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import losses
from .errors import NumericalError, ValidationError
from .inner import InnerProblem, solve_column
from .model import IterationRecord, MultiTaskDataset, SmtlConfig, SolveReport
from .prox import prox, regularizer_value


@dataclass
class AdmmState:
    W: np.ndarray
    S: np.ndarray
    Z: np.ndarray
    mu: float
    iteration: int = 0
    infeasibility: float = np.inf
    # mu * ||S_t - S_{t-1}||_inf
    dual_residual: float = np.inf
    # last inner result per task, reused when warm starting
    inner: list = field(default_factory=list)

    @classmethod
    def zeros(cls, d, m, mu):
        return cls(np.zeros((d, m)), np.zeros((d, m)), np.zeros((d, m)), float(mu),
                   inner=[None] * m)


def thread_count() -> int:
    """Worker cap from ``SMTL_THREADS`` (default: CPU count)."""
    raw = os.environ.get("SMTL_THREADS", "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"SMTL_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValidationError(f"SMTL_THREADS must be a positive integer, got {raw!r}")
    return n


def check_preconditions(data: MultiTaskDataset, config: SmtlConfig):
    for task in data.tasks:
        losses.check_task_supports(config.loss, task.labels, task.task_name)


def step(data: MultiTaskDataset, config: SmtlConfig, state: AdmmState, pool=None) -> float:
    """One full outer iteration, in place. Returns the summed inner gaps."""
    mu = state.mu
    S_prev = state.S
    state.S = prox(config.regularizer, state.W + state.Z / mu, mu)
    state.dual_residual = mu * float(np.max(np.abs(state.S - S_prev)))
    B = state.S - state.Z / mu
    c = config.lam / mu

    def solve(i):
        problem = InnerProblem(data.tasks[i], B[:, i], c, config.loss,
                               config.inner_tol, config.inner_max_iter)
        warm = state.inner[i] if config.warm_start else None
        return solve_column(problem, warm=warm)

    idx = range(data.n_tasks)
    results = list(pool.map(solve, idx)) if pool is not None else [solve(i) for i in idx]
    W = np.empty_like(state.W)
    for i, res in enumerate(results):
        W[:, i] = res.w
    state.W = W
    state.inner = results
    state.Z = state.Z + mu * (W - state.S)
    state.iteration += 1
    state.infeasibility = float(np.max(np.abs(state.S - W)))
    if not np.isfinite(state.infeasibility) or not np.all(np.isfinite(state.Z)):
        raise NumericalError(f"ADMM iterate became non-finite at iteration {state.iteration}")
    if config.mu_schedule is not None:
        rho, mu_max = config.mu_schedule
        state.mu = min(rho * mu, mu_max)
    return float(sum(r.gap for r in results))


def run(data: MultiTaskDataset, config: SmtlConfig, state: Optional[AdmmState] = None,
        callback: Optional[Callable] = None, max_iter: Optional[int] = None,
        threads: Optional[int] = None):
    """Iterate from ``state`` (zeros if omitted) until ``||S - W||_inf <= outer_tol``.

    Under the default stop rule the change in ``S`` (scaled by ``mu``) must
    also be within ``outer_tol``: with piecewise-linear hinges ``W - S`` can
    vanish exactly while ``S`` is still moving.

    Returns ``(state, report)``. ``callback(record, state)`` sees every
    iteration. Hitting the iteration cap is reported, not raised. Column
    solves use up to ``threads`` workers (default from ``SMTL_THREADS``);
    results do not depend on the worker count.
    """
    check_preconditions(data, config)
    d, m = data.feature_dim, data.n_tasks
    if state is None:
        state = AdmmState.zeros(d, m, config.mu)
    elif state.W.shape != (d, m):
        raise ValidationError(f"initial state has shape {state.W.shape}, data needs {(d, m)}")
    cap = config.outer_max_iter if max_iter is None else max_iter
    report = SolveReport()
    workers = min(thread_count() if threads is None else threads, m)
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    t0 = time.perf_counter()
    try:
        for _ in range(cap):
            gap = step(data, config, state, pool)
            rec = IterationRecord(state.iteration, state.infeasibility, gap,
                                  time.perf_counter() - t0, state.dual_residual)
            report.per_iteration.append(rec)
            if callback is not None:
                callback(rec, state)
            if state.infeasibility <= config.outer_tol and (
                    config.stop_rule == "primal" or state.dual_residual <= config.outer_tol):
                report.converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    report.outer_iterations = len(report.per_iteration)
    report.final_infeasibility = state.infeasibility
    return state, report


def train(data: MultiTaskDataset, config: SmtlConfig, callback=None, threads=None):
    """Fit the d x m weight matrix. Returns ``(W, SolveReport)``."""
    state, report = run(data, config, callback=callback, threads=threads)
    return state.W.copy(), report


def hinge(data: MultiTaskDataset, W, loss) -> np.ndarray:
    """Per-task structured hinge ``G_i(W_.i)``, evaluated by exact inference."""
    W = np.asarray(W, dtype=float)
    out = np.empty(data.n_tasks)
    for i, task in enumerate(data.tasks):
        out[i] = losses.infer(loss, task.features @ W[:, i], task.features, task.labels).objective
    return out


def objective(data: MultiTaskDataset, W, config: SmtlConfig) -> float:
    """``Omega(W) + lam * sum_i G_i(W_.i)``."""
    W = np.asarray(W, dtype=float)
    if W.shape != (data.feature_dim, data.n_tasks):
        raise ValidationError(f"W has shape {W.shape}, data needs {(data.feature_dim, data.n_tasks)}")
    check_preconditions(data, config)
    return regularizer_value(config.regularizer, W) + config.lam * float(np.sum(hinge(data, W, config.loss)))
