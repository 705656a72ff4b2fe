"""Task losses and loss-augmented inference.

For a task with features ``X`` (n x d), true labels ``y`` and the current
scores ``s = X w``, inference finds the candidate maximizing

    delta(y, candidate) - w^T direction(candidate)

where ``direction`` is ``X^T (y - l)`` for a label vector ``l``. For AUC the
candidate lives in pairwise-swap space and ``direction`` is the (normalized)
difference of pairwise feature maps. The attained value is the structured
hinge of the task at ``w``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateTaskError, ValidationError
from .model import LossKind, LossMetric


@dataclass(frozen=True)
class InferenceResult:
    delta: float
    direction: np.ndarray
    objective: float
    # per-sample coefficients c with direction = X^T c; kept for cheap reuse
    coef: np.ndarray


def _pm1(v, name="labels"):
    v = np.asarray(v, dtype=float).ravel()
    if not np.all((v == 1) | (v == -1)):
        raise ValidationError(f"{name} must contain only -1/+1")
    return v


def _same_length(a, b):
    if a.shape != b.shape:
        raise ValidationError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")


def f_score(tp, n_pos, n_pred_pos, beta=1.0):
    """F-score from counts, with P = tp/n_pos and R = tp/n_pred_pos.

    ``(1+beta) P R / (P + beta R)`` simplifies to
    ``(1+beta) tp / (n_pred_pos + beta n_pos)``; returns 0 when ``tp == 0``
    (covers the 0/0 cases).
    """
    if tp == 0:
        return 0.0
    return (1.0 + beta) * tp / (n_pred_pos + beta * n_pos)


def delta_f1(truth, candidate, beta=1.0):
    """``1 - F_beta``; equals 1 when the candidate predicts no positives.

    >>> delta_f1([1, 1, -1, -1], [1, -1, 1, -1])
    0.5
    """
    y = _pm1(truth, "truth")
    c = _pm1(candidate, "candidate")
    _same_length(y, c)
    n_pos = int(np.sum(y > 0))
    if n_pos == 0:
        raise DegenerateTaskError("F-score is undefined when truth has no positive label")
    tp = int(np.sum((y > 0) & (c > 0)))
    return 1.0 - f_score(tp, n_pos, int(np.sum(c > 0)), beta)


def delta_auc(truth, candidate):
    """Fraction of (positive, negative) pairs whose order the candidate inverts."""
    y = _pm1(truth, "truth")
    c = _pm1(candidate, "candidate")
    _same_length(y, c)
    n_pos = int(np.sum(y > 0))
    n_neg = y.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateTaskError("AUC needs at least one positive and one negative label")
    pos_flipped = int(np.sum((y > 0) & (c < 0)))
    neg_flipped = int(np.sum((y < 0) & (c > 0)))
    return pos_flipped * neg_flipped / (n_pos * n_neg)


def delta_hamming(truth, candidate):
    """Twice the number of disagreeing positions."""
    y = _pm1(truth, "truth")
    c = _pm1(candidate, "candidate")
    _same_length(y, c)
    return 2.0 * float(np.sum(y != c))


def labeling_objective(delta, truth, labeling, scores):
    """Hinge maximand of a label vector, evaluated in score space."""
    return float(delta - (truth - labeling) @ scores)


def _prepare(scores, features, truth):
    s = np.ascontiguousarray(scores, dtype=float).ravel()
    y = np.ascontiguousarray(_pm1(truth, "truth"))
    X = np.asarray(features, dtype=float)
    if s.shape != y.shape:
        raise ValidationError(f"{s.shape[0]} scores for {y.shape[0]} labels")
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"features shape {X.shape} does not match {y.shape[0]} labels")
    return s, X, y


def _finish(X, s, dlt, coef) -> InferenceResult:
    # objective recomputed here so it matches labeling_objective bit for bit
    return InferenceResult(float(dlt), X.T @ coef, float(dlt - coef @ s), coef)


def infer_f1(scores, features, truth, beta=1.0) -> InferenceResult:
    """Most violated labeling for the F-score loss.

    For fixed numbers of kept positives ``a`` and flipped negatives ``b`` the
    loss is fixed and the score term is largest when the top-scored members
    of each class are labeled positive, so only the (a, b) grid is searched.
    Ties in score resolve by sample index; grid values within a tiny relative
    window of the maximum are re-scored with a direct dot product.
    """
    s, X, y = _prepare(scores, features, truth)
    if not np.any(y > 0):
        raise DegenerateTaskError("F-score loss needs at least one positive label")
    dlt, coef = _kernels.f1_coef(s, y, float(beta))
    return _finish(X, s, dlt, coef)


def auc_pair_coefficients(swap_counts_pos, swap_counts_neg, n_pos, n_neg, y):
    """Per-sample direction coefficients from per-sample swapped-pair counts."""
    coef = np.zeros(y.shape[0])
    scale = 2.0 / (n_pos * n_neg)
    coef[y > 0] = scale * swap_counts_pos
    coef[y < 0] = -scale * swap_counts_neg
    return coef


def infer_auc(scores, features, truth) -> InferenceResult:
    """Most violated pairwise ordering for the AUC loss.

    Positives are offset by -0.25 and negatives by +0.25; a pair is swapped
    iff the negative's offset score strictly exceeds the positive's. Sorting
    each class once lets every sample count its swapped pairs by bisection.
    """
    s, X, y = _prepare(scores, features, truth)
    n_pos = int(np.sum(y > 0))
    if n_pos == 0 or n_pos == y.shape[0]:
        raise DegenerateTaskError("AUC loss needs at least one positive and one negative label")
    dlt, coef = _kernels.auc_coef(s, y)
    return _finish(X, s, dlt, coef)


def infer_hamming(scores, features, truth) -> InferenceResult:
    """Flip every sample whose margin ``y_k s_k`` is below 1."""
    s, X, y = _prepare(scores, features, truth)
    dlt, coef = _kernels.hamming_coef(s, y)
    return _finish(X, s, dlt, coef)


LOSS_CODES = {LossKind.F1: _kernels.LOSS_F1, LossKind.AUC: _kernels.LOSS_AUC,
              LossKind.HAMMING: _kernels.LOSS_HAMMING}


def infer(loss: LossMetric, scores, features, truth) -> InferenceResult:
    kind = LossKind(loss.kind)
    if kind is LossKind.F1:
        return infer_f1(scores, features, truth, loss.beta)
    if kind is LossKind.AUC:
        return infer_auc(scores, features, truth)
    return infer_hamming(scores, features, truth)


def delta(loss: LossMetric, truth, candidate) -> float:
    kind = LossKind(loss.kind)
    if kind is LossKind.F1:
        return delta_f1(truth, candidate, loss.beta)
    if kind is LossKind.AUC:
        return delta_auc(truth, candidate)
    return delta_hamming(truth, candidate)


def check_task_supports(loss: LossMetric, labels, task_name="task"):
    """Raise ``DegenerateTaskError`` if the labels cannot support ``loss``."""
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels > 0))
    n_neg = labels.shape[0] - n_pos
    kind = LossKind(loss.kind)
    if kind is LossKind.F1 and n_pos == 0:
        raise DegenerateTaskError(
            f"task {task_name!r} has no positive labels; the F1 loss is undefined", task_name)
    if kind is LossKind.AUC and (n_pos == 0 or n_neg == 0):
        raise DegenerateTaskError(
            f"task {task_name!r} has a single class; the AUC loss is undefined", task_name)
