"""Closed-form proximal maps ``argmin_S Omega(S) + mu/2 ||S - M||_F^2``.

Each operator takes the target matrix ``M`` and the penalty ``mu`` and
returns a new array; inputs are never modified.
"""

import numpy as np

from .errors import NumericalError, ValidationError
from .model import Regularizer


def _check(M, mu):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValidationError(f"prox target must be a matrix, got shape {M.shape}")
    if not (mu > 0 and np.isfinite(mu)):
        raise ValidationError(f"mu must be positive, got {mu!r}")
    if not np.all(np.isfinite(M)):
        raise NumericalError("prox target contains non-finite entries")
    return M


def shrink(x, threshold):
    """Elementwise soft threshold ``max(x - t, 0) + min(x + t, 0)``."""
    return np.maximum(x - threshold, 0.0) + np.minimum(x + threshold, 0.0)


def prox_l11(M, mu):
    """Entrywise shrinkage by ``1/mu``.

    >>> prox_l11([[2.0, -0.5], [0.0, 1.5]], 1.0)
    array([[1. , 0. ],
           [0. , 0.5]])
    """
    M = _check(M, mu)
    return shrink(M, 1.0 / mu)


def prox_l21(M, mu):
    """Row-wise group shrinkage: rows with norm at most ``1/mu`` vanish,
    the others are scaled by ``(||row|| - 1/mu) / ||row||``."""
    M = _check(M, mu)
    norms = np.linalg.norm(M, axis=1)
    t = 1.0 / mu
    scale = np.zeros_like(norms)
    keep = norms > t
    scale[keep] = (norms[keep] - t) / norms[keep]
    return M * scale[:, None]


def prox_trace(M, mu):
    """Singular value thresholding: ``U max(sigma - 1/mu, 0) V^T`` on the thin SVD."""
    M = _check(M, mu)
    try:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed in trace-norm prox: {exc}") from exc
    s = np.maximum(s - 1.0 / mu, 0.0)
    r = int(np.count_nonzero(s))
    if r == 0:
        return np.zeros_like(M)
    return (U[:, :r] * s[:r]) @ Vt[:r]


def norm_l11(W):
    return float(np.sum(np.abs(W)))


def norm_l21(W):
    return float(np.sum(np.linalg.norm(W, axis=1)))


def norm_trace(W):
    return float(np.sum(np.linalg.svd(np.asarray(W, dtype=float), compute_uv=False)))


_PROX = {Regularizer.L11: prox_l11, Regularizer.L21: prox_l21, Regularizer.TRACE: prox_trace}
_NORM = {Regularizer.L11: norm_l11, Regularizer.L21: norm_l21, Regularizer.TRACE: norm_trace}


def prox(regularizer, M, mu):
    return _PROX[Regularizer(regularizer)](M, mu)


def regularizer_value(regularizer, W):
    return _NORM[Regularizer(regularizer)](W)
