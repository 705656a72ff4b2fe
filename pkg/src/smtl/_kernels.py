"""Compiled inner loops: loss-augmented inference and the coordinate-ascent sweep.

All functions work on contiguous float64 arrays and return per-sample
coefficient vectors ``coef`` such that the inference direction is
``X^T coef``. Falls back to plain Python when numba is unavailable.
"""

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

LOSS_F1 = 0
LOSS_AUC = 1
LOSS_HAMMING = 2

# relative window inside which grid maxima are re-scored exactly
TIE_WINDOW = 1e-9


@njit(cache=True, nogil=True)
def f1_coef(s, y, beta):
    n = s.shape[0]
    n_pos = 0
    for k in range(n):
        if y[k] > 0:
            n_pos += 1
    n_neg = n - n_pos
    pos = np.empty(n_pos, np.int64)
    neg = np.empty(n_neg, np.int64)
    ip = 0
    ineg = 0
    for k in range(n):
        if y[k] > 0:
            pos[ip] = k
            ip += 1
        else:
            neg[ineg] = k
            ineg += 1
    pos_order = pos[np.argsort(-s[pos], kind="mergesort")]
    neg_order = neg[np.argsort(-s[neg], kind="mergesort")]
    pos_pref = np.zeros(n_pos + 1)
    neg_pref = np.zeros(n_neg + 1)
    for a in range(n_pos):
        pos_pref[a + 1] = pos_pref[a] + s[pos_order[a]]
    for b in range(n_neg):
        neg_pref[b + 1] = neg_pref[b] + s[neg_order[b]]

    grid = np.empty((n_pos + 1, n_neg + 1))
    top = -np.inf
    for a in range(n_pos + 1):
        dropped = 2.0 * (pos_pref[n_pos] - pos_pref[a])
        for b in range(n_neg + 1):
            f = (1.0 + beta) * a / ((a + b) + beta * n_pos) if a > 0 else 0.0
            g = (1.0 - f) - dropped + 2.0 * neg_pref[b]
            grid[a, b] = g
            if g > top:
                top = g
    thresh = top - TIE_WINDOW * (1.0 + abs(top))

    best_val = -np.inf
    best_coef = np.zeros(n)
    best_delta = 1.0
    coef = np.zeros(n)
    for a in range(n_pos + 1):
        for b in range(n_neg + 1):
            if grid[a, b] < thresh:
                continue
            f = (1.0 + beta) * a / ((a + b) + beta * n_pos) if a > 0 else 0.0
            coef[:] = 0.0
            for k in range(a, n_pos):
                coef[pos_order[k]] = 2.0
            for k in range(b):
                coef[neg_order[k]] = -2.0
            dlt = 1.0 - f
            val = dlt - np.dot(coef, s)
            if val > best_val:
                best_val = val
                best_delta = dlt
                best_coef[:] = coef
    return best_delta, best_coef


@njit(cache=True, nogil=True)
def auc_coef(s, y):
    n = s.shape[0]
    n_pos = 0
    for k in range(n):
        if y[k] > 0:
            n_pos += 1
    n_neg = n - n_pos
    q_pos = np.empty(n_pos)
    neg_idx = np.empty(n_neg, np.int64)
    ip = 0
    ineg = 0
    for k in range(n):
        if y[k] > 0:
            q_pos[ip] = s[k] - 0.25
            ip += 1
        else:
            neg_idx[ineg] = k
            ineg += 1
    neg_sorted = neg_idx[np.argsort(s[neg_idx], kind="mergesort")]
    s_neg = s[neg_sorted]
    q_neg = s_neg + 0.25
    q_pos_sorted = np.sort(q_pos)
    n_pn = n_pos * n_neg
    counts = np.zeros(n, np.int64)
    swapped = 0
    for k in range(n):
        if y[k] > 0:
            # negatives ranked strictly above this positive
            cnt = n_neg - np.searchsorted(q_neg, s[k] - 0.25, side="right")
            counts[k] = cnt
            swapped += cnt
        else:
            # positives ranked strictly below this negative
            counts[k] = np.searchsorted(q_pos_sorted, s[k] + 0.25, side="left")
    # within rounding distance of the threshold the offset comparison may
    # disagree with the pair term's sign; the pair term decides
    for k in range(n):
        if y[k] < 0:
            continue
        w = 1e-9 * (1.0 + abs(s[k]))
        lo = np.searchsorted(s_neg, s[k] - 0.5 - w, side="left")
        hi = np.searchsorted(s_neg, s[k] - 0.5 + w, side="right")
        for t in range(lo, hi):
            j = neg_sorted[t]
            by_offset = (s[j] + 0.25) > (s[k] - 0.25)
            by_term = (1.0 - 2.0 * (s[k] - s[j])) / n_pn > 0.0
            if by_offset != by_term:
                step = 1 if by_term else -1
                counts[k] += step
                counts[j] += step
                swapped += step
    scale = 2.0 / n_pn
    coef = np.empty(n)
    for k in range(n):
        coef[k] = scale * counts[k] if y[k] > 0 else -scale * counts[k]
    return swapped / n_pn, coef


@njit(cache=True, nogil=True)
def hamming_coef(s, y):
    n = s.shape[0]
    coef = np.zeros(n)
    flips = 0
    for k in range(n):
        if y[k] * s[k] < 1.0:
            coef[k] = 2.0 * y[k]
            flips += 1
    return 2.0 * flips, coef


@njit(cache=True, nogil=True)
def infer_coef(loss_code, s, y, beta):
    if loss_code == LOSS_F1:
        return f1_coef(s, y, beta)
    if loss_code == LOSS_AUC:
        return auc_coef(s, y)
    return hamming_coef(s, y)


@njit(cache=True, nogil=True)
def coordinate_ascent(X, XT, y, b, c, loss_code, beta, tol, max_iter,
                      w0, v0, feasible, denom_floor):
    """Returns ``(w_hat, v, iterations, gap, gaps)``."""
    w = w0.copy()
    v = v0
    b_over_c = b / c
    gaps = np.empty(max_iter + 1)
    n_gaps = 0
    gap = np.inf
    it = 0
    done = False
    while it < max_iter:
        it += 1
        s = X @ w
        dlt, coef = infer_coef(loss_code, s, y, beta)
        direction = XT @ coef
        violation = (dlt - np.dot(coef, s)) - np.dot(w, b_over_c)
        ww = np.dot(w, w)
        if feasible:
            gap = ww + c * violation - v
            gaps[n_gaps] = gap
            n_gaps += 1
            if gap <= tol:
                it -= 1
                done = True
                break
        u = c * (direction + b_over_c) - w
        denom = np.dot(u, u)
        if not feasible:
            gamma = 1.0
        elif denom < denom_floor:
            done = True
            break
        else:
            gamma = (c * violation + ww - v) / denom
            gamma = min(max(gamma, 0.0), 1.0)
        w = w + gamma * u
        v = (1.0 - gamma) * v + gamma * c * dlt
        feasible = True
        if not np.isfinite(v):
            break
    if not done:
        s = X @ w
        dlt, coef = infer_coef(loss_code, s, y, beta)
        gap = np.dot(w, w) + c * ((dlt - np.dot(coef, s)) - np.dot(w, b_over_c)) - v
        gaps[n_gaps] = gap
        n_gaps += 1
    return w, v, it, gap, gaps[:n_gaps]
