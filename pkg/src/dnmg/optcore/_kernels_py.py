"""Pure-NumPy simplex kernels; reference semantics for ``_kernels.pyx``.

Nonbasic state codes: 0 basic, 1 at lower bound, 2 at upper bound,
3 free (held at zero), 4 fixed.
"""

import numpy as np

BASIC, AT_LOWER, AT_UPPER, FREE, FIXED = 0, 1, 2, 3, 4


def select_entering(d, state, tol, bland):
    """Return ``(j, direction)`` of the entering column, or ``(-1, 0)``."""
    up = ((state == AT_LOWER) & (d < -tol)) | ((state == FREE) & (d < -tol))
    down = ((state == AT_UPPER) & (d > tol)) | ((state == FREE) & (d > tol))
    cand = up | down
    if not cand.any():
        return -1, 0
    if bland:
        j = int(np.flatnonzero(cand)[0])
    else:
        score = np.where(cand, np.abs(d), -1.0)
        j = int(np.argmax(score))
    return j, (1 if up[j] else -1)


def ratio_test(x_b, lb_b, ub_b, delta, basis, piv_tol, feas_tol):
    """Two-pass bounded ratio test.

    ``delta`` is the change of the basic variables per unit step. Returns
    ``(r, t)``; ``r == -1`` means no basic variable blocks the step. Among
    rows within the relaxed step the largest pivot wins, ties going to the
    lowest basic variable index.
    """
    dec = delta < -piv_tol
    inc = delta > piv_tol
    with np.errstate(divide="ignore", invalid="ignore"):
        relaxed = np.full(delta.shape, np.inf)
        relaxed[dec] = (x_b[dec] - lb_b[dec] + feas_tol) / -delta[dec]
        relaxed[inc] = (ub_b[inc] - x_b[inc] + feas_tol) / delta[inc]
    t_max = relaxed.min() if relaxed.size else np.inf
    if not np.isfinite(t_max):
        return -1, np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = np.full(delta.shape, np.inf)
        exact[dec] = (x_b[dec] - lb_b[dec]) / -delta[dec]
        exact[inc] = (ub_b[inc] - x_b[inc]) / delta[inc]
    ok = exact <= t_max
    mag = np.where(ok, np.abs(delta), -1.0)
    best = mag.max()
    ties = np.flatnonzero(mag == best)
    r = int(ties[np.argmin(basis[ties])])
    return r, max(float(exact[r]), 0.0)


def dual_ratio_test(d, alpha_r, state, increase, piv_tol, dual_tol):
    """Entering column for a dual simplex step on a leaving row.

    ``alpha_r`` is the pivot row over all columns; ``increase`` says the
    leaving basic variable must rise to its lower bound. Two-pass Harris
    selection on the reduced costs; returns -1 when no column qualifies.
    """
    s = 1.0 if increase else -1.0
    lo = (state == AT_LOWER) & (s * alpha_r < -piv_tol)
    hi = (state == AT_UPPER) & (s * alpha_r > piv_tol)
    fr = (state == FREE) & (np.abs(alpha_r) > piv_tol)
    cand = lo | hi | fr
    if not cand.any():
        return -1
    slack = np.where(lo, np.maximum(d, 0.0), np.where(hi, np.maximum(-d, 0.0), np.abs(d)))
    mag = np.abs(alpha_r)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_max = np.min(np.where(cand, (slack + dual_tol) / mag, np.inf))
        ok = cand & (slack / mag <= t_max)
    return int(np.argmax(np.where(ok, mag, -1.0)))
