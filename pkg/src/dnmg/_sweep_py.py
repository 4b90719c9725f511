"""Radial sweep kernels on flat arrays; reference semantics for ``_sweep.pyx``.

Edges are listed parent-before-child. ``kind`` codes: 0 line, 1 closed
switch, 2 wye transformer with the parent on its primary side, 3 wye
transformer with the parent on its secondary side, 4/5 the same for delta
transformers. ``emask`` flags the phases an edge carries.
"""

import math

import numpy as np

LINE, SWITCH, WYE_FWD, WYE_REV, DELTA_FWD, DELTA_REV = range(6)

_S3 = math.sqrt(3.0)
# [p_ij; q_ij] = DELTA_T @ [p_ji; q_ji] for pairs (a,c), (b,a), (c,b)
DELTA_T = np.zeros((6, 6))
for _phi, _psi in ((0, 2), (1, 0), (2, 1)):
    DELTA_T[_phi, _phi] += -0.5
    DELTA_T[_phi, _psi] += -0.5
    DELTA_T[_phi, 3 + _psi] += 0.5 / _S3
    DELTA_T[_phi, 3 + _phi] += -0.5 / _S3
    DELTA_T[3 + _phi, _phi] += 0.5 / _S3
    DELTA_T[3 + _phi, _psi] += -0.5 / _S3
    DELTA_T[3 + _phi, 3 + _psi] += -0.5
    DELTA_T[3 + _phi, 3 + _phi] += -0.5
DELTA_T_INV = np.linalg.inv(DELTA_T)
# primary-side squared-voltage pair sums: 3 (w_phi + w_psi) = 2 n^2 w_t,phi
DELTA_W = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [1.0, 0.0, 1.0]])
DELTA_W_INV = np.linalg.inv(DELTA_W)


def linear_sweep(par, chi, kind, emask, MP, MQ, tap, Pl, Ql, root, w0):
    """One backward/forward pass of the linear branch-flow equations.

    ``Pl``/``Ql`` are net demands (load minus injection) per bus-phase.
    Returns ``(W, FP, FQ, DP, DQ)`` where ``FP/FQ`` are the parent-side
    outflows of each edge and ``DP/DQ`` the aggregated demand per bus.
    """
    n = Pl.shape[0]
    E = par.shape[0]
    DP = Pl.copy()
    DQ = Ql.copy()
    FP = np.zeros((E, 3))
    FQ = np.zeros((E, 3))
    for e in range(E - 1, -1, -1):
        c, p, k, m = chi[e], par[e], kind[e], emask[e]
        if k == DELTA_FWD:
            out = DELTA_T @ np.concatenate([-DP[c], -DQ[c]])
        elif k == DELTA_REV:
            out = DELTA_T_INV @ np.concatenate([-DP[c], -DQ[c]])
        else:
            out = np.concatenate([DP[c] * m, DQ[c] * m])
        FP[e] = out[:3]
        FQ[e] = out[3:]
        DP[p] += FP[e]
        DQ[p] += FQ[e]
    W = np.zeros((n, 3))
    W[root] = w0
    for e in range(E):
        c, p, k, m = chi[e], par[e], kind[e], emask[e]
        if k == LINE:
            W[c] = (W[p] - MP[e] @ FP[e] - MQ[e] @ FQ[e]) * m
        elif k == SWITCH:
            W[c] = W[p] * m
        elif k == WYE_FWD:
            W[c] = W[p] / tap[e] ** 2 * m
        elif k == WYE_REV:
            W[c] = W[p] * tap[e] ** 2 * m
        elif k == DELTA_FWD:
            W[c] = 3.0 * (DELTA_W @ W[p]) / (2.0 * tap[e] ** 2)
        else:
            W[c] = (2.0 * tap[e] ** 2 / 3.0) * (DELTA_W_INV @ W[p])
    return W, FP, FQ, DP, DQ


def ac_sweep(par, chi, kind, emask, Z, tap, S, Y, bmask, root, v_root, tol, max_iter):
    """Backward/forward sweep for constant-power demands ``S``.

    Returns ``(V, J, iterations, converged)`` where ``J`` holds the
    child-side branch currents.
    """
    n = S.shape[0]
    E = par.shape[0]
    V = np.zeros((n, 3), dtype=complex)
    J = np.zeros((E, 3), dtype=complex)
    V[root] = v_root * bmask[root]
    for e in range(E):
        V[chi[e]] = _forward(V[par[e]], kind[e], emask[e], Z[e], tap[e], J[e])
    active = bmask.astype(bool)
    for it in range(1, max_iter + 1):
        I = np.zeros((n, 3), dtype=complex)
        ok = active & (np.abs(V) > 0)
        I[ok] = np.conj(S[ok] / V[ok]) + Y[ok] * V[ok]
        Jd = I
        for e in range(E - 1, -1, -1):
            c, p, k = chi[e], par[e], kind[e]
            J[e] = Jd[c] * emask[e]
            if k == WYE_FWD:
                Jd[p] += J[e] / tap[e]
            elif k == WYE_REV:
                Jd[p] += J[e] * tap[e]
            else:
                Jd[p] += J[e]
        V_old = V.copy()
        for e in range(E):
            V[chi[e]] = _forward(V[par[e]], kind[e], emask[e], Z[e], tap[e], J[e])
        if np.max(np.abs(V - V_old), initial=0.0) < tol:
            return V, J, it, True
    return V, J, max_iter, False


def _forward(vp, k, m, Z, n, j):
    if k == LINE:
        return (vp - Z @ j) * m
    if k == SWITCH:
        return vp * m
    if k == WYE_FWD:
        return vp / n * m
    if k == WYE_REV:
        return vp * n * m
    raise ValueError("delta transformers are not supported by the AC sweep")
