# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled radial sweep kernels. Semantics mirror ``_sweep_py``."""

import numpy as np
cimport numpy as cnp

from dnmg._sweep_py import DELTA_T, DELTA_T_INV, DELTA_W, DELTA_W_INV

cnp.import_array()

DEF LINE = 0
DEF SWITCH = 1
DEF WYE_FWD = 2
DEF WYE_REV = 3
DEF DELTA_FWD = 4
DEF DELTA_REV = 5


def linear_sweep(const long[:] par, const long[:] chi, const signed char[:] kind,
                 const double[:, :] emask, const double[:, :, :] MP, const double[:, :, :] MQ,
                 const double[:] tap, const double[:, :] Pl, const double[:, :] Ql,
                 long root, w0):
    cdef Py_ssize_t n = Pl.shape[0], E = par.shape[0], e, a, b, c, p
    cdef double[:, :] T = DELTA_T
    cdef double[:, :] Ti = DELTA_T_INV
    cdef double[:, :] DW = DELTA_W
    cdef double[:, :] DWi = DELTA_W_INV
    cdef double[:, :] DT
    cdef double n2, acc
    cdef double[6] vin
    DP_a = np.array(Pl, dtype=np.float64)
    DQ_a = np.array(Ql, dtype=np.float64)
    FP_a = np.zeros((E, 3))
    FQ_a = np.zeros((E, 3))
    W_a = np.zeros((n, 3))
    cdef double[:, :] DP = DP_a
    cdef double[:, :] DQ = DQ_a
    cdef double[:, :] FP = FP_a
    cdef double[:, :] FQ = FQ_a
    cdef double[:, :] W = W_a
    for e in range(E - 1, -1, -1):
        c = chi[e]
        p = par[e]
        if kind[e] == DELTA_FWD or kind[e] == DELTA_REV:
            DT = T if kind[e] == DELTA_FWD else Ti
            for a in range(3):
                vin[a] = -DP[c, a]
                vin[3 + a] = -DQ[c, a]
            for a in range(3):
                acc = 0.0
                for b in range(6):
                    acc += DT[a, b] * vin[b]
                FP[e, a] = acc
                acc = 0.0
                for b in range(6):
                    acc += DT[3 + a, b] * vin[b]
                FQ[e, a] = acc
        else:
            for a in range(3):
                FP[e, a] = DP[c, a] * emask[e, a]
                FQ[e, a] = DQ[c, a] * emask[e, a]
        for a in range(3):
            DP[p, a] += FP[e, a]
            DQ[p, a] += FQ[e, a]
    W_a[root] = w0
    for e in range(E):
        c = chi[e]
        p = par[e]
        n2 = tap[e] * tap[e]
        for a in range(3):
            if kind[e] == LINE:
                acc = W[p, a]
                for b in range(3):
                    acc -= MP[e, a, b] * FP[e, b] + MQ[e, a, b] * FQ[e, b]
                W[c, a] = acc * emask[e, a]
            elif kind[e] == SWITCH:
                W[c, a] = W[p, a] * emask[e, a]
            elif kind[e] == WYE_FWD:
                W[c, a] = W[p, a] / n2 * emask[e, a]
            elif kind[e] == WYE_REV:
                W[c, a] = W[p, a] * n2 * emask[e, a]
            elif kind[e] == DELTA_FWD:
                acc = 0.0
                for b in range(3):
                    acc += DW[a, b] * W[p, b]
                W[c, a] = 3.0 * acc / (2.0 * n2)
            else:
                acc = 0.0
                for b in range(3):
                    acc += DWi[a, b] * W[p, b]
                W[c, a] = (2.0 * n2 / 3.0) * acc
    return W_a, FP_a, FQ_a, DP_a, DQ_a


cdef inline void _forward(double complex[:, :] V, Py_ssize_t c, Py_ssize_t p, signed char k,
                          const double[:, :] emask, const double complex[:, :, :] Z,
                          double n, double complex[:, :] J, Py_ssize_t e):
    cdef Py_ssize_t a, b
    cdef double complex acc
    for a in range(3):
        if k == LINE:
            acc = V[p, a]
            for b in range(3):
                acc = acc - Z[e, a, b] * J[e, b]
            V[c, a] = acc * emask[e, a]
        elif k == SWITCH:
            V[c, a] = V[p, a] * emask[e, a]
        elif k == WYE_FWD:
            V[c, a] = V[p, a] / n * emask[e, a]
        else:
            V[c, a] = V[p, a] * n * emask[e, a]


def ac_sweep(const long[:] par, const long[:] chi, const signed char[:] kind,
             const double[:, :] emask, const double complex[:, :, :] Z, const double[:] tap,
             const double complex[:, :] S, const double complex[:, :] Y, const double[:, :] bmask,
             long root, v_root, double tol, int max_iter):
    cdef Py_ssize_t n = S.shape[0], E = par.shape[0], e, a, i, c, p
    cdef int it
    cdef double diff, d
    cdef double complex v
    for e in range(E):
        if kind[e] == DELTA_FWD or kind[e] == DELTA_REV:
            raise ValueError("delta transformers are not supported by the AC sweep")
    V_a = np.zeros((n, 3), dtype=np.complex128)
    J_a = np.zeros((E, 3), dtype=np.complex128)
    Jd_a = np.zeros((n, 3), dtype=np.complex128)
    Vo_a = np.zeros((n, 3), dtype=np.complex128)
    cdef double complex[:, :] V = V_a
    cdef double complex[:, :] J = J_a
    cdef double complex[:, :] Jd = Jd_a
    cdef double complex[:, :] Vo = Vo_a
    V_a[root] = np.asarray(v_root) * np.asarray(bmask[root])
    for e in range(E):
        _forward(V, chi[e], par[e], kind[e], emask, Z, tap[e], J, e)
    for it in range(1, max_iter + 1):
        for i in range(n):
            for a in range(3):
                v = V[i, a]
                if bmask[i, a] != 0.0 and (v.real != 0.0 or v.imag != 0.0):
                    Jd[i, a] = (S[i, a] / v).conjugate() + Y[i, a] * v
                else:
                    Jd[i, a] = 0.0
        for e in range(E - 1, -1, -1):
            c = chi[e]
            p = par[e]
            for a in range(3):
                J[e, a] = Jd[c, a] * emask[e, a]
                if kind[e] == WYE_FWD:
                    Jd[p, a] = Jd[p, a] + J[e, a] / tap[e]
                elif kind[e] == WYE_REV:
                    Jd[p, a] = Jd[p, a] + J[e, a] * tap[e]
                else:
                    Jd[p, a] = Jd[p, a] + J[e, a]
        Vo[:, :] = V
        for e in range(E):
            _forward(V, chi[e], par[e], kind[e], emask, Z, tap[e], J, e)
        diff = 0.0
        for i in range(n):
            for a in range(3):
                d = abs(V[i, a] - Vo[i, a])
                if d > diff:
                    diff = d
        if diff < tol:
            return V_a, J_a, it, True
    return V_a, J_a, max_iter, False
