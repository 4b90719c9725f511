# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled simplex kernels. Semantics mirror ``_kernels_py``."""

from libc.math cimport INFINITY, fabs

import numpy as np
cimport numpy as cnp

cnp.import_array()


def select_entering(const double[:] d, const signed char[:] state, double tol, bint bland):
    cdef Py_ssize_t j, n = d.shape[0], best_j = -1
    cdef int best_dir = 0, direction
    cdef double best = -1.0, dj
    cdef signed char s
    for j in range(n):
        s = state[j]
        dj = d[j]
        direction = 0
        if (s == 1 or s == 3) and dj < -tol:
            direction = 1
        elif (s == 2 or s == 3) and dj > tol:
            direction = -1
        if direction == 0:
            continue
        if bland:
            return j, direction
        if fabs(dj) > best:
            best = fabs(dj)
            best_j = j
            best_dir = direction
    return best_j, best_dir


def ratio_test(const double[:] x_b, const double[:] lb_b, const double[:] ub_b,
               const double[:] delta, const long[:] basis, double piv_tol, double feas_tol):
    cdef Py_ssize_t i, m = delta.shape[0], r = -1
    cdef double t_max = INFINITY, t, di, mag, best = -1.0, t_r = 0.0
    for i in range(m):
        di = delta[i]
        if di < -piv_tol:
            t = (x_b[i] - lb_b[i] + feas_tol) / -di
        elif di > piv_tol:
            t = (ub_b[i] - x_b[i] + feas_tol) / di
        else:
            continue
        if t < t_max:
            t_max = t
    if t_max == INFINITY:
        return -1, INFINITY
    for i in range(m):
        di = delta[i]
        if di < -piv_tol:
            t = (x_b[i] - lb_b[i]) / -di
        elif di > piv_tol:
            t = (ub_b[i] - x_b[i]) / di
        else:
            continue
        if t > t_max:
            continue
        mag = fabs(di)
        if mag > best or (mag == best and basis[i] < basis[r]):
            best = mag
            r = i
            t_r = t
    return r, (t_r if t_r > 0.0 else 0.0)


def dual_ratio_test(const double[:] d, const double[:] alpha_r, const signed char[:] state,
                    bint increase, double piv_tol, double dual_tol):
    cdef Py_ssize_t j, n = d.shape[0], q = -1
    cdef double s = 1.0 if increase else -1.0
    cdef double t_max = INFINITY, a, sl, mag, best = -1.0
    cdef signed char st
    cdef cnp.ndarray[cnp.float64_t, ndim=1] slack = np.full(n, -1.0)
    for j in range(n):
        st = state[j]
        a = alpha_r[j]
        if st == 1 and s * a < -piv_tol:
            sl = d[j] if d[j] > 0.0 else 0.0
        elif st == 2 and s * a > piv_tol:
            sl = -d[j] if d[j] < 0.0 else 0.0
        elif st == 3 and fabs(a) > piv_tol:
            sl = fabs(d[j])
        else:
            continue
        slack[j] = sl
        if (sl + dual_tol) / fabs(a) < t_max:
            t_max = (sl + dual_tol) / fabs(a)
    for j in range(n):
        if slack[j] < 0.0:
            continue
        mag = fabs(alpha_r[j])
        if slack[j] / mag <= t_max and mag > best:
            best = mag
            q = j
    return q
