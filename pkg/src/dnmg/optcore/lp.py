"""Bounded revised simplex with exact dual extraction.

The solver works on the dense equality form ``[A | I] (x, s) = b`` where the
logical column ``s_i`` of row ``i`` carries the row sense as bounds
(``<=``: ``s >= 0``, ``>=``: ``s <= 0``, ``==``: ``s == 0``). Phase one
starts from the logical basis and repairs infeasible rows with artificial
columns; phase two minimizes the true objective. Dual values are the
sensitivities ``d objective / d rhs``, so ``<=`` rows report non-positive
duals and ``>=`` rows non-negative duals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import kernels
from .model import Model, SolveResult


@dataclass(frozen=True)
class Tolerances:
    feasibility: float = 1e-9
    optimality: float = 1e-9
    pivot: float = 1e-9
    pivot_relative: float = 1e-7
    integrality: float = 1e-6
    duality: float = 1e-8
    phase_one: float = 1e-8


TOL = Tolerances()


@dataclass
class LPOptions:
    max_iter: int = 50_000
    refactor_every: int = 64
    stall_window: int = 60
    scale: bool = True
    tol: Tolerances = TOL


def _equilibrate(A, passes=6):
    """Geometric-mean row/column scaling rounded to powers of two."""
    m, n = A.shape
    r = np.ones(m)
    c = np.ones(n)
    if A.size == 0:
        return r, c
    absA = np.abs(A)
    nz = absA > 0
    with np.errstate(divide="ignore"):
        return _equilibrate_passes(absA, nz, r, c, passes)


def _equilibrate_passes(absA, nz, r, c, passes):
    for _ in range(passes):
        S = absA * r[:, None] * c[None, :]
        big = np.where(nz, S, 0.0).max(axis=1)
        small = np.where(nz, S, np.inf).min(axis=1)
        row_f = np.where(big > 0, 1.0 / np.sqrt(big * np.where(np.isfinite(small), small, big)), 1.0)
        r *= row_f
        S = absA * r[:, None] * c[None, :]
        big = np.where(nz, S, 0.0).max(axis=0)
        small = np.where(nz, S, np.inf).min(axis=0)
        col_f = np.where(big > 0, 1.0 / np.sqrt(big * np.where(np.isfinite(small), small, big)), 1.0)
        c *= col_f
    r = np.exp2(np.round(np.log2(r)))
    c = np.exp2(np.round(np.log2(c)))
    return r, c


class _Simplex:
    def __init__(self, A, b, lb, ub, opts: LPOptions):
        self.opts = opts
        m, n = A.shape
        self.m, self.n = m, n
        self.A = A
        self.b = b
        self.lb = lb
        self.ub = ub
        self.iterations = 0
        self.slack0 = None

    def _init_state(self, N):
        lb, ub = self.lb, self.ub
        state = np.empty(N, dtype=np.int8)
        x = np.zeros(N)
        fin_l = np.isfinite(lb)
        fin_u = np.isfinite(ub)
        fixed = fin_l & fin_u & (lb == ub)
        state[:] = kernels.FREE
        x[:] = 0.0
        sel = fin_u & ~fin_l
        state[sel] = kernels.AT_UPPER
        x[sel] = ub[sel]
        state[fin_l] = kernels.AT_LOWER
        x[fin_l] = lb[fin_l]
        state[fixed] = kernels.FIXED
        return state, x

    def _refactor(self):
        B = self.A[:, self.basis]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            self._repair(B)
        nonbasic = np.ones(self.A.shape[1], dtype=bool)
        nonbasic[self.basis] = False
        rhs = self.b - self.A[:, nonbasic] @ self.x[nonbasic]
        self.x[self.basis] = self.Binv @ rhs

    def _repair(self, B):
        """Swap dependent basic columns for row slacks until B is regular."""
        if self.slack0 is None:
            raise np.linalg.LinAlgError("singular basis")
        m = self.m
        _, R, piv = scipy.linalg.qr(B, pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > 1e-10 * max(diag[0], 1.0)))
        keep = np.sort(piv[:rank])
        drop = np.sort(piv[rank:])
        Q = scipy.linalg.qr(B[:, keep], mode="economic")[0] if rank else np.zeros((m, 0))
        used = set(self.basis[keep].tolist())
        for pos in drop:
            resid = 1.0 - np.sum(Q * Q, axis=1)
            for i in np.argsort(-resid):
                if self.slack0 + i not in used:
                    break
            col = self.slack0 + i
            old = self.basis[pos]
            lo, hi = self.lb[old], self.ub[old]
            if np.isfinite(lo) and (not np.isfinite(hi) or self.x[old] - lo <= hi - self.x[old]):
                self.x[old], self.state[old] = lo, kernels.AT_LOWER
            elif np.isfinite(hi):
                self.x[old], self.state[old] = hi, kernels.AT_UPPER
            else:
                self.state[old] = kernels.FREE
            if lo == hi:
                self.state[old] = kernels.FIXED
            self.basis[pos] = col
            self.state[col] = kernels.BASIC
            used.add(col)
            e = np.zeros(m)
            e[i] = 1.0
            v = e - Q @ (Q.T @ e)
            Q = np.column_stack([Q, v / np.linalg.norm(v)])
        self.Binv = np.linalg.inv(self.A[:, self.basis])

    def primal_feasible(self):
        xb = self.x[self.basis]
        return bool(np.all(xb >= self.lb[self.basis] - self.opts.tol.feasibility)
                    and np.all(xb <= self.ub[self.basis] + self.opts.tol.feasibility))

    def dual_feasible(self, cost, tol):
        y = cost[self.basis] @ self.Binv
        d = cost - y @ self.A
        st = self.state
        bad = (((st == kernels.AT_LOWER) | (st == kernels.FREE)) & (d < -tol)) | \
              (((st == kernels.AT_UPPER) | (st == kernels.FREE)) & (d > tol))
        return not bad.any()

    def dual_run(self, cost, max_iter):
        """Bounded dual simplex until the basis is primal feasible."""
        tol = self.opts.tol
        since_refactor = 0
        while True:
            if self.iterations >= max_iter:
                return "limit"
            bidx = self.basis
            xb = self.x[bidx]
            below = self.lb[bidx] - xb
            above = xb - self.ub[bidx]
            viol = np.maximum(below, above)
            r = int(np.argmax(viol))
            if viol[r] <= tol.feasibility:
                return "optimal"
            increase = below[r] > above[r]
            y = cost[bidx] @ self.Binv
            d = cost - y @ self.A
            d[bidx] = 0.0
            alpha_r = self.Binv[r] @ self.A
            alpha_r[bidx] = 0.0
            q = kernels.dual_ratio_test(d, alpha_r, self.state, increase, tol.pivot, tol.optimality)
            if q < 0:
                if since_refactor:
                    self._refactor()
                    since_refactor = 0
                    continue
                return "infeasible" if viol[r] > 1e-6 else "limit"
            alpha = self.Binv @ self.A[:, q]
            if abs(alpha[r]) < tol.pivot_relative * np.abs(alpha).max() and since_refactor:
                self._refactor()
                since_refactor = 0
                continue
            leave = bidx[r]
            target = self.lb[leave] if increase else self.ub[leave]
            step = (self.x[leave] - target) / alpha[r]
            self.x[bidx] -= step * alpha
            self.x[q] += step
            self.x[leave] = target
            if self.lb[leave] == self.ub[leave]:
                self.state[leave] = kernels.FIXED
            else:
                self.state[leave] = kernels.AT_LOWER if increase else kernels.AT_UPPER
            self.state[q] = kernels.BASIC
            self.basis[r] = q
            row = self.Binv[r] / alpha[r]
            self.Binv -= np.outer(alpha, row)
            self.Binv[r] = row
            since_refactor += 1
            self.iterations += 1
            if since_refactor >= self.opts.refactor_every:
                self._refactor()
                since_refactor = 0

    def run(self, cost, max_iter):
        """Primal simplex on the current basis; returns a status string."""
        tol = self.opts.tol
        bland = False
        best_obj = math.inf
        since_improve = 0
        since_refactor = 0
        while True:
            if self.iterations >= max_iter:
                return "limit"
            y = cost[self.basis] @ self.Binv
            d = cost - y @ self.A
            d[self.basis] = 0.0
            j, direction = kernels.select_entering(d, self.state, tol.optimality, bland)
            if j < 0:
                return "optimal"
            alpha = self.Binv @ self.A[:, j]
            delta = -direction * alpha
            bidx = self.basis
            r, t = kernels.ratio_test(
                self.x[bidx], self.lb[bidx], self.ub[bidx], delta, bidx,
                tol.pivot, tol.feasibility,
            )
            if r >= 0 and abs(alpha[r]) < tol.pivot_relative * np.abs(alpha).max() and since_refactor:
                # weak pivot from a drifted inverse: refresh and redo the step
                self._refactor()
                since_refactor = 0
                continue
            span = self.ub[j] - self.lb[j]
            if span < t:
                # bound flip of the entering column
                self.x[bidx] += span * delta
                if direction > 0:
                    self.x[j] = self.ub[j]
                    self.state[j] = kernels.AT_UPPER
                else:
                    self.x[j] = self.lb[j]
                    self.state[j] = kernels.AT_LOWER
            elif r < 0:
                return "unbounded"
            else:
                self.x[bidx] += t * delta
                self.x[j] += direction * t
                leave = bidx[r]
                if delta[r] < 0:
                    self.x[leave] = self.lb[leave]
                    self.state[leave] = kernels.AT_LOWER
                else:
                    self.x[leave] = self.ub[leave]
                    self.state[leave] = kernels.AT_UPPER
                if self.lb[leave] == self.ub[leave]:
                    self.state[leave] = kernels.FIXED
                self.state[j] = kernels.BASIC
                self.basis[r] = j
                piv = alpha[r]
                row = self.Binv[r] / piv
                self.Binv -= np.outer(alpha, row)
                self.Binv[r] = row
                since_refactor += 1
            self.iterations += 1
            if since_refactor >= self.opts.refactor_every:
                self._refactor()
                since_refactor = 0
            obj = float(cost @ self.x)
            if obj < best_obj - 1e-12 * (1.0 + abs(best_obj) if math.isfinite(best_obj) else 1.0):
                best_obj = obj
                since_improve = 0
            else:
                since_improve += 1
                if since_improve >= self.opts.stall_window:
                    bland = True


def solve_lp_arrays(A, b, senses, c, lb, ub, opts: LPOptions | None = None):
    """Solve ``min c.x`` over ``A x (sense) b, lb <= x <= ub`` in dense form.

    ``senses`` holds -1 for ``<=``, 0 for ``==`` and +1 for ``>=``. Returns
    ``(status, x, duals, reduced_costs, objective, iterations)``.
    """
    return solve_lp_warm(A, b, senses, c, lb, ub, None, opts)[:6]


def _fail(status, n, m, iters):
    return status, np.full(n, np.nan), np.zeros(m), np.zeros(n), math.nan, iters, None


def solve_lp_warm(A, b, senses, c, lb, ub, warm=None, opts: LPOptions | None = None):
    """As :func:`solve_lp_arrays`, optionally restarting from a basis.

    ``warm`` is the trailing element returned by an earlier call on the same
    matrix; a dual feasible start is repaired by dual simplex, anything else
    falls back to a cold start. Returns the six-tuple plus the final basis.
    """
    opts = opts or LPOptions()
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    if np.any(lb > ub):
        return _fail("infeasible", n, m, 0)

    if opts.scale and m and n:
        rs, cs = _equilibrate(A)
    else:
        rs, cs = np.ones(m), np.ones(n)
    prob = _Scaled(A * rs[:, None] * cs[None, :], b * rs, c * cs, lb / cs, ub / cs, senses, rs, cs)
    if warm is not None:
        out = _warm_solve(prob, lb, ub, warm, opts)
        if out is not None:
            return out
    return _cold_solve(prob, lb, ub, opts)


@dataclass
class _Scaled:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    senses: np.ndarray
    rs: np.ndarray
    cs: np.ndarray

    def slack_bounds(self):
        s = self.senses
        return (np.where(s < 0, 0.0, np.where(s > 0, -np.inf, 0.0)),
                np.where(s < 0, np.inf, np.where(s > 0, 0.0, 0.0)))


def _cold_solve(prob: _Scaled, lb, ub, opts):
    tol = opts.tol
    As, bs, lbs, ubs = prob.A, prob.b, prob.lb, prob.ub
    m, n = As.shape
    slack_lb, slack_ub = prob.slack_bounds()

    # nonbasic structural start
    probe = _Simplex(As, bs, lbs, ubs, opts)
    s_state, xs = probe._init_state(n)
    resid = bs - As @ xs
    clip = np.minimum(np.maximum(resid, slack_lb), slack_ub)
    need_art = np.abs(resid - clip) > 0.0
    art_rows = np.flatnonzero(need_art)
    k = art_rows.size
    art_sign = np.sign(resid[art_rows] - clip[art_rows])

    N = n + m + k
    Afull = np.zeros((m, N))
    Afull[:, :n] = As
    Afull[:, n:n + m] = np.eye(m)
    for t, i in enumerate(art_rows):
        Afull[i, n + m + t] = art_sign[t]
    full_lb = np.concatenate([lbs, slack_lb, np.zeros(k)])
    full_ub = np.concatenate([ubs, slack_ub, np.full(k, np.inf)])

    sx = _Simplex(Afull, bs, full_lb, full_ub, opts)
    sx.slack0 = n
    state, x = sx._init_state(N)
    x[:n] = xs
    state[:n] = s_state
    basis = np.arange(n, n + m)
    for t, i in enumerate(art_rows):
        slack = n + i
        x[slack] = clip[i]
        if slack_lb[i] == slack_ub[i]:
            state[slack] = kernels.FIXED
        elif clip[i] == slack_lb[i]:
            state[slack] = kernels.AT_LOWER
        else:
            state[slack] = kernels.AT_UPPER
        basis[i] = n + m + t
        x[n + m + t] = abs(resid[i] - clip[i])
    for i in np.flatnonzero(~need_art):
        x[n + i] = resid[i]
    state[basis] = kernels.BASIC
    sx.state, sx.x, sx.basis = state, x, basis
    diag = np.ones(m)
    for t, i in enumerate(art_rows):
        diag[i] = art_sign[t]
    sx.Binv = np.diag(1.0 / diag)

    if k:
        cost1 = np.zeros(N)
        cost1[n + m:] = 1.0
        status = sx.run(cost1, opts.max_iter)
        if status == "limit":
            return _fail("limit", n, m, sx.iterations)
        sx._refactor()
        infeas = float(x[n + m:].sum())
        scale_ref = 1.0 + float(np.abs(bs).max(initial=0.0))
        if infeas > tol.phase_one * scale_ref:
            return _fail("infeasible", n, m, sx.iterations)
        # retire artificials
        full_ub[n + m:] = 0.0
        for t in range(k):
            col = n + m + t
            if state[col] != kernels.BASIC:
                state[col] = kernels.FIXED
                x[col] = 0.0
    cost2 = np.zeros(N)
    cost2[:n] = prob.c
    status = sx.run(cost2, opts.max_iter)
    if status != "optimal":
        return _fail(status, n, m, sx.iterations)
    return _extract(sx, prob, cost2, lb, ub)


def _extract(sx, prob: _Scaled, cost, lb, ub):
    m, n = prob.A.shape
    sx._refactor()
    state, x = sx.state, sx.x
    y_s = cost[sx.basis] @ sx.Binv
    d_s = cost[:n] - y_s @ prob.A
    d_s[state[:n] == kernels.BASIC] = 0.0
    d_s[state[:n] == kernels.FREE] = 0.0
    at_lo = state[:n] == kernels.AT_LOWER
    at_hi = state[:n] == kernels.AT_UPPER
    # round-off of the wrong sign would pair with an infinite bound
    d_s[at_lo & ~np.isfinite(prob.ub) & (d_s < 0)] = 0.0
    d_s[at_hi & ~np.isfinite(prob.lb) & (d_s > 0)] = 0.0
    x_out = x[:n] * prob.cs
    # snap to bounds hit by nonbasic columns
    fixed = state[:n] == kernels.FIXED
    x_out[at_lo] = lb[at_lo]
    x_out[at_hi] = ub[at_hi]
    x_out[fixed] = lb[fixed]
    duals = y_s * prob.rs
    red = d_s / prob.cs
    obj = float((prob.c / prob.cs) @ x_out)
    basis_out = (sx.basis.copy(), state[:n + m].copy())
    for pos in np.flatnonzero(sx.basis >= n + m):
        # a degenerate artificial is +-e_i; the row's own slack replaces it
        row = int(np.flatnonzero(sx.A[:, sx.basis[pos]])[0])
        basis_out[0][pos] = n + row
        basis_out[1][n + row] = kernels.BASIC
    return "optimal", x_out, duals, red, obj, sx.iterations, basis_out


def _warm_solve(prob: _Scaled, lb, ub, warm, opts):
    """Dual simplex from a stored basis; ``None`` asks for a cold start."""
    tol = opts.tol
    As, bs = prob.A, prob.b
    m, n = As.shape
    basis, state0 = warm
    if basis.shape != (m,) or state0.shape != (n + m,):
        return None
    slack_lb, slack_ub = prob.slack_bounds()
    full_lb = np.concatenate([prob.lb, slack_lb])
    full_ub = np.concatenate([prob.ub, slack_ub])
    Afull = np.hstack([As, np.eye(m)])
    sx = _Simplex(Afull, bs, full_lb, full_ub, opts)
    sx.slack0 = n
    state = state0.copy()
    x = np.zeros(n + m)
    fin_l, fin_u = np.isfinite(full_lb), np.isfinite(full_ub)
    nb = state != kernels.BASIC
    want_hi = nb & (state == kernels.AT_UPPER)
    # re-seat nonbasic columns on their current bounds
    state[nb & fin_l] = kernels.AT_LOWER
    state[want_hi & fin_u] = kernels.AT_UPPER
    state[nb & ~fin_l & fin_u] = kernels.AT_UPPER
    state[nb & ~fin_l & ~fin_u] = kernels.FREE
    state[nb & fin_l & fin_u & (full_lb == full_ub)] = kernels.FIXED
    x[state == kernels.AT_LOWER] = full_lb[state == kernels.AT_LOWER]
    x[state == kernels.FIXED] = full_lb[state == kernels.FIXED]
    x[state == kernels.AT_UPPER] = full_ub[state == kernels.AT_UPPER]
    sx.state, sx.x, sx.basis = state, x, basis.copy()
    try:
        sx.Binv = np.linalg.inv(Afull[:, sx.basis])
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sx.Binv)):
        return None
    nonbasic = state != kernels.BASIC
    sx.x[sx.basis] = sx.Binv @ (bs - Afull[:, nonbasic] @ x[nonbasic])
    cost = np.concatenate([prob.c, np.zeros(m)])
    if not sx.primal_feasible():
        if not sx.dual_feasible(cost, 1e3 * tol.optimality):
            return None
        status = sx.dual_run(cost, min(opts.max_iter, 50 * (m + 10)))
        if status == "infeasible":
            return _fail("infeasible", n, m, sx.iterations)
        if status != "optimal":
            return None
    status = sx.run(cost, opts.max_iter)
    if status != "optimal":
        return None if status == "limit" else _fail(status, n, m, sx.iterations)
    return _extract(sx, prob, cost, lb, ub)


def solve_lp(model: Model, opts: LPOptions | None = None, lb=None, ub=None, warm=None) -> SolveResult:
    """Solve the continuous relaxation of ``model``.

    ``lb``/``ub`` optionally override the model's variable bounds (used by
    branch-and-bound without copying the model). ``warm`` is a dict of final
    bases keyed by matrix shape, read as a start and updated after the solve.
    """
    A, b, senses, c, mlb, mub = model.arrays()
    if lb is not None:
        mlb = np.asarray(lb, dtype=float)
    if ub is not None:
        mub = np.asarray(ub, dtype=float)
    start = warm.get(A.shape) if warm is not None else None
    status, x, duals, red, obj, iters, basis = solve_lp_warm(A, b, senses, c, mlb, mub, start, opts)
    if warm is not None and basis is not None:
        warm[A.shape] = basis
    if status == "optimal":
        obj += model.obj_const
    return SolveResult(
        status=status, x=x, duals=duals, reduced_costs=red, objective=obj,
        iterations=iters, row_tags=tuple(r.tag for r in model.rows),
        var_names=tuple(model.var_names),
    )


def dual_objective(model: Model, res: SolveResult) -> float:
    """Lagrangian dual bound ``b.y + sum of reduced-cost bound terms``."""
    A, b, senses, c, lb, ub = model.arrays()
    d = res.reduced_costs
    val = float(b @ res.duals) + model.obj_const
    pos = d > 0
    neg = d < 0
    val += float(np.sum(d[pos] * lb[pos])) + float(np.sum(d[neg] * ub[neg]))
    return val
