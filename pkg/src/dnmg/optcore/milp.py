"""Deterministic best-first branch-and-bound over LP relaxations."""

from __future__ import annotations

import heapq
import math

import numpy as np

from .lp import TOL, LPOptions, solve_lp_warm
from .model import Model, SolveResult


def _branch_var(x, integer_idx, tol):
    frac = x[integer_idx] - np.floor(x[integer_idx])
    dist = np.minimum(frac, 1.0 - frac)
    dist[dist <= tol] = -1.0
    if dist.size == 0 or dist.max() < 0:
        return -1
    # argmax returns the lowest index among ties
    return int(integer_idx[int(np.argmax(dist))])


def solve_milp(model: Model, gap_tol: float = 1e-6, node_limit: int = 20_000,
               opts: LPOptions | None = None) -> SolveResult:
    """Minimize ``model`` with integrality enforced on flagged variables.

    Nodes are explored best-bound first (ties by creation order); branching
    picks the most fractional integer variable, ties by lowest index. Child
    relaxations restart from the parent's optimal basis.
    """
    opts = opts or LPOptions()
    tol = opts.tol.integrality
    A, b, senses, c, lb0, ub0 = model.arrays()
    integer_idx = np.flatnonzero(np.array(model.integer, dtype=bool))
    lb0 = lb0.copy()
    ub0 = ub0.copy()
    lb0[integer_idx] = np.ceil(lb0[integer_idx] - tol)
    ub0[integer_idx] = np.floor(ub0[integer_idx] + tol)
    tags = tuple(r.tag for r in model.rows)
    names = tuple(model.var_names)
    m, n = A.shape

    def empty(status, nodes, iters, bound=math.nan):
        return SolveResult(status, np.full(n, np.nan), np.zeros(m), np.zeros(n), math.nan,
                           iterations=iters, nodes=nodes, bound=bound, row_tags=tags, var_names=names)

    best = None  # (obj, x, duals, red)
    total_iter = 0
    nodes = 0
    counter = 0
    heap: list = []

    def evaluate(lb, ub, warm=None):
        nonlocal total_iter
        st, x, y, d, obj, it, basis = solve_lp_warm(A, b, senses, c, lb, ub, warm, opts)
        total_iter += it
        return st, x, y, d, obj, basis

    st, x, y, d, obj, basis = evaluate(lb0, ub0)
    nodes += 1
    if st == "unbounded":
        return empty("unbounded", nodes, total_iter)
    if st != "optimal":
        return empty("infeasible" if st == "infeasible" else "limit", nodes, total_iter)
    heapq.heappush(heap, (obj, counter, lb0, ub0, x, y, d, basis))

    while heap:
        node_obj, _, lb, ub, x, y, d, basis = heapq.heappop(heap)
        if best is not None and node_obj >= best[0] - gap_tol:
            continue
        j = _branch_var(x, integer_idx, tol)
        if j < 0:
            best = (node_obj, x, y, d)
            continue
        if nodes >= node_limit:
            heapq.heappush(heap, (node_obj, counter, lb, ub, x, y, d, basis))
            break
        for child_lb, child_ub in (
            (lb, np.where(np.arange(n) == j, math.floor(x[j]), ub)),
            (np.where(np.arange(n) == j, math.ceil(x[j]), lb), ub),
        ):
            st, cx, cy, cd, cobj, cbasis = evaluate(child_lb, child_ub, basis)
            nodes += 1
            if st != "optimal":
                continue
            if best is not None and cobj >= best[0] - gap_tol:
                continue
            counter += 1
            heapq.heappush(heap, (cobj, counter, child_lb, child_ub, cx, cy, cd, cbasis))

    open_bound = min((h[0] for h in heap), default=math.inf)
    if best is None:
        if heap:
            return empty("limit", nodes, total_iter, bound=open_bound + model.obj_const)
        return empty("infeasible", nodes, total_iter)
    obj, x, y, d = best
    x = x.copy()
    x[integer_idx] = np.round(x[integer_idx])
    bound = min(open_bound, obj)
    status = "optimal" if obj - bound <= gap_tol or not heap else "limit"
    return SolveResult(
        status=status, x=x, duals=y, reduced_costs=d,
        objective=float(c @ x) + model.obj_const, iterations=total_iter, nodes=nodes,
        bound=bound + model.obj_const, row_tags=tags, var_names=names,
    )


__all__ = ["solve_milp", "TOL"]
