"""Pluggable LP backends sharing the :class:`SolveResult` contract."""

from __future__ import annotations

import math

import numpy as np

from .lp import LPOptions, solve_lp
from .model import Model, SolveResult


def _highs(model: Model, opts: LPOptions | None = None) -> SolveResult:
    from scipy.optimize import linprog

    A, b, senses, c, lb, ub = model.arrays()
    le = senses < 0
    ge = senses > 0
    eq = senses == 0
    A_ub = np.vstack([A[le], -A[ge]])
    b_ub = np.concatenate([b[le], -b[ge]])
    res = linprog(c, A_ub=A_ub if A_ub.size else None, b_ub=b_ub if A_ub.size else None,
                  A_eq=A[eq] if eq.any() else None, b_eq=b[eq] if eq.any() else None,
                  bounds=list(zip(np.where(np.isfinite(lb), lb, None), np.where(np.isfinite(ub), ub, None))),
                  method="highs")
    tags = tuple(r.tag for r in model.rows)
    names = tuple(model.var_names)
    m, n = A.shape
    if res.status != 0:
        status = {2: "infeasible", 3: "unbounded"}.get(res.status, "limit")
        return SolveResult(status, np.full(n, np.nan), np.zeros(m), np.zeros(n), math.nan,
                           row_tags=tags, var_names=names)
    duals = np.zeros(m)
    nle = int(le.sum())
    duals[le] = res.ineqlin.marginals[:nle]
    duals[ge] = -res.ineqlin.marginals[nle:]
    if eq.any():
        duals[eq] = res.eqlin.marginals
    red = res.lower.marginals + res.upper.marginals
    return SolveResult("optimal", res.x, duals, red, float(res.fun) + model.obj_const,
                       iterations=int(res.nit), row_tags=tags, var_names=names)


BACKENDS = {"internal": solve_lp, "highs": _highs}


def get_backend(name: str = "internal"):
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown LP backend {name!r}; choose from {sorted(BACKENDS)}") from None
