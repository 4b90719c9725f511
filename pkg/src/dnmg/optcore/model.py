"""Solver-neutral linear model representation.

A :class:`Model` holds variables with bounds and integrality flags, sparse
linear rows with a sense and right-hand side, and a linear objective that
is always minimized. Every row carries a unique tag so that dual values can
be traced back to the constraint family that produced them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LE, EQ, GE = "<=", "==", ">="
_SENSES = (LE, EQ, GE)


class ModelError(ValueError):
    """Raised when a model is assembled inconsistently."""


@dataclass
class Row:
    coeffs: dict[int, float]
    sense: str
    rhs: float
    tag: str


@dataclass
class Model:
    name: str = "model"
    var_names: list[str] = field(default_factory=list)
    lb: list[float] = field(default_factory=list)
    ub: list[float] = field(default_factory=list)
    integer: list[bool] = field(default_factory=list)
    obj: dict[int, float] = field(default_factory=dict)
    obj_const: float = 0.0
    rows: list[Row] = field(default_factory=list)

    def __post_init__(self):
        self._var_index: dict[str, int] = {n: i for i, n in enumerate(self.var_names)}
        self._row_index: dict[str, int] = {r.tag: i for i, r in enumerate(self.rows)}

    # -- construction -------------------------------------------------------
    @property
    def num_vars(self) -> int:
        return len(self.var_names)

    @property
    def num_rows(self) -> int:
        return len(self.rows)

    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf,
                integer: bool = False, obj: float = 0.0) -> int:
        if name in self._var_index:
            raise ModelError(f"duplicate variable name {name!r}")
        if lb > ub:
            raise ModelError(f"variable {name!r}: lower bound {lb} exceeds upper bound {ub}")
        idx = len(self.var_names)
        self.var_names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.integer.append(bool(integer))
        self._var_index[name] = idx
        if obj:
            self.obj[idx] = float(obj)
        return idx

    def add_binary(self, name: str, obj: float = 0.0) -> int:
        return self.add_var(name, 0.0, 1.0, integer=True, obj=obj)

    def var(self, name: str) -> int:
        return self._var_index[name]

    def has_var(self, name: str) -> bool:
        return name in self._var_index

    def add_obj(self, var: int, coef: float) -> None:
        self.obj[var] = self.obj.get(var, 0.0) + float(coef)

    def add_row(self, coeffs, sense: str, rhs: float, tag: str) -> int:
        if sense not in _SENSES:
            raise ModelError(f"unknown sense {sense!r}")
        if tag in self._row_index:
            raise ModelError(f"duplicate row tag {tag!r}")
        merged: dict[int, float] = {}
        items = coeffs.items() if isinstance(coeffs, dict) else coeffs
        for j, a in items:
            if not 0 <= j < self.num_vars:
                raise ModelError(f"row {tag!r} references unknown variable {j}")
            merged[j] = merged.get(j, 0.0) + float(a)
        merged = {j: a for j, a in merged.items() if a != 0.0}
        self._row_index[tag] = len(self.rows)
        self.rows.append(Row(merged, sense, float(rhs), tag))
        return len(self.rows) - 1

    def row(self, tag: str) -> int:
        return self._row_index[tag]

    def set_bounds(self, var: int, lb: float | None = None, ub: float | None = None) -> None:
        if lb is not None:
            self.lb[var] = float(lb)
        if ub is not None:
            self.ub[var] = float(ub)
        if self.lb[var] > self.ub[var]:
            raise ModelError(f"variable {self.var_names[var]!r}: inconsistent bounds")

    def copy(self) -> "Model":
        return Model(
            name=self.name,
            var_names=list(self.var_names),
            lb=list(self.lb),
            ub=list(self.ub),
            integer=list(self.integer),
            obj=dict(self.obj),
            obj_const=self.obj_const,
            rows=[Row(dict(r.coeffs), r.sense, r.rhs, r.tag) for r in self.rows],
        )

    # -- views --------------------------------------------------------------
    def arrays(self):
        """Dense ``(A, b, senses, c, lb, ub)`` view of the model."""
        m, n = self.num_rows, self.num_vars
        A = np.zeros((m, n))
        b = np.empty(m)
        senses = np.empty(m, dtype=np.int8)
        code = {LE: -1, EQ: 0, GE: 1}
        for i, r in enumerate(self.rows):
            for j, a in r.coeffs.items():
                A[i, j] = a
            b[i] = r.rhs
            senses[i] = code[r.sense]
        c = np.zeros(n)
        for j, a in self.obj.items():
            c[j] = a
        return A, b, senses, c, np.array(self.lb, dtype=float), np.array(self.ub, dtype=float)

    def objective_value(self, x) -> float:
        return self.obj_const + sum(a * x[j] for j, a in self.obj.items())

    def max_violation(self, x) -> float:
        """Largest bound or row violation of ``x`` (absolute)."""
        x = np.asarray(x, dtype=float)
        viol = 0.0
        lb = np.array(self.lb)
        ub = np.array(self.ub)
        if x.size:
            viol = max(viol, float(np.max(np.maximum(lb - x, 0.0), initial=0.0)))
            viol = max(viol, float(np.max(np.maximum(x - ub, 0.0), initial=0.0)))
        for r in self.rows:
            lhs = sum(a * x[j] for j, a in r.coeffs.items())
            if r.sense == LE:
                viol = max(viol, lhs - r.rhs)
            elif r.sense == GE:
                viol = max(viol, r.rhs - lhs)
            else:
                viol = max(viol, abs(lhs - r.rhs))
        return viol


@dataclass
class SolveResult:
    status: str
    x: np.ndarray
    duals: np.ndarray
    reduced_costs: np.ndarray
    objective: float
    iterations: int = 0
    nodes: int = 0
    bound: float = math.nan
    row_tags: tuple[str, ...] = ()
    var_names: tuple[str, ...] = ()

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def dual(self, tag: str) -> float:
        return float(self.duals[self.row_tags.index(tag)])

    def value(self, name: str) -> float:
        return float(self.x[self.var_names.index(name)])

    def as_dict(self) -> dict:
        return {
            "x": dict(zip(self.var_names, map(float, self.x))),
            "duals": dict(zip(self.row_tags, map(float, self.duals))),
        }


def write_lp(model: Model, path) -> None:
    """Export ``model`` in CPLEX LP text format for cross-checking."""

    def clean(text):
        return "".join(ch if ch.isalnum() or ch in "_." else "_" for ch in text)

    names = [clean(n) for n in model.var_names]

    def term(j, a, first):
        name = names[j]
        sign = "-" if a < 0 else ("" if first else "+")
        return f"{sign} {abs(a):.17g} {name}".strip()

    def linear(coeffs):
        if not coeffs:
            return "0 " + names[0] if names else "0"
        return " ".join(term(j, a, k == 0) for k, (j, a) in enumerate(sorted(coeffs.items())))

    lines = [f"\\ {model.name}", "Minimize", " obj: " + linear(model.obj), "Subject To"]
    for r in model.rows:
        op = {LE: "<=", EQ: "=", GE: ">="}[r.sense]
        lines.append(f" {clean(r.tag)}: {linear(r.coeffs)} {op} {r.rhs:.17g}")
    lines.append("Bounds")
    for j, name in enumerate(names):
        lo = "-inf" if math.isinf(model.lb[j]) else f"{model.lb[j]:.17g}"
        hi = "+inf" if math.isinf(model.ub[j]) else f"{model.ub[j]:.17g}"
        lines.append(f" {lo} <= {name} <= {hi}")
    ints = [n for n, flag in zip(names, model.integer) if flag]
    if ints:
        lines.append("General")
        lines.extend(" " + n for n in ints)
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
