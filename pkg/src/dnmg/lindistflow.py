"""Linearized unbalanced branch flow: constraint emission and plant solvers.

Squared voltage magnitudes ``w`` and branch flows ``(p, q)`` are related by
the lossless LinDist3Flow equations. The same relations back three tools:
constraint rows for the optimization models, a radial sweep used as the
default plant, and a complex-voltage fixed-point solver used to validate
the linear model.

Master quantities (block and switch states, generator set-points) enter
rows through a :class:`Binding`. In configuration-coupled mode they are
model variables; in fixed-topology mode they are constants moved to the
right-hand side, and the binding records ``d rhs / d x`` for every row so
that cut coefficients can be assembled from the row duals.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import sweep
from .netmodel import PHASE_INDEX, PHASES, Network, ScenarioVector, connected_components
from .optcore import EQ, GE, LE, Model, polygon_radius, polygonize_magnitude

SQRT3 = math.sqrt(3.0)
# forward phase pairs; the reversed pairs take the opposite sqrt(3) sign
_FORWARD_PAIRS = {(0, 1), (1, 2), (2, 0)}
_ANGLES = {"a": 0.0, "b": -2.0 * math.pi / 3.0, "c": 2.0 * math.pi / 3.0}


class PowerFlowError(RuntimeError):
    """A plant evaluation could not be set up."""


class NonRadialError(PowerFlowError):
    pass


class NoSlackError(PowerFlowError):
    pass


class UnsupportedTransformerError(PowerFlowError):
    pass


@dataclass(frozen=True)
class VoltageSensitivity:
    M_P: np.ndarray
    M_Q: np.ndarray


@dataclass
class NodalState:
    w: dict  # (bus, phase) -> squared magnitude

    @property
    def v(self):
        return {k: math.sqrt(max(val, 0.0)) for k, val in self.w.items()}


@dataclass
class BranchFlow:
    """Sending-end flows keyed by ``(element id, phase)``.

    ``p_to``/``q_to`` hold the receiving-end outflows (``-p`` for lossless
    elements, the secondary-side quantities for delta transformers).
    """

    p: dict
    q: dict
    p_to: dict
    q_to: dict


@dataclass
class PowerFlowResult:
    state: NodalState
    flows: BranchFlow
    slack_p: dict  # phase -> injection
    slack_q: dict
    slack_gen: str
    iterations: int = 1
    converged: bool = True


@dataclass
class ACResult:
    V: dict  # (bus, phase) -> complex voltage
    flows: BranchFlow
    slack_p: dict
    slack_q: dict
    slack_gen: str
    iterations: int
    converged: bool

    @property
    def v(self):
        return {k: abs(val) for k, val in self.V.items()}


@dataclass
class PlantMeasurement:
    """Voltage magnitudes at energized PQ nodes and slack injections per CC."""

    v: dict  # (bus, phase) -> magnitude
    slack_p: dict  # (cc index, phase) -> active injection
    step: int = 0
    ok: bool = True
    ccs: tuple = ()


@dataclass
class FeasibilityReport:
    feasible: bool
    max_violation: float
    detail: str = ""


# ---------------------------------------------------------------------------
# sensitivities

def voltage_sensitivity(line) -> VoltageSensitivity:
    """Squared-voltage drop sensitivities of a line to its phase flows."""
    r = np.asarray(line.r, dtype=float)
    x = np.asarray(line.x, dtype=float)
    MP = np.zeros((3, 3))
    MQ = np.zeros((3, 3))
    present = [PHASE_INDEX[p] for p in line.phases]
    for i in present:
        for j in present:
            if i == j:
                MP[i, j] = 2.0 * r[i, j]
                MQ[i, j] = 2.0 * x[i, j]
            elif (i, j) in _FORWARD_PAIRS:
                MP[i, j] = -r[i, j] + SQRT3 * x[i, j]
                MQ[i, j] = -x[i, j] - SQRT3 * r[i, j]
            else:
                MP[i, j] = -r[i, j] - SQRT3 * x[i, j]
                MQ[i, j] = -x[i, j] + SQRT3 * r[i, j]
    return VoltageSensitivity(MP, MQ)


# ---------------------------------------------------------------------------
# constraint emission

class Binding:
    """Routes master quantities into rows as variables or as constants.

    Handles are tuples: ``("z_bl", block)``, ``("z_sw", switch)``,
    ``("p", gen, phase)`` and ``("q", gen, phase)``.
    """

    def __init__(self, model: Model, variables=None, values=None):
        if (variables is None) == (values is None):
            raise ValueError("pass exactly one of variables or values")
        self.model = model
        self.variables = variables
        self.values = values
        self.coupling: dict[str, dict] = {}

    @property
    def coupled(self):
        return self.variables is not None

    def value(self, handle):
        return self.values[handle]

    def add_row(self, coeffs, master, sense, rhs, tag):
        coeffs = dict(coeffs)
        if self.variables is not None:
            for h, a in master.items():
                j = self.variables[h]
                coeffs[j] = coeffs.get(j, 0.0) + a
        else:
            dep = {}
            for h, a in master.items():
                if a:
                    rhs -= a * self.values[h]
                    dep[h] = dep.get(h, 0.0) - a
            if dep:
                self.coupling[tag] = dep
        return self.model.add_row(coeffs, sense, rhs, tag)


@dataclass
class FlowVars:
    """Variable indices created by :func:`emit_flow_constraints`."""

    w: dict = field(default_factory=dict)  # (bus, phase)
    p: dict = field(default_factory=dict)  # (element, phase), sending end
    q: dict = field(default_factory=dict)
    p_to: dict = field(default_factory=dict)  # delta secondary side
    q_to: dict = field(default_factory=dict)
    pending: list = field(default_factory=list)  # (coeffs, master, rhs, tag)


def _polygon(binding, fv, pvar, qvar, s_max, K, tag, z, lazy):
    for k, (coeffs, rhs) in enumerate(polygonize_magnitude(pvar, qvar, s_max, K)):
        master = {z: -rhs} if z is not None else {}
        rhs_c = 0.0 if z is not None else rhs
        row = (coeffs, master, rhs_c, f"{tag}.{k}]")
        if lazy and len(coeffs) == 2:
            fv.pending.append(row)
        else:
            binding.add_row(*row[:2], LE, rhs_c, row[3])


def separate_polygon_rows(binding: Binding, fv: FlowVars, x, tol: float = 1e-9) -> int:
    """Move pending polygon sides violated by ``x`` into the model."""
    keep = []
    added = 0
    for coeffs, master, rhs, tag in fv.pending:
        lhs = sum(a * x[j] for j, a in coeffs.items())
        for h, a in master.items():
            lhs += a * (x[binding.variables[h]] if binding.coupled else binding.values[h])
        if lhs > rhs + tol:
            binding.add_row(coeffs, master, LE, rhs, tag)
            added += 1
        else:
            keep.append((coeffs, master, rhs, tag))
    fv.pending = keep
    return added


def _outflow_terms(net: Network, fv: FlowVars):
    """Per bus-phase lists of ``(var, coef)`` giving the outflow."""
    out_p: dict = {}
    out_q: dict = {}

    def add(store, key, var, coef):
        store.setdefault(key, []).append((var, coef))

    for e in (*net.lines, *net.switches, *net.transformers):
        delta = getattr(e, "kind", "") == "delta"
        for ph in e.phases:
            add(out_p, (e.f_bus, ph), fv.p[(e.id, ph)], 1.0)
            add(out_q, (e.f_bus, ph), fv.q[(e.id, ph)], 1.0)
            if delta:
                add(out_p, (e.t_bus, ph), fv.p_to[(e.id, ph)], 1.0)
                add(out_q, (e.t_bus, ph), fv.q_to[(e.id, ph)], 1.0)
            else:
                add(out_p, (e.t_bus, ph), fv.p[(e.id, ph)], -1.0)
                add(out_q, (e.t_bus, ph), fv.q[(e.id, ph)], -1.0)
    return out_p, out_q


def emit_flow_constraints(binding: Binding, net: Network, scenario: ScenarioVector, K: int = 12,
                          extra_balance=None, gen_limits: bool | None = None,
                          switch_voltage: bool = True, lazy: bool = False) -> FlowVars:
    """Add the linear branch-flow rows for the whole network to ``binding.model``.

    ``extra_balance`` maps ``("p"|"q", bus, phase)`` to extra ``{var: coef}``
    terms on the left-hand side of the balance rows (slacks and set-point
    adjustments). Balance rows read ``outflow + z*load + shunt*w - gen = 0``.
    Generator limits are emitted only when master quantities are variables
    unless ``gen_limits`` says otherwise. With ``lazy`` only the four
    axis-aligned polygon sides become rows; the others wait in
    ``FlowVars.pending`` for :func:`separate_polygon_rows`.
    """
    m = binding.model
    fv = FlowVars()
    blk = net.block_of_bus
    extra_balance = extra_balance or {}
    if gen_limits is None:
        gen_limits = binding.coupled

    for bus in net.buses:
        for ph in bus.phases:
            fv.w[(bus.id, ph)] = m.add_var(f"w[{bus.id}.{ph}]", 0.0, bus.v_max ** 2)
    for e in (*net.lines, *net.switches, *net.transformers):
        for ph in e.phases:
            rad = polygon_radius(e.flow_limit[ph], K)
            fv.p[(e.id, ph)] = m.add_var(f"p[{e.id}.{ph}]", -rad, rad)
            fv.q[(e.id, ph)] = m.add_var(f"q[{e.id}.{ph}]", -rad, rad)
            if getattr(e, "kind", "") == "delta":
                fv.p_to[(e.id, ph)] = m.add_var(f"pt[{e.id}.{ph}]", -rad, rad)
                fv.q_to[(e.id, ph)] = m.add_var(f"qt[{e.id}.{ph}]", -rad, rad)

    # voltage limits, scaled by the block state
    for bus in net.buses:
        z = ("z_bl", blk[bus.id])
        for ph in bus.phases:
            w = fv.w[(bus.id, ph)]
            binding.add_row({w: 1.0}, {z: -bus.v_min ** 2}, GE, 0.0, f"vlo[{bus.id}.{ph}]")
            binding.add_row({w: 1.0}, {z: -bus.v_max ** 2}, LE, 0.0, f"vhi[{bus.id}.{ph}]")

    # voltage drop along lines
    for ln in net.lines:
        sens = voltage_sensitivity(ln)
        for ph in ln.phases:
            i = PHASE_INDEX[ph]
            coeffs = {fv.w[(ln.t_bus, ph)]: 1.0, fv.w[(ln.f_bus, ph)]: -1.0}
            for ps in ln.phases:
                j = PHASE_INDEX[ps]
                if sens.M_P[i, j]:
                    coeffs[fv.p[(ln.id, ps)]] = coeffs.get(fv.p[(ln.id, ps)], 0.0) + sens.M_P[i, j]
                if sens.M_Q[i, j]:
                    coeffs[fv.q[(ln.id, ps)]] = coeffs.get(fv.q[(ln.id, ps)], 0.0) + sens.M_Q[i, j]
            binding.add_row(coeffs, {}, EQ, 0.0, f"vdrop[{ln.id}.{ph}]")

    # magnitude limits as polygons
    for e in (*net.lines, *net.transformers):
        for ph in e.phases:
            sides = [("", fv.p, fv.q)]
            if getattr(e, "kind", "") == "delta":
                sides.append(("t", fv.p_to, fv.q_to))
            for side, P, Q in sides:
                _polygon(binding, fv, P[(e.id, ph)], Q[(e.id, ph)], e.flow_limit[ph], K,
                         f"plim{side}[{e.id}.{ph}", None, lazy)
    for sw in net.switches:
        z = ("z_sw", sw.id)
        for ph in sw.phases:
            _polygon(binding, fv, fv.p[(sw.id, ph)], fv.q[(sw.id, ph)], sw.flow_limit[ph], K,
                     f"swlim[{sw.id}.{ph}", z, lazy)
            if switch_voltage:
                big = max(net.bus_by_id[sw.f_bus].v_max, net.bus_by_id[sw.t_bus].v_max) ** 2
                wf, wt = fv.w[(sw.f_bus, ph)], fv.w[(sw.t_bus, ph)]
                binding.add_row({wf: 1.0, wt: -1.0}, {z: big}, LE, big, f"swv+[{sw.id}.{ph}]")
                binding.add_row({wf: -1.0, wt: 1.0}, {z: big}, LE, big, f"swv-[{sw.id}.{ph}]")

    # transformers
    for t in net.transformers:
        n2 = t.tap_ratio ** 2
        if t.kind == "wye":
            for ph in t.phases:
                binding.add_row({fv.w[(t.f_bus, ph)]: 1.0, fv.w[(t.t_bus, ph)]: -n2}, {}, EQ, 0.0,
                                f"xv[{t.id}.{ph}]")
        elif t.kind == "delta":
            if tuple(t.phases) != PHASES:
                raise UnsupportedTransformerError(f"transformer {t.id}: delta needs phases a, b, c")
            for phi, psi in (("a", "b"), ("b", "c"), ("c", "a")):
                binding.add_row({fv.w[(t.f_bus, phi)]: 3.0, fv.w[(t.f_bus, psi)]: 3.0,
                                 fv.w[(t.t_bus, phi)]: -2.0 * n2}, {}, EQ, 0.0, f"xdv[{t.id}.{phi}]")
            for phi, psi in (("a", "c"), ("b", "a"), ("c", "b")):
                pf, qf = fv.p[(t.id, phi)], fv.q[(t.id, phi)]
                pt_phi, pt_psi = fv.p_to[(t.id, phi)], fv.p_to[(t.id, psi)]
                qt_phi, qt_psi = fv.q_to[(t.id, phi)], fv.q_to[(t.id, psi)]
                binding.add_row({pf: 2.0, pt_phi: 1.0, pt_psi: 1.0, qt_psi: -1.0 / SQRT3,
                                 qt_phi: 1.0 / SQRT3}, {}, EQ, 0.0, f"xdp[{t.id}.{phi}]")
                binding.add_row({qf: 2.0, pt_phi: -1.0 / SQRT3, pt_psi: 1.0 / SQRT3, qt_psi: 1.0,
                                 qt_phi: 1.0}, {}, EQ, 0.0, f"xdq[{t.id}.{phi}]")
        else:
            raise UnsupportedTransformerError(f"transformer {t.id}: unknown kind {t.kind!r}")

    # generator limits
    if gen_limits:
        for g in net.generators:
            z = ("z_bl", blk[g.bus])
            for ph in g.phases:
                for comp, lo, hi in (("p", g.p_min[ph], g.p_max[ph]), ("q", g.q_min[ph], g.q_max[ph])):
                    h = (comp, g.id, ph)
                    binding.add_row({}, {h: 1.0, z: -lo}, GE, 0.0, f"g{comp}lo[{g.id}.{ph}]")
                    binding.add_row({}, {h: 1.0, z: -hi}, LE, 0.0, f"g{comp}hi[{g.id}.{ph}]")

    # power balance
    out_p, out_q = _outflow_terms(net, fv)
    gens_at: dict = {}
    for g in net.generators:
        for ph in g.phases:
            gens_at.setdefault((g.bus, ph), []).append(g.id)
    load_p: dict = {}
    load_q: dict = {}
    for d in net.loads:
        for ph in d.phases:
            load_p[(d.bus, ph)] = load_p.get((d.bus, ph), 0.0) + scenario.p[(d.id, ph)]
            load_q[(d.bus, ph)] = load_q.get((d.bus, ph), 0.0) + scenario.q[(d.id, ph)]
    for bus in net.buses:
        z = ("z_bl", blk[bus.id])
        for ph in bus.phases:
            key = (bus.id, ph)
            g_sh, b_sh = bus.shunt.get(ph, (0.0, 0.0))
            for comp, out, load, shunt in (("p", out_p, load_p, g_sh), ("q", out_q, load_q, -b_sh)):
                coeffs: dict = {}
                for var, a in out.get(key, []):
                    coeffs[var] = coeffs.get(var, 0.0) + a
                if shunt:
                    coeffs[fv.w[key]] = coeffs.get(fv.w[key], 0.0) + shunt
                for var, a in extra_balance.get((comp, bus.id, ph), {}).items():
                    coeffs[var] = coeffs.get(var, 0.0) + a
                master = {(comp, gid, ph): -1.0 for gid in gens_at.get(key, [])}
                if load.get(key, 0.0):
                    master[z] = load[key]
                binding.add_row(coeffs, master, EQ, 0.0, f"bal_{comp}[{bus.id}.{ph}]")
    return fv


# ---------------------------------------------------------------------------
# radial plant solvers

@dataclass
class _Tree:
    buses: list
    index: dict
    elems: list  # (element, parent is the sending end)
    par: np.ndarray
    chi: np.ndarray
    kind: np.ndarray
    emask: np.ndarray
    MP: np.ndarray
    MQ: np.ndarray
    Z: np.ndarray
    tap: np.ndarray
    bmask: np.ndarray
    root: int


def _cc_elements(net: Network, cc, switch_states):
    blocks = set(cc)
    bus_set = [b.id for b in net.buses if net.block_of_bus[b.id] in blocks]
    members = set(bus_set)
    elems = [e for e in (*net.lines, *net.transformers) if e.f_bus in members]
    elems += [s for s in net.switches if switch_states.get(s.id) and s.f_bus in members and s.t_bus in members]
    return bus_set, elems


def _slack_of(net: Network, cc, slack_gen):
    blocks = set(cc)
    if slack_gen is None:
        subs = [g for g in net.generators if g.substation and net.block_of_bus[g.bus] in blocks]
        if len(subs) != 1:
            raise NoSlackError(f"component {cc} has {len(subs)} substations; name a slack generator")
        return subs[0]
    g = net.gen_by_id[slack_gen]
    if net.block_of_bus[g.bus] not in blocks:
        raise NoSlackError(f"slack generator {slack_gen} is outside component {cc}")
    return g


def _build_tree(net: Network, cc, switch_states, slack_bus) -> _Tree:
    bus_ids, elems = _cc_elements(net, cc, switch_states)
    if len(elems) != len(bus_ids) - 1:
        raise NonRadialError(f"component {cc}: {len(elems)} branches for {len(bus_ids)} buses")
    index = {b: i for i, b in enumerate(bus_ids)}
    adj: dict = {b: [] for b in bus_ids}
    for e in elems:
        adj[e.f_bus].append(e)
        adj[e.t_bus].append(e)
    seen = {slack_bus}
    queue = deque([slack_bus])
    ordered = []
    while queue:
        b = queue.popleft()
        for e in adj[b]:
            other = e.t_bus if e.f_bus == b else e.f_bus
            if other in seen:
                continue
            seen.add(other)
            ordered.append((e, e.f_bus == b))
            queue.append(other)
    if len(seen) != len(bus_ids):
        raise NonRadialError(f"component {cc} is not connected")
    E = len(ordered)
    par = np.zeros(E, dtype=np.int_)
    chi = np.zeros(E, dtype=np.int_)
    kind = np.zeros(E, dtype=np.int8)
    emask = np.zeros((E, 3))
    MP = np.zeros((E, 3, 3))
    MQ = np.zeros((E, 3, 3))
    Z = np.zeros((E, 3, 3), dtype=complex)
    tap = np.ones(E)
    for k, (e, fwd) in enumerate(ordered):
        a, b = (e.f_bus, e.t_bus) if fwd else (e.t_bus, e.f_bus)
        par[k], chi[k] = index[a], index[b]
        for ph in e.phases:
            emask[k, PHASE_INDEX[ph]] = 1.0
        if hasattr(e, "r"):
            kind[k] = sweep.LINE
            sens = voltage_sensitivity(e)
            MP[k], MQ[k] = sens.M_P, sens.M_Q
            Z[k] = np.asarray(e.r) + 1j * np.asarray(e.x)
        elif hasattr(e, "tap_ratio"):
            tap[k] = e.tap_ratio
            if e.kind == "wye":
                kind[k] = sweep.WYE_FWD if fwd else sweep.WYE_REV
            else:
                kind[k] = sweep.DELTA_FWD if fwd else sweep.DELTA_REV
        else:
            kind[k] = sweep.SWITCH
    bmask = np.zeros((len(bus_ids), 3))
    for b in bus_ids:
        for ph in net.bus_by_id[b].phases:
            bmask[index[b], PHASE_INDEX[ph]] = 1.0
    return _Tree(bus_ids, index, ordered, par, chi, kind, emask, MP, MQ, Z, tap, bmask, index[slack_bus])


def _net_demand(net: Network, tree: _Tree, injections, scenario, slack_gen):
    n = len(tree.buses)
    P = np.zeros((n, 3))
    Q = np.zeros((n, 3))
    G = np.zeros((n, 3))
    B = np.zeros((n, 3))
    for d in net.loads:
        i = tree.index.get(d.bus)
        if i is None:
            continue
        for ph in d.phases:
            P[i, PHASE_INDEX[ph]] += scenario.p[(d.id, ph)]
            Q[i, PHASE_INDEX[ph]] += scenario.q[(d.id, ph)]
    for g in net.generators:
        i = tree.index.get(g.bus)
        if i is None or g.id == slack_gen:
            continue
        for ph in g.phases:
            p, q = injections.get((g.id, ph), (0.0, 0.0))
            P[i, PHASE_INDEX[ph]] -= p
            Q[i, PHASE_INDEX[ph]] -= q
    for b in tree.buses:
        for ph, (gs, bs) in net.bus_by_id[b].shunt.items():
            G[tree.index[b], PHASE_INDEX[ph]] = gs
            B[tree.index[b], PHASE_INDEX[ph]] = bs
    return P, Q, G, B


def _flows_from(tree: _Tree, FP, FQ, to_side=None):
    p, q, p_to, q_to = {}, {}, {}, {}
    for k, (e, fwd) in enumerate(tree.elems):
        for ph in e.phases:
            i = PHASE_INDEX[ph]
            if fwd:
                p[(e.id, ph)], q[(e.id, ph)] = FP[k, i], FQ[k, i]
            else:
                p_to[(e.id, ph)], q_to[(e.id, ph)] = FP[k, i], FQ[k, i]
    for k, (e, fwd) in enumerate(tree.elems):
        delta = getattr(e, "kind", "") == "delta"
        for ph in e.phases:
            key = (e.id, ph)
            if fwd and key not in p_to:
                if delta:
                    p_to[key], q_to[key] = to_side[k][0][PHASE_INDEX[ph]], to_side[k][1][PHASE_INDEX[ph]]
                else:
                    p_to[key], q_to[key] = -p[key], -q[key]
            elif not fwd and key not in p:
                if delta:
                    p[key], q[key] = to_side[k][0][PHASE_INDEX[ph]], to_side[k][1][PHASE_INDEX[ph]]
                else:
                    p[key], q[key] = -p_to[key], -q_to[key]
    return BranchFlow(p, q, p_to, q_to)


def _per_phase_value(val, phases):
    if isinstance(val, dict):
        return np.array([val.get(p, 0.0) for p in PHASES])
    return np.full(3, float(val))


def solve_linear_power_flow(net: Network, cc, switch_states, injections, scenario: ScenarioVector,
                            slack_w0=1.0, slack_gen: str | None = None, tol: float = 1e-14,
                            max_iter: int = 100) -> PowerFlowResult:
    """Radial sweep of the linear branch-flow equations over one component.

    ``injections`` maps ``(gen, phase)`` to ``(p, q)`` for non-slack
    generators. The slack generator (the component's substation unless
    ``slack_gen`` is given) absorbs the net demand at fixed ``slack_w0``.
    Shunt consumption depends on ``w``, so the sweep repeats until ``w``
    settles.
    """
    g_slack = _slack_of(net, cc, slack_gen)
    tree = _build_tree(net, cc, switch_states, g_slack.bus)
    P0, Q0, G, B = _net_demand(net, tree, injections, scenario, g_slack.id)
    w0 = _per_phase_value(slack_w0, PHASES) * tree.bmask[tree.root]
    W = np.zeros_like(P0)
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        Pl = P0 + G * W
        Ql = Q0 - B * W
        W_new, FP, FQ, DP, DQ = sweep.linear_sweep(tree.par, tree.chi, tree.kind, tree.emask, tree.MP,
                                                   tree.MQ, tree.tap, Pl, Ql, tree.root, w0)
        W_new = np.asarray(W_new)
        done = np.max(np.abs(W_new - W), initial=0.0) <= tol or not (G.any() or B.any())
        W = W_new
        if done:
            converged = True
            break
    FP, FQ, DP, DQ = map(np.asarray, (FP, FQ, DP, DQ))
    to_side = _delta_secondary(tree, DP, DQ)
    w = {(b, ph): float(W[tree.index[b], PHASE_INDEX[ph]]) for b in tree.buses
         for ph in net.bus_by_id[b].phases}
    r = tree.root
    slack_p = {ph: float(DP[r, PHASE_INDEX[ph]]) for ph in g_slack.phases}
    slack_q = {ph: float(DQ[r, PHASE_INDEX[ph]]) for ph in g_slack.phases}
    return PowerFlowResult(NodalState(w), _flows_from(tree, FP, FQ, to_side), slack_p, slack_q,
                           g_slack.id, it, converged)


def _delta_secondary(tree: _Tree, DP, DQ):
    out = {}
    for k, (e, fwd) in enumerate(tree.elems):
        if getattr(e, "kind", "") == "delta":
            c = tree.chi[k]
            out[k] = (-DP[c], -DQ[c])
    return out


def slack_voltage(w0=1.0, phases=PHASES):
    """Balanced complex voltages with magnitude ``sqrt(w0)``."""
    mag = _per_phase_value(w0, PHASES) ** 0.5
    return {ph: mag[PHASE_INDEX[ph]] * complex(math.cos(_ANGLES[ph]), math.sin(_ANGLES[ph])) for ph in phases}


def solve_ac_fixed_point(net: Network, cc, switch_states, injections, scenario: ScenarioVector,
                         slack_voltage_=None, slack_gen: str | None = None, tol: float = 1e-8,
                         max_iter: int = 100) -> ACResult:
    """Backward/forward sweep with constant-power loads on a radial component.

    ``slack_voltage_`` maps phase to complex voltage and defaults to a
    balanced 1.0 per-unit set. Non-convergence is reported through the
    ``converged`` flag rather than raised.
    """
    g_slack = _slack_of(net, cc, slack_gen)
    tree = _build_tree(net, cc, switch_states, g_slack.bus)
    if any(k in (sweep.DELTA_FWD, sweep.DELTA_REV) for k in tree.kind):
        raise UnsupportedTransformerError("the AC solver does not model delta transformers")
    P, Q, G, B = _net_demand(net, tree, injections, scenario, g_slack.id)
    S = P + 1j * Q
    Y = G + 1j * B
    sv = slack_voltage_ if slack_voltage_ is not None else slack_voltage()
    v_root = np.array([complex(sv.get(ph, 0.0)) for ph in PHASES])
    V, J, its, ok = sweep.ac_sweep(tree.par, tree.chi, tree.kind, tree.emask, tree.Z, tree.tap,
                                   S, Y, tree.bmask, tree.root, v_root, tol, max_iter)
    V = np.asarray(V)
    J = np.asarray(J)
    # current drawn at each bus including downstream branches
    n = len(tree.buses)
    Jd = np.zeros((n, 3), dtype=complex)
    ok_v = (tree.bmask > 0) & (np.abs(V) > 0)
    Jd[ok_v] = np.conj(S[ok_v] / V[ok_v]) + Y[ok_v] * V[ok_v]
    par_side = np.zeros_like(J)
    for k in range(len(tree.elems)):
        if tree.kind[k] == sweep.WYE_FWD:
            par_side[k] = J[k] / tree.tap[k]
        elif tree.kind[k] == sweep.WYE_REV:
            par_side[k] = J[k] * tree.tap[k]
        else:
            par_side[k] = J[k]
        Jd[tree.par[k]] += par_side[k]
    p, q, p_to, q_to = {}, {}, {}, {}
    for k, (e, fwd) in enumerate(tree.elems):
        s_par = V[tree.par[k]] * np.conj(par_side[k])
        s_chi = -V[tree.chi[k]] * np.conj(J[k])
        s_f, s_t = (s_par, s_chi) if fwd else (s_chi, s_par)
        for ph in e.phases:
            i = PHASE_INDEX[ph]
            p[(e.id, ph)], q[(e.id, ph)] = s_f[i].real, s_f[i].imag
            p_to[(e.id, ph)], q_to[(e.id, ph)] = s_t[i].real, s_t[i].imag
    r = tree.root
    s_slack = V[r] * np.conj(Jd[r])
    Vd = {(b, ph): complex(V[tree.index[b], PHASE_INDEX[ph]]) for b in tree.buses
          for ph in net.bus_by_id[b].phases}
    return ACResult(Vd, BranchFlow(p, q, p_to, q_to),
                    {ph: float(s_slack[PHASE_INDEX[ph]].real) for ph in g_slack.phases},
                    {ph: float(s_slack[PHASE_INDEX[ph]].imag) for ph in g_slack.phases},
                    g_slack.id, int(its), bool(ok))


def ac_balance_residual(net: Network, cc, switch_states, injections, scenario, res: ACResult) -> float:
    """Largest nodal complex power mismatch of an AC solution (slack bus excluded)."""
    bus_ids, elems = _cc_elements(net, cc, switch_states)
    slack_bus = net.gen_by_id[res.slack_gen].bus
    mismatch: dict = {}
    for b in bus_ids:
        for ph in net.bus_by_id[b].phases:
            gs, bs = net.bus_by_id[b].shunt.get(ph, (0.0, 0.0))
            mismatch[(b, ph)] = abs(res.V[(b, ph)]) ** 2 * complex(gs, -bs)
    for d in net.loads:
        for ph in d.phases:
            if (d.bus, ph) in mismatch:
                mismatch[(d.bus, ph)] += complex(scenario.p[(d.id, ph)], scenario.q[(d.id, ph)])
    for g in net.generators:
        if g.id == res.slack_gen:
            continue
        for ph in g.phases:
            if (g.bus, ph) in mismatch:
                p, q = injections.get((g.id, ph), (0.0, 0.0))
                mismatch[(g.bus, ph)] -= complex(p, q)
    # branch outflows from the element terminal voltages
    for e in elems:
        idx = [PHASE_INDEX[ph] for ph in e.phases]
        vf = np.array([res.V[(e.f_bus, ph)] for ph in e.phases])
        vt = np.array([res.V[(e.t_bus, ph)] for ph in e.phases])
        if hasattr(e, "r"):
            Zs = (np.asarray(e.r) + 1j * np.asarray(e.x))[np.ix_(idx, idx)]
            i_ft = np.linalg.solve(Zs, vf - vt) if np.abs(Zs).max() > 0 else None
        else:
            i_ft = None
        if i_ft is None:
            # zero-impedance element: use the solver's flows
            for ph in e.phases:
                mismatch[(e.f_bus, ph)] += complex(res.flows.p[(e.id, ph)], res.flows.q[(e.id, ph)])
                mismatch[(e.t_bus, ph)] += complex(res.flows.p_to[(e.id, ph)], res.flows.q_to[(e.id, ph)])
            continue
        for k, ph in enumerate(e.phases):
            mismatch[(e.f_bus, ph)] += vf[k] * np.conj(i_ft[k])
            mismatch[(e.t_bus, ph)] -= vt[k] * np.conj(i_ft[k])
    return max((abs(v) for (b, ph), v in mismatch.items() if b != slack_bus), default=0.0)


# ---------------------------------------------------------------------------
# topology-level evaluation

def energized_components(net: Network, topology):
    """Energized components of ``topology`` with their slack generator."""
    out = []
    for cc in connected_components(net, topology.z_sw):
        if not topology.z_bl[cc[0]]:
            continue
        out.append((cc, source_of(net, topology, cc)))
    return out


def source_of(net: Network, topology, cc):
    blocks = set(cc)
    subs = [g.id for g in net.generators if g.substation and net.block_of_bus[g.bus] in blocks]
    gfm = [g.id for g in net.generators if topology.z_inv.get(g.id) and net.block_of_bus[g.bus] in blocks]
    srcs = subs + gfm
    if len(srcs) != 1:
        raise NoSlackError(f"component {cc} has {len(srcs)} voltage sources")
    return srcs[0]


def _heuristic_dispatch(net: Network, topology, cc, slack, scenario, basis):
    """Set-points shifted by the component's load change, headroom-proportional."""
    blocks = set(cc)
    inj = {}
    gens = [g for g in net.generators if net.block_of_bus[g.bus] in blocks and g.id != slack]
    for g in gens:
        for ph in g.phases:
            inj[(g.id, ph)] = [topology.p[(g.id, ph)], topology.q[(g.id, ph)]]
    for comp, c in (("p", 0), ("q", 1)):
        for ph in PHASES:
            delta = 0.0
            for d in net.loads:
                if net.block_of_bus[d.bus] in blocks and ph in d.phases:
                    src = scenario.p if comp == "p" else scenario.q
                    ref = basis.p if comp == "p" else basis.q
                    delta += src[(d.id, ph)] - ref[(d.id, ph)]
            if delta == 0.0:
                continue
            room = []
            for g in gens:
                if ph not in g.phases:
                    continue
                cur = inj[(g.id, ph)][c]
                hi = g.p_max[ph] if comp == "p" else g.q_max[ph]
                lo = g.p_min[ph] if comp == "p" else g.q_min[ph]
                span = (hi - cur) if delta > 0 else (cur - lo)
                room.append((g, max(0.0, min(span, g.ramp_limit[ph]))))
            total = sum(h for _, h in room)
            if total <= 0:
                continue
            for g, h in room:
                step = min(abs(delta) * h / total, h)
                inj[(g.id, ph)][c] += step if delta > 0 else -step
    return {k: tuple(v) for k, v in inj.items()}


def check_feasibility(net: Network, topology, scenario: ScenarioVector, fidelity: str = "linear",
                      eps: float = 1e-6, tol: float = 1e-6, basis: ScenarioVector | None = None,
                      warm=None, **kwargs) -> FeasibilityReport:
    """Whether ``topology`` serves ``scenario`` without unmet power.

    ``topology`` provides ``z_sw``, ``z_inv``, ``z_bl`` and set-points
    ``p``/``q`` keyed by ``(gen, phase)``. Linear fidelity solves the
    second-stage LP and compares its slack sum with ``eps``. AC fidelity
    redispatches the load change over the component's generators, solves
    the complex sweep and checks voltages, flow magnitudes and the slack
    generator's range.
    """
    if fidelity == "linear":
        from .rpop import build_subproblem, solve_subproblem

        sub = solve_subproblem(build_subproblem(net, topology, scenario, **kwargs), warm)
        if sub is None:
            return FeasibilityReport(False, math.inf, "second-stage LP failed")
        return FeasibilityReport(sub.slack_sum <= eps, sub.slack_sum)
    if fidelity != "ac":
        raise ValueError(f"unknown fidelity {fidelity!r}")
    basis = basis if basis is not None else getattr(topology, "basis", None)
    if basis is None:
        raise ValueError("AC check needs the scenario the set-points were computed for")
    worst = 0.0
    for cc, slack in energized_components(net, topology):
        inj = _heuristic_dispatch(net, topology, cc, slack, scenario, basis)
        try:
            res = solve_ac_fixed_point(net, cc, topology.z_sw, inj, scenario, slack_gen=slack)
        except PowerFlowError as exc:
            return FeasibilityReport(False, math.inf, str(exc))
        if not res.converged:
            return FeasibilityReport(False, math.inf, f"AC solve did not converge in {cc}")
        worst = max(worst, _ac_violation(net, res, slack))
    return FeasibilityReport(worst <= tol, worst)


def _ac_violation(net: Network, res: ACResult, slack: str) -> float:
    worst = 0.0
    for (b, ph), v in res.V.items():
        bus = net.bus_by_id[b]
        worst = max(worst, bus.v_min - abs(v), abs(v) - bus.v_max)
    limits = {e.id: e.flow_limit for e in (*net.lines, *net.switches, *net.transformers)}
    for (eid, ph), p in res.flows.p.items():
        lim = limits[eid][ph]
        worst = max(worst, math.hypot(p, res.flows.q[(eid, ph)]) - lim,
                    math.hypot(res.flows.p_to[(eid, ph)], res.flows.q_to[(eid, ph)]) - lim)
    g = net.gen_by_id[slack]
    for ph in g.phases:
        p, q = res.slack_p[ph], res.slack_q[ph]
        worst = max(worst, g.p_min[ph] - p, p - g.p_max[ph], g.q_min[ph] - q, q - g.q_max[ph])
    return max(worst, 0.0)


def evaluate_plant(net: Network, topology, injections, scenario: ScenarioVector, fidelity: str = "linear",
                   slack_w0=1.0, step: int = 0) -> PlantMeasurement:
    """Measure every energized component under ``injections``."""
    v: dict = {}
    slack_p: dict = {}
    ccs = []
    ok = True
    for m, (cc, slack) in enumerate(energized_components(net, topology)):
        ccs.append((cc, slack))
        if fidelity == "ac":
            res = solve_ac_fixed_point(net, cc, topology.z_sw, injections, scenario,
                                       slack_voltage(slack_w0), slack_gen=slack)
            ok = ok and res.converged
            mags = res.v
        else:
            res = solve_linear_power_flow(net, cc, topology.z_sw, injections, scenario, slack_w0,
                                          slack_gen=slack)
            mags = res.state.v
        slack_bus = net.gen_by_id[slack].bus
        for key, val in mags.items():
            if key[0] != slack_bus:
                v[key] = val
        for ph, val in res.slack_p.items():
            slack_p[(m, ph)] = val
    return PlantMeasurement(v, slack_p, step, ok, tuple(ccs))
