"""Two-stage robust partitioning and operation via a cutting-plane loop.

The master MILP picks block states, switch states, grid-forming inverters
and generator set-points against one representative load scenario. The
second stage fixes that choice, realizes an extreme load scenario and
measures unserved power with balance slacks. A slack above tolerance
produces a linear cut built from the second-stage duals; the loop stops
when the worst extreme needs no slack.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .lindistflow import (Binding, FlowVars, check_feasibility, emit_flow_constraints,
                          separate_polygon_rows)
from .netmodel import (PHASES, Network, ScenarioVector, connected_components, gfm_eligibility,
                       max_scenario, nominal_scenario, sample_scenario, uncertainty_extremes)
from .optcore import EQ, GE, LE, Model, get_backend, solve_milp

SCHEMA_VERSION = 1


class ContingencyError(ValueError):
    pass


@dataclass(frozen=True)
class RPOPConfig:
    eps: float = 1e-6
    beta_s: float | None = None  # default 1e4 * max linear cost
    beta_block: dict | None = None  # default: priority-weighted nominal load
    max_iter: int = 50
    K: int = 12
    representative: str = "all-max"
    scenario_cap: int = 12
    contingencies: tuple = ()
    gap_tol: float = 1e-6
    node_limit: int = 20_000
    backend: str = "internal"
    jobs: int = 1
    switch_voltage: bool = True
    lazy_polygons: bool = True
    phase_paths: bool = True

    def digest(self) -> str:
        doc = asdict(self)
        doc["contingencies"] = list(self.contingencies)
        text = json.dumps(doc, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class MasterSolution:
    z_sw: dict
    z_inv: dict
    z_bl: dict
    p: dict  # (gen, phase) -> active set-point
    q: dict
    theta: float
    objective: float
    cost: float  # objective without theta
    basis: ScenarioVector | None = None
    status: str = "optimal"

    def handle_values(self) -> dict:
        vals = {("z_bl", b): float(v) for b, v in self.z_bl.items()}
        vals.update({("z_sw", s): float(v) for s, v in self.z_sw.items()})
        vals.update({("p",) + k: v for k, v in self.p.items()})
        vals.update({("q",) + k: v for k, v in self.q.items()})
        return vals


@dataclass
class SubproblemSolution:
    v2: float
    slack_sum: float
    h: dict
    o: dict
    duals: dict  # tag -> dual on master-coupled rows
    coupling: dict  # tag -> {handle: d rhs / d handle}
    status: str = "optimal"
    lp_solves: int = 1


@dataclass
class Cut:
    v2: float
    pi: dict
    A: dict
    x_star: dict
    label: str = ""
    feasibility: bool = False

    def coefficients(self) -> dict:
        """``pi^T A`` keyed by master handle."""
        out: dict = {}
        for tag, row in self.A.items():
            y = self.pi.get(tag, 0.0)
            if y:
                for h, a in row.items():
                    out[h] = out.get(h, 0.0) + y * a
        # dual round-off would otherwise leave 1e-12 entries in the master
        floor = 1e-10 * max(1.0, max((abs(v) for v in out.values()), default=0.0))
        return {h: v for h, v in out.items() if abs(v) > floor}

    def evaluate(self, x: dict) -> float:
        return self.v2 + sum(c * (x[h] - self.x_star[h]) for h, c in self.coefficients().items())


@dataclass
class RPOPResult:
    solution: MasterSolution | None
    log: list
    cuts: list
    converged: bool
    message: str = ""

    @property
    def objective(self):
        return self.solution.objective if self.solution else math.nan


# ---------------------------------------------------------------------------
# contingencies

def apply_contingencies(net: Network, contingencies):
    """Network with lost substations removed, plus forced-open states.

    Returns ``(net, dead_blocks, open_switches)``.
    """
    dead, opened = set(), set()
    drop_sub = False
    for c in contingencies:
        kind, _, ident = str(c).partition(":")
        if kind == "block":
            if ident not in net.block_by_id:
                raise ContingencyError(f"unknown block {ident!r}")
            dead.add(ident)
            for sw in net.switches:
                if ident in net.switch_blocks(sw):
                    opened.add(sw.id)
        elif kind == "switch":
            if ident not in net.switch_by_id:
                raise ContingencyError(f"unknown switch {ident!r}")
            opened.add(ident)
        elif kind == "substation" and not ident:
            drop_sub = True
        else:
            raise ContingencyError(f"bad contingency {c!r}; use block:<id>, switch:<id> or substation")
    if drop_sub:
        gens = [g for g in net.generators if not g.substation]
        net = Network(name=net.name, buses=net.buses, lines=net.lines, switches=net.switches,
                      transformers=net.transformers, generators=gens, loads=net.loads,
                      clusters=net.clusters, base_power=net.base_power,
                      base_voltage=net.base_voltage, uncertainty_level=net.uncertainty_level)
    return net, dead, opened


def representative_scenario(net: Network, rule: str = "all-max") -> ScenarioVector:
    if rule == "all-max":
        return max_scenario(net)
    if rule == "nominal":
        return nominal_scenario(net)
    raise ValueError(f"unknown representative scenario rule {rule!r}")


def block_weights(net: Network, config: RPOPConfig) -> dict:
    if config.beta_block is not None:
        return {b.id: float(config.beta_block.get(b.id, 0.0)) for b in net.blocks}
    return {b.id: b.priority for b in net.blocks}


def slack_weight(net: Network, config: RPOPConfig) -> float:
    if config.beta_s is not None:
        return float(config.beta_s)
    return 1e4 * max([g.cost_linear for g in net.generators] + [1.0])


# ---------------------------------------------------------------------------
# master problem

@dataclass
class MasterVars:
    z_bl: dict = field(default_factory=dict)
    z_sw: dict = field(default_factory=dict)
    z_inv: dict = field(default_factory=dict)
    p: dict = field(default_factory=dict)
    q: dict = field(default_factory=dict)
    y_root: dict = field(default_factory=dict)
    theta: int = -1

    def handles(self) -> dict:
        out = {("z_bl", b): j for b, j in self.z_bl.items()}
        out.update({("z_sw", s): j for s, j in self.z_sw.items()})
        out.update({("p",) + k: j for k, j in self.p.items()})
        out.update({("q",) + k: j for k, j in self.q.items()})
        return out


def coloring_constraints(model: Model, net: Network, mv: MasterVars, eligibility) -> None:
    """Single voltage source per energized component.

    Each block gets a root-edge weight ``y_l`` counting its voltage
    sources: grid-forming inverters plus, for substation blocks, the block
    state. Together with :func:`radiality_constraints` every energized
    component receives exactly one root edge, so all of its closed
    switches carry the color of that one source block. Also adds the
    per-block bounds ``z_bl - sum z_sw <= sources <= z_bl``.
    """
    sub_blocks = set(net.substation_blocks())
    for blk in net.blocks:
        gens = [mv.z_inv[g] for g in eligibility.get(blk.id, ()) if g in mv.z_inv]
        for g in net.gens_in_block(blk.id):
            if g.id in mv.z_inv:
                model.add_row({mv.z_inv[g.id]: 1.0, mv.z_bl[blk.id]: -1.0}, LE, 0.0, f"inv_on[{g.id}]")
        y = model.add_var(f"y[{blk.id}]", 0.0, 1.0)
        mv.y_root[blk.id] = y
        coeffs = {y: 1.0}
        for j in gens:
            coeffs[j] = coeffs.get(j, 0.0) - 1.0
        if blk.id in sub_blocks:
            coeffs[mv.z_bl[blk.id]] = -1.0
        model.add_row(coeffs, EQ, 0.0, f"src[{blk.id}]")
        model.add_row({y: 1.0, mv.z_bl[blk.id]: -1.0}, LE, 0.0, f"gpb_hi[{blk.id}]")
        lo = {y: 1.0, mv.z_bl[blk.id]: -1.0}
        for sw in net.switches:
            if blk.id in net.switch_blocks(sw):
                lo[mv.z_sw[sw.id]] = lo.get(mv.z_sw[sw.id], 0.0) + 1.0
        model.add_row(lo, GE, 0.0, f"gpb_lo[{blk.id}]")


def radiality_constraints(model: Model, net: Network, mv: MasterVars) -> None:
    """Spanning-tree constraints over the block graph.

    A virtual root connects to every block with weight ``y_l`` (see
    :func:`coloring_constraints`). One commodity leaves the root and each
    energized block consumes one unit; flow may only use closed switches
    and root edges. With ``sum z_sw + sum y = sum z_bl`` the energized
    blocks and the root form a tree, so every energized component is a
    tree hanging off exactly one source.
    """
    N = float(len(net.blocks))
    fwd, bwd, root = {}, {}, {}
    for sw in net.switches:
        a, b = net.switch_blocks(sw)
        z = mv.z_sw[sw.id]
        fwd[sw.id] = model.add_var(f"fl+[{sw.id}]", 0.0, N)
        bwd[sw.id] = model.add_var(f"fl-[{sw.id}]", 0.0, N)
        model.add_row({fwd[sw.id]: 1.0, z: -N}, LE, 0.0, f"rad_cap+[{sw.id}]")
        model.add_row({bwd[sw.id]: 1.0, z: -N}, LE, 0.0, f"rad_cap-[{sw.id}]")
        model.add_row({z: 1.0, mv.z_bl[a]: -1.0}, LE, 0.0, f"sw_end_f[{sw.id}]")
        model.add_row({z: 1.0, mv.z_bl[b]: -1.0}, LE, 0.0, f"sw_end_t[{sw.id}]")
    for blk in net.blocks:
        root[blk.id] = model.add_var(f"fl_root[{blk.id}]", 0.0, N)
        model.add_row({root[blk.id]: 1.0, mv.y_root[blk.id]: -N}, LE, 0.0, f"rad_root[{blk.id}]")
    for blk in net.blocks:
        coeffs = {root[blk.id]: 1.0, mv.z_bl[blk.id]: -1.0}
        for sw in net.switches:
            a, b = net.switch_blocks(sw)
            if blk.id == b:
                coeffs[fwd[sw.id]] = coeffs.get(fwd[sw.id], 0.0) + 1.0
                coeffs[bwd[sw.id]] = coeffs.get(bwd[sw.id], 0.0) - 1.0
            elif blk.id == a:
                coeffs[fwd[sw.id]] = coeffs.get(fwd[sw.id], 0.0) - 1.0
                coeffs[bwd[sw.id]] = coeffs.get(bwd[sw.id], 0.0) + 1.0
        model.add_row(coeffs, EQ, 0.0, f"rad_flow[{blk.id}]")
    count = {mv.z_sw[s.id]: 1.0 for s in net.switches}
    for blk in net.blocks:
        count[mv.y_root[blk.id]] = count.get(mv.y_root[blk.id], 0.0) + 1.0
        count[mv.z_bl[blk.id]] = count.get(mv.z_bl[blk.id], 0.0) - 1.0
    model.add_row(count, EQ, 0.0, "rad_count")


def phase_path_constraints(model: Model, net: Network, mv: MasterVars) -> None:
    """Per-phase reachability of every energized block from its source.

    For each phase a separate commodity leaves the sources connected on
    that phase and travels only over closed switches carrying it; every
    energized block with the phase consumes one unit. A three-phase block
    therefore cannot hang off a single-phase tie, whatever feeds the tie.
    """
    N = float(len(net.blocks))
    for ph in PHASES:
        fwd, bwd = {}, {}
        for sw in net.switches:
            if ph not in sw.phases:
                continue
            z = mv.z_sw[sw.id]
            fwd[sw.id] = model.add_var(f"pf+[{ph}.{sw.id}]", 0.0, N)
            bwd[sw.id] = model.add_var(f"pf-[{ph}.{sw.id}]", 0.0, N)
            model.add_row({fwd[sw.id]: 1.0, z: -N}, LE, 0.0, f"pf_cap+[{ph}.{sw.id}]")
            model.add_row({bwd[sw.id]: 1.0, z: -N}, LE, 0.0, f"pf_cap-[{ph}.{sw.id}]")
        for blk in net.blocks:
            if ph not in blk.phase_union:
                continue
            supply = {}
            for g in net.gens_in_block(blk.id):
                if ph not in g.phases:
                    continue
                j = mv.z_bl[blk.id] if g.substation else mv.z_inv.get(g.id)
                if j is not None:
                    supply[j] = supply.get(j, 0.0) - N
            coeffs = {mv.z_bl[blk.id]: -1.0}
            if supply:
                r = model.add_var(f"pf_root[{ph}.{blk.id}]", 0.0, N)
                coeffs[r] = 1.0
                supply[r] = 1.0
                model.add_row(supply, LE, 0.0, f"pf_src[{ph}.{blk.id}]")
            for sid in fwd:
                a, b = net.switch_blocks(net.switch_by_id[sid])
                if blk.id == b:
                    coeffs[fwd[sid]] = coeffs.get(fwd[sid], 0.0) + 1.0
                    coeffs[bwd[sid]] = coeffs.get(bwd[sid], 0.0) - 1.0
                elif blk.id == a:
                    coeffs[fwd[sid]] = coeffs.get(fwd[sid], 0.0) - 1.0
                    coeffs[bwd[sid]] = coeffs.get(bwd[sid], 0.0) + 1.0
            model.add_row(coeffs, EQ, 0.0, f"pf_bal[{ph}.{blk.id}]")


def lower_phase_switches(net: Network, block_id: str):
    """Switches from ``block_id`` to neighbours with a larger maximum phase count."""
    here = net.block_by_id[block_id].phase_max
    out = []
    for sw in net.switches:
        a, b = net.switch_blocks(sw)
        if block_id in (a, b):
            other = b if a == block_id else a
            if net.block_by_id[other].phase_max > here:
                out.append((sw, other))
    return out


def phase_eligibility_constraints(model: Model, net: Network, mv: MasterVars, eligibility) -> None:
    """Grid-forming eligibility by phase count, one-hop and two-hop rules."""
    for blk in net.blocks:
        elig = set(eligibility.get(blk.id, ()))
        for g in net.gens_in_block(blk.id):
            if g.id not in mv.z_inv:
                continue
            j = mv.z_inv[g.id]
            if g.id not in elig:
                model.set_bounds(j, ub=0.0)
                continue
            low = {sw.id for sw, _ in lower_phase_switches(net, blk.id)}
            for sw_id in sorted(low, key=lambda s: net.switch_by_id[s].id):
                model.add_row({j: 1.0, mv.z_sw[sw_id]: 1.0}, LE, 1.0, f"hop1[{g.id}.{sw_id}]")
            for sw in net.switches:
                a, b = net.switch_blocks(sw)
                if blk.id not in (a, b) or sw.id in low:
                    continue
                mid = b if a == blk.id else a
                for sw2, far in lower_phase_switches(net, mid):
                    if sw2.id == sw.id or far == blk.id:
                        continue
                    model.add_row({j: 1.0, mv.z_sw[sw.id]: 1.0, mv.z_sw[sw2.id]: 1.0}, LE, 2.0,
                                  f"hop2[{g.id}.{sw.id}.{sw2.id}]")


def build_master(net: Network, config: RPOPConfig = RPOPConfig(), cuts=(), fixed=None):
    """Master MILP; returns ``(model, master vars, flow vars, binding)``.

    ``fixed`` is ``(dead_blocks, open_switches)`` from
    :func:`apply_contingencies`.
    """
    dead, opened = fixed if fixed is not None else (set(), set())
    model = Model(name="master")
    mv = MasterVars()
    beta = block_weights(net, config)
    for blk in net.blocks:
        mv.z_bl[blk.id] = model.add_binary(f"z_bl[{blk.id}]", obj=-beta[blk.id])
        model.obj_const += beta[blk.id]
        if blk.id in dead:
            model.set_bounds(mv.z_bl[blk.id], ub=0.0)
    for sw in net.switches:
        mv.z_sw[sw.id] = model.add_binary(f"z_sw[{sw.id}]")
        if sw.id in opened:
            model.set_bounds(mv.z_sw[sw.id], ub=0.0)
    for g in net.generators:
        if not g.substation:
            mv.z_inv[g.id] = model.add_binary(f"z_inv[{g.id}]")
        model.add_obj(mv.z_bl[net.block_of_bus[g.bus]], g.cost_fixed)
        for ph in g.phases:
            mv.p[(g.id, ph)] = model.add_var(f"sp[{g.id}.{ph}]", min(0.0, g.p_min[ph]),
                                             max(0.0, g.p_max[ph]), obj=g.cost_linear)
            mv.q[(g.id, ph)] = model.add_var(f"sq[{g.id}.{ph}]", min(0.0, g.q_min[ph]),
                                             max(0.0, g.q_max[ph]))
    mv.theta = model.add_var("theta", 0.0, math.inf, obj=1.0)
    elig = gfm_eligibility(net)
    coloring_constraints(model, net, mv, elig)
    radiality_constraints(model, net, mv)
    phase_eligibility_constraints(model, net, mv, elig)
    if config.phase_paths:
        phase_path_constraints(model, net, mv)
    binding = Binding(model, variables=mv.handles())
    scen = representative_scenario(net, config.representative)
    fv = emit_flow_constraints(binding, net, scen, config.K, switch_voltage=config.switch_voltage,
                               lazy=config.lazy_polygons)
    for k, cut in enumerate(cuts):
        add_cut(model, mv, cut, f"cut[{k}]")
    return model, mv, fv, binding


def add_cut(model: Model, mv: MasterVars, cut: Cut, tag: str) -> None:
    handles = mv.handles()
    coef = cut.coefficients()
    # feasibility cuts bound the slack-only value by zero rather than theta
    coeffs = {} if cut.feasibility else {mv.theta: -1.0}
    const = cut.v2
    for h, c in coef.items():
        coeffs[handles[h]] = coeffs.get(handles[h], 0.0) + c
        const -= c * cut.x_star[h]
    model.add_row(coeffs, LE, -const, tag)


def _milp_with_rows(model, binding, fv, config):
    while True:
        res = solve_milp(model, gap_tol=config.gap_tol, node_limit=config.node_limit)
        if res.status != "optimal" or not fv.pending:
            return res
        if not separate_polygon_rows(binding, fv, res.x):
            return res


def solve_master(net: Network, config: RPOPConfig, cuts=(), fixed=None) -> MasterSolution:
    model, mv, fv, binding = build_master(net, config, cuts, fixed)
    res = _milp_with_rows(model, binding, fv, config)
    if res.status != "optimal":
        return MasterSolution({}, {}, {}, {}, {}, math.nan, math.nan, math.nan, None, res.status)
    x = res.x
    theta = float(x[mv.theta])
    return MasterSolution(
        z_sw={s: int(round(x[j])) for s, j in mv.z_sw.items()},
        z_inv={g: int(round(x[j])) for g, j in mv.z_inv.items()},
        z_bl={b: int(round(x[j])) for b, j in mv.z_bl.items()},
        p={k: float(x[j]) for k, j in mv.p.items()},
        q={k: float(x[j]) for k, j in mv.q.items()},
        theta=theta, objective=float(res.objective), cost=float(res.objective) - theta,
        basis=representative_scenario(net, config.representative),
    )


# ---------------------------------------------------------------------------
# second stage

@dataclass
class Subproblem:
    model: Model
    binding: Binding
    fv: FlowVars
    h: dict
    o: dict
    beta_s: float
    backend: str = "internal"


def build_subproblem(net: Network, x: MasterSolution, scenario: ScenarioVector,
                     config: RPOPConfig = RPOPConfig(), adjust_cost: bool = True) -> Subproblem:
    """Second-stage LP at fixed first-stage decisions ``x``.

    ``adjust_cost=False`` drops the set-point adjustment prices, leaving
    the weighted slack as the whole objective.
    """
    model = Model(name="subproblem")
    beta_s = slack_weight(net, config)
    h, o = {}, {}
    extra: dict = {}
    for bus in net.buses:
        for ph in bus.phases:
            for comp in ("p", "q"):
                hp = model.add_var(f"h+{comp}[{bus.id}.{ph}]", obj=beta_s)
                hm = model.add_var(f"h-{comp}[{bus.id}.{ph}]", obj=beta_s)
                h[(comp, bus.id, ph)] = (hp, hm)
                extra[(comp, bus.id, ph)] = {hp: 1.0, hm: -1.0}
    for g in net.generators:
        for ph in g.phases:
            ramp = g.ramp_limit[ph]
            for comp in ("p", "q"):
                cost = g.cost_linear if comp == "p" and adjust_cost else 0.0
                op = model.add_var(f"o+{comp}[{g.id}.{ph}]", 0.0, ramp, obj=cost)
                om = model.add_var(f"o-{comp}[{g.id}.{ph}]", 0.0, ramp, obj=-cost)
                o[(comp, g.id, ph)] = (op, om)
                terms = extra.setdefault((comp, g.bus, ph), {})
                terms[op] = terms.get(op, 0.0) - 1.0
                terms[om] = terms.get(om, 0.0) + 1.0
    binding = Binding(model, values=x.handle_values())
    fv = emit_flow_constraints(binding, net, scenario, config.K, extra_balance=extra,
                               gen_limits=False, switch_voltage=config.switch_voltage,
                               lazy=config.lazy_polygons)
    for g in net.generators:
        z = ("z_bl", net.block_of_bus[g.bus])
        for ph in g.phases:
            for comp, lo, hi in (("p", g.p_min[ph], g.p_max[ph]), ("q", g.q_min[ph], g.q_max[ph])):
                op, om = o[(comp, g.id, ph)]
                s = (comp, g.id, ph)
                binding.add_row({op: 1.0}, {s: 1.0, z: -hi}, LE, 0.0, f"oup_{comp}[{g.id}.{ph}]")
                binding.add_row({om: 1.0}, {s: -1.0, z: lo}, LE, 0.0, f"odn_{comp}[{g.id}.{ph}]")
    return Subproblem(model, binding, fv, h, o, beta_s, config.backend)


def solve_subproblem(sub: Subproblem, warm=None) -> SubproblemSolution | None:
    """Solve with lazy polygon separation; ``warm`` caches bases across calls."""
    solve = get_backend(sub.backend)
    kw = {"warm": warm} if warm is not None and sub.backend == "internal" else {}
    solves = 0
    while True:
        res = solve(sub.model, **kw)
        solves += 1
        if res.status != "optimal":
            return None
        if not sub.fv.pending or not separate_polygon_rows(sub.binding, sub.fv, res.x):
            break
    x = res.x
    hvals = {k: float(x[a] + x[b]) for k, (a, b) in sub.h.items()}
    ovals = {k: (float(x[a]), float(x[b])) for k, (a, b) in sub.o.items()}
    tags = res.row_tags
    duals = {}
    for i, tag in enumerate(tags):
        if tag in sub.binding.coupling:
            duals[tag] = float(res.duals[i])
    return SubproblemSolution(float(res.objective), float(sum(hvals.values())), hvals, ovals,
                              duals, dict(sub.binding.coupling), lp_solves=solves)


def _solve_one(args):
    net, x, scen, config = args
    return solve_subproblem(build_subproblem(net, x, scen, config))


def worst_case(net: Network, x: MasterSolution, scenarios, config: RPOPConfig = RPOPConfig()):
    """Second-stage value for every scenario; argmax with lowest-index ties.

    Returns ``(index, scenario, solution, values)``.
    """
    scenarios = list(scenarios)
    jobs = [(net, x, s, config) for s in scenarios]
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            sols = list(pool.map(_solve_one, jobs))
    else:
        sols = [_solve_one(j) for j in jobs]
    values = [s.v2 if s is not None else math.inf for s in sols]
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best, scenarios[best], sols[best], values


def make_cut(sub: SubproblemSolution, x: MasterSolution, label: str = "",
             feasibility: bool = False) -> Cut:
    """Linearization ``V2 + pi^T A (x - x*)`` of the second-stage value."""
    missing = [t for t in sub.coupling if t not in sub.duals]
    if missing:
        raise KeyError(f"missing duals on coupled rows {missing[:3]}")
    return Cut(sub.v2, dict(sub.duals), {t: dict(r) for t, r in sub.coupling.items()},
               x.handle_values(), label, feasibility)


def cutting_plane(net: Network, config: RPOPConfig = RPOPConfig(), progress=None) -> RPOPResult:
    """Alternate master solves and worst-case checks until no slack remains."""
    net, dead, opened = apply_contingencies(net, config.contingencies)
    scenarios = uncertainty_extremes(net, config.scenario_cap)
    cuts: list = []
    log: list = []
    x = None
    for it in range(1, config.max_iter + 1):
        x = solve_master(net, config, cuts, (dead, opened))
        if x.status != "optimal":
            return RPOPResult(None, log, cuts, False, f"master problem {x.status}")
        idx, scen, sub, values = worst_case(net, x, scenarios, config)
        if sub is None:
            return RPOPResult(x, log, cuts, False, "second-stage LP failed")
        entry = {"iteration": it, "master_objective": x.objective, "theta": x.theta,
                 "worst_scenario": idx, "worst_label": scen.label, "v2": sub.v2,
                 "slack_sum": sub.slack_sum, "lp_solves": len(values)}
        log.append(entry)
        if progress is not None:
            progress(entry)
        if sub.slack_sum <= config.eps:
            return RPOPResult(x, log, cuts, True)
        if sub.v2 > x.theta + 1e-9 * max(1.0, abs(sub.v2)):
            cuts.append(make_cut(sub, x, scen.label))
            continue
        # curtailment credit can pay for the slack; cut on the slack alone
        feas = solve_subproblem(build_subproblem(net, x, scen, config, adjust_cost=False))
        if feas is None or feas.v2 <= 1e-9:
            return RPOPResult(x, log, cuts, False, "cut does not separate the master solution")
        cuts.append(make_cut(feas, x, scen.label, feasibility=True))
    return RPOPResult(x, log, cuts, False, f"iteration cap {config.max_iter} reached")


# ---------------------------------------------------------------------------
# checks

def verify_topology(net: Network, x) -> list[dict]:
    """Independent graph checks of a first-stage decision.

    Returns a list of violations, each a mapping with ``kind`` among
    ``energization``, ``cycle``, ``source-count``, ``inactive-source``,
    ``phase-coverage``, ``phase-coverage-multihop`` (uncovered phases
    reachable only through chains longer than two switches) and
    ``phase-path`` (a block phase with no closed path on that phase back
    to a source connected on it).
    """
    import networkx as nx

    out = []
    for cc in connected_components(net, x.z_sw):
        states = {x.z_bl[b] for b in cc}
        gfm = [g.id for g in net.generators if not g.substation and x.z_inv.get(g.id)
               and net.block_of_bus[g.bus] in cc]
        if len(states) > 1:
            out.append({"kind": "energization", "component": list(cc)})
            continue
        if not states.pop():
            if gfm:
                out.append({"kind": "inactive-source", "component": list(cc), "generators": gfm})
            continue
        g = nx.MultiGraph()
        g.add_nodes_from(cc)
        for sw in net.switches:
            if x.z_sw[sw.id]:
                a, b = net.switch_blocks(sw)
                if a in cc:
                    g.add_edge(a, b, key=sw.id)
        if g.number_of_edges() != len(cc) - 1 or not nx.is_connected(g):
            out.append({"kind": "cycle", "component": list(cc)})
            continue
        subs = [s.id for s in net.generators if s.substation and net.block_of_bus[s.bus] in cc]
        sources = subs + gfm
        if len(sources) != 1:
            out.append({"kind": "source-count", "component": list(cc), "sources": sources})
            continue
        src = net.gen_by_id[sources[0]]
        home = net.block_of_bus[src.bus]
        cut_off = []
        for ph in src.phases:
            gp = nx.Graph()
            gp.add_nodes_from(cc)
            gp.add_edges_from(net.switch_blocks(sw) for sw in net.switches
                              if x.z_sw[sw.id] and ph in sw.phases and net.block_of_bus[sw.f_bus] in cc)
            reach = nx.node_connected_component(gp, home)
            cut_off += [(b, ph) for b in cc if ph in net.block_by_id[b].phase_union and b not in reach]
        if cut_off:
            out.append({"kind": "phase-path", "component": list(cc), "source": src.id,
                        "unreached": sorted(cut_off)})
        union = {p for b in cc for p in net.block_by_id[b].phase_union}
        missing = union - set(src.phases)
        if missing:
            dist = nx.single_source_shortest_path_length(g, home)
            far = [b for b in cc if set(net.block_by_id[b].phase_union) & missing]
            kind = "phase-coverage-multihop" if all(dist[b] > 2 for b in far) else "phase-coverage"
            out.append({"kind": kind, "component": list(cc), "source": src.id,
                        "missing": sorted(missing)})
    return out


def _check_chunk(args):
    net, x, scens, fidelity, config = args
    warm: dict = {}
    kw = {"config": config, "warm": warm} if fidelity == "linear" else {}
    return [check_feasibility(net, x, s, fidelity, eps=config.eps, **kw).feasible for s in scens]


def robust_feasibility_sample(net: Network, x: MasterSolution, level: float, clustered: bool,
                              n_samples: int, seed: int, fidelity: str = "linear",
                              config: RPOPConfig = RPOPConfig()) -> tuple[float, int]:
    """Share of random load samples that ``x`` serves; returns ``(fraction, feasible)``."""
    rng = np.random.default_rng(seed)
    scens = [sample_scenario(net, level, clustered, rng=rng) for _ in range(n_samples)]
    if config.jobs > 1 and len(scens) > 1:
        size = -(-len(scens) // config.jobs)
        chunks = [(net, x, scens[i:i + size], fidelity, config) for i in range(0, len(scens), size)]
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            ok = [v for part in pool.map(_check_chunk, chunks) for v in part]
    else:
        ok = _check_chunk((net, x, scens, fidelity, config))
    good = int(sum(ok))
    return (good / n_samples if n_samples else 1.0), good


# ---------------------------------------------------------------------------
# result documents

def solution_to_dict(x: MasterSolution) -> dict:
    return {
        "switches": dict(sorted(x.z_sw.items())),
        "inverters": {g: ("grid-forming" if v else "grid-following") for g, v in sorted(x.z_inv.items())},
        "blocks": dict(sorted(x.z_bl.items())),
        "setpoints": {f"{g}.{ph}": [x.p[(g, ph)], x.q[(g, ph)]] for g, ph in sorted(x.p)},
        "theta": x.theta,
        "objective": x.objective,
        "cost": x.cost,
    }


def solution_from_dict(doc: dict, net: Network, representative: str = "all-max") -> MasterSolution:
    p, q = {}, {}
    for key, (pv, qv) in doc["setpoints"].items():
        g, ph = key.rsplit(".", 1)
        p[(g, ph)] = float(pv)
        q[(g, ph)] = float(qv)
    return MasterSolution(
        z_sw={k: int(v) for k, v in doc["switches"].items()},
        z_inv={k: int(v == "grid-forming") for k, v in doc["inverters"].items()},
        z_bl={k: int(v) for k, v in doc["blocks"].items()},
        p=p, q=q, theta=float(doc["theta"]), objective=float(doc["objective"]),
        cost=float(doc["cost"]), basis=representative_scenario(net, representative))


def result_document(result: RPOPResult, net: Network, config: RPOPConfig, seed: int | None = None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "config_digest": config.digest(),
        "seed": seed,
        "network": net.name,
        "uncertainty_level": net.uncertainty_level,
        "contingencies": list(config.contingencies),
        "representative": config.representative,
        "converged": result.converged,
        "message": result.message,
        "iterations": result.log,
        "cuts": len(result.cuts),
        "solution": solution_to_dict(result.solution) if result.solution else None,
    }


__all__ = [
    "ContingencyError", "Cut", "MasterSolution", "RPOPConfig", "RPOPResult", "SubproblemSolution",
    "apply_contingencies", "build_master", "build_subproblem", "coloring_constraints", "cutting_plane",
    "make_cut", "phase_eligibility_constraints", "radiality_constraints", "result_document",
    "robust_feasibility_sample", "solution_from_dict", "solution_to_dict", "solve_master",
    "solve_subproblem", "verify_topology", "worst_case",
]
