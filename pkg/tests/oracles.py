"""Independent reference computations used by the test suite.

Nothing here calls the master problem, the cutting-plane loop or the
internal simplex. Topology validity is checked directly on the block
graph with networkx and every LP goes to HiGHS through scipy.
"""

from __future__ import annotations

import itertools
import math

import networkx as nx
import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from dnmg.lindistflow import Binding, emit_flow_constraints
from dnmg.netmodel import PHASES, ScenarioVector
from dnmg.optcore import LE, Model


# ---------------------------------------------------------------------------
# topology enumeration

def _eligible(net, blk):
    union = set(blk.phase_union)
    return [g for g in net.gens_in_block(blk.id) if not g.substation and union <= set(g.phases)]


def _lower(net, bid):
    here = net.block_by_id[bid].phase_max
    out = []
    for sw in net.switches:
        a, b = net.switch_blocks(sw)
        if bid in (a, b):
            other = b if a == bid else a
            if net.block_by_id[other].phase_max > here:
                out.append((sw.id, other))
    return out


def _hops_ok(net, gen_block, closed):
    low = {s for s, _ in _lower(net, gen_block)}
    if low & closed:
        return False
    for sw in net.switches:
        a, b = net.switch_blocks(sw)
        if gen_block not in (a, b) or sw.id in low or sw.id not in closed:
            continue
        mid = b if a == gen_block else a
        for s2, far in _lower(net, mid):
            if s2 != sw.id and far != gen_block and s2 in closed:
                return False
    return True


def _phase_paths_ok(net, cc, closed, src_block, src_phases):
    for ph in PHASES:
        g = nx.Graph()
        g.add_nodes_from(cc)
        for sw in net.switches:
            if sw.id in closed and ph in sw.phases:
                g.add_edge(*net.switch_blocks(sw))
        need = [b for b in cc if ph in net.block_by_id[b].phase_union]
        if not need:
            continue
        if ph not in src_phases:
            return False
        if any(not nx.has_path(g, src_block, b) for b in need):
            return False
    return True


def component_sources(net, cc, closed):
    """Admissible voltage sources ``(gen, block)`` for one energized component."""
    subs = [(g.id, net.block_of_bus[g.bus]) for g in net.generators
            if g.substation and net.block_of_bus[g.bus] in cc]
    if len(subs) > 1:
        return []
    if subs:
        g = net.gen_by_id[subs[0][0]]
        return subs if _phase_paths_ok(net, cc, closed, subs[0][1], g.phases) else []
    out = []
    for bid in sorted(cc):
        for g in _eligible(net, net.block_by_id[bid]):
            if _hops_ok(net, bid, closed) and _phase_paths_ok(net, cc, closed, bid, g.phases):
                out.append((g.id, bid))
    return out


def valid_topologies(net, dead=(), opened=()):
    """Every ``(z_bl, z_sw, sources)`` with radial, singly sourced components.

    ``sources`` lists, per component, the admissible voltage sources; any
    one choice per component gives a valid grid-forming assignment.
    """
    blocks = [b.id for b in net.blocks]
    switches = [s.id for s in net.switches]
    out = []
    for zb in itertools.product((0, 1), repeat=len(blocks)):
        z_bl = dict(zip(blocks, zb))
        if any(z_bl[b] for b in dead):
            continue
        on = {b for b in blocks if z_bl[b]}
        cand = [s for s in switches if s not in opened and set(net.switch_blocks(net.switch_by_id[s])) <= on]
        for bits in itertools.product((0, 1), repeat=len(cand)):
            closed = {s for s, v in zip(cand, bits) if v}
            g = nx.MultiGraph()
            g.add_nodes_from(on)
            for s in closed:
                g.add_edge(*net.switch_blocks(net.switch_by_id[s]))
            if on and not nx.is_forest(g):
                continue
            sources = []
            for cc in nx.connected_components(g):
                src = component_sources(net, cc, closed)
                if not src:
                    break
                sources.append((frozenset(cc), src))
            else:
                z_sw = {s: int(s in closed) for s in switches}
                out.append((z_bl, z_sw, sources))
    return out


# ---------------------------------------------------------------------------
# extensive-form robust LP

def extreme_corners(net):
    """Cluster-wise min/max corners of the load box, built from the bounds."""
    clusters = sorted(net.clusters)
    out = []
    for bits in itertools.product((0, 1), repeat=len(clusters)):
        hi = dict(zip(clusters, bits))
        p = {(d.id, ph): d.p_bounds[ph][hi[d.cluster]] for d in net.loads for ph in d.phases}
        q = {(d.id, ph): d.q_bounds[ph][hi[d.cluster]] for d in net.loads for ph in d.phases}
        out.append(ScenarioVector(p, q, bits, str(bits)))
    return out


def _handles(model, net):
    h = {}
    for b in net.blocks:
        h[("z_bl", b.id)] = model.add_var(f"z_bl[{b.id}]", 0.0, 1.0)
    for s in net.switches:
        h[("z_sw", s.id)] = model.add_var(f"z_sw[{s.id}]", 0.0, 1.0)
    for g in net.generators:
        for ph in g.phases:
            h[("p", g.id, ph)] = model.add_var(f"p[{g.id}.{ph}]", -math.inf, math.inf)
            h[("q", g.id, ph)] = model.add_var(f"q[{g.id}.{ph}]", -math.inf, math.inf)
    return h


def _block(net, scenario, recourse, K):
    """One scenario's rows; the first-stage handles come first and are shared."""
    model = Model()
    h = _handles(model, net)
    extra, o = {}, {}
    if recourse:
        for g in net.generators:
            for ph in g.phases:
                for comp in ("p", "q"):
                    op = model.add_var(f"o+{comp}[{g.id}.{ph}]", 0.0, g.ramp_limit[ph],
                                       obj=g.cost_linear if comp == "p" else 0.0)
                    om = model.add_var(f"o-{comp}[{g.id}.{ph}]", 0.0, g.ramp_limit[ph],
                                       obj=-g.cost_linear if comp == "p" else 0.0)
                    o[(comp, g.id, ph)] = (op, om)
                    t = extra.setdefault((comp, g.bus, ph), {})
                    t[op] = t.get(op, 0.0) - 1.0
                    t[om] = t.get(om, 0.0) + 1.0
    binding = Binding(model, variables=h)
    emit_flow_constraints(binding, net, scenario, K, extra_balance=extra, gen_limits=not recourse)
    for (comp, gid, ph), (op, om) in o.items():
        g = net.gen_by_id[gid]
        lo, hi = (g.p_min[ph], g.p_max[ph]) if comp == "p" else (g.q_min[ph], g.q_max[ph])
        s, z = h[(comp, gid, ph)], h[("z_bl", net.block_of_bus[g.bus])]
        model.add_row({op: 1.0, s: 1.0, z: -hi}, LE, 0.0, f"oup[{comp}.{gid}.{ph}]")
        model.add_row({om: 1.0, s: -1.0, z: lo}, LE, 0.0, f"odn[{comp}.{gid}.{ph}]")
    return model, len(h)


def extensive_lp(net, z_bl, z_sw, scenarios, representative, K=12):
    """Cheapest set-points robust over ``scenarios`` for fixed integer states.

    Returns ``c1.p + theta`` with ``theta >= max(0, recourse cost)`` over the
    scenarios, or ``None`` when no set-point survives every scenario.
    """
    parts = [_block(net, representative, False, K)] + [_block(net, s, True, K) for s in scenarios]
    k = parts[0][1]
    names = parts[0][0].var_names[:k]
    rows, cols, vals, lo_b, hi_b = [], [], [], [], []
    lb = list(parts[0][0].lb[:k])
    ub = list(parts[0][0].ub[:k])
    for i, nm in enumerate(names):
        if nm.startswith("z_bl["):
            lb[i] = ub[i] = z_bl[nm[5:-1]]
        elif nm.startswith("z_sw["):
            lb[i] = ub[i] = z_sw[nm[5:-1]]
    c = [0.0] * k
    for g in net.generators:
        for ph in g.phases:
            c[names.index(f"p[{g.id}.{ph}]")] = g.cost_linear
    theta = k
    lb.append(0.0)
    ub.append(math.inf)
    c.append(1.0)
    nvar = k + 1
    nrow = 0
    for model, _ in parts:
        off = nvar - k
        local = model.num_vars - k
        lb += model.lb[k:]
        ub += model.ub[k:]
        c += [0.0] * local
        for r in model.rows:
            for j, a in r.coeffs.items():
                rows.append(nrow)
                cols.append(j if j < k else j + off)
                vals.append(a if r.sense != ">=" else -a)
            rhs = r.rhs if r.sense != ">=" else -r.rhs
            lo_b.append(rhs if r.sense == "==" else -math.inf)
            hi_b.append(rhs)
            nrow += 1
        if model is not parts[0][0]:
            # theta bounds this scenario's recourse cost
            for j, a in model.obj.items():
                rows.append(nrow)
                cols.append(j + off)
                vals.append(a)
            rows.append(nrow)
            cols.append(theta)
            vals.append(-1.0)
            lo_b.append(-math.inf)
            hi_b.append(0.0)
            nrow += 1
        nvar += local
    A = sp.csr_matrix((vals, (rows, cols)), shape=(nrow, nvar))
    lo_b, hi_b = np.array(lo_b), np.array(hi_b)
    eq = lo_b == hi_b
    res = linprog(np.array(c), A_ub=A[~eq], b_ub=hi_b[~eq], A_eq=A[eq], b_eq=hi_b[eq],
                  bounds=list(zip(lb, ub)), method="highs")
    if res.status == 2:
        return None
    if res.status != 0:
        raise RuntimeError(f"HiGHS status {res.status}: {res.message}")
    return float(res.fun)


def brute_force(net, scenarios, representative, beta, K=12):
    """Exhaustive optimum ``(objective, z_bl, z_sw)`` of the robust problem."""
    best = (math.inf, None, None)
    cands = []
    for z_bl, z_sw, _ in valid_topologies(net):
        fixed = sum(beta[b] * (1 - v) for b, v in z_bl.items())
        fixed += sum(g.cost_fixed * z_bl[net.block_of_bus[g.bus]] for g in net.generators)
        cands.append((fixed, sorted(z_bl.items()), sorted(z_sw.items())))
    cands.sort()
    for fixed, zb, zs in cands:
        if fixed + _floor(net) >= best[0]:
            break
        val = extensive_lp(net, dict(zb), dict(zs), scenarios, representative, K)
        if val is not None and fixed + val < best[0]:
            best = (fixed + val, dict(zb), dict(zs))
    return best


def _floor(net):
    """Lower bound on ``c1.p + theta`` from the set-point bounds alone."""
    return sum(g.cost_linear * min(0.0, g.p_min[ph]) for g in net.generators for ph in g.phases)


# ---------------------------------------------------------------------------
# sampling references

def clustered_feasible_fraction(feasible, n_clusters, level, grid=41):
    """Share of the cluster factor cube ``[-level, level]^k`` where ``feasible`` holds.

    Midpoint rule on a regular grid; ``feasible`` takes a dict of factors
    keyed by cluster index order.
    """
    pts = (np.arange(grid) + 0.5) / grid * 2 * level - level
    hits = 0
    total = 0
    for u in itertools.product(pts, repeat=n_clusters):
        hits += bool(feasible(u))
        total += 1
    return hits / total


def binomial_sigma(p, n):
    return math.sqrt(max(p * (1 - p), 0.0) / n) if n else 0.0


def recourse_feasible(net, x, scenario, K=12):
    """Whether fixed first-stage decisions ``x`` serve ``scenario`` with zero slack.

    Same feasible set as the second stage (ramp-bounded adjustments, eager
    polygons), posed as a pure feasibility LP for HiGHS.
    """
    model, k = _block(net, scenario, True, K)
    vals = x.handle_values()
    lb, ub = list(model.lb), list(model.ub)
    for i, nm in enumerate(model.var_names[:k]):
        if nm.startswith("z_bl["):
            v = vals[("z_bl", nm[5:-1])]
        elif nm.startswith("z_sw["):
            v = vals[("z_sw", nm[5:-1])]
        else:
            comp, rest = nm[0], nm[2:-1]
            gid, ph = rest.rsplit(".", 1)
            v = vals[(comp, gid, ph)]
        lb[i] = ub[i] = v
    A, b, senses, _, _, _ = model.arrays()
    le = senses < 0
    ge = senses > 0
    eq = senses == 0
    res = linprog(np.zeros(model.num_vars), A_ub=np.vstack([A[le], -A[ge]]),
                  b_ub=np.concatenate([b[le], -b[ge]]), A_eq=A[eq], b_eq=b[eq],
                  bounds=list(zip(lb, ub)), method="highs")
    if res.status not in (0, 2):
        raise RuntimeError(f"HiGHS status {res.status}: {res.message}")
    return res.status == 0


# ---------------------------------------------------------------------------
# textbook tableau simplex

def tableau_simplex(c, A, b):
    """``min c.x`` over ``A x <= b, x >= 0`` with ``b >= 0``; Bland's rule.

    Returns ``(objective, x)`` or ``None`` when unbounded.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    if np.any(b < 0):
        raise ValueError("needs b >= 0 so the slack basis is feasible")
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = c
    basis = list(range(n, n + m))
    while True:
        enter = next((j for j in range(n + m) if T[m, j] < -1e-12), None)
        if enter is None:
            break
        col = T[:m, enter]
        ratios = [(T[i, -1] / col[i], basis[i], i) for i in range(m) if col[i] > 1e-12]
        if not ratios:
            return None
        _, _, r = min(ratios)
        T[r] /= T[r, enter]
        for i in range(m + 1):
            if i != r and T[i, enter]:
                T[i] -= T[i, enter] * T[r]
        basis[r] = enter
    x = np.zeros(n + m)
    for i, j in enumerate(basis):
        x[j] = T[i, -1]
    return -T[m, -1], x[:n]


# ---------------------------------------------------------------------------
# power-flow references

def two_bus_network(line, p=0.0, q=0.0):
    """``line`` between a source bus and a bus with load ``(p, q)`` per phase
    and a free injection used for perturbations."""
    from dnmg.netmodel import network_from_dict

    ph = list(line.phases)
    z = [[[float(line.r[i, j]), float(line.x[i, j])] for j in range(3)] for i in range(3)]
    doc = {
        "name": "two-bus", "base_power_va": 1e6, "base_voltage_v": 1.0,
        "buses": [{"id": "u", "phases": ph}, {"id": "v", "phases": ph}],
        "lines": [{"id": "l", "from": "u", "to": "v", "phases": ph, "impedance": z, "flow_limit": 10.0}],
        "generators": [
            {"id": "src", "bus": "u", "phases": ph, "p_max": 10, "q_min": -10, "q_max": 10, "substation": True},
            {"id": "inj", "bus": "v", "phases": ph, "p_min": -10, "p_max": 10, "q_min": -10, "q_max": 10},
        ],
        "loads": [{"id": "d", "bus": "v", "phases": ph, "p_nominal": p, "q_nominal": q, "cluster": "A"}],
        "clusters": ["A"],
    }
    return network_from_dict(doc)


def ac_sensitivity(line, p=0.0, q=0.0, h=1e-6):
    """Central differences of the receiving-end ``|V|^2`` in the injections.

    Returns 3x3 ``(dW/dP, dW/dQ)`` on the line's phases. A unit injection
    lowers the line flow by one unit, so these approximate ``M_P``, ``M_Q``.
    """
    from dnmg.lindistflow import solve_ac_fixed_point
    from dnmg.netmodel import nominal_scenario

    net = two_bus_network(line, p, q)
    scen = nominal_scenario(net)
    ph = line.phases

    def w(inj):
        res = solve_ac_fixed_point(net, ("B1",), {}, inj, scen, tol=1e-13, max_iter=500)
        assert res.converged
        return np.array([abs(res.V[("v", x)]) ** 2 for x in ph])

    dP, dQ = np.zeros((3, 3)), np.zeros((3, 3))
    for j in ph:
        for comp, M in ((0, dP), (1, dQ)):
            plus = {("inj", x): (0.0, 0.0) for x in ph}
            minus = dict(plus)
            step = (h, 0.0) if comp == 0 else (0.0, h)
            plus[("inj", j)] = step
            minus[("inj", j)] = (-step[0], -step[1])
            col = (w(plus) - w(minus)) / (2 * h)
            for i, x in enumerate(ph):
                M[PHASES.index(x), PHASES.index(j)] = col[i]
    return dP, dQ


def single_phase_receiving_w(w0, r, x, p, q):
    """Closed-form ``|V2|^2`` of a lossy single-phase line feeding load ``p + jq``.

    From ``w2^2 - (w0 - 2(rp + xq)) w2 + (r^2 + x^2)(p^2 + q^2) = 0``, high root.
    """
    b = w0 - 2.0 * (r * p + x * q)
    return 0.5 * (b + math.sqrt(b * b - 4.0 * (r * r + x * x) * (p * p + q * q)))
