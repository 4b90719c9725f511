"""Model-free real-time dispatch of the controllable generators in each component.

Every controller step dithers the set-points with distinct sinusoids, takes
one measurement on each side of the current point, forms a two-point
estimate of the regularized Lagrangian gradient per component and applies
projected primal and dual updates.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .lindistflow import PlantMeasurement, energized_components, evaluate_plant
from .netmodel import Network, ScenarioVector, nominal_scenario
from .rpop import apply_contingencies

DUAL_SIGNS = ("as-printed", "ascent")
ESTIMATORS = ("normalized", "as-printed")


@dataclass(frozen=True)
class ControllerConfig:
    epsilon: float = 0.01
    alpha: float = 0.05
    rho: float = 1e-3
    delta: float = 1e-3
    lambda_max: float = 100.0
    base_omega: float = 0.4 * math.pi
    dual_sign: str = "as-printed"
    estimator: str = "normalized"
    fidelity: str = "linear"
    noise: float = 0.0
    references: dict | None = None  # (cc id, phase) -> P reference
    v_bounds: tuple[float, float] | None = None  # overrides the bus limits

    def __post_init__(self):
        for name in ("epsilon", "alpha", "rho", "delta"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")
        if self.dual_sign not in DUAL_SIGNS:
            raise ValueError(f"dual_sign must be one of {DUAL_SIGNS}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.lambda_max <= 0:
            raise ValueError("lambda_max must be positive")


@dataclass
class ControllerState:
    s: dict  # (gen, phase, "p"|"q") -> value
    lam: list  # per component, length 2 * len(layout.nodes)
    step: int = 0


@dataclass(frozen=True)
class LoadEvent:
    step: int  # offset from the start of its period
    scope: str  # "global", "block:<id>" or "cluster:<id>"
    factor: float


@dataclass(frozen=True)
class Period:
    topology: object  # MasterSolution-like: z_sw, z_inv, z_bl, p, q
    steps: int
    load_scale: float = 1.0
    events: tuple = ()
    label: str = ""
    contingencies: tuple = ()


@dataclass(frozen=True)
class EpisodeSchedule:
    periods: tuple

    def __post_init__(self):
        if not self.periods:
            raise ValueError("schedule has no periods")
        for per in self.periods:
            if per.steps <= 0:
                raise ValueError("every period needs a positive step count")
            for ev in per.events:
                if not 0 <= ev.step < per.steps:
                    raise ValueError(f"event at step {ev.step} lies outside its period")

    @property
    def length(self):
        return sum(p.steps for p in self.periods)


@dataclass
class TrajectoryLog:
    generators: tuple  # component keys, fixed column order
    records: list = field(default_factory=list)

    def append(self, rec: dict) -> None:
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def rows(self):
        """Flat rows, one per step, component and phase."""
        for rec in self.records:
            for (cc_id, ph), val in rec["slack_p"].items():
                row = {
                    "step": rec["step"], "cc_id": cc_id, "phase": ph,
                    "slack_p": val, "reference_p": rec["reference_p"][(cc_id, ph)],
                }
                for key in self.generators:
                    row[column_name(key)] = rec["s"].get(key, 0.0)
                row["min_v"] = rec["min_v"][cc_id]
                row["max_v"] = rec["max_v"][cc_id]
                row["objective"] = rec["objective"][cc_id]
                row["load"] = rec["load"][(cc_id, ph)]
                yield row

    def columns(self):
        return (["step", "cc_id", "phase", "slack_p", "reference_p"]
                + [column_name(k) for k in self.generators]
                + ["min_v", "max_v", "objective", "load"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.columns(), lineterminator="\n")
        w.writeheader()
        for row in self.rows():
            w.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def tracking_error(self, step: int) -> dict:
        """Largest per-phase ``|P_sl - P_ref|`` of each component at ``step``."""
        rec = self.records[step]
        out: dict = {}
        for (cc_id, ph), val in rec["slack_p"].items():
            err = abs(val - rec["reference_p"][(cc_id, ph)])
            out[cc_id] = max(out.get(cc_id, 0.0), err)
        return out

    def summary(self) -> dict:
        final = self.tracking_error(len(self.records) - 1) if self.records else {}
        return {
            "steps": len(self.records),
            "max_voltage_violation": max((r["violation"] for r in self.records), default=0.0),
            "final_tracking_error": dict(sorted(final.items())),
            "topology_swaps": sum(1 for r in self.records if r["period_start"]),
        }


def column_name(key) -> str:
    g, ph, comp = key
    return f"{comp}:{g}.{ph}"


def _fmt(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# exploration

def assign_frequencies(keys, base: float = 0.4 * math.pi) -> dict:
    """Distinct dither frequencies ``base * (1 + n / N)`` in enumeration order."""
    keys = list(keys)
    n = len(keys)
    if len(set(keys)) != n:
        raise ValueError("duplicate keys")
    return {k: base * (1.0 + i / n) for i, k in enumerate(keys)}


def exploration_vector(t: int, keys, freqs: dict, epsilon: float) -> np.ndarray:
    return np.array([epsilon * math.cos(freqs[k] * t) for k in keys])


# ---------------------------------------------------------------------------
# plant interface

@dataclass(frozen=True)
class Layout:
    """Index maps for one topology: components, PQ nodes and decision entries."""

    ccs: tuple  # (blocks, slack gen id)
    cc_ids: tuple
    nodes: tuple  # (bus, phase) of energized PQ nodes
    node_cc: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    comps: tuple  # decision keys per component
    phases: tuple  # phases of each component


def build_layout(net: Network, topology, v_bounds=None) -> Layout:
    ccs = tuple(energized_components(net, topology))
    nodes, node_cc, comps, phases, cc_ids = [], [], [], [], []
    for m, (cc, slack) in enumerate(ccs):
        blocks = set(cc)
        cc_ids.append(net.block_of_bus[net.gen_by_id[slack].bus])
        slack_bus = net.gen_by_id[slack].bus
        ph_m = set()
        for bus in net.buses:
            if net.block_of_bus[bus.id] in blocks:
                ph_m.update(bus.phases)
                if bus.id != slack_bus:
                    for ph in bus.phases:
                        nodes.append((bus.id, ph))
                        node_cc.append(m)
        phases.append(tuple(sorted(ph_m)))
        keys = []
        for g in net.generators:
            if g.id != slack and not g.substation and net.block_of_bus[g.bus] in blocks:
                keys.extend((g.id, ph, c) for ph in g.phases for c in ("p", "q"))
        comps.append(tuple(keys))
    if v_bounds is None:
        vmin = np.array([net.bus_by_id[b].v_min for b, _ in nodes])
        vmax = np.array([net.bus_by_id[b].v_max for b, _ in nodes])
    else:
        vmin = np.full(len(nodes), float(v_bounds[0]))
        vmax = np.full(len(nodes), float(v_bounds[1]))
    return Layout(ccs, tuple(cc_ids), tuple(nodes), np.array(node_cc, dtype=int), vmin, vmax,
                  tuple(comps), tuple(phases))


def cc_masks(layout: Layout) -> list[np.ndarray]:
    """0/1 masks over the stacked constraint vector, one per component."""
    out = []
    for m in range(len(layout.ccs)):
        half = (layout.node_cc == m).astype(float)
        out.append(np.concatenate([half, half]))
    return out


def _injections(s: dict) -> dict:
    inj: dict = {}
    for (g, ph, comp), val in s.items():
        p, q = inj.get((g, ph), (0.0, 0.0))
        inj[(g, ph)] = (val, q) if comp == "p" else (p, val)
    return inj


def plant_measure(net: Network, topology, s: dict, scenario: ScenarioVector,
                  fidelity: str = "linear", step: int = 0) -> PlantMeasurement:
    return evaluate_plant(net, topology, _injections(s), scenario, fidelity=fidelity, step=step)


def voltage_vector(meas: PlantMeasurement, layout: Layout) -> np.ndarray:
    return np.array([meas.v[k] for k in layout.nodes])


def slack_vector(meas: PlantMeasurement, layout: Layout) -> dict:
    return {(layout.cc_ids[m], ph): meas.slack_p.get((m, ph), 0.0)
            for m in range(len(layout.ccs)) for ph in layout.phases[m]}


def constraint_g(v: np.ndarray, v_min: np.ndarray, v_max: np.ndarray) -> np.ndarray:
    """Upper-bound violations stacked over lower-bound violations."""
    return np.concatenate([v - v_max, v_min - v])


def tracking_objective(slack: dict, refs: dict, cc_id: str) -> float:
    return sum((val - refs[k]) ** 2 for k, val in slack.items() if k[0] == cc_id)


def approx_gradient(f_plus: float, f_minus: float, g_plus: np.ndarray, g_minus: np.ndarray,
                    xi: np.ndarray, lam: np.ndarray, nu: np.ndarray, epsilon: float,
                    normalized: bool = True) -> np.ndarray:
    """Two-point estimate of the Lagrangian gradient for one component.

    ``normalized`` divides by ``2 eps^2`` so the estimate averages to half
    the true gradient whatever the dither size; otherwise ``2 eps``.
    """
    if epsilon == 0:
        return np.zeros_like(xi)
    diff = (f_plus - f_minus) + float(lam @ (nu * (g_plus - g_minus)))
    scale = 2.0 * epsilon * (epsilon if normalized else 1.0)
    return xi * diff / scale


def primal_step(s: np.ndarray, grad: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                alpha: float, rho: float) -> np.ndarray:
    return np.clip((1.0 - alpha * rho) * s - alpha * grad, lo, hi)


def dual_step(lam: np.ndarray, g_mid: np.ndarray, nu: np.ndarray, config: ControllerConfig) -> np.ndarray:
    sign = -1.0 if config.dual_sign == "as-printed" else 1.0
    new = (1.0 - config.alpha * config.delta) * lam + sign * config.alpha * (nu * g_mid)
    return np.clip(new, 0.0, config.lambda_max)


# ---------------------------------------------------------------------------
# episode

def decision_box(net: Network, keys) -> tuple[np.ndarray, np.ndarray]:
    hi = []
    for g, ph, comp in keys:
        gen = net.gen_by_id[g]
        hi.append(max(0.0, gen.p_max[ph] if comp == "p" else gen.q_max[ph]))
    return np.zeros(len(hi)), np.array(hi)


def controllable_keys(net: Network) -> tuple:
    return tuple((g.id, ph, c) for g in net.generators if not g.substation
                 for ph in g.phases for c in ("p", "q"))


def _scenario(net: Network, mult: dict) -> ScenarioVector:
    base = nominal_scenario(net)
    p = {k: v * mult[k[0]] for k, v in base.p.items()}
    q = {k: v * mult[k[0]] for k, v in base.q.items()}
    return ScenarioVector(p, q, None, "episode")


def _scope_loads(net: Network, layout: Layout, scope: str) -> list[str]:
    if scope == "global":
        return [d.id for d in net.loads]
    kind, _, ident = scope.partition(":")
    if kind == "cluster":
        return [d.id for d in net.loads if d.cluster == ident]
    if kind == "block":
        for cc, _ in layout.ccs:
            if ident in cc:
                return [d.id for d in net.loads if net.block_of_bus[d.bus] in cc]
        return []
    raise ValueError(f"unknown event scope {scope!r}")


def _measure(net, topology, s, scen, config, step, rng):
    meas = plant_measure(net, topology, s, scen, config.fidelity, step)
    if config.noise and rng is not None:
        meas.v = {k: v + rng.normal(0.0, config.noise) for k, v in meas.v.items()}
        meas.slack_p = {k: v + rng.normal(0.0, config.noise) for k, v in meas.slack_p.items()}
    return meas


def controller_step(net: Network, topology, layout: Layout, state: ControllerState, scen: ScenarioVector,
                    refs: dict, config: ControllerConfig, freqs: dict, masks, rng=None, gradient=None):
    """One pass of dither, measure, estimate, primal update, dual update.

    ``gradient`` optionally replaces the estimate: it receives
    ``(m, keys, s_vector, lam_m, nu_m)`` and returns the component gradient.
    Returns the midpoint measurements ``(v, slack, ok)``.
    """
    t = state.step
    keys_all = [k for comps in layout.comps for k in comps]
    xi_all = exploration_vector(t, keys_all, freqs, config.epsilon)
    s_vec = np.array([state.s[k] for k in keys_all])
    s_plus = dict(state.s)
    s_minus = dict(state.s)
    for k, x, d in zip(keys_all, s_vec, xi_all):
        s_plus[k] = x + d
        s_minus[k] = x - d
    mp = _measure(net, topology, s_plus, scen, config, t, rng)
    mm = _measure(net, topology, s_minus, scen, config, t, rng)
    ok = mp.ok and mm.ok
    vp, vm = voltage_vector(mp, layout), voltage_vector(mm, layout)
    sp, sm = slack_vector(mp, layout), slack_vector(mm, layout)
    v_mid = 0.5 * (vp + vm)
    slack_mid = {k: 0.5 * (sp[k] + sm[k]) for k in sp}
    if not ok:
        return v_mid, slack_mid, False
    gp = constraint_g(vp, layout.v_min, layout.v_max)
    gm = constraint_g(vm, layout.v_min, layout.v_max)
    g_mid = constraint_g(v_mid, layout.v_min, layout.v_max)
    offset = 0
    new_s = dict(state.s)
    for m, keys in enumerate(layout.comps):
        n = len(keys)
        idx = slice(offset, offset + n)
        offset += n
        lam = state.lam[m]
        if n:
            if gradient is not None:
                grad = gradient(m, keys, s_vec[idx], lam, masks[m])
            else:
                cid = layout.cc_ids[m]
                grad = approx_gradient(tracking_objective(sp, refs, cid), tracking_objective(sm, refs, cid),
                                       gp, gm, xi_all[idx], lam, masks[m], config.epsilon,
                                       normalized=config.estimator == "normalized")
            lo, hi = decision_box(net, keys)
            for k, val in zip(keys, primal_step(s_vec[idx], grad, lo, hi, config.alpha, config.rho)):
                new_s[k] = float(val)
        state.lam[m] = dual_step(lam, g_mid, masks[m], config)
    state.s = new_s
    return v_mid, slack_mid, True


def initial_setpoints(net: Network, topology, layout: Layout) -> dict:
    s = {k: 0.0 for k in controllable_keys(net)}
    for keys in layout.comps:
        lo, hi = decision_box(net, keys)
        for k, a, b in zip(keys, lo, hi):
            src = topology.p if k[2] == "p" else topology.q
            s[k] = float(min(max(src.get((k[0], k[1]), 0.0), a), b))
    return s


def run_episode(net: Network, schedule: EpisodeSchedule, config: ControllerConfig = ControllerConfig(),
                seed: int = 0, gradient=None) -> TrajectoryLog:
    """Drive the controller against the plant over every period of ``schedule``."""
    rng = np.random.default_rng(seed) if config.noise else None
    keys = controllable_keys(net)
    freqs = assign_frequencies(keys, config.base_omega)
    log = TrajectoryLog(keys)
    mult = {d.id: 1.0 for d in net.loads}
    step = 0
    full = net
    for per in schedule.periods:
        topo = per.topology
        net = apply_contingencies(full, per.contingencies)[0]
        layout = build_layout(net, topo, config.v_bounds)
        masks = cc_masks(layout)
        mult = {d: per.load_scale for d in mult}
        state = ControllerState(initial_setpoints(net, topo, layout),
                                [np.zeros(2 * len(layout.nodes)) for _ in layout.ccs], step)
        scen = _scenario(net, mult)
        if config.references is not None:
            refs = dict(config.references)
        else:
            refs = slack_vector(plant_measure(net, topo, state.s, scen, config.fidelity, step), layout)
        events = {}
        for ev in per.events:
            events.setdefault(ev.step, []).append(ev)
        for k in range(per.steps):
            for ev in events.get(k, ()):
                for d in _scope_loads(net, layout, ev.scope):
                    mult[d] *= ev.factor
            scen = _scenario(net, mult)
            state.step = step
            s_applied = dict(state.s)
            v_mid, slack_mid, ok = controller_step(net, topo, layout, state, scen, refs, config,
                                                   freqs, masks, rng, gradient)
            viol = float(np.max(np.maximum(constraint_g(v_mid, layout.v_min, layout.v_max), 0.0),
                                initial=0.0))
            load = {}
            for m, (cc, _) in enumerate(layout.ccs):
                for ph in layout.phases[m]:
                    load[(layout.cc_ids[m], ph)] = sum(
                        scen.p[(d.id, ph)] for d in net.loads
                        if net.block_of_bus[d.bus] in cc and ph in d.phases)
            min_v, max_v, obj = {}, {}, {}
            for m, cid in enumerate(layout.cc_ids):
                sel = v_mid[layout.node_cc == m]
                min_v[cid] = float(sel.min()) if sel.size else math.nan
                max_v[cid] = float(sel.max()) if sel.size else math.nan
                obj[cid] = tracking_objective(slack_mid, refs, cid)
            log.append({
                "step": step, "period": per.label, "period_start": k == 0, "ok": ok,
                "s": s_applied, "lambda_norm": {cid: float(np.linalg.norm(state.lam[m]))
                                                for m, cid in enumerate(layout.cc_ids)},
                "slack_p": slack_mid, "reference_p": refs, "min_v": min_v, "max_v": max_v,
                "objective": obj, "violation": viol, "load": load,
            })
            step += 1
    return log


def schedule_from_dict(doc: dict, net: Network, topologies: dict) -> EpisodeSchedule:
    """Build a schedule; ``topologies`` maps period topology names to solutions."""
    periods = []
    for i, raw in enumerate(doc.get("periods", ())):
        name = raw.get("topology", "default")
        if name not in topologies:
            raise ValueError(f"period {i}: unknown topology {name!r}")
        events = tuple(LoadEvent(int(e["step"]), str(e.get("scope", "global")), float(e["factor"]))
                       for e in raw.get("events", ()))
        periods.append(Period(topologies[name], int(raw["steps"]), float(raw.get("load_scale", 1.0)),
                              events, str(raw.get("label", f"T{i + 1}")),
                              tuple(raw.get("contingencies", ()))))
    return EpisodeSchedule(tuple(periods))


def with_overrides(config: ControllerConfig, **kw) -> ControllerConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
