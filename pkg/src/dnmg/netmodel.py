"""Multi-phase network description, validation and block analytics."""

from __future__ import annotations

import copyreg
import json
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

import numpy as np

PHASES = ("a", "b", "c")
PHASE_INDEX = {p: i for i, p in enumerate(PHASES)}
DEFAULT_SCENARIO_CAP = 12



def _proxy(d):
    return MappingProxyType(d)


# worker processes receive networks and scenarios by pickle
copyreg.pickle(MappingProxyType, lambda m: (_proxy, (dict(m),)))


class NetworkError(ValueError):
    """Base class for network input problems."""


class SchemaError(NetworkError):
    pass


class DanglingReferenceError(NetworkError):
    pass


class ConnectivityError(NetworkError):
    pass


class ScenarioCapError(NetworkError):
    pass


@dataclass(frozen=True)
class Bus:
    id: str
    phases: tuple[str, ...]
    v_min: float = 0.9
    v_max: float = 1.1
    shunt: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))
    voltage_level: str = ""


@dataclass(frozen=True)
class LineSegment:
    id: str
    f_bus: str
    t_bus: str
    phases: tuple[str, ...]
    r: np.ndarray
    x: np.ndarray
    flow_limit: MappingProxyType


@dataclass(frozen=True)
class Switch:
    id: str
    f_bus: str
    t_bus: str
    phases: tuple[str, ...]
    flow_limit: MappingProxyType


@dataclass(frozen=True)
class Transformer:
    id: str
    kind: str
    f_bus: str
    t_bus: str
    phases: tuple[str, ...]
    tap_ratio: float
    flow_limit: MappingProxyType


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    phases: tuple[str, ...]
    p_min: MappingProxyType
    p_max: MappingProxyType
    q_min: MappingProxyType
    q_max: MappingProxyType
    cost_linear: float = 0.0
    cost_fixed: float = 0.0
    ramp_limit: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))
    substation: bool = False


@dataclass(frozen=True)
class LoadPoint:
    id: str
    bus: str
    phases: tuple[str, ...]
    p_nominal: MappingProxyType
    q_nominal: MappingProxyType
    p_bounds: MappingProxyType
    q_bounds: MappingProxyType
    cluster: str
    priority: float = 1.0


@dataclass(frozen=True)
class Block:
    id: str
    index: int
    buses: tuple[str, ...]
    phase_max: int
    phase_union: tuple[str, ...]
    priority: float


@dataclass(frozen=True)
class ScenarioVector:
    """Realized active/reactive demand for every load-phase."""

    p: MappingProxyType  # (load id, phase) -> value
    q: MappingProxyType
    indicators: tuple[int, ...] | None = None
    label: str = ""

    def key(self):
        return tuple(sorted(self.p.items())), tuple(sorted(self.q.items()))


def _freeze(d):
    return MappingProxyType(dict(d))


def _per_phase(value, phases, what):
    if value is None:
        raise SchemaError(f"{what}: missing value")
    if isinstance(value, dict):
        missing = [p for p in phases if p not in value]
        if missing:
            raise SchemaError(f"{what}: missing phases {missing}")
        return {p: float(value[p]) for p in phases}
    return {p: float(value) for p in phases}


def _phases(raw, what):
    if not raw or not isinstance(raw, (list, tuple)):
        raise SchemaError(f"{what}: phases must be a nonempty list")
    bad = [p for p in raw if p not in PHASE_INDEX]
    if bad:
        raise SchemaError(f"{what}: unknown phases {bad}")
    if len(set(raw)) != len(raw):
        raise SchemaError(f"{what}: repeated phase")
    return tuple(sorted(raw, key=PHASE_INDEX.__getitem__))


def _require(obj, key, what):
    if key not in obj:
        raise SchemaError(f"{what}: missing field {key!r}")
    return obj[key]


class Network:
    """Immutable grid description with cached block analytics."""

    def __init__(self, *, name, buses, lines, switches, transformers, generators, loads,
                 clusters, base_power, base_voltage, uncertainty_level=0.0):
        self.name = name
        self.buses = tuple(buses)
        self.lines = tuple(lines)
        self.switches = tuple(switches)
        self.transformers = tuple(transformers)
        self.generators = tuple(generators)
        self.loads = tuple(loads)
        self.clusters = tuple(clusters)
        self.base_power = float(base_power)
        self.base_voltage = MappingProxyType(dict(base_voltage))
        self.uncertainty_level = float(uncertainty_level)
        self.bus_by_id = MappingProxyType({b.id: b for b in self.buses})
        self.bus_index = MappingProxyType({b.id: i for i, b in enumerate(self.buses)})
        self.gen_by_id = MappingProxyType({g.id: g for g in self.generators})
        self.switch_by_id = MappingProxyType({s.id: s for s in self.switches})
        self._validate()
        self.blocks = tuple(compute_blocks(self))
        self.block_of_bus = MappingProxyType({b: blk.id for blk in self.blocks for b in blk.buses})
        self.block_by_id = MappingProxyType({blk.id: blk for blk in self.blocks})
        self._validate_clusters()

    # -- helpers ------------------------------------------------------------
    def branches(self):
        """All non-switch branches as ``(kind, element)``."""
        return [("line", ln) for ln in self.lines] + [("xfmr", t) for t in self.transformers]

    def gens_in_block(self, block_id):
        return [g for g in self.generators if self.block_of_bus[g.bus] == block_id]

    def loads_in_block(self, block_id):
        return [d for d in self.loads if self.block_of_bus[d.bus] == block_id]

    def switch_blocks(self, sw):
        return self.block_of_bus[sw.f_bus], self.block_of_bus[sw.t_bus]

    def substation_blocks(self):
        return sorted({self.block_of_bus[g.bus] for g in self.generators if g.substation},
                      key=lambda b: self.block_by_id[b].index)

    def nodes(self):
        """Ordered ``(bus, phase)`` pairs."""
        return [(b.id, p) for b in self.buses for p in b.phases]

    # -- validation ---------------------------------------------------------
    def _validate(self):
        for cat, items in (("bus", self.buses), ("line", self.lines), ("switch", self.switches),
                           ("transformer", self.transformers), ("generator", self.generators),
                           ("load", self.loads)):
            ids = [it.id for it in items]
            if len(ids) != len(set(ids)):
                dup = sorted({i for i in ids if ids.count(i) > 1})
                raise SchemaError(f"duplicate {cat} ids: {dup}")
        for b in self.buses:
            if not 0 < b.v_min < b.v_max:
                raise SchemaError(f"bus {b.id}: need 0 < v_min < v_max")
        for kind, items in (("line", self.lines), ("switch", self.switches),
                            ("transformer", self.transformers)):
            for e in items:
                for end in (e.f_bus, e.t_bus):
                    if end not in self.bus_by_id:
                        raise DanglingReferenceError(f"{kind} {e.id}: unknown bus {end!r}")
                    if not set(e.phases) <= set(self.bus_by_id[end].phases):
                        raise SchemaError(f"{kind} {e.id}: phases {e.phases} not present at bus {end}")
                if e.f_bus == e.t_bus:
                    raise SchemaError(f"{kind} {e.id}: both ends at bus {e.f_bus}")
                for p, lim in e.flow_limit.items():
                    if lim <= 0:
                        raise SchemaError(f"{kind} {e.id}: flow limit must be positive")
        for ln in self.lines:
            absent = [PHASE_INDEX[p] for p in PHASES if p not in ln.phases]
            for k in absent:
                if np.any(ln.r[k, :] != 0) or np.any(ln.r[:, k] != 0) or \
                        np.any(ln.x[k, :] != 0) or np.any(ln.x[:, k] != 0):
                    raise SchemaError(f"line {ln.id}: impedance on absent phase")
            if np.any(np.diag(ln.r) < 0):
                raise SchemaError(f"line {ln.id}: negative self resistance")
        for t in self.transformers:
            if t.tap_ratio <= 0:
                raise SchemaError(f"transformer {t.id}: tap_ratio must be positive")
            if t.kind not in ("wye", "delta"):
                raise SchemaError(f"transformer {t.id}: kind must be wye or delta")
            if t.kind == "delta" and len(t.phases) != 3:
                raise SchemaError(f"transformer {t.id}: delta requires three phases")
        for g in self.generators:
            if g.bus not in self.bus_by_id:
                raise DanglingReferenceError(f"generator {g.id}: unknown bus {g.bus!r}")
            if not set(g.phases) <= set(self.bus_by_id[g.bus].phases):
                raise SchemaError(f"generator {g.id}: phases not present at bus {g.bus}")
            for p in g.phases:
                if g.p_min[p] > g.p_max[p] or g.q_min[p] > g.q_max[p]:
                    raise SchemaError(f"generator {g.id}: lower bound above upper bound")
                if g.ramp_limit[p] < 0:
                    raise SchemaError(f"generator {g.id}: negative ramp limit")
        cluster_ids = set(self.clusters)
        for d in self.loads:
            if d.bus not in self.bus_by_id:
                raise DanglingReferenceError(f"load {d.id}: unknown bus {d.bus!r}")
            if not set(d.phases) <= set(self.bus_by_id[d.bus].phases):
                raise SchemaError(f"load {d.id}: phases not present at bus {d.bus}")
            if d.cluster not in cluster_ids:
                raise DanglingReferenceError(f"load {d.id}: unknown cluster {d.cluster!r}")
            for p in d.phases:
                lo, hi = d.p_bounds[p]
                if not lo - 1e-12 <= d.p_nominal[p] <= hi + 1e-12:
                    raise SchemaError(f"load {d.id}: nominal p outside bounds")
                lo, hi = d.q_bounds[p]
                if not lo - 1e-12 <= d.q_nominal[p] <= hi + 1e-12:
                    raise SchemaError(f"load {d.id}: nominal q outside bounds")
        # connectivity with every switch closed
        parent = list(range(len(self.buses)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for e in (*self.lines, *self.switches, *self.transformers):
            a, b = find(self.bus_index[e.f_bus]), find(self.bus_index[e.t_bus])
            if a != b:
                parent[max(a, b)] = min(a, b)
        roots = {find(i) for i in range(len(self.buses))}
        if len(roots) > 1:
            raise ConnectivityError(
                f"network is disconnected with all switches closed ({len(roots)} components)")

    def _validate_clusters(self):
        for blk in self.blocks:
            cl = {d.cluster for d in self.loads_in_block(blk.id)}
            if len(cl) > 1:
                raise SchemaError(f"block {blk.id}: loads span several clusters {sorted(cl)}")
        for sw in self.switches:
            a, b = self.switch_blocks(sw)
            if a == b:
                raise SchemaError(f"switch {sw.id}: both ends inside block {a}")


# ---------------------------------------------------------------------------
# loading

def _flow_limit(raw, phases, what, default=None):
    val = raw if raw is not None else default
    if val is None:
        raise SchemaError(f"{what}: missing field 'flow_limit'")
    return _freeze(_per_phase(val, phases, what + " flow_limit"))


def _impedance(raw, phases, what):
    arr = np.asarray(raw, dtype=float)
    if arr.shape != (3, 3, 2):
        raise SchemaError(f"{what}: impedance must be a 3x3 array of [r, x]")
    r = arr[:, :, 0].copy()
    x = arr[:, :, 1].copy()
    r.setflags(write=False)
    x.setflags(write=False)
    return r, x


def network_from_dict(doc: dict, uncertainty: float | None = None) -> Network:
    """Build and validate a :class:`Network` from a parsed document.

    ``uncertainty`` overrides the document's ``uncertainty_level`` for loads
    that do not declare explicit bounds.
    """
    if not isinstance(doc, dict):
        raise SchemaError("network document must be a mapping")
    for key in ("buses", "lines", "generators", "loads", "clusters", "base_power_va", "base_voltage_v"):
        _require(doc, key, "network")
    level = float(doc.get("uncertainty_level", 0.0) if uncertainty is None else uncertainty)
    if level < 0:
        raise SchemaError("uncertainty level must be non-negative")
    default_shed = float(doc.get("shed_cost", 10.0))

    buses = []
    for raw in doc["buses"]:
        bid = str(_require(raw, "id", "bus"))
        ph = _phases(_require(raw, "phases", f"bus {bid}"), f"bus {bid}")
        shunt = {}
        for p, gb in (raw.get("shunt") or {}).items():
            if p not in ph:
                raise SchemaError(f"bus {bid}: shunt on absent phase {p}")
            shunt[p] = (float(gb[0]), float(gb[1]))
        buses.append(Bus(bid, ph, float(raw.get("v_min", 0.9)), float(raw.get("v_max", 1.1)),
                         _freeze(shunt), str(raw.get("voltage_level", ""))))

    lines = []
    for raw in doc["lines"]:
        lid = str(_require(raw, "id", "line"))
        ph = _phases(_require(raw, "phases", f"line {lid}"), f"line {lid}")
        r, x = _impedance(_require(raw, "impedance", f"line {lid}"), ph, f"line {lid}")
        lines.append(LineSegment(lid, str(_require(raw, "from", f"line {lid}")),
                                 str(_require(raw, "to", f"line {lid}")), ph, r, x,
                                 _flow_limit(raw.get("flow_limit"), ph, f"line {lid}")))

    switches = []
    for raw in doc.get("switches", []):
        sid = str(_require(raw, "id", "switch"))
        ph = _phases(_require(raw, "phases", f"switch {sid}"), f"switch {sid}")
        switches.append(Switch(sid, str(_require(raw, "from", f"switch {sid}")),
                               str(_require(raw, "to", f"switch {sid}")), ph,
                               _flow_limit(raw.get("flow_limit"), ph, f"switch {sid}")))

    transformers = []
    for raw in doc.get("transformers", []):
        tid = str(_require(raw, "id", "transformer"))
        ph = _phases(_require(raw, "phases", f"transformer {tid}"), f"transformer {tid}")
        transformers.append(Transformer(
            tid, str(raw.get("kind", "wye")), str(_require(raw, "from", f"transformer {tid}")),
            str(_require(raw, "to", f"transformer {tid}")), ph, float(raw.get("tap_ratio", 1.0)),
            _flow_limit(raw.get("flow_limit"), ph, f"transformer {tid}")))

    generators = []
    for raw in doc["generators"]:
        gid = str(_require(raw, "id", "generator"))
        what = f"generator {gid}"
        ph = _phases(_require(raw, "phases", what), what)
        generators.append(Generator(
            gid, str(_require(raw, "bus", what)), ph,
            _freeze(_per_phase(raw.get("p_min", 0.0), ph, what + " p_min")),
            _freeze(_per_phase(_require(raw, "p_max", what), ph, what + " p_max")),
            _freeze(_per_phase(raw.get("q_min", 0.0), ph, what + " q_min")),
            _freeze(_per_phase(_require(raw, "q_max", what), ph, what + " q_max")),
            float(raw.get("cost_linear", 0.0)), float(raw.get("cost_fixed", 0.0)),
            _freeze(_per_phase(raw.get("ramp_limit", 0.0), ph, what + " ramp_limit")),
            bool(raw.get("substation", False))))

    clusters = []
    for raw in doc["clusters"]:
        clusters.append(str(raw["id"] if isinstance(raw, dict) else raw))
    if len(set(clusters)) != len(clusters):
        raise SchemaError("duplicate cluster ids")

    loads = []
    for raw in doc["loads"]:
        did = str(_require(raw, "id", "load"))
        what = f"load {did}"
        ph = _phases(_require(raw, "phases", what), what)
        p0 = _per_phase(_require(raw, "p_nominal", what), ph, what + " p_nominal")
        q0 = _per_phase(raw.get("q_nominal", 0.0), ph, what + " q_nominal")

        def bounds(nom, key):
            explicit = raw.get(key)
            out = {}
            for p in ph:
                if explicit is not None:
                    lo, hi = explicit[p] if isinstance(explicit, dict) else explicit
                    out[p] = (float(lo), float(hi))
                else:
                    a, b = nom[p] * (1 - level), nom[p] * (1 + level)
                    out[p] = (min(a, b), max(a, b))
            return _freeze(out)

        loads.append(LoadPoint(did, str(_require(raw, "bus", what)), ph, _freeze(p0), _freeze(q0),
                               bounds(p0, "p_bounds"), bounds(q0, "q_bounds"),
                               str(_require(raw, "cluster", what)),
                               float(raw.get("priority", default_shed))))

    return Network(name=str(doc.get("name", "network")), buses=buses, lines=lines,
                   switches=switches, transformers=transformers, generators=generators,
                   loads=loads, clusters=clusters, base_power=float(doc["base_power_va"]),
                   base_voltage=doc["base_voltage_v"] if isinstance(doc["base_voltage_v"], dict)
                   else {"default": float(doc["base_voltage_v"])},
                   uncertainty_level=level)


def load_network(document, uncertainty: float | None = None) -> Network:
    """Parse a network from JSON text, a path, or an already-parsed mapping."""
    if isinstance(document, dict):
        return network_from_dict(document, uncertainty)
    if isinstance(document, Path) or (isinstance(document, str) and not document.lstrip().startswith("{")):
        text = Path(document).read_text()
    else:
        text = document
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    return network_from_dict(doc, uncertainty)


def fixture_path(name: str) -> Path:
    return Path(__file__).parent / "data" / f"{name}.json"


def load_fixture(name: str, uncertainty: float | None = None) -> Network:
    return load_network(fixture_path(name), uncertainty)


# ---------------------------------------------------------------------------
# blocks and components

def compute_blocks(net: Network) -> list[Block]:
    """Connected components with every switch open, ordered by first bus."""
    n = len(net.buses)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for e in (*net.lines, *net.transformers):
        a, b = find(net.bus_index[e.f_bus]), find(net.bus_index[e.t_bus])
        if a != b:
            parent[max(a, b)] = min(a, b)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    blocks = []
    for k, members in enumerate(sorted(groups.values(), key=min)):
        ids = tuple(net.buses[i].id for i in members)
        union = sorted({p for i in members for p in net.buses[i].phases}, key=PHASE_INDEX.__getitem__)
        idset = set(ids)
        prio = sum(d.priority * sum(d.p_nominal.values()) for d in net.loads if d.bus in idset)
        blocks.append(Block(f"B{k + 1}", k, ids, max(len(net.buses[i].phases) for i in members),
                            tuple(union), prio))
    return blocks


def max_phases(block: Block | None = None, net: Network | None = None, buses=None) -> int:
    """Largest per-bus phase count among a block's buses."""
    if buses is None:
        if block is None:
            raise ValueError("need a block or a bus list")
        if net is None:
            return block.phase_max
        buses = [net.bus_by_id[b] for b in block.buses]
    if not buses:
        raise ValueError("empty block")
    return max(len(b.phases) for b in buses)


def gfm_eligibility(net: Network, blocks=None, warn=None) -> dict[str, tuple[str, ...]]:
    """Generators allowed to grid-form in each block.

    A generator qualifies when it is connected to every phase present in
    its block. Substations are voltage sources in their own right and are
    not listed.
    """
    blocks = blocks if blocks is not None else net.blocks
    out = {}
    for blk in blocks:
        union = set(blk.phase_union)
        elig = tuple(g.id for g in net.gens_in_block(blk.id)
                     if not g.substation and len(g.phases) >= blk.phase_max and union <= set(g.phases))
        out[blk.id] = elig
        has_sub = any(g.substation for g in net.gens_in_block(blk.id))
        if not elig and not has_sub and net.loads_in_block(blk.id) and warn is not None:
            warn(f"block {blk.id} has loads but no eligible grid-forming generator")
    return out


def connected_components(net: Network, switch_states: dict[str, int | bool]) -> list[tuple[str, ...]]:
    """Partition blocks into connected components under ``switch_states``.

    Components are ordered by their lowest block index and list member
    blocks in index order.
    """
    missing = [s.id for s in net.switches if s.id not in switch_states]
    if missing:
        raise KeyError(f"switch states missing for {missing}")
    parent = {b.id: b.id for b in net.blocks}
    order = {b.id: b.index for b in net.blocks}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for sw in net.switches:
        if switch_states[sw.id]:
            a, b = (find(x) for x in net.switch_blocks(sw))
            if a != b:
                lo, hi = sorted((a, b), key=order.__getitem__)
                parent[hi] = lo
    groups: dict[str, list[str]] = {}
    for b in net.blocks:
        groups.setdefault(find(b.id), []).append(b.id)
    return [tuple(g) for g in sorted(groups.values(), key=lambda g: order[g[0]])]


# ---------------------------------------------------------------------------
# uncertainty

def nominal_scenario(net: Network, scale: float = 1.0) -> ScenarioVector:
    p = {(d.id, ph): d.p_nominal[ph] * scale for d in net.loads for ph in d.phases}
    q = {(d.id, ph): d.q_nominal[ph] * scale for d in net.loads for ph in d.phases}
    return ScenarioVector(_freeze(p), _freeze(q), None, "nominal")


def max_scenario(net: Network) -> ScenarioVector:
    p = {(d.id, ph): d.p_bounds[ph][1] for d in net.loads for ph in d.phases}
    q = {(d.id, ph): d.q_bounds[ph][1] for d in net.loads for ph in d.phases}
    return ScenarioVector(_freeze(p), _freeze(q), (1,) * len(net.clusters), "all-max")


def uncertainty_extremes(net: Network, cap: int = DEFAULT_SCENARIO_CAP) -> list[ScenarioVector]:
    """All cluster-wise min/max corners of the load box.

    Scenario ``k`` sets cluster ``i`` (clusters sorted by id) to its maximum
    when bit ``i`` of ``k`` is one.
    """
    clusters = sorted(net.clusters)
    if len(clusters) > cap:
        raise ScenarioCapError(
            f"{len(clusters)} clusters give 2^{len(clusters)} extreme scenarios; cap is {cap}")
    out = []
    for k in range(2 ** len(clusters)):
        bits = tuple((k >> i) & 1 for i in range(len(clusters)))
        hi = {c: bit for c, bit in zip(clusters, bits)}
        p = {(d.id, ph): d.p_bounds[ph][hi[d.cluster]] for d in net.loads for ph in d.phases}
        q = {(d.id, ph): d.q_bounds[ph][hi[d.cluster]] for d in net.loads for ph in d.phases}
        label = ",".join(f"{c}:{'max' if b else 'min'}" for c, b in zip(clusters, bits))
        out.append(ScenarioVector(_freeze(p), _freeze(q), bits, label))
    return out


def sample_scenario(net: Network, level: float, clustered: bool, seed=None,
                    rng: np.random.Generator | None = None) -> ScenarioVector:
    """Random load realization ``s_d = s_d^0 (1 + u)`` with ``u ~ U[-level, level]``.

    Clustered sampling draws one factor per cluster (sorted by id) and
    applies it to every member load; otherwise each load draws its own.
    """
    if level < 0:
        raise ValueError("level must be non-negative")
    rng = rng if rng is not None else np.random.default_rng(seed)
    if clustered:
        draws = rng.uniform(-level, level, size=len(net.clusters))
        factor = dict(zip(sorted(net.clusters), draws))
        per_load = {d.id: factor[d.cluster] for d in net.loads}
    else:
        draws = rng.uniform(-level, level, size=len(net.loads))
        per_load = {d.id: u for d, u in zip(net.loads, draws)}
    if level == 0:
        per_load = {k: 0.0 for k in per_load}
    p = {(d.id, ph): d.p_nominal[ph] * (1 + per_load[d.id]) for d in net.loads for ph in d.phases}
    q = {(d.id, ph): d.q_nominal[ph] * (1 + per_load[d.id]) for d in net.loads for ph in d.phases}
    return ScenarioVector(_freeze(p), _freeze(q), None, "sample")


def scaled_scenario(net: Network, factors: dict[str, float]) -> ScenarioVector:
    """Nominal loads scaled by ``1 + factors[cluster]``."""
    p = {(d.id, ph): d.p_nominal[ph] * (1 + factors.get(d.cluster, 0.0)) for d in net.loads for ph in d.phases}
    q = {(d.id, ph): d.q_nominal[ph] * (1 + factors.get(d.cluster, 0.0)) for d in net.loads for ph in d.phases}
    return ScenarioVector(_freeze(p), _freeze(q), None, "scaled")


def scenario_within_bounds(net: Network, scen: ScenarioVector, tol=1e-12) -> bool:
    for d in net.loads:
        for ph in d.phases:
            lo, hi = d.p_bounds[ph]
            if not lo - tol <= scen.p[(d.id, ph)] <= hi + tol:
                return False
            lo, hi = d.q_bounds[ph]
            if not lo - tol <= scen.q[(d.id, ph)] <= hi + tol:
                return False
    return True


def with_level(net: Network, level: float) -> Network:
    """Copy of ``net`` with symmetric load bounds at ``level``."""
    loads = []
    for d in net.loads:
        pb = {p: tuple(sorted((d.p_nominal[p] * (1 - level), d.p_nominal[p] * (1 + level)))) for p in d.phases}
        qb = {p: tuple(sorted((d.q_nominal[p] * (1 - level), d.q_nominal[p] * (1 + level)))) for p in d.phases}
        loads.append(LoadPoint(d.id, d.bus, d.phases, d.p_nominal, d.q_nominal, _freeze(pb), _freeze(qb),
                               d.cluster, d.priority))
    return Network(name=net.name, buses=net.buses, lines=net.lines, switches=net.switches,
                   transformers=net.transformers, generators=net.generators, loads=loads,
                   clusters=net.clusters, base_power=net.base_power, base_voltage=net.base_voltage,
                   uncertainty_level=level)


def block_graph(net: Network):
    """``networkx.MultiGraph`` with blocks as nodes and switches as edges."""
    import networkx as nx

    g = nx.MultiGraph()
    for b in net.blocks:
        g.add_node(b.id, phase_max=b.phase_max)
    for sw in net.switches:
        a, b = net.switch_blocks(sw)
        g.add_edge(a, b, key=sw.id)
    return g


def phase_count_map(net: Network) -> dict[str, int]:
    return {b.id: b.phase_max for b in net.blocks}

