"""Command-line front end: ``dnmg partition|simulate|check|report``.

Exit codes: 0 success, 1 input error, 2 non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .netmodel import NetworkError, fixture_path, network_from_dict, with_level
from .rpop import (SCHEMA_VERSION, ContingencyError, RPOPConfig, apply_contingencies, cutting_plane,
                   result_document, robust_feasibility_sample, solution_from_dict, verify_topology)

EXIT_OK, EXIT_INPUT, EXIT_NOCONV = 0, 1, 2
SERIES = ("load", "slack", "injections")


class InputError(Exception):
    pass


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"{path}: file not found") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc


def _network_doc(spec: str) -> dict:
    path = Path(spec)
    if not path.exists() and fixture_path(Path(spec).stem).exists():
        path = fixture_path(Path(spec).stem)  # bundled fixture by name
    return _read_json(path)


def load_net(spec: str, uncertainty=None, clusters=None):
    doc = _network_doc(spec)
    if clusters:
        mapping = _read_json(clusters)
        if not isinstance(mapping, dict):
            raise InputError(f"{clusters}: expected an object mapping load id to cluster id")
        ids = {d["id"] for d in doc.get("loads", ())}
        unknown = sorted(set(mapping) - ids)
        if unknown:
            raise InputError(f"{clusters}: unknown loads {unknown}")
        for d in doc.get("loads", ()):
            if d["id"] in mapping:
                d["cluster"] = str(mapping[d["id"]])
        doc["clusters"] = [{"id": c} for c in sorted({str(d["cluster"]) for d in doc["loads"]})]
    net = network_from_dict(doc)
    if uncertainty is not None:
        net = with_level(net, uncertainty)
    return net


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_default) + "\n"


def _default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _emit(text: str, out) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _digest(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _level(value: str) -> float:
    x = float(value)
    if not 0.0 <= x < 1.0:
        raise argparse.ArgumentTypeError("uncertainty must lie in [0, 1)")
    return x


def _nonneg_int(value: str) -> int:
    n = int(value)
    if n < 0:
        raise argparse.ArgumentTypeError("expected a non-negative integer")
    return n


def _seed(value: str) -> int:
    n = int(value)
    if not 0 <= n < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return n


# ---------------------------------------------------------------------------
# commands

def cmd_partition(args) -> int:
    net = load_net(args.network, args.uncertainty, args.clusters)
    config = RPOPConfig(contingencies=tuple(args.contingency), jobs=args.jobs, backend=args.backend,
                        max_iter=args.max_iter)
    apply_contingencies(net, config.contingencies)  # validate early
    result = cutting_plane(net, config)
    doc = result_document(result, net, config, args.seed)
    if result.solution is not None and result.converged:
        doc["topology_check"] = verify_topology(apply_contingencies(net, config.contingencies)[0],
                                                result.solution)
    _emit(_dump(doc), args.out)
    if not result.converged:
        print(f"partition: not converged: {result.message}", file=sys.stderr)
        return EXIT_NOCONV
    return EXIT_OK


def _load_result(path, net):
    doc = _read_json(path)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"{path}: unsupported schema version {doc.get('schema_version')!r}")
    if not doc.get("solution"):
        raise InputError(f"{path}: result holds no solution")
    return doc, solution_from_dict(doc["solution"], net, doc.get("representative", "all-max"))


def cmd_simulate(args) -> int:
    from .mfrt import ControllerConfig, run_episode, schedule_from_dict

    net = load_net(args.network, None, args.clusters)
    base_doc, base = _load_result(args.result, net)
    sched_doc = _read_json(args.schedule)
    if not sched_doc.get("periods"):
        raise InputError(f"{args.schedule}: schedule has no periods")
    topologies = {"default": base}
    root = Path(args.schedule).parent
    contingencies = {}
    for i, per in enumerate(sched_doc["periods"]):
        if "result" in per:
            doc, sol = _load_result(root / per["result"], net)
            name = f"period{i}"
            topologies[name] = sol
            per["topology"] = name
            per.setdefault("contingencies", doc.get("contingencies", []))
        else:
            per.setdefault("contingencies", base_doc.get("contingencies", []))
        contingencies[i] = per["contingencies"]
    try:
        schedule = schedule_from_dict(sched_doc, net, topologies)
    except (KeyError, TypeError) as exc:
        raise InputError(f"{args.schedule}: malformed period ({exc})") from exc
    config = ControllerConfig(fidelity=args.fidelity, dual_sign=args.dual_sign)
    log = run_episode(net, schedule, config, seed=args.seed)
    _emit(log.to_csv(), args.out)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "config_digest": _digest({"controller": repr(config), "schedule": sched_doc}),
        "seed": args.seed,
        **log.summary(),
    }
    text = _dump(summary)
    if args.summary:
        _emit(text, args.summary)
    elif args.out:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_check(args) -> int:
    net = load_net(args.network, None, args.clusters)
    res_doc, sol = _load_result(args.result, net)
    level = args.uncertainty if args.uncertainty is not None else float(res_doc["uncertainty_level"])
    cons = tuple(args.contingency) if args.contingency else tuple(res_doc.get("contingencies", ()))
    pnet = apply_contingencies(with_level(net, level), cons)[0]
    config = RPOPConfig(contingencies=cons, jobs=args.jobs)
    fidelities = ("linear", "ac") if args.fidelity == "both" else (args.fidelity,)
    modes = (("clustered", True), ("non-clustered", False))
    report = {}
    for fid in fidelities:
        report[fid] = {}
        for k, (mode, clustered) in enumerate(modes):
            sub_seed = int(np.random.SeedSequence([args.seed, k]).generate_state(1)[0])
            frac, good = robust_feasibility_sample(pnet, sol, level, clustered, args.samples, sub_seed,
                                                   fid, config)
            report[fid][mode] = {"fraction": frac, "feasible": good, "samples": args.samples,
                                 "seed": sub_seed}
    doc = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "config_digest": config.digest(),
        "seed": args.seed,
        "network": net.name,
        "result_digest": _digest(res_doc),
        "uncertainty_level": level,
        "contingencies": list(cons),
        "feasibility": report,
        "note": "ac fractions use a heuristic dispatch and are approximate lower bounds",
    }
    _emit(_dump(doc), args.out)
    return EXIT_OK


REQUIRED = ("step", "cc_id", "phase", "slack_p", "reference_p", "load")


def cmd_report(args) -> int:
    path = Path(args.trajectory)
    if not path.exists():
        raise InputError(f"{path}: file not found")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in REQUIRED if c not in cols]
        if missing:
            raise InputError(f"{path}: schema error, missing columns {missing}")
        gen_cols = [c for c in cols if c.startswith(("p:", "q:"))]
        rows = list(reader)
    try:
        steps = sorted({int(r["step"]) for r in rows})
        data = {}
        for r in rows:
            cc = r["cc_id"]
            ent = data.setdefault(cc, {})
            ent[(int(r["step"]), r["phase"])] = r
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed row ({exc})") from exc
    out = Path(args.out or path.with_suffix(""))
    out.mkdir(parents=True, exist_ok=True)
    for cc, ent in sorted(data.items()):
        phases = sorted({ph for _, ph in ent})
        files = {
            "load": ([f"load_{ph}" for ph in phases], lambda r: [r["load"]]),
            "slack": ([f"slack_p_{ph}" for ph in phases] + [f"reference_p_{ph}" for ph in phases], None),
            "injections": (gen_cols, None),
        }
        for name in SERIES:
            header, _ = files[name]
            with open(out / f"{cc}_{name}.csv", "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["step"] + header)
                for k in steps:
                    present = [ent.get((k, ph)) for ph in phases]
                    if all(r is None for r in present):
                        w.writerow([k] + [""] * len(header))
                        continue
                    if name == "load":
                        vals = [r["load"] if r else "" for r in present]
                    elif name == "slack":
                        vals = ([r["slack_p"] if r else "" for r in present]
                                + [r["reference_p"] if r else "" for r in present])
                    else:
                        first = next(r for r in present if r)
                        vals = [first[c] for c in gen_cols]
                    w.writerow([k] + vals)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dnmg", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"dnmg {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, network=True):
        if network:
            p.add_argument("network", help="network JSON file or bundled fixture name")
            p.add_argument("--clusters", help="JSON object mapping load id to cluster id")
        p.add_argument("--seed", type=_seed, default=0)
        p.add_argument("--out", help="output path (default: standard output)")

    p = sub.add_parser("partition", help="robust partitioning by the cutting-plane method")
    common(p)
    p.add_argument("--uncertainty", type=_level, default=None)
    p.add_argument("--contingency", action="append", default=[],
                   help="block:<id>, switch:<id> or substation; repeatable")
    p.add_argument("--jobs", type=_nonneg_int, default=1)
    p.add_argument("--backend", choices=("internal", "highs"), default="internal")
    p.add_argument("--max-iter", type=_nonneg_int, default=50)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("simulate", help="real-time controller episode")
    common(p)
    p.add_argument("--result", required=True, help="partition result document")
    p.add_argument("--schedule", required=True, help="episode schedule document")
    p.add_argument("--fidelity", choices=("linear", "ac"), default="linear")
    p.add_argument("--dual-sign", choices=("as-printed", "ascent"), default="as-printed")
    p.add_argument("--summary", help="summary JSON path (default: standard output when --out is set)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check", help="sampled robust feasibility of a partition result")
    common(p)
    p.add_argument("--result", required=True)
    p.add_argument("--uncertainty", type=_level, default=None, help="sampling level (default: the result's)")
    p.add_argument("--contingency", action="append", default=[])
    p.add_argument("--samples", type=_nonneg_int, default=1000)
    p.add_argument("--fidelity", choices=("linear", "ac", "both"), default="both")
    p.add_argument("--jobs", type=_nonneg_int, default=1)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("report", help="per-component series files from a trajectory CSV")
    p.add_argument("trajectory")
    p.add_argument("--out", help="output directory (default: next to the trajectory)")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if getattr(args, "jobs", 1) == 0:
        args.jobs = 1
    try:
        return args.func(args)
    except (InputError, NetworkError, ContingencyError, ValueError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
