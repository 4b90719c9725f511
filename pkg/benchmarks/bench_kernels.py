"""Compare the compiled kernels against the pure-Python fallback.

Each backend runs in its own interpreter because the choice is made at import.
Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from dnmg import sweep
from dnmg.optcore import kernels
from dnmg.optcore.lp import solve_lp_arrays
from dnmg.lindistflow import solve_ac_fixed_point, solve_linear_power_flow
from dnmg.netmodel import load_fixture, nominal_scenario

repeat = int(sys.argv[1])

def best(fn):
    out, times = None, []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out

def lps():
    rng = np.random.default_rng(0)
    objs = []
    for _ in range(20):
        m, n = 40, 60
        A = rng.normal(size=(m, n))
        x0 = rng.uniform(0, 1, n)
        b = A @ x0 + rng.uniform(0, 1, m)
        res = solve_lp_arrays(A, b, -np.ones(m), rng.normal(size=n), np.zeros(n), np.full(n, 2.0))
        objs.append(res[4])
    return objs

net = load_fixture("toybay")
closed = {"s1", "s2", "s3", "s4"}
z_sw = {s.id: int(s.id in closed) for s in net.switches}
cc = tuple(b.id for b in net.blocks)
scen = nominal_scenario(net)

def flows():
    vs = []
    for _ in range(20):
        lin = solve_linear_power_flow(net, cc, z_sw, {}, scen)
        ac = solve_ac_fixed_point(net, cc, z_sw, {}, scen)
        vs.append(sorted(lin.state.v.values()) + sorted(ac.v.values()))
    return vs

t_lp, o_lp = best(lps)
t_pf, o_pf = best(flows)
print(json.dumps({"compiled": [kernels.COMPILED, sweep.COMPILED], "lp": t_lp, "flow": t_pf,
                  "lp_out": o_lp, "flow_out": o_pf[-1]}))
"""


def run(pure, repeat):
    env = dict(os.environ)
    env.pop("DNMG_PURE_PYTHON", None)
    if pure:
        env["DNMG_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    fast, slow = run(False, args.repeat), run(True, args.repeat)
    if not all(fast["compiled"]):
        print("warning: compiled extensions not found, both runs use the fallback")
    print(f"{'workload':<28}{'compiled s':>12}{'pure s':>12}{'speedup':>10}")
    for key, label in (("lp", "20 dense LPs (40x60)"), ("flow", "20 linear + AC flows")):
        print(f"{label:<28}{fast[key]:>12.4f}{slow[key]:>12.4f}{slow[key] / fast[key]:>10.2f}")
    lp_gap = max(abs(a - b) for a, b in zip(fast["lp_out"], slow["lp_out"]))
    pf_gap = max(abs(a - b) for a, b in zip(fast["flow_out"], slow["flow_out"]))
    print(f"max objective difference {lp_gap:.2e}, max voltage difference {pf_gap:.2e}")
    return 0 if max(lp_gap, pf_gap) < 1e-8 else 1


if __name__ == "__main__":
    sys.exit(main())
