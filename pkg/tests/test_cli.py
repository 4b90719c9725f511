import csv
import json
import subprocess
import sys

import pytest

from dnmg.cli import main


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["partition", "toybay", "--uncertainty", "0.1", "--out", str(d / "res.json")]) == 0
    return d


def _periods(n, steps=12):
    return {"periods": [{"steps": steps, "label": f"T{i + 1}",
                         "events": [{"step": 3, "factor": 1.1}] if i == 0 else []} for i in range(n)]}


def test_partition_deterministic_converges_in_one_iteration(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["partition", "toybay", "--uncertainty", "0.0", "--seed", "7", "--out", str(a)]) == 0
    assert main(["partition", "toybay", "--uncertainty", "0.0", "--seed", "7", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    assert doc["converged"] and len(doc["iterations"]) == 1
    assert doc["seed"] == 7 and doc["tool_version"] and doc["config_digest"]
    assert doc["topology_check"] == []


def test_partition_with_block_contingency(tmp_path):
    out = tmp_path / "c.json"
    assert main(["partition", "toybay", "--uncertainty", "0.2", "--contingency", "block:B3",
                 "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["solution"]["blocks"]["B3"] == 0
    assert doc["contingencies"] == ["block:B3"]


def test_exit_codes(tmp_path, capsys):
    assert main(["partition", str(tmp_path / "missing.json")]) == 1
    assert main(["partition", "toybay", "--contingency", "block:B42"]) == 1
    assert main(["partition", "toybay", "--uncertainty", "-0.5"]) == 1
    assert main(["bogus"]) == 1
    out = tmp_path / "nc.json"
    assert main(["partition", "toybay", "--uncertainty", "0.2", "--max-iter", "1", "--out", str(out)]) == 2
    assert not json.loads(out.read_text())["converged"]
    assert "not converged" in capsys.readouterr().err


def test_simulate_three_periods_and_determinism(work):
    sched = work / "sched.json"
    sched.write_text(json.dumps(_periods(3)))
    runs = []
    for k in range(2):
        traj, summ = work / f"t{k}.csv", work / f"s{k}.json"
        assert main(["simulate", "toybay", "--result", str(work / "res.json"), "--schedule", str(sched),
                     "--seed", "3", "--out", str(traj), "--summary", str(summ)]) == 0
        runs.append((traj.read_bytes(), summ.read_bytes()))
    assert runs[0] == runs[1]
    summary = json.loads(runs[0][1])
    assert summary["topology_swaps"] == 3 and summary["steps"] == 36
    assert summary["seed"] == 3


def test_simulate_rejects_empty_schedule(work):
    sched = work / "empty.json"
    sched.write_text(json.dumps({"periods": []}))
    assert main(["simulate", "toybay", "--result", str(work / "res.json"), "--schedule", str(sched)]) == 1


def test_check_reports_and_zero_samples(work):
    out, again = work / "chk.json", work / "chk2.json"
    args = ["check", "toybay", "--result", str(work / "res.json"), "--samples", "40", "--fidelity", "linear",
            "--seed", "5"]
    assert main(args + ["--out", str(out)]) == 0
    assert main(args + ["--out", str(again)]) == 0
    assert out.read_bytes() == again.read_bytes()
    doc = json.loads(out.read_text())
    assert doc["feasibility"]["linear"]["clustered"]["fraction"] == 1.0
    zero = work / "chk0.json"
    assert main(["check", "toybay", "--result", str(work / "res.json"), "--samples", "0",
                 "--out", str(zero)]) == 0
    rep = json.loads(zero.read_text())["feasibility"]
    assert rep["linear"]["clustered"]["samples"] == 0 and set(rep) == {"linear", "ac"}


def test_check_independent_of_jobs(work):
    outs = []
    for jobs in ("1", "2"):
        p = work / f"j{jobs}.json"
        assert main(["check", "toybay", "--result", str(work / "res.json"), "--samples", "12",
                     "--fidelity", "linear", "--jobs", jobs, "--out", str(p)]) == 0
        outs.append(json.loads(p.read_text())["feasibility"])
    assert outs[0] == outs[1]


def test_report_series(work):
    sched = work / "one.json"
    sched.write_text(json.dumps(_periods(1, 15)))
    traj = work / "traj.csv"
    assert main(["simulate", "toybay", "--result", str(work / "res.json"), "--schedule", str(sched),
                 "--out", str(traj)]) == 0
    ccs = {r["cc_id"] for r in csv.DictReader(traj.open())}
    out = work / "series"
    assert main(["report", str(traj), "--out", str(out)]) == 0
    files = sorted(p.name for p in out.iterdir())
    assert len(files) == 3 * len(ccs)
    for p in out.iterdir():
        assert len(p.read_text().splitlines()) == 1 + 15


def test_report_schema_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("step,cc_id,phase\n0,B1,a\n")
    assert main(["report", str(bad)]) == 1
    assert "schema error" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "nope.csv")]) == 1


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "dnmg.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("dnmg ")


def test_partition_solution_independent_of_jobs(work, tmp_path):
    out = tmp_path / "par.json"
    assert main(["partition", "toybay", "--uncertainty", "0.1", "--jobs", "2", "--out", str(out)]) == 0
    base = json.loads((work / "res.json").read_text())
    assert json.loads(out.read_text())["solution"] == base["solution"]
