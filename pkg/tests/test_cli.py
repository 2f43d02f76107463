import csv
import json
import subprocess
import sys

import pytest

from minelns.cli import UsageError, main, parse_grid, parse_int_list, parse_strategies, parse_uw
from minelns.instance import load_instance
from minelns.lns import Strategy
from minelns.solution import load_solution, save_solution


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def micro(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "micro.json"
    assert main(["gen", "--preset", "micro", "--seed", "2", "-o", str(path)]) == 0
    return path


def test_parsers():
    assert parse_int_list("1..3,7") == [1, 2, 3, 7]
    assert parse_grid(["W=1..3", "O=0,1"], {"W": int, "O": int}) == {"W": [1, 2, 3], "O": [0, 1]}
    assert parse_uw("inf") is None and parse_uw("3") == 3
    assert parse_strategies("blending,timing") == {Strategy.BLENDING, Strategy.TIMING}
    with pytest.raises(UsageError):
        parse_int_list(",")
    with pytest.raises(UsageError):
        parse_grid(["Q=1"], {"W": int})


def test_pipeline(micro, tmp_path):
    inst = load_instance(micro)
    assert len(inst.blocks) == 4 and inst.periods == 3
    sw = tmp_path / "sw"
    assert main(["sw", str(micro), "-W", "2", "-O", "1", "-o", str(sw)]) == 0
    trace = _rows(sw / "sw_trace.csv")
    assert list(trace[0]) == ["window_start", "solve_time_s", "objective", "status"]
    assert [r["window_start"] for r in trace] == ["1", "2", "3"]
    assert main(["validate", str(micro), str(sw / "solution.json"), "-o", str(tmp_path / "rep.json")]) == 0
    assert json.loads((tmp_path / "rep.json").read_text())["entries"] == []

    full = tmp_path / "full"
    assert main(["full", str(micro), "--mip-gap", "0", "-o", str(full)]) == 0
    opt = load_solution(full / "solution.json").objective
    assert load_solution(sw / "solution.json").objective <= opt + 1e-6

    ln = tmp_path / "lns"
    code = main(["lns", str(micro), "--init", str(sw / "solution.json"), "--nbar", "2", "--workers", "2",
                 "--rins", "--term-min-iters", "4", "--seeds", "2", "--bound-from", "oracle", "-o", str(ln)])
    assert code == 0
    for seed in (0, 1000):
        rows = _rows(ln / f"lns_trace_seed{seed}.csv")
        assert list(rows[0])[:3] == ["wall_time_s", "iteration", "worker"]
        assert load_solution(ln / f"solution_seed{seed}.json").objective <= opt + 1e-6
    summary = _rows(ln / "summary.csv")
    assert float(summary[0]["min_gap"]) >= -1e-6


def test_validate_flags_violations(micro, tmp_path):
    sol = tmp_path / "bad.json"
    assert main(["full", str(micro), "-o", str(tmp_path)]) == 0
    good = load_solution(tmp_path / "solution.json")
    first = next(k for k, _ in good.items() if k.kind == "X")
    good[first] = 2.0
    save_solution(good, sol)
    assert main(["validate", str(micro), str(sol)]) == 2


def test_sweep_marks_bad_cells(micro, tmp_path):
    code = main(["sweep", str(micro), "--sw-grid", "W=1..3", "O=0,1", "--bound-from", "oracle",
                 "-o", str(tmp_path)])
    rows = _rows(tmp_path / "summary.csv")
    assert list(rows[0]) == ["W", "H", "O", "avg_gap", "min_gap", "max_gap", "avg_time", "min_time",
                             "max_time", "status"]
    assert len(rows) == 6
    bad = [r for r in rows if r["status"] != "ok"]
    # W=1 with O=1 has no forward step
    assert [(r["W"], r["O"]) for r in bad] == [("1", "1")]
    assert all(bad[0][c] == "--" for c in ("avg_gap", "max_time"))
    assert code == 2
    ok = [r for r in rows if r["status"] == "ok"]
    assert all(float(r["min_gap"]) >= -1e-6 for r in ok)


def test_lns_sweep(micro, tmp_path):
    code = main(["sweep", str(micro), "--lns-grid", "nbar=1,2", "fixing=sd,sdf", "--term-min-iters", "2",
                 "--bound-from", "oracle", "-o", str(tmp_path)])
    assert code == 0
    rows = _rows(tmp_path / "summary.csv")
    assert [(r["nbar"], r["fixing"]) for r in rows] == [("1", "sd"), ("1", "sdf"), ("2", "sd"), ("2", "sdf")]


@pytest.mark.parametrize("argv", [[], ["sw"], ["sw", "x.json", "-W", "abc"], ["lns", "x.json", "--focal", "zz"],
                                  ["sweep", "x.json"]])
def test_usage_errors(argv, micro):
    if argv and argv[0] == "sweep":
        argv = ["sweep", str(micro)]
    assert main(argv) == 1


def test_missing_file_is_usage_error(tmp_path):
    assert main(["sw", str(tmp_path / "nope.json")]) == 1


def test_module_entry_point(micro, tmp_path):
    out = subprocess.run([sys.executable, "-m", "minelns", "sw", str(micro), "-W", "3", "-o", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert "objective" in out.stdout
