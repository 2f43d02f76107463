"""Command line: gen, validate, full, sw, lns and sweep.

Exit codes: 0 success, 1 usage or input errors, 2 infeasible results
(violating solutions, infeasible windows, ``--`` cells in a sweep).
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import statistics
import sys
import time
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, MineError, StepError, WindowInfeasible
from .feasibility import gap_to_bound, oracle_optimum, validate
from .generator import PRESETS, GenConfig, generate_instance, preset
from .instance import load_instance, save_instance
from .lns import Fixing, Focal, LnsConfig, Strategy, Termination, run_lns
from .model import build_model, extract_solution
from .solution import load_solution, save_solution
from .solver import SolveParams, solve
from .swindow import PAPER_LITERAL, STEP, SwConfig, run_sliding_windows
from .trace import Trace

log = logging.getLogger("minelns")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2
SUMMARY_TAIL = ("avg_gap", "min_gap", "max_gap", "avg_time", "min_time", "max_time", "status")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ parsing helpers


def parse_int_list(text: str) -> list[int]:
    """``"1..4"``, ``"0,2,4"`` or a mix such as ``"1..3,7"``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise UsageError(f"empty list {text!r}")
    return out


def parse_grid(items: list[str], allowed: dict) -> dict[str, list]:
    """``["W=1..4", "O=0,1"]`` -> ``{"W": [1, 2, 3, 4], "O": [0, 1]}``; values converted per ``allowed``."""
    grid = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"grid entry {item!r} is not NAME=VALUES")
        name, values = item.split("=", 1)
        if name not in allowed:
            raise UsageError(f"unknown grid parameter {name!r}; expected one of {sorted(allowed)}")
        conv = allowed[name]
        try:
            grid[name] = parse_int_list(values) if conv is int else [conv(v) for v in values.split(",")]
        except ValueError as exc:
            raise UsageError(f"bad values for {name}: {exc}") from exc
    return grid


def parse_uw(text: str) -> int | None:
    if text.lower() in ("inf", "unbounded", "none"):
        return None
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("uw must be >= 0 or inf")
    return v


def parse_strategies(text: str) -> frozenset:
    names = [s.strip().lower() for s in text.split(",") if s.strip()]
    if names == ["all"]:
        return frozenset(s for s in Strategy if s != Strategy.NONE)
    try:
        return frozenset(Strategy(n) for n in names) - {Strategy.NONE}
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "y"):
        return True
    if text.lower() in ("0", "false", "no", "n"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# ------------------------------------------------------------------ shared pieces


def _solve_params(a) -> SolveParams:
    try:
        return SolveParams(mip_gap=a.mip_gap, time_limit=a.mip_time, seed=a.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _outdir(a) -> Path:
    d = Path(a.output)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _fmt(v):
    if v is None:
        return "--"
    return f"{v:.6g}" if isinstance(v, float) else v


def _summary(gaps, times) -> dict:
    gaps = [g for g in gaps if g is not None]
    return {
        "avg_gap": statistics.fmean(gaps) if gaps else None,
        "min_gap": min(gaps) if gaps else None,
        "max_gap": max(gaps) if gaps else None,
        "avg_time": statistics.fmean(times),
        "min_time": min(times),
        "max_time": max(times),
    }


def _bound(a, inst) -> float | None:
    mode = getattr(a, "bound_from", None)
    if mode is None:
        return None
    if mode == "file":
        if not a.bound_file:
            raise UsageError("--bound-from file needs --bound-file")
        text = Path(a.bound_file).read_text().strip()
        try:
            return float(text)
        except ValueError:
            return float(json.loads(text)["bound"])
    if mode == "oracle":
        return oracle_optimum(inst)
    res = solve(build_model(inst), SolveParams(mip_gap=a.bound_gap, time_limit=a.bound_time, seed=a.seed))
    if res.best_bound is None:
        raise MineError(f"full solve produced no bound ({res.status})")
    log.info("full-solve bound %.6f (status %s, %.1fs)", res.best_bound, res.status, res.runtime)
    return res.best_bound


def _gap(obj, bound):
    if bound is None or obj is None:
        return None
    return gap_to_bound(min(obj, bound), bound)


def _sw_config(a, W=None, O=None, H=None) -> SwConfig:
    return SwConfig(W=a.W if W is None else W, O=a.O if O is None else O, H=a.H if H is None else H,
                    sub_params=_solve_params(a), fix_rule=a.sw_fix_rule)


def _lns_config(a, seed: int, bound, **over) -> LnsConfig:
    kw = dict(nbar=a.nbar, focal_method=Focal(a.focal), strategies=a.strategies, fixing=Fixing(a.fixing),
              uw=a.uw, rins=a.rins, workers=a.workers, mip_params=_solve_params(a),
              term=Termination(a.term_time, a.term_improve, a.term_min_iters), seed=seed,
              value_element=a.value_element, bound=bound)
    kw.update(over)
    return LnsConfig(**kw)


def _write_summary(path: Path, params: list[str], rows: list[dict]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*params, *SUMMARY_TAIL])
        for r in rows:
            w.writerow([r[p] for p in params] + [_fmt(r.get(c)) for c in SUMMARY_TAIL])


# ------------------------------------------------------------------ commands


def cmd_gen(a) -> int:
    if a.preset:
        cfg = preset(a.preset)
    else:
        cfg = GenConfig()
    over = {k: getattr(a, k) for k in ("pits", "blocks_per_pit", "benches_per_pit", "periods",
                                       "elements", "products") if getattr(a, k) is not None}
    for flag in ("blending", "min_production", "capex", "stockpiles", "waste_dump", "late_min_production"):
        if getattr(a, flag):
            over[flag] = True
    cfg = replace(cfg, **over)
    inst = generate_instance(cfg, a.seed)
    save_instance(inst, a.output)
    print(f"wrote {a.output}: {len(inst.pits)} pits, {len(inst.blocks)} blocks, {inst.periods} periods")
    return EXIT_OK


def cmd_validate(a) -> int:
    inst = load_instance(a.instance)
    sol = load_solution(a.solution)
    rep = validate(inst, sol, a.tol)
    text = rep.to_json()
    if a.output:
        Path(a.output).write_text(text + "\n", encoding="utf-8")
    print(f"{len(rep.entries)} violation(s); max {rep.max_violation:.3g}")
    for e in rep.entries[:20]:
        print(f"  {e.constraint_family} {e.indices} {e.magnitude:.3g}")
    return EXIT_OK if rep.ok else EXIT_INFEASIBLE


def cmd_full(a) -> int:
    inst = load_instance(a.instance)
    out = _outdir(a)
    m = build_model(inst)
    res = solve(m, _solve_params(a))
    trace = Trace(("status", "objective", "best_bound", "solve_time_s"))
    trace.add(status=str(res.status), objective=res.objective, best_bound=res.best_bound,
              solve_time_s=round(res.runtime, 6))
    trace.write_csv(out / "full_trace.csv")
    if not res.has_incumbent:
        print(f"no solution: {res.status}")
        return EXIT_INFEASIBLE
    sol = extract_solution(m, res.vector)
    save_solution(sol, out / "solution.json")
    print(f"{res.status}: objective {sol.objective:.6f} bound {res.best_bound} in {res.runtime:.1f}s")
    return EXIT_OK


def cmd_sw(a) -> int:
    inst = load_instance(a.instance)
    out = _outdir(a)
    try:
        sol, trace = run_sliding_windows(inst, _sw_config(a))
    except WindowInfeasible as exc:
        print(f"infeasible: {exc}")
        return EXIT_INFEASIBLE
    save_solution(sol, out / "solution.json")
    trace.write_csv(out / "sw_trace.csv")
    print(f"objective {sol.objective:.6f} over {len(trace)} windows")
    return EXIT_OK


def _initial(a, inst):
    """Starting solution for LNS and the time spent producing it."""
    if a.init:
        return load_solution(a.init), 0.0
    t0 = time.perf_counter()
    sol, _ = run_sliding_windows(inst, _sw_config(a))
    return sol, time.perf_counter() - t0


def cmd_lns(a) -> int:
    inst = load_instance(a.instance)
    out = _outdir(a)
    bound = _bound(a, inst)
    try:
        init, init_time = _initial(a, inst)
    except WindowInfeasible as exc:
        print(f"initial solution: {exc}")
        return EXIT_INFEASIBLE
    gaps, times = [], []
    for k in range(a.seeds):
        seed = a.seed + 1000 * k
        t0 = time.perf_counter()
        best, trace = run_lns(inst, init, _lns_config(a, seed, bound))
        elapsed = time.perf_counter() - t0 + (init_time if a.include_init_time else 0.0)
        save_solution(best, out / f"solution_seed{seed}.json")
        trace.write_csv(out / f"lns_trace_seed{seed}.csv")
        gaps.append(_gap(best.objective, bound))
        times.append(elapsed)
        print(f"seed {seed}: objective {best.objective:.6f} gap {_fmt(gaps[-1])} time {elapsed:.1f}s")
    row = {"nbar": a.nbar, "focal": a.focal, "fixing": a.fixing, "rins": int(a.rins),
           **_summary(gaps, times), "status": "ok"}
    _write_summary(out / "summary.csv", ["nbar", "focal", "fixing", "rins"], [row])
    return EXIT_OK


LNS_GRID = {"nbar": int, "focal": str, "fixing": str, "rins": _bool, "uw": str, "strategies": str}


def cmd_sweep(a) -> int:
    if bool(a.sw_grid) == bool(a.lns_grid):
        raise UsageError("give exactly one of --sw-grid or --lns-grid")
    inst = load_instance(a.instance)
    out = _outdir(a)
    bound = _bound(a, inst)
    rows = []
    if a.sw_grid:
        grid = parse_grid(a.sw_grid, {"W": int, "H": int, "O": int})
        grid.setdefault("W", [a.W])
        grid.setdefault("H", [a.H])
        grid.setdefault("O", [a.O])
        params = ["W", "H", "O"]
        for W, H, O in itertools.product(grid["W"], grid["H"], grid["O"]):
            rows.append(_sw_cell(a, inst, bound, W, H, O))
    else:
        grid = parse_grid(a.lns_grid, LNS_GRID)
        params = list(grid)
        try:
            init, init_time = _initial(a, inst)
        except WindowInfeasible as exc:
            print(f"initial solution: {exc}")
            return EXIT_INFEASIBLE
        for combo in itertools.product(*grid.values()):
            cell = dict(zip(params, combo))
            rows.append(_lns_cell(a, inst, bound, init, init_time, cell))
    _write_summary(out / "summary.csv", params, rows)
    bad = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} cells, {bad} marked --; summary in {out / 'summary.csv'}")
    return EXIT_INFEASIBLE if bad else EXIT_OK


def _sw_cell(a, inst, bound, W, H, O) -> dict:
    cell = {"W": W, "H": H, "O": O}
    try:
        cfg = _sw_config(a, W=W, O=O, H=H)
    except StepError:
        return {**cell, "status": "--"}
    gaps, times = [], []
    for k in range(a.seeds):
        cfg_k = replace(cfg, sub_params=replace(cfg.sub_params, seed=a.seed + k))
        t0 = time.perf_counter()
        try:
            sol, _ = run_sliding_windows(inst, cfg_k)
        except WindowInfeasible:
            return {**cell, "status": "infeasible"}
        times.append(time.perf_counter() - t0)
        gaps.append(_gap(sol.objective, bound))
    return {**cell, **_summary(gaps, times), "status": "ok"}


def _lns_cell(a, inst, bound, init, init_time, cell) -> dict:
    over = {}
    if "nbar" in cell:
        over["nbar"] = cell["nbar"]
    if "focal" in cell:
        over["focal_method"] = Focal(cell["focal"])
    if "fixing" in cell:
        over["fixing"] = Fixing(cell["fixing"])
    if "rins" in cell:
        over["rins"] = cell["rins"]
    if "uw" in cell:
        over["uw"] = parse_uw(cell["uw"])
    if "strategies" in cell:
        over["strategies"] = parse_strategies(cell["strategies"].replace("+", ","))
    gaps, times = [], []
    for k in range(a.seeds):
        cfg = _lns_config(a, a.seed + 1000 * k, bound, **over)
        t0 = time.perf_counter()
        best, _ = run_lns(inst, init, cfg)
        times.append(time.perf_counter() - t0 + (init_time if a.include_init_time else 0.0))
        gaps.append(_gap(best.objective, bound))
    return {**cell, **_summary(gaps, times), "status": "ok"}


# ------------------------------------------------------------------ argparse


def _add_solve_flags(p):
    p.add_argument("--mip-gap", type=float, default=1e-3, help="relative MIP gap per solve")
    p.add_argument("--mip-time", type=float, default=1e9, help="time limit per MIP solve (s)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="out", help="output directory")


def _add_sw_flags(p):
    p.add_argument("-W", type=int, default=3, help="window width")
    p.add_argument("-O", type=int, default=1, help="window overlap")
    p.add_argument("-H", type=int, default=0, help="relaxed trailing periods")
    p.add_argument("--sw-fix-rule", choices=(STEP, PAPER_LITERAL), default=STEP)


def _add_bound_flags(p, default=None):
    p.add_argument("--bound-from", choices=("full-solve", "file", "oracle"), default=default)
    p.add_argument("--bound-file", help="file holding the bound (number or JSON with 'bound')")
    p.add_argument("--bound-time", type=float, default=3600.0, help="time limit of the bounding full solve")
    p.add_argument("--bound-gap", type=float, default=1e-4, help="MIP gap of the bounding full solve")


def _add_lns_flags(p):
    p.add_argument("--init", help="initial solution file (default: run sliding windows)")
    p.add_argument("--nbar", type=int, default=30, help="neighbourhood size limit")
    p.add_argument("--focal", choices=[f.value for f in Focal], default="md")
    p.add_argument("--strategies", type=parse_strategies, default=frozenset(),
                   help="comma list of none,blending,timing,pitlinks,trigger or 'all'")
    p.add_argument("--fixing", choices=[f.value for f in Fixing], default="sd")
    p.add_argument("--uw", type=parse_uw, default=None, help="unfix window in periods, or inf")
    p.add_argument("--rins", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--term-time", type=float, default=600.0)
    p.add_argument("--term-improve", type=float, default=1.0, help="improvement rate threshold (percent)")
    p.add_argument("--term-min-iters", type=int, default=100)
    p.add_argument("--seeds", type=int, default=1, help="number of seeded runs")
    p.add_argument("--value-element", help="element weighting OBJ focal selection")
    p.add_argument("--include-init-time", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="minelns", description=__doc__.splitlines()[0])
    ap.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic instance")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="instance file to write")
    for name in ("pits", "blocks-per-pit", "benches-per-pit", "periods", "elements", "products"):
        p.add_argument(f"--{name}", type=int, dest=name.replace("-", "_"))
    for name in ("blending", "min-production", "capex", "stockpiles", "waste-dump", "late-min-production"):
        p.add_argument(f"--{name}", action="store_true", dest=name.replace("-", "_"))
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("validate", help="check a solution against an instance")
    p.add_argument("instance")
    p.add_argument("solution")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("-o", "--output", help="JSON report file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("full", help="solve the full model")
    p.add_argument("instance")
    _add_solve_flags(p)
    p.set_defaults(func=cmd_full)

    p = sub.add_parser("sw", help="sliding-windows heuristic")
    p.add_argument("instance")
    _add_sw_flags(p)
    _add_solve_flags(p)
    p.set_defaults(func=cmd_sw)

    p = sub.add_parser("lns", help="large neighbourhood search")
    p.add_argument("instance")
    _add_sw_flags(p)
    _add_solve_flags(p)
    _add_lns_flags(p)
    _add_bound_flags(p)
    p.set_defaults(func=cmd_lns)

    p = sub.add_parser("sweep", help="parameter grid over sliding windows or LNS")
    p.add_argument("instance")
    p.add_argument("--sw-grid", nargs="+", metavar="NAME=VALUES", help="e.g. W=1..7 H=0,2,4 O=0,1,2")
    p.add_argument("--lns-grid", nargs="+", metavar="NAME=VALUES", help="e.g. nbar=10,30 focal=md,rand")
    _add_sw_flags(p)
    _add_solve_flags(p)
    _add_lns_flags(p)
    _add_bound_flags(p)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; usage errors are 1 here
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=getattr(logging, str(a.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except (UsageError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
