"""The parallel improvement loop: shared incumbent, workers, termination."""

from __future__ import annotations

import logging
import math
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigError, EmptyHistory, LnsAborted
from ..feasibility import gap_to_bound, npv, validate
from ..instance import Instance
from ..model import apply_fixes, build_model, clear_fixes, extract_solution, warm_start
from ..solution import Solution
from ..solver import Backend, SolveParams, Status, solve, solve_lp_relaxation
from ..trace import LNS_COLUMNS, Trace
from .fixing import Fixing, fix_set_for, rins_fixes
from .neighbourhood import Focal, Strategy, base_weights, check_applicable, form_neighbourhood

log = logging.getLogger(__name__)

ACCEPT_EPS = 1e-9
ACCEPT_TOL = 1e-5
MIX_ORDER = (Focal.RAND, Focal.OBJ, Focal.MD)


@dataclass(frozen=True)
class Termination:
    time_limit: float = 600.0   # L_T, seconds
    improve_rate: float = 1.0   # L_imp, percent per iteration
    min_iters: int = 100        # L_iter

    def __post_init__(self):
        if self.time_limit <= 0 or self.improve_rate < 0 or self.min_iters < 1:
            raise ConfigError(f"invalid termination settings {self}")


@dataclass(frozen=True)
class LnsConfig:
    nbar: int = 30
    focal_method: Focal = Focal.MD
    strategies: frozenset = frozenset()
    fixing: Fixing = Fixing.SD
    uw: int | None = None
    rins: bool = True
    workers: int = 1
    mip_params: SolveParams = field(default_factory=lambda: SolveParams(mip_gap=1e-4, time_limit=60.0))
    term: Termination = field(default_factory=Termination)
    seed: int = 0
    value_element: str | None = None
    rins_tol: float = 1e-5
    bound: float | None = None  # upper bound used for the gap column of the trace

    def __post_init__(self):
        if self.nbar < 1:
            raise ConfigError("nbar must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.uw is not None and self.uw < 0:
            raise ConfigError("uw must be >= 0 or None for unbounded")
        object.__setattr__(self, "focal_method", Focal(self.focal_method))
        object.__setattr__(self, "fixing", Fixing(self.fixing))
        object.__setattr__(self, "strategies", frozenset(Strategy(s) for s in self.strategies))


# settings found to work on the largest models: big neighbourhoods, flow fixing, no RINS
LARGE = LnsConfig(nbar=200, fixing=Fixing.SDF, uw=2, rins=False)


def improvement_rate(history, iterations: int) -> float:
    """Mean percentage improvement per iteration (non-improving iterations count as 0)."""
    if iterations < 1:
        raise EmptyHistory("improvement rate needs at least one iteration")
    return math.fsum(history) / iterations


def should_terminate(elapsed: float, iterations: int, history, term: Termination) -> bool:
    if elapsed >= term.time_limit:
        return True
    return iterations >= term.min_iters and improvement_rate(history, iterations) < term.improve_rate


class IncumbentStore:
    """Best solution shared by all workers; publication needs a strict improvement."""

    def __init__(self, initial: Solution):
        self._best = initial
        self._lock = threading.Lock()
        self.history: list[tuple[float, int, int, float, bool]] = []

    @property
    def best(self) -> Solution:
        return self._best

    def snapshot(self) -> Solution:
        with self._lock:
            return self._best

    def publish(self, sol: Solution, wall: float, iteration: int, worker: int) -> float | None:
        """Install ``sol`` if it beats the best by more than ACCEPT_EPS; returns the percent gain."""
        with self._lock:
            old = self._best.objective
            accepted = sol.objective > old + ACCEPT_EPS
            self.history.append((wall, iteration, worker, sol.objective, accepted))
            if not accepted:
                return None
            self._best = sol
            return 100.0 * (sol.objective - old) / max(1e-10, abs(old))


class _Run:
    def __init__(self, inst: Instance, initial: Solution, cfg: LnsConfig, backend):
        self.inst = inst
        self.cfg = cfg
        self.backend = backend
        self.store = IncumbentStore(initial)
        self.trace = Trace(LNS_COLUMNS)
        self.lock = threading.Lock()
        self.stop = threading.Event()
        self.iterations = 0
        self.gains: list[float] = []
        self.failures: list[BaseException] = []
        self.t0 = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def record(self, worker, strategy, size, status, objective, gain):
        with self.lock:
            self.iterations += 1
            self.gains.append(gain or 0.0)
            gap = None
            if self.cfg.bound is not None and objective is not None:
                gap = gap_to_bound(min(objective, self.cfg.bound), self.cfg.bound)
            self.trace.add(wall_time_s=round(self.elapsed(), 6), iteration=self.iterations, worker=worker,
                           strategy=strategy, neighbourhood_size=size, solve_status=status,
                           objective=objective, gap_pct=gap, accepted=gain is not None)
            if should_terminate(self.elapsed(), self.iterations, self.gains, self.cfg.term):
                self.stop.set()

    def worker(self, k: int):
        cfg, inst = self.cfg, self.inst
        rng = np.random.default_rng(cfg.seed + k)
        method = MIX_ORDER[k % 3] if cfg.focal_method == Focal.MIX else cfg.focal_method
        weights = base_weights(inst, method, cfg.value_element)
        if not any(w > 0 for w in weights.values()):
            log.warning("worker %d: %s weights are all zero, sampling uniformly", k, method.value)
            weights = base_weights(inst, Focal.RAND)
        strategies = sorted(cfg.strategies, key=lambda s: s.value)
        strategy = strategies[k % len(strategies)] if strategies else Strategy.NONE
        tags = frozenset() if strategy == Strategy.NONE else frozenset({strategy})
        handle = build_model(inst)
        try:
            while not self.stop.is_set():
                self.iterate(k, handle, rng, weights, strategy, tags)
        except Exception as exc:  # one failing worker must not stop the others
            log.error("worker %d stopped: %s", k, exc)
            with self.lock:
                self.failures.append(exc)

    def iterate(self, k, handle, rng, weights, strategy, tags):
        cfg, inst = self.cfg, self.inst
        inc = self.store.snapshot()
        nb = form_neighbourhood(inst, inc, weights, tags, cfg.nbar, rng)
        clear_fixes(handle)
        apply_fixes(handle, fix_set_for(inst, inc, nb, cfg.fixing, cfg.uw))
        warm_start(handle, inc)
        remaining = max(1e-3, cfg.term.time_limit - self.elapsed())
        params = replace(cfg.mip_params, time_limit=min(cfg.mip_params.time_limit, remaining),
                         seed=cfg.mip_params.seed + k)
        if cfg.rins:
            lp = solve_lp_relaxation(handle, params, self.backend)
            if lp.values is not None:
                apply_fixes(handle, rins_fixes(lp, inc, cfg.rins_tol))
        res = solve(handle, params, self.backend)
        gain = None
        objective = None
        if res.status == Status.INFEASIBLE:
            log.warning("worker %d: restricted model infeasible despite incumbent start; discarded", k)
        elif res.has_incumbent:
            cand = extract_solution(handle, res.vector)
            cand.objective = npv(inst, cand)
            objective = cand.objective
            if cand.objective > inc.objective + ACCEPT_EPS and validate(inst, cand, ACCEPT_TOL).ok:
                gain = self.store.publish(cand, self.elapsed(), self.iterations + 1, k)
        self.record(k, strategy.value, len(nb), str(res.status), objective, gain)


def run_lns(inst: Instance, initial: Solution, cfg: LnsConfig,
            backend: Backend | None = None) -> tuple[Solution, Trace]:
    """Improve ``initial`` by repeated restricted MIP solves until termination."""
    check_applicable(inst, cfg.strategies)
    rep = validate(inst, initial, ACCEPT_TOL)
    if not rep.ok:
        raise ConfigError(f"initial solution violates {sorted(rep.families)}")
    initial = initial.copy()
    initial.objective = npv(inst, initial)
    run = _Run(inst, initial, cfg, backend)
    if cfg.workers == 1:
        run.worker(0)
    else:
        threads = [threading.Thread(target=run.worker, args=(k,), name=f"lns-{k}", daemon=True)
                   for k in range(cfg.workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if len(run.failures) == cfg.workers:
        raise LnsAborted(f"all {cfg.workers} workers failed; first error: {run.failures[0]}")
    return run.store.best, run.trace


__all__ = ["IncumbentStore", "LARGE", "LnsConfig", "Termination", "improvement_rate",
           "run_lns", "should_terminate"]
