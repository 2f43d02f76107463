"""Sliding-windows construction heuristic.

The horizon is covered by overlapping windows of ``W`` periods.  Each window
is solved as a MIP together with up to ``H`` following periods whose integer
variables are relaxed; afterwards the first ``W - O`` periods of the window
are frozen and the window moves on.  Periods beyond the relaxed tail are left
out of the subproblem altogether.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from .errors import ConfigError, StepError, WindowInfeasible
from .feasibility import npv
from .instance import Instance
from .model import RelaxSpec, apply_fixes, build_model, extract_solution, history_fixes
from .solution import Solution
from .solver import Backend, SolveParams, solve
from .trace import SW_COLUMNS, Trace

log = logging.getLogger(__name__)

STEP = "step"
PAPER_LITERAL = "paper-literal"


@dataclass(frozen=True)
class SwConfig:
    W: int
    O: int = 0
    H: int = 0
    sub_params: SolveParams = field(default_factory=SolveParams)
    fix_rule: str = STEP

    def __post_init__(self):
        if self.W < 1 or self.O < 0 or self.H < 0:
            raise ConfigError(f"need W >= 1, O >= 0, H >= 0; got W={self.W} O={self.O} H={self.H}")
        if self.fix_rule not in (STEP, PAPER_LITERAL):
            raise ConfigError(f"unknown fix rule {self.fix_rule!r}")
        _step(self.W, self.O, self.fix_rule)


def _step(W: int, O: int, rule: str = STEP) -> int:
    step = W - O if rule == STEP else W - O - 1
    if step < 1:
        raise StepError(f"window advance is {step} for W={W}, O={O} ({rule} rule)")
    return step


def window_schedule(T: int, W: int, O: int, rule: str = STEP) -> list[tuple[int, int]]:
    """``(start, fix_through)`` for each window; the fix ranges partition ``1..T``."""
    step = _step(W, O, rule)
    out = []
    start = 1
    while start <= T:
        through = min(T, start + step - 1)
        out.append((start, through))
        start += step
    return out


def run_sliding_windows(inst: Instance, cfg: SwConfig,
                        backend: Backend | None = None) -> tuple[Solution, Trace]:
    T = inst.periods
    trace = Trace(SW_COLUMNS)
    acc = Solution()
    fixed_through = 0
    for start, through in window_schedule(T, cfg.W, cfg.O, cfg.fix_rule):
        last = min(T, start + cfg.W + cfg.H - 1)
        relaxed = RelaxSpec(frozenset(range(start + cfg.W, last + 1)))
        m = build_model(inst, start, last, relaxed)
        if fixed_through:
            apply_fixes(m, history_fixes(m, acc, fixed_through))
        t0 = time.perf_counter()
        res = solve(m, cfg.sub_params, backend)
        elapsed = time.perf_counter() - t0
        trace.add(window_start=start, solve_time_s=round(elapsed, 6),
                  objective=res.objective, status=str(res.status))
        if not res.has_incumbent:
            log.info("window starting at %d has no solution (%s)", start, res.status)
            raise WindowInfeasible(start, res.status)
        sol = extract_solution(m, res.vector)
        for key, v in sol.items():
            if start <= key.period <= through:
                acc[key] = v
        fixed_through = through
    acc.objective = npv(inst, acc)
    return acc, trace


__all__ = ["PAPER_LITERAL", "STEP", "SwConfig", "run_sliding_windows", "window_schedule"]
