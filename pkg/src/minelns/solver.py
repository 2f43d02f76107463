"""Optimisation backend contract and the HiGHS binding.

Every other module talks to a backend only through :func:`solve` and
:func:`solve_lp_relaxation`.  A backend keeps one session per ModelHandle
(``handle.sessions[name]``) so concurrent workers holding separate handles
never share solver state.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import BackendError
from .model import ModelHandle

GAP_EPS = 1e-10


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    GAP_LIMIT = "GapLimit"
    TIME_LIMIT = "TimeLimit"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ERROR = "Error"

    def __str__(self) -> str:
        return self.value


class Emphasis(str, enum.Enum):
    DEFAULT = "default"
    FEASIBILITY_FIRST = "feasibility"


@dataclass(frozen=True)
class SolveParams:
    mip_gap: float = 1e-3
    time_limit: float = 1e9
    seed: int = 0
    threads: int = 1
    emphasis: Emphasis = Emphasis.DEFAULT

    def __post_init__(self):
        if not self.mip_gap >= 0:
            raise ValueError(f"mip_gap must be >= 0, got {self.mip_gap}")
        if not self.time_limit > 0:
            raise ValueError(f"time_limit must be > 0, got {self.time_limit}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class SolveResult:
    status: Status
    objective: float | None = None
    best_bound: float | None = None
    values: dict | None = None
    runtime: float = 0.0
    vector: np.ndarray | None = None

    @property
    def has_incumbent(self) -> bool:
        return self.objective is not None

    @property
    def gap(self) -> float | None:
        if self.objective is None or self.best_bound is None:
            return None
        return relative_gap(self.objective, self.best_bound)


def relative_gap(objective: float, bound: float) -> float:
    return abs(bound - objective) / max(GAP_EPS, abs(objective))


class Backend:
    """Interface every binding implements."""

    name = "abstract"
    deterministic = False

    def solve(self, m: ModelHandle, p: SolveParams) -> SolveResult:
        raise NotImplementedError

    def solve_lp_relaxation(self, m: ModelHandle, p: SolveParams) -> SolveResult:
        raise NotImplementedError


class HighsBackend(Backend):
    """Binding to HiGHS through ``highspy``.

    Deterministic for a fixed (model, params, seed) when run with one thread
    and no binding time limit.
    """

    name = "highs"
    deterministic = True

    def _session(self, m: ModelHandle):
        import highspy

        h = m.sessions.get(self.name)
        if h is not None:
            return h
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        lp = highspy.HighsLp()
        A = m.A.tocsc()
        lp.num_col_ = m.num_vars
        lp.num_row_ = m.num_rows
        lp.col_cost_ = m.cost
        lp.col_lower_ = m.lb
        lp.col_upper_ = m.ub
        lp.row_lower_ = np.where(np.isinf(m.row_lo), -highspy.kHighsInf, m.row_lo)
        lp.row_upper_ = np.where(np.isinf(m.row_hi), highspy.kHighsInf, m.row_hi)
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = A.indptr
        lp.a_matrix_.index_ = A.indices
        lp.a_matrix_.value_ = A.data
        lp.a_matrix_.num_col_ = m.num_vars
        lp.a_matrix_.num_row_ = m.num_rows
        lp.sense_ = highspy.ObjSense.kMaximize
        lp.integrality_ = self._integrality(m.integer)
        status = h.passModel(lp)
        if status == highspy.HighsStatus.kError:
            raise BackendError("HiGHS rejected the model")
        m.sessions[self.name] = h
        return h

    @staticmethod
    def _integrality(mask):
        import highspy

        return [highspy.HighsVarType.kInteger if v else highspy.HighsVarType.kContinuous for v in mask]

    def _prepare(self, h, m: ModelHandle, p: SolveParams, mip: bool):
        n = m.num_vars
        idx = np.arange(n, dtype=np.int32)
        h.changeColsBounds(n, idx, m.lb, m.ub)
        h.setOptionValue("mip_rel_gap", float(p.mip_gap))
        h.setOptionValue("time_limit", float(min(p.time_limit, 1e9)))
        h.setOptionValue("random_seed", int(p.seed) % (2**31 - 1))
        h.setOptionValue("mip_heuristic_effort",
                         0.3 if p.emphasis == Emphasis.FEASIBILITY_FIRST else 0.05)
        h.setOptionValue("mip_abs_gap", 1e-9 if p.mip_gap == 0 else 1e-6)
        if mip and m.start_values is not None:
            import highspy

            sol = highspy.HighsSolution()
            sol.col_value = list(np.clip(m.start_values, m.lb, m.ub))
            sol.value_valid = True
            h.setSolution(sol)

    def _run(self, h, m: ModelHandle, p: SolveParams, mip: bool) -> SolveResult:
        import highspy

        t0 = time.perf_counter()
        try:
            h.run()
        except Exception as exc:  # pragma: no cover - backend failure path
            raise BackendError(f"HiGHS failed: {exc}") from exc
        runtime = time.perf_counter() - t0
        ms = h.getModelStatus()
        info = h.getInfo()
        has_sol = info.primal_solution_status == 2
        MS = highspy.HighsModelStatus
        if ms == MS.kInfeasible or ms == MS.kUnboundedOrInfeasible:
            return SolveResult(Status.INFEASIBLE, runtime=runtime)
        if ms == MS.kUnbounded:
            return SolveResult(Status.UNBOUNDED, runtime=runtime)
        if ms == MS.kOptimal:
            status = Status.OPTIMAL
        elif ms in (MS.kTimeLimit, MS.kIterationLimit, MS.kSolutionLimit, MS.kInterrupt,
                    MS.kObjectiveBound, MS.kObjectiveTarget):
            status = Status.TIME_LIMIT
        else:
            return SolveResult(Status.ERROR, runtime=runtime)
        if not has_sol:
            return SolveResult(status if status != Status.OPTIMAL else Status.ERROR, runtime=runtime)
        vec = np.asarray(h.getSolution().col_value, dtype=float)
        obj = float(info.objective_function_value)
        if mip:
            bound = float(info.mip_dual_bound)
            if not math.isfinite(bound):
                bound = None
            elif bound < obj:
                bound = obj
        else:
            bound = obj if status == Status.OPTIMAL else None
        if mip and status == Status.OPTIMAL and bound is not None:
            if relative_gap(obj, bound) > p.mip_gap + 1e-9 and abs(bound - obj) > 1e-6:
                status = Status.GAP_LIMIT
        values = dict(zip(m.keys, vec.tolist()))
        return SolveResult(status, obj, bound, values, runtime, vec)

    def solve(self, m: ModelHandle, p: SolveParams) -> SolveResult:
        h = self._session(m)
        if not m.integer.any():
            self._prepare(h, m, p, mip=False)
            return self._run(h, m, p, mip=False)
        self._prepare(h, m, p, mip=True)
        return self._run(h, m, p, mip=True)

    def solve_lp_relaxation(self, m: ModelHandle, p: SolveParams) -> SolveResult:
        import highspy

        h = self._session(m)
        n = m.num_vars
        idx = np.arange(n, dtype=np.int32)
        if m.integer.any():
            h.changeColsIntegrality(n, idx, [highspy.HighsVarType.kContinuous] * n)
        try:
            self._prepare(h, m, p, mip=False)
            return self._run(h, m, p, mip=False)
        finally:
            if m.integer.any():
                h.changeColsIntegrality(n, idx, self._integrality(m.integer))


_DEFAULT: Backend = HighsBackend()


def default_backend() -> Backend:
    return _DEFAULT


def solve(m: ModelHandle, p: SolveParams | None = None, backend: Backend | None = None) -> SolveResult:
    return (backend or _DEFAULT).solve(m, p or SolveParams())


def solve_lp_relaxation(m: ModelHandle, p: SolveParams | None = None,
                        backend: Backend | None = None) -> SolveResult:
    return (backend or _DEFAULT).solve_lp_relaxation(m, p or SolveParams())
