"""Solver-independent solution checking, NPV recomputation and a brute-force optimum.

``validate`` and ``npv`` work straight from the Instance data and never touch
the model builder, so they serve as an independent check on it.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

from .errors import DimensionMismatch, InfeasibleInstance, InvalidBound, TooLarge
from .instance import PRODUCT, SOURCE, STOCKPILE, Instance
from .solution import INT_TOL, Solution, VarKey

CONVENTION = ("flow-extraction link weighted by parcel tonnage; "
              "parcel availability bounded by fraction 1")
DEFAULT_TOL = 1e-6


@dataclass
class Violation:
    constraint_family: str
    indices: tuple
    magnitude: float


@dataclass
class ViolationReport:
    entries: list = field(default_factory=list)
    convention: str = CONVENTION

    @property
    def max_violation(self) -> float:
        return max((e.magnitude for e in self.entries), default=0.0)

    @property
    def ok(self) -> bool:
        return not self.entries

    @property
    def families(self) -> set[str]:
        return {e.constraint_family for e in self.entries}

    def to_dict(self) -> dict:
        return {
            "convention": self.convention,
            "max_violation": self.max_violation,
            "entries": [{"constraint_family": e.constraint_family, "indices": list(e.indices),
                         "magnitude": e.magnitude} for e in self.entries],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _expected_keys(inst: Instance):
    T = inst.periods
    for b in inst.blocks:
        for t in range(1, T + 1):
            for kind in ("X", "Y", "Z"):
                yield VarKey(kind, (b.id, t))
    for m in inst.pits:
        net = m.network
        stock = [n.id for n in net.nodes if n.kind == STOCKPILE]
        for bid in m.blocks:
            for p in inst.block_map[bid].parcels:
                for t in range(1, T + 1):
                    for (i, j) in net.arcs:
                        yield VarKey("F", (p.id, i, j, t))
                    for n in stock:
                        yield VarKey("S", (n, p.id, t))
        for t in range(1, T + 1):
            yield VarKey("WI", (m.id, t))
            yield VarKey("WP", (m.id, t))


def _check_complete(inst: Instance, sol: Solution) -> None:
    missing = [k for k in _expected_keys(inst) if sol.get(k) is None]
    if missing:
        raise DimensionMismatch(f"solution lacks {len(missing)} values, e.g. {missing[:3]}")


def validate(inst: Instance, sol: Solution, tol: float = DEFAULT_TOL) -> ViolationReport:
    """Re-evaluate every constraint family at ``sol`` and report violations above ``tol``."""
    _check_complete(inst, sol)
    T = inst.periods
    rep = ViolationReport()

    def report(family, idx, mag):
        if mag > tol:
            rep.entries.append(Violation(family, idx, float(mag)))

    for key, v in sol.items():
        if not math.isfinite(v):
            report("bounds", (key.kind, *key.index), math.inf)
            continue
        report("bounds", (key.kind, *key.index), max(-1e-9 - v, v - 1 - 1e-9, 0.0))
        if key.kind in ("Y", "Z", "WI", "WP"):
            dist = abs(v - round(v))
            if dist > INT_TOL:
                rep.entries.append(Violation("integrality", (key.kind, *key.index), dist))

    x, y, z, f, s = sol.x, sol.y, sol.z, sol.f, sol.s

    # quantities per pit, parcel, period
    mined: dict[tuple[str, int], float] = {}
    for m in inst.pits:
        net = m.network
        src = net.source.id
        src_arcs = [a for a in net.arcs if a[0] == src]
        parcels = [p for bid in m.blocks for p in inst.block_map[bid].parcels]
        for t in range(1, T + 1):
            tons = sum(p.tonnage * f[p.id, i, j, t] for p in parcels for (i, j) in src_arcs)
            mined[m.id, t] = tons
            report("mining_capacity", (m.id, t), tons - m.mining_capacity * sol.wp[m.id, t])
            opened = sum(sol.wi[m.id, tau] for tau in range(1, t + 1))
            report("pit_open", (m.id, t), sol.wp[m.id, t] - opened)
            for n in net.nodes:
                if n.kind in (SOURCE, PRODUCT) or n.exit_capacity is None:
                    continue
                out = sum(p.tonnage * f[p.id, i, j, t] for p in parcels for (i, j) in net.arcs if i == n.id)
                report("node_capacity", (m.id, n.id, t), out - n.exit_capacity)
                if n.kind == STOCKPILE:
                    held = sum(p.tonnage * s[n.id, p.id, t] for p in parcels)
                    report("stockpile_capacity", (m.id, n.id, t), held - n.stockpile_capacity[t - 1])

        for p in parcels:
            for n in net.nodes:
                if n.kind in (SOURCE, PRODUCT):
                    continue
                for t in range(1, T + 1):
                    inflow = sum(f[p.id, i, j, t] for (i, j) in net.arcs if j == n.id)
                    outflow = sum(f[p.id, i, j, t] for (i, j) in net.arcs if i == n.id)
                    if n.kind == STOCKPILE:
                        prev = s[n.id, p.id, t - 1] if t > 1 else 0.0
                        report("stockpile_balance", (n.id, p.id, t),
                               abs(s[n.id, p.id, t] - (prev + inflow - outflow)))
                        report("stockpile_outflow", (n.id, p.id, t), outflow - prev)
                    else:
                        report("mass_balance", (m.id, n.id, p.id, t), abs(inflow - outflow))
            used = sum(f[p.id, i, j, t] for t in range(1, T + 1) for (i, j) in src_arcs)
            report("parcel_availability", (p.id,), used - 1.0)

        for bid in m.blocks:
            blk = inst.block_map[bid]
            tau_b = sum(p.tonnage for p in blk.parcels)
            for t in range(1, T + 1):
                tons = sum(p.tonnage * f[p.id, i, j, t] for p in blk.parcels for (i, j) in src_arcs)
                prev = x[bid, t - 1] if t > 1 else 0.0
                report("flow_link", (bid, t), abs(tons - tau_b * (x[bid, t] - prev)))

    for r in inst.products:
        for e, (lo, hi) in r.grade_windows.items():
            for t in range(1, T + 1):
                tons = metal = 0.0
                for m in inst.pits:
                    net = m.network
                    arcs = [(i, j) for (i, j) in net.arcs
                            if net.node_map[j].kind == PRODUCT and net.node_map[j].product == r.id]
                    if not arcs:
                        continue
                    for bid in m.blocks:
                        for p in inst.block_map[bid].parcels:
                            q = p.tonnage * sum(f[p.id, i, j, t] for (i, j) in arcs)
                            tons += q
                            metal += q * p.grades.get(e, 0.0)
                report("blend_min", (r.id, e, t), lo * tons - metal)
                report("blend_max", (r.id, e, t), metal - hi * tons)

    for k, g in enumerate(inst.min_production_groups):
        for t in range(1, T + 1):
            report("min_production", (k, t), g.minimum[t - 1] - sum(mined[m, t] for m in g.pits))

    for (i, j) in inst.precedences:
        for t in range(1, T + 1):
            report("precedence", (i, j, t), z[i, t] - y[j, t])

    for b in inst.blocks:
        for t in range(1, T + 1):
            report("x_le_z", (b.id, t), x[b.id, t] - z[b.id, t])
            report("y_le_x", (b.id, t), y[b.id, t] - x[b.id, t])
            if t < T:
                report("monotone_x", (b.id, t), x[b.id, t] - x[b.id, t + 1])
                report("monotone_y", (b.id, t), y[b.id, t] - y[b.id, t + 1])
                report("monotone_z", (b.id, t), z[b.id, t] - z[b.id, t + 1])
    return rep


def npv(inst: Instance, sol: Solution) -> float:
    """Discounted revenue minus extraction and capex cost of ``sol``."""
    _check_complete(inst, sol)
    total = 0.0
    for t in range(1, inst.periods + 1):
        cash = 0.0
        for m in inst.pits:
            net = m.network
            src = net.source.id
            cash -= m.capex_cost * sol.wi[m.id, t]
            for bid in m.blocks:
                for p in inst.block_map[bid].parcels:
                    for (i, j) in net.arcs:
                        q = p.tonnage * sol.f[p.id, i, j, t]
                        node = net.node_map[j]
                        if node.kind == PRODUCT:
                            cash += q * inst.product_map[node.product].revenue_per_ton
                        if i == src:
                            cash -= q * p.extraction_cost
        total += inst.discount[t - 1] * cash
    return total


def gap_to_bound(objective: float, bound: float) -> float:
    """Percentage gap of a maximisation objective below an upper bound."""
    if bound < objective - 1e-9:
        raise InvalidBound(f"bound {bound} is below objective {objective}")
    return 100.0 * (bound - objective) / max(1e-10, abs(bound))


def zero_solution(inst: Instance) -> Solution:
    sol = Solution()
    for k in _expected_keys(inst):
        sol[k] = 0.0
    return sol


# ---------------------------------------------------------------- oracle


def _depletion_patterns(inst: Instance, T: int):
    """Depletion periods per block (``T + 1`` = never) respecting precedence: F_i >= F_j."""
    order = _topo_order(inst)
    never = T + 1
    choice: dict[str, int] = {}

    def rec(k):
        if k == len(order):
            yield dict(choice)
            return
        b = order[k]
        lo = max((choice[j] for j in inst.direct_predecessors[b]), default=1)
        for fin in range(lo, never + 1):
            choice[b] = fin
            yield from rec(k + 1)
        del choice[b]

    yield from rec(0)


def _topo_order(inst: Instance) -> list[str]:
    done: set[str] = set()
    order: list[str] = []
    remaining = [b.id for b in inst.blocks]
    while remaining:
        nxt = [b for b in remaining if inst.direct_predecessors[b] <= done]
        for b in nxt:
            done.add(b)
            order.append(b)
        remaining = [b for b in remaining if b not in done]
    return order


def oracle_optimum(inst: Instance, limit: int = 20000, params=None) -> float:
    """Optimal NPV by enumerating the integer decisions and solving each remaining LP.

    Depletion periods are enumerated per block; start flags are then set to the
    largest value precedence allows and pit triggers to a single opening, both of
    which only enlarge the continuous feasible set and so lose no optimum.
    """
    from .model import apply_fixes, build_model, clear_fixes
    from .solver import SolveParams, Status, solve_lp_relaxation

    T = inst.periods
    if len(inst.blocks) > 6 or T > 4:
        raise TooLarge(f"oracle limited to 6 blocks and 4 periods, got {len(inst.blocks)} and {T}")
    y_patterns = list(itertools.islice(_depletion_patterns(inst, T), limit + 1))
    open_choices = [range(1, 2) if m.capex_cost == 0 else range(1, T + 2) for m in inst.pits]
    n_open = math.prod(len(c) for c in open_choices)
    if len(y_patterns) * n_open > limit:
        raise TooLarge(f"enumeration needs more than {limit} LP solves")

    handle = build_model(inst)
    p = params or SolveParams(mip_gap=0.0)
    best = -math.inf
    for opening in itertools.product(*open_choices):
        opened = dict(zip((m.id for m in inst.pits), opening))
        for fin in y_patterns:
            # blocks of a pit can only be depleted once the pit is open
            if any(fin[b.id] <= T and fin[b.id] < opened[b.pit] for b in inst.blocks):
                continue
            fixes = {}
            for b in inst.blocks:
                for t in range(1, T + 1):
                    yv = 1.0 if t >= fin[b.id] else 0.0
                    zv = min((1.0 if t >= fin[j] else 0.0 for j in inst.direct_predecessors[b.id]), default=1.0)
                    fixes[VarKey("Y", (b.id, t))] = yv
                    fixes[VarKey("Z", (b.id, t))] = zv
            for m in inst.pits:
                for t in range(1, T + 1):
                    fixes[VarKey("WI", (m.id, t))] = 1.0 if t == opened[m.id] else 0.0
                    fixes[VarKey("WP", (m.id, t))] = 1.0 if t >= opened[m.id] else 0.0
            clear_fixes(handle)
            apply_fixes(handle, fixes)
            res = solve_lp_relaxation(handle, p)
            if res.status == Status.OPTIMAL and res.objective > best:
                best = res.objective
    if best == -math.inf:
        raise InfeasibleInstance("no integer assignment admits a feasible continuous completion")
    return best
