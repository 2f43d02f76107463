"""Builds the mine planning MIP as a backend-neutral sparse program.

The builder emits columns (one per VarKey), a sparse row matrix with a
constraint-family tag per row, and a linear objective to maximise.  Backends in
:mod:`minelns.solver` load this description; bounds are the only thing that
changes after construction (fixing, clearing, LP relaxation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, DimensionMismatch, RangeError, UnknownVariable
from .instance import PRODUCT, SOURCE, STOCKPILE, Instance
from .solution import INT_TOL, Solution, VarKey

INF = float("inf")

FAMILIES = (
    "blend_min", "blend_max", "node_capacity", "mining_capacity", "pit_open",
    "min_production", "mass_balance", "stockpile_balance", "stockpile_outflow",
    "stockpile_capacity", "precedence", "x_le_z", "y_le_x", "monotone_x",
    "monotone_y", "monotone_z", "flow_link", "parcel_availability",
)

FixSet = dict  # VarKey -> value


@dataclass(frozen=True)
class RelaxSpec:
    relaxed_periods: frozenset = frozenset()

    @classmethod
    def trailing(cls, first: int, last: int) -> "RelaxSpec":
        return cls(frozenset(range(first, last + 1)))


@dataclass
class ModelHandle:
    inst: Instance
    first_period: int
    last_period: int
    relax: RelaxSpec
    keys: list
    index: dict
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray
    cost: np.ndarray
    A: sp.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    row_family: list
    row_index: list
    orig_lb: np.ndarray = None
    orig_ub: np.ndarray = None
    fixed: set = field(default_factory=set)
    start_values: np.ndarray | None = None
    sessions: dict = field(default_factory=dict)
    sense: str = "maximize"

    def __post_init__(self):
        self.orig_lb = self.lb.copy()
        self.orig_ub = self.ub.copy()

    @property
    def num_vars(self) -> int:
        return len(self.keys)

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    @property
    def period_range(self) -> tuple[int, int]:
        return self.first_period, self.last_period

    def col(self, key: VarKey) -> int:
        try:
            return self.index[key]
        except KeyError:
            raise UnknownVariable(key) from None

    def objective_value(self, values: np.ndarray) -> float:
        return float(self.cost @ values)

    def vector(self, values) -> np.ndarray:
        """Dense column vector from a Solution or VarKey mapping; every model key must be present."""
        out = np.empty(self.num_vars)
        get = values.get
        for i, k in enumerate(self.keys):
            v = get(k)
            if v is None:
                raise DimensionMismatch(f"no value for {k}")
            out[i] = v
        return out

    def row_violations(self, values: np.ndarray, tol: float = 1e-6) -> list[tuple[str, tuple, float]]:
        """Rows of this model violated by more than ``tol`` at ``values``."""
        act = self.A @ values
        viol = np.maximum(self.row_lo - act, act - self.row_hi)
        return [(self.row_family[r], self.row_index[r], float(viol[r]))
                for r in np.nonzero(viol > tol)[0]]


class _Rows:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []
        self.lo, self.hi, self.family, self.index = [], [], [], []

    def add(self, family, index, terms, lo=-INF, hi=INF):
        r = len(self.lo)
        for c, v in terms:
            self.rows.append(r)
            self.cols.append(c)
            self.vals.append(v)
        self.lo.append(lo)
        self.hi.append(hi)
        self.family.append(family)
        self.index.append(index)


def build_model(inst: Instance, first_period: int = 1, last_period: int | None = None,
                relax: RelaxSpec | None = None) -> ModelHandle:
    """Build the NPV-maximising MIP over periods ``1..last_period``.

    Periods before ``first_period`` are still represented by variables so the
    caller can pin them to a fixed history with :func:`apply_fixes`.
    """
    T = inst.periods
    if last_period is None:
        last_period = T
    if not (1 <= first_period <= last_period <= T):
        raise RangeError(f"bad period range [{first_period}, {last_period}] for horizon {T}")
    relax = relax or RelaxSpec()
    bad = [t for t in relax.relaxed_periods if not first_period <= t <= last_period]
    if bad:
        raise RangeError(f"relaxed periods {sorted(bad)} outside [{first_period}, {last_period}]")
    for b in inst.blocks:
        if b.tonnage <= 0:
            raise CapacityError(f"block {b.id} has zero tonnage")

    periods = range(1, last_period + 1)
    keys: list[VarKey] = []
    index: dict[VarKey, int] = {}
    integer: list[bool] = []
    cost: list[float] = []

    def var(kind, idx, is_int=False):
        k = VarKey(kind, idx)
        index[k] = len(keys)
        keys.append(k)
        integer.append(is_int and idx[-1] not in relax.relaxed_periods)
        cost.append(0.0)
        return index[k]

    def add_cost(c, v):
        cost[c] += v

    X, Y, Z = {}, {}, {}
    for b in inst.blocks:
        for t in periods:
            X[b.id, t] = var("X", (b.id, t))
            Y[b.id, t] = var("Y", (b.id, t), True)
            Z[b.id, t] = var("Z", (b.id, t), True)

    F, S = {}, {}
    for m in inst.pits:
        net = m.network
        stockpiles = [n.id for n in net.nodes if n.kind == STOCKPILE]
        for bid in m.blocks:
            for p in inst.block_map[bid].parcels:
                for t in periods:
                    for (i, j) in net.arcs:
                        F[p.id, i, j, t] = var("F", (p.id, i, j, t))
                    for n in stockpiles:
                        S[n, p.id, t] = var("S", (n, p.id, t))

    WI, WP = {}, {}
    for m in inst.pits:
        for t in periods:
            WI[m.id, t] = var("WI", (m.id, t), True)
            WP[m.id, t] = var("WP", (m.id, t), True)

    # objective: discounted revenue on product arcs minus capex and extraction cost
    for m in inst.pits:
        net = m.network
        src = net.source.id
        for bid in m.blocks:
            for p in inst.block_map[bid].parcels:
                for t in periods:
                    pi = inst.discount[t - 1]
                    for (i, j) in net.arcs:
                        node = net.node_map[j]
                        if node.kind == PRODUCT:
                            add_cost(F[p.id, i, j, t], pi * p.tonnage * inst.product_map[node.product].revenue_per_ton)
                        if i == src:
                            add_cost(F[p.id, i, j, t], -pi * p.tonnage * p.extraction_cost)
        for t in periods:
            add_cost(WI[m.id, t], -inst.discount[t - 1] * m.capex_cost)

    rows = _Rows()

    # blending, one row per (product, element, period) per side
    for r in inst.products:
        for e, (zmin, zmax) in r.grade_windows.items():
            for t in periods:
                lo_terms, hi_terms = [], []
                for m in inst.pits:
                    arcs = [a for a in m.network.arcs
                            if m.network.node_map[a[1]].kind == PRODUCT
                            and m.network.node_map[a[1]].product == r.id]
                    if not arcs:
                        continue
                    for bid in m.blocks:
                        for p in inst.block_map[bid].parcels:
                            g = p.grades.get(e, 0.0)
                            for (i, j) in arcs:
                                c = F[p.id, i, j, t]
                                lo_terms.append((c, (g - zmin) * p.tonnage))
                                hi_terms.append((c, (g - zmax) * p.tonnage))
                if lo_terms:
                    rows.add("blend_min", (r.id, e, t), lo_terms, lo=0.0)
                    rows.add("blend_max", (r.id, e, t), hi_terms, hi=0.0)

    for m in inst.pits:
        net = m.network
        src = net.source.id
        parcels = [p for bid in m.blocks for p in inst.block_map[bid].parcels]
        src_arcs = net.out_arcs.get(src, [])
        for t in periods:
            # exit capacity of intermediate and stockpile nodes
            for n in net.nodes:
                if n.kind in (SOURCE, PRODUCT) or n.exit_capacity is None:
                    continue
                outs = net.out_arcs.get(n.id, [])
                terms = [(F[p.id, i, j, t], p.tonnage) for p in parcels for (i, j) in outs]
                rows.add("node_capacity", (m.id, n.id, t), terms, hi=n.exit_capacity)
            terms = [(F[p.id, i, j, t], p.tonnage) for p in parcels for (i, j) in src_arcs]
            rows.add("mining_capacity", (m.id, t), terms + [(WP[m.id, t], -m.mining_capacity)], hi=0.0)
            rows.add("pit_open", (m.id, t),
                     [(WP[m.id, t], 1.0)] + [(WI[m.id, tau], -1.0) for tau in range(1, t + 1)], hi=0.0)

        for n in net.nodes:
            if n.kind in (SOURCE, PRODUCT):
                continue
            ins, outs = net.in_arcs.get(n.id, []), net.out_arcs.get(n.id, [])
            for p in parcels:
                for t in periods:
                    flow = [(F[p.id, i, j, t], 1.0) for (i, j) in ins] + \
                           [(F[p.id, i, j, t], -1.0) for (i, j) in outs]
                    if n.kind != STOCKPILE:
                        rows.add("mass_balance", (m.id, n.id, p.id, t), flow, lo=0.0, hi=0.0)
                        continue
                    # s_t - s_{t-1} - in + out = 0
                    terms = [(S[n.id, p.id, t], 1.0)] + [(c, -v) for c, v in flow]
                    if t > 1:
                        terms.append((S[n.id, p.id, t - 1], -1.0))
                    rows.add("stockpile_balance", (n.id, p.id, t), terms, lo=0.0, hi=0.0)
                    out_terms = [(F[p.id, i, j, t], 1.0) for (i, j) in outs]
                    if t > 1:
                        out_terms.append((S[n.id, p.id, t - 1], -1.0))
                    rows.add("stockpile_outflow", (n.id, p.id, t), out_terms, hi=0.0)
            if n.kind == STOCKPILE:
                for t in periods:
                    rows.add("stockpile_capacity", (m.id, n.id, t),
                             [(S[n.id, p.id, t], p.tonnage) for p in parcels],
                             hi=n.stockpile_capacity[t - 1])

        for bid in m.blocks:
            blk = inst.block_map[bid]
            for t in periods:
                terms = [(F[p.id, i, j, t], p.tonnage) for p in blk.parcels for (i, j) in src_arcs]
                terms.append((X[bid, t], -blk.tonnage))
                if t > 1:
                    terms.append((X[bid, t - 1], blk.tonnage))
                rows.add("flow_link", (bid, t), terms, lo=0.0, hi=0.0)
            for p in blk.parcels:
                rows.add("parcel_availability", (p.id,),
                         [(F[p.id, i, j, t], 1.0) for t in periods for (i, j) in src_arcs], hi=1.0)

    for g_idx, g in enumerate(inst.min_production_groups):
        for t in periods:
            terms = []
            for mid in g.pits:
                m = inst.pit_map[mid]
                src_arcs = m.network.out_arcs.get(m.network.source.id, [])
                for bid in m.blocks:
                    for p in inst.block_map[bid].parcels:
                        terms += [(F[p.id, i, j, t], p.tonnage) for (i, j) in src_arcs]
            rows.add("min_production", (g_idx, t), terms, lo=g.minimum[t - 1])

    for (i, j) in inst.precedences:
        for t in periods:
            rows.add("precedence", (i, j, t), [(Z[i, t], 1.0), (Y[j, t], -1.0)], hi=0.0)

    for b in inst.blocks:
        for t in periods:
            rows.add("x_le_z", (b.id, t), [(X[b.id, t], 1.0), (Z[b.id, t], -1.0)], hi=0.0)
            rows.add("y_le_x", (b.id, t), [(Y[b.id, t], 1.0), (X[b.id, t], -1.0)], hi=0.0)
            if t < last_period:
                for fam, V in (("monotone_x", X), ("monotone_y", Y), ("monotone_z", Z)):
                    rows.add(fam, (b.id, t), [(V[b.id, t], 1.0), (V[b.id, t + 1], -1.0)], hi=0.0)

    n = len(keys)
    A = sp.csr_matrix((rows.vals, (rows.rows, rows.cols)), shape=(len(rows.lo), n))
    A.sum_duplicates()
    return ModelHandle(
        inst=inst, first_period=first_period, last_period=last_period, relax=relax,
        keys=keys, index=index,
        lb=np.zeros(n), ub=np.ones(n), integer=np.array(integer, dtype=bool),
        cost=np.array(cost), A=A,
        row_lo=np.array(rows.lo, dtype=float), row_hi=np.array(rows.hi, dtype=float),
        row_family=rows.family, row_index=rows.index,
    )


def apply_fixes(m: ModelHandle, fixes: FixSet) -> None:
    """Clamp each listed variable to ``[v, v]``; binaries are snapped to 0/1."""
    cols = []
    vals = []
    for key, v in fixes.items():
        c = m.col(key)
        v = float(v)
        if key.is_integer and m.integer[c]:
            r = round(v)
            if abs(v - r) > INT_TOL or r not in (0, 1):
                raise RangeError(f"cannot fix binary {key} to {v}")
            v = float(r)
        lo, hi = m.orig_lb[c], m.orig_ub[c]
        if v < lo - 1e-6 or v > hi + 1e-6:
            raise RangeError(f"fix value {v} for {key} outside [{lo}, {hi}]")
        cols.append(c)
        vals.append(min(max(v, lo), hi))
    if cols:
        cols_a = np.array(cols)
        vals_a = np.array(vals)
        m.lb[cols_a] = vals_a
        m.ub[cols_a] = vals_a
        m.fixed.update(cols)


def clear_fixes(m: ModelHandle) -> None:
    if m.fixed:
        cols = np.fromiter(m.fixed, dtype=int)
        m.lb[cols] = m.orig_lb[cols]
        m.ub[cols] = m.orig_ub[cols]
        m.fixed.clear()


def warm_start(m: ModelHandle, sol) -> None:
    """Register ``sol`` (a Solution or VarKey mapping covering the model) as a start hint."""
    m.start_values = m.vector(sol)


def history_fixes(m: ModelHandle, sol, through: int, start: int = 1) -> FixSet:
    """Fix-set pinning every model variable in periods ``start..through`` to ``sol``."""
    return {k: sol[k] for k in m.keys if start <= k.index[-1] <= through}


def extract_solution(m: ModelHandle, values, objective: float | None = None) -> Solution:
    """Turn a backend value vector into a Solution, snapping binaries and clipping bounds."""
    vals = np.clip(np.asarray(values, dtype=float), m.orig_lb, m.orig_ub)
    vals[m.integer] = np.round(vals[m.integer])
    sol = Solution(objective=m.objective_value(vals) if objective is None else objective)
    for k, v in zip(m.keys, vals):
        sol.table(k.kind)[k.index] = float(v)
    return sol
