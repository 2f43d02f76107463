"""Synthetic instances that are feasible by construction.

A reference schedule is drawn first (blocks taken in a top-down topological
order, split evenly over the horizon, parcels routed round-robin to products);
every capacity, minimum and grade window is then sized around that schedule so
the schedule itself is always a feasible solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, IntegrityError
from .instance import (
    INTERMEDIATE, PRODUCT, SOURCE, STOCKPILE, Block, FlowNetwork, Instance,
    MinProductionGroup, Node, Parcel, Pit, Product, check_integrity,
)
from .solution import Solution

PARCEL_TYPES = ("ore", "lowgrade", "waste")


@dataclass(frozen=True)
class GenConfig:
    pits: int = 1
    blocks_per_pit: int = 16
    benches_per_pit: int = 2
    periods: int = 5
    elements: int = 1
    products: int = 1
    blending: bool = False
    min_production: bool = False
    capex: bool = False
    stockpiles: bool = False
    waste_dump: bool = False
    parcels_per_block: tuple[int, int] = (1, 3)
    waste_fraction: float = 0.25
    discount_rate: float = 0.1
    capacity_slack: float = 1.1
    min_production_fraction: float = 0.6
    # minimum production only in the final period: myopic windows exhaust the pit before it
    late_min_production: bool = False

    def validate(self) -> None:
        if self.pits < 1:
            raise ConfigError("need at least one pit")
        if self.blocks_per_pit < 1:
            raise ConfigError("need at least one block per pit")
        if self.periods < 1:
            raise ConfigError("need at least one period")
        if self.benches_per_pit < 1:
            raise ConfigError("need at least one bench")
        if self.elements < 1 or self.products < 1:
            raise ConfigError("need at least one element and one product")
        if self.capacity_slack < 1.1:
            raise ConfigError("capacity_slack must be >= 1.1")
        if not 0 <= self.min_production_fraction <= 0.9:
            raise ConfigError("min_production_fraction must lie in [0, 0.9]")
        lo, hi = self.parcels_per_block
        if not 1 <= lo <= hi:
            raise ConfigError("parcels_per_block must satisfy 1 <= lo <= hi")


PRESETS: dict[str, GenConfig] = {
    "micro": GenConfig(pits=1, blocks_per_pit=4, benches_per_pit=1, periods=3),
    "t1-like": GenConfig(pits=1, blocks_per_pit=64, benches_per_pit=4, periods=15, parcels_per_block=(1, 1)),
    "ot-like": GenConfig(pits=2, blocks_per_pit=24, benches_per_pit=3, periods=10, elements=3,
                         products=2, blending=True, stockpiles=True, waste_dump=True),
    "pilbara-like": GenConfig(pits=4, blocks_per_pit=12, benches_per_pit=2, periods=8, elements=2,
                              products=2, blending=True, min_production=True, capex=True,
                              waste_dump=True, capacity_slack=1.3),
}


def _layout(n_blocks: int, n_benches: int):
    """Positions (bench, row, col) with the top bench carrying the largest bench index."""
    n_benches = min(n_benches, n_blocks)
    per = [n_blocks // n_benches + (1 if k < n_blocks % n_benches else 0) for k in range(n_benches)]
    width = max(1, math.ceil(math.sqrt(max(per))))
    out = []
    # bench index 0 is the deepest; fill from the top down
    for level, count in enumerate(per):
        bench = n_benches - 1 - level
        for k in range(count):
            out.append((bench, k // width, k % width))
    return out


def generate_instance(cfg: GenConfig, seed: int) -> Instance:
    return generate_with_reference(cfg, seed)[0]


def generate_with_reference(cfg: GenConfig, seed: int) -> tuple[Instance, Solution]:
    """The instance together with the schedule it was sized around (always feasible)."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    T = cfg.periods
    elements = tuple(f"E{k + 1}" for k in range(cfg.elements))
    value_el = elements[0]
    saleable = [f"R{k + 1}" for k in range(cfg.products)]
    revenue = {r: float(np.round(rng.uniform(8.0, 12.0), 3)) for r in saleable}
    mean_rev = float(np.mean(list(revenue.values())))

    pit_ids = [f"M{k + 1}" for k in range(cfg.pits)]
    blocks: list[Block] = []
    precedences: list[tuple[str, str]] = []
    pit_blocks: dict[str, list[str]] = {}
    order_per_pit: dict[str, list[str]] = {}
    reach: dict[str, list[str]] = {}

    for m_idx, mid in enumerate(pit_ids):
        pos = _layout(cfg.blocks_per_pit, cfg.benches_per_pit)
        n_benches = max(p[0] for p in pos) + 1
        ids = {}
        for k, (bench, row, col) in enumerate(pos):
            bid = f"{mid}-B{k + 1:03d}"
            ids[bench, row, col] = bid
            depth = 1.0 - bench / max(1, n_benches - 1) if n_benches > 1 else 0.5
            parcels = []
            for q in range(int(rng.integers(cfg.parcels_per_block[0], cfg.parcels_per_block[1] + 1))):
                ton = float(np.round(rng.uniform(2.0, 10.0), 3))
                if rng.random() < cfg.waste_fraction:
                    margin = -rng.uniform(0.1, 0.6)
                else:
                    margin = rng.uniform(0.1, 0.8) * (0.6 + 0.8 * depth)
                cost = float(np.round(mean_rev * (1.0 - margin), 4))
                grades = {value_el: float(np.clip(np.round(0.3 + 0.3 * margin + rng.normal(0, 0.03), 4), 0, 1))}
                for e in elements[1:]:
                    grades[e] = float(np.round(rng.uniform(0.05, 0.5), 4))
                ptype = PARCEL_TYPES[0] if margin > 0.3 else PARCEL_TYPES[1] if margin > 0 else PARCEL_TYPES[2]
                parcels.append(Parcel(f"{bid}-p{q + 1}", ptype, ton, max(cost, 0.0), grades))
            blocks.append(Block(bid, mid, bench, tuple(parcels)))
        for (bench, row, col), bid in ids.items():
            if (bench, row, col - 1) in ids:
                precedences.append((bid, ids[bench, row, col - 1]))
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    above = (bench + 1, row + dr, col + dc)
                    if above in ids:
                        precedences.append((bid, ids[above]))
        # top-down, in-bench increasing column: a topological order of the precedences
        order = sorted(ids, key=lambda p: (-p[0], p[1], p[2]))
        order_per_pit[mid] = [ids[p] for p in order]
        pit_blocks[mid] = list(order_per_pit[mid])
        if m_idx == 0 or len(saleable) == 1:
            reach[mid] = list(saleable)
        else:
            k = int(rng.integers(1, len(saleable) + 1))
            reach[mid] = sorted(rng.choice(saleable, size=k, replace=False).tolist())

    block_map = {b.id: b for b in blocks}

    # reference schedule: round-robin merge of pit orders, chunked evenly over periods
    merged: list[str] = []
    queues = [list(order_per_pit[m]) for m in pit_ids]
    while any(queues):
        for q in queues:
            if q:
                merged.append(q.pop(0))
    per_period = math.ceil(len(merged) / T)
    ref_period = {b: min(T, k // per_period + 1) for k, b in enumerate(merged)}

    route: dict[str, str] = {}
    mined = {(m, t): 0.0 for m in pit_ids for t in range(1, T + 1)}
    blend_tons = {(r, t): 0.0 for r in saleable for t in range(1, T + 1)}
    blend_metal = {(r, e, t): 0.0 for r in saleable for e in elements for t in range(1, T + 1)}
    rr = {m: 0 for m in pit_ids}
    for b in merged:
        blk = block_map[b]
        t = ref_period[b]
        for p in blk.parcels:
            mined[blk.pit, t] += p.tonnage
            r = reach[blk.pit][rr[blk.pit] % len(reach[blk.pit])]
            rr[blk.pit] += 1
            route[p.id] = r
            blend_tons[r, t] += p.tonnage
            for e in elements:
                blend_metal[r, e, t] += p.tonnage * p.grades.get(e, 0.0)

    slack = cfg.capacity_slack
    pits = []
    for mid in pit_ids:
        peak = max(mined[mid, t] for t in range(1, T + 1))
        nodes = [Node("src", SOURCE), Node("crusher", INTERMEDIATE, exit_capacity=float(np.round(slack * peak, 4)))]
        arcs = [("src", "crusher")]
        if cfg.stockpiles:
            cap = float(np.round(slack * peak, 4))
            nodes.append(Node("stock", STOCKPILE, exit_capacity=cap, stockpile_capacity=tuple([cap] * T)))
            arcs += [("src", "stock"), ("stock", "crusher")]
        for r in reach[mid]:
            nodes.append(Node(f"P_{r}", PRODUCT, product=r))
            arcs.append(("crusher", f"P_{r}"))
        if cfg.waste_dump:
            nodes.append(Node("dump", PRODUCT, product="WASTE"))
            arcs.append(("src", "dump"))
        capex = float(np.round(rng.uniform(0.5, 1.5) * mean_rev * peak * 0.2, 3)) if cfg.capex else 0.0
        pits.append(Pit(mid, capex, float(np.round(slack * peak, 4)),
                        FlowNetwork(tuple(nodes), tuple(arcs)), tuple(pit_blocks[mid])))

    products = []
    for r in saleable:
        windows = {}
        if cfg.blending:
            for e in elements:
                grades = [blend_metal[r, e, t] / blend_tons[r, t] for t in range(1, T + 1) if blend_tons[r, t] > 0]
                if not grades:
                    continue
                pad_lo, pad_hi = rng.uniform(0.0, 0.03, size=2)
                lo = max(0.0, math.floor((min(grades) - pad_lo) * 1e4) / 1e4)
                hi = min(1.0, math.ceil((max(grades) + pad_hi) * 1e4) / 1e4)
                windows[e] = (lo, hi)
        products.append(Product(r, revenue[r], windows))
    if cfg.waste_dump:
        products.append(Product("WASTE", 0.0, {}))

    groups = []
    if cfg.min_production or cfg.late_min_production:
        frac = cfg.min_production_fraction if cfg.min_production else 0.9
        candidates = [tuple(pit_ids)]
        if cfg.pits >= 3:
            candidates.append(tuple(pit_ids[: cfg.pits // 2 + 1]))
        for K in candidates:
            mins = []
            for t in range(1, T + 1):
                ref = sum(mined[m, t] for m in K)
                if cfg.late_min_production and t < T:
                    ref = 0.0
                mins.append(float(math.floor(frac * ref * 1e4) / 1e4))
            groups.append(MinProductionGroup(K, tuple(mins)))

    inst = Instance(
        periods=T,
        discount=tuple(float(np.round((1 + cfg.discount_rate) ** -(t - 1), 8)) for t in range(1, T + 1)),
        elements=elements,
        products=tuple(products),
        pits=tuple(pits),
        blocks=tuple(blocks),
        precedences=tuple(precedences),
        min_production_groups=tuple(groups),
    )
    problems = check_integrity(inst)
    if problems:  # pragma: no cover - generator bug
        raise IntegrityError(problems)
    return inst, _reference_solution(inst, ref_period, route)


def _reference_solution(inst: Instance, period: dict, route: dict) -> Solution:
    from .feasibility import npv, zero_solution

    sol = zero_solution(inst)
    T = inst.periods
    for b in inst.blocks:
        P = period[b.id]
        for t in range(P, T + 1):
            sol.x[b.id, t] = sol.y[b.id, t] = sol.z[b.id, t] = 1.0
        for p in b.parcels:
            sol.f[p.id, "src", "crusher", P] = 1.0
            sol.f[p.id, "crusher", f"P_{route[p.id]}", P] = 1.0
    for m in inst.pits:
        first = min(period[b] for b in m.blocks)
        sol.wi[m.id, first] = 1.0
        for t in range(first, T + 1):
            sol.wp[m.id, t] = 1.0
    sol.objective = npv(inst, sol)
    return sol


def preset(name: str, **overrides) -> GenConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **overrides) if overrides else base


__all__ = ["GenConfig", "PRESETS", "generate_instance", "generate_with_reference", "preset"]
