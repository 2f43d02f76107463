"""Block weighting, restricted cones and path-based neighbourhood formation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyWeightVector, MissingValueElement, StrategyInapplicable, UnknownPit
from ..instance import PRODUCT, Instance, predecessors, successors
from ..solution import Solution

MAX_REBUILDS = 20


class Focal(str, enum.Enum):
    RAND = "rand"
    OBJ = "obj"
    MD = "md"
    MIX = "mix"


class Strategy(str, enum.Enum):
    NONE = "none"
    BLENDING = "blending"
    TIMING = "timing"
    PITLINKS = "pitlinks"
    TRIGGER = "trigger"


@dataclass
class Neighbourhood:
    blocks: set
    focals: list
    strategy_tags: frozenset = frozenset()

    def __len__(self) -> int:
        return len(self.blocks)


def base_weights(inst: Instance, method: Focal, value_element: str | None = None) -> dict[str, float]:
    """Focal-selection weights before any strategy mask."""
    method = Focal(method)
    if method == Focal.RAND:
        return {b.id: 1.0 for b in inst.blocks}
    if method == Focal.OBJ:
        e = value_element if value_element is not None else (inst.elements[0] if inst.elements else None)
        if e is None or e not in inst.elements:
            raise MissingValueElement(f"no value element {e!r} among {inst.elements}")
        return {b.id: sum(p.tonnage * p.grades.get(e, 0.0) for p in b.parcels) for b in inst.blocks}
    if method == Focal.MD:
        out = {}
        for b in inst.blocks:
            n = len(predecessors(inst, b.id)) + len(successors(inst, b.id))
            out[b.id] = 1.0 / n if n else 0.0
        return out
    raise ValueError("MIX is resolved per worker into RAND, OBJ or MD")


def _same_bench(inst: Instance, b: str, others) -> frozenset:
    blk = inst.block_map[b]
    bm = inst.block_map
    return frozenset(o for o in others if bm[o].pit == blk.pit and bm[o].bench == blk.bench)


def restricted_cone_above(inst: Instance, b: str) -> frozenset:
    return _same_bench(inst, b, predecessors(inst, b))


def restricted_cone_below(inst: Instance, b: str) -> frozenset:
    return _same_bench(inst, b, successors(inst, b))


def sample(weights: dict[str, float], candidates, rng) -> str:
    """Weight-proportional draw; an all-zero candidate set is sampled uniformly."""
    cands = sorted(candidates)
    w = np.array([weights.get(c, 0.0) for c in cands], dtype=float)
    total = w.sum()
    if total <= 0:
        return cands[int(rng.integers(len(cands)))]
    return cands[int(rng.choice(len(cands), p=w / total))]


def form_path(inst: Instance, weights: dict[str, float], f: str, nbar: int, rng) -> list[str]:
    """Grow a path upward and downward from focal block ``f``; returns blocks in insertion order."""
    path: dict[str, None] = {}

    def add(batch):
        for b in sorted(batch):
            path.setdefault(b, None)

    add([f])
    add(restricted_cone_above(inst, f))
    add(restricted_cone_below(inst, f))
    top = bottom = f
    while len(path) < nbar:
        above = restricted_cone_above(inst, top) if top is not None else frozenset()
        below = restricted_cone_below(inst, bottom) if bottom is not None else frozenset()
        if not above and not below:
            break
        if above:
            top = sample(weights, above, rng)
            add([top])
            add(restricted_cone_above(inst, top))
            if len(path) >= nbar:
                break
        else:
            top = None
        if below:
            bottom = sample(weights, below, rng)
            add([bottom])
            add(restricted_cone_below(inst, bottom))
        else:
            bottom = None
    return list(path)


def _reaches(inst: Instance, pit_id: str, product: str) -> bool:
    net = inst.pit_map[pit_id].network
    reach = net.reachable_from(net.source.id)
    return any(net.node_map[n].kind == PRODUCT and net.node_map[n].product == product for n in reach)


def blending_contribution(inst: Instance, b: str) -> dict[tuple[str, str, str], float]:
    """Contribution of block ``b``, mined all at once, to each (product, element, side) constraint.

    Positive values help satisfy the constraint on both sides.
    """
    blk = inst.block(b)
    out = {}
    for r in inst.products:
        ok = _reaches(inst, blk.pit, r.id)
        for e, (lo, hi) in r.grade_windows.items():
            if not ok:
                out[r.id, e, "min"] = out[r.id, e, "max"] = 0.0
                continue
            out[r.id, e, "min"] = sum((p.grades.get(e, 0.0) - lo) * p.tonnage for p in blk.parcels)
            out[r.id, e, "max"] = sum((hi - p.grades.get(e, 0.0)) * p.tonnage for p in blk.parcels)
    return out


def trigger_blocks(inst: Instance, m: str, incumbent: Solution) -> list[str]:
    """Blocks of pit ``m`` ordered by incumbent start period (unscheduled last, ties by id)."""
    if m not in inst.pit_map:
        raise UnknownPit(m)
    T = inst.periods
    return sorted(inst.pit_map[m].blocks, key=lambda b: (incumbent.start_finish(b, T)[0], b))


@dataclass
class _Formation:
    inst: Instance
    incumbent: Solution
    weights: dict
    strategies: frozenset
    nbar: int
    rng: np.random.Generator
    contributions: dict = field(default_factory=dict)

    def contribution(self, b):
        c = self.contributions.get(b)
        if c is None:
            c = self.contributions[b] = blending_contribution(self.inst, b)
        return c

    def linked_pits(self, covered: set) -> set:
        out = set(covered)
        for g in self.inst.min_production_groups:
            if covered & set(g.pits):
                out |= set(g.pits)
        return out

    def masked(self, chosen, ledger, window, covered) -> dict[str, float]:
        T = self.inst.periods
        bm = self.inst.block_map
        negative = [k for k, v in ledger.items() if v < 0]
        allowed = self.linked_pits(covered) if covered else None
        out = {}
        for b, w in self.weights.items():
            if w <= 0 or b in chosen:
                continue
            if Strategy.BLENDING in self.strategies and negative:
                c = self.contribution(b)
                if any(c[k] < 0 for k in negative):
                    continue
            if Strategy.TIMING in self.strategies and window is not None:
                s, f = self.incumbent.start_finish(b, T)
                if not (window[0] <= s <= window[1] or window[0] <= f <= window[1]):
                    continue
            if allowed is not None and bm[b].pit not in allowed:
                continue
            out[b] = w
        return out

    def build(self) -> Neighbourhood:
        T = self.inst.periods
        chosen: dict[str, None] = {}
        focals: list[str] = []
        ledger: dict = {}
        window = None
        covered: set = set()
        use_links = Strategy.PITLINKS in self.strategies
        while len(chosen) < self.nbar:
            eff = self.masked(chosen, ledger, window, covered if use_links else set())
            if not eff and use_links and covered:
                # every linked block is used up: restore the original weights
                covered = set()
                eff = self.masked(chosen, ledger, window, covered)
            if not eff:
                break
            f = sample(eff, eff.keys(), self.rng)
            focals.append(f)
            if Strategy.TIMING in self.strategies and window is None:
                s, fin = self.incumbent.start_finish(f, T)
                if s <= T:
                    window = (s, fin)
            for b in form_path(self.inst, self.weights, f, self.nbar - len(chosen), self.rng):
                if b in chosen:
                    continue
                chosen[b] = None
                if Strategy.BLENDING in self.strategies:
                    for k, v in self.contribution(b).items():
                        ledger[k] = ledger.get(k, 0.0) + v
                covered.add(self.inst.block_map[b].pit)
        if not chosen:
            raise EmptyWeightVector("no block has positive focal weight")
        return Neighbourhood(set(chosen), focals, self.strategies)


def check_applicable(inst: Instance, strategies) -> None:
    for s in strategies:
        s = Strategy(s)
        if s == Strategy.BLENDING and not inst.has_blending:
            raise StrategyInapplicable("Blending needs grade windows")
        if s == Strategy.PITLINKS and not inst.min_production_groups:
            raise StrategyInapplicable("PitLinks needs minimum production groups")
        if s == Strategy.TRIGGER and not inst.capex_pits:
            raise StrategyInapplicable("Trigger needs pits with an opening cost")


def form_neighbourhood(inst: Instance, incumbent: Solution, weights: dict[str, float],
                       strategies, nbar: int, rng, max_rebuilds: int = MAX_REBUILDS) -> Neighbourhood:
    strategies = frozenset(Strategy(s) for s in strategies) - {Strategy.NONE}
    check_applicable(inst, strategies)
    if nbar < 1:
        raise ValueError("nbar must be >= 1")
    if Strategy.TRIGGER in strategies:
        return _trigger_neighbourhood(inst, incumbent, nbar, rng, strategies)
    if not any(w > 0 for w in weights.values()):
        raise EmptyWeightVector("all focal weights are zero")
    former = _Formation(inst, incumbent, weights, strategies, nbar, rng)
    T = inst.periods
    nb = former.build()
    if Strategy.TIMING in strategies:
        for _ in range(max_rebuilds):
            if any(incumbent.start_finish(f, T)[0] <= T for f in nb.focals):
                break
            nb = former.build()
    return nb


def _trigger_neighbourhood(inst, incumbent, nbar, rng, strategies) -> Neighbourhood:
    pits = sorted(inst.capex_pits)
    chosen: dict[str, None] = {}
    focals = []
    untouched = set(pits)
    while len(chosen) < nbar and untouched:
        m = pits[int(rng.integers(len(pits)))]
        untouched.discard(m)
        order = [b for b in trigger_blocks(inst, m, incumbent) if b not in chosen]
        if order:
            focals.append(order[0])
        for b in order[: nbar - len(chosen)]:
            chosen[b] = None
    return Neighbourhood(set(chosen), focals, strategies)
