"""Immutable problem data model, integrity checks, JSON I/O and precedence closures."""

from __future__ import annotations

import json
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

from .errors import IntegrityError, IoError, ParseError, UnknownBlock, UnknownPit

SOURCE = "source"
STOCKPILE = "stockpile"
INTERMEDIATE = "intermediate"
PRODUCT = "product"
NODE_KINDS = (SOURCE, STOCKPILE, INTERMEDIATE, PRODUCT)


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    product: str | None = None
    exit_capacity: float | None = None
    stockpile_capacity: tuple[float, ...] | None = None


@dataclass(frozen=True)
class FlowNetwork:
    nodes: tuple[Node, ...]
    arcs: tuple[tuple[str, str], ...]

    @cached_property
    def node_map(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def source(self) -> Node:
        return next(n for n in self.nodes if n.kind == SOURCE)

    @cached_property
    def out_arcs(self) -> dict[str, list[tuple[str, str]]]:
        out = defaultdict(list)
        for a in self.arcs:
            out[a[0]].append(a)
        return dict(out)

    @cached_property
    def in_arcs(self) -> dict[str, list[tuple[str, str]]]:
        inc = defaultdict(list)
        for a in self.arcs:
            inc[a[1]].append(a)
        return dict(inc)

    def nodes_of_kind(self, kind: str) -> list[Node]:
        return [n for n in self.nodes if n.kind == kind]

    def reachable_from(self, start: str) -> set[str]:
        seen = {start}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for _, v in self.out_arcs.get(u, ()):
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return seen

    def sink_of(self, product: str) -> Node | None:
        for n in self.nodes:
            if n.kind == PRODUCT and n.product == product:
                return n
        return None


@dataclass(frozen=True)
class Parcel:
    id: str
    type: str
    tonnage: float
    extraction_cost: float
    grades: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class Block:
    id: str
    pit: str
    bench: int
    parcels: tuple[Parcel, ...]

    @property
    def tonnage(self) -> float:
        return sum(p.tonnage for p in self.parcels)


@dataclass(frozen=True)
class Pit:
    id: str
    capex_cost: float
    mining_capacity: float
    network: FlowNetwork
    blocks: tuple[str, ...]


@dataclass(frozen=True)
class Product:
    id: str
    revenue_per_ton: float
    grade_windows: dict[str, tuple[float, float]] = field(default_factory=dict)


@dataclass(frozen=True)
class MinProductionGroup:
    pits: tuple[str, ...]
    minimum: tuple[float, ...]


@dataclass(frozen=True)
class Instance:
    periods: int
    discount: tuple[float, ...]
    elements: tuple[str, ...]
    products: tuple[Product, ...]
    pits: tuple[Pit, ...]
    blocks: tuple[Block, ...]
    precedences: tuple[tuple[str, str], ...]
    min_production_groups: tuple[MinProductionGroup, ...] = ()

    @cached_property
    def block_map(self) -> dict[str, Block]:
        return {b.id: b for b in self.blocks}

    @cached_property
    def pit_map(self) -> dict[str, Pit]:
        return {p.id: p for p in self.pits}

    @cached_property
    def product_map(self) -> dict[str, Product]:
        return {r.id: r for r in self.products}

    @cached_property
    def parcel_block(self) -> dict[str, str]:
        return {p.id: b.id for b in self.blocks for p in b.parcels}

    @cached_property
    def direct_predecessors(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {b.id: set() for b in self.blocks}
        for i, j in self.precedences:
            out.setdefault(i, set()).add(j)
        return out

    @cached_property
    def direct_successors(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {b.id: set() for b in self.blocks}
        for i, j in self.precedences:
            out.setdefault(j, set()).add(i)
        return out

    @cached_property
    def _closures(self) -> tuple[dict[str, frozenset], dict[str, frozenset]]:
        return (_closure(self.direct_predecessors), _closure(self.direct_successors))

    @property
    def period_range(self) -> range:
        return range(1, self.periods + 1)

    def block(self, bid: str) -> Block:
        try:
            return self.block_map[bid]
        except KeyError:
            raise UnknownBlock(bid) from None

    def pit(self, pid: str) -> Pit:
        try:
            return self.pit_map[pid]
        except KeyError:
            raise UnknownPit(pid) from None

    @property
    def has_blending(self) -> bool:
        return any(r.grade_windows for r in self.products)

    @property
    def capex_pits(self) -> list[str]:
        return [m.id for m in self.pits if m.capex_cost > 0]


def _closure(adj: dict[str, set[str]]) -> dict[str, frozenset]:
    # adjacency must be acyclic; memoised DFS in reverse topological order
    memo: dict[str, frozenset] = {}
    for start in adj:
        if start in memo:
            continue
        stack = [(start, iter(adj.get(start, ())))]
        on_path = {start}
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if nxt not in memo:
                    if nxt in on_path:
                        raise IntegrityError([f"precedence cycle through block {nxt}"])
                    stack.append((nxt, iter(adj.get(nxt, ()))))
                    on_path.add(nxt)
                    advanced = True
                    break
            if advanced:
                continue
            stack.pop()
            on_path.discard(node)
            acc = set()
            for nxt in adj.get(node, ()):
                acc.add(nxt)
                acc |= memo[nxt]
            memo[node] = frozenset(acc)
    return memo


def predecessors(inst: Instance, b: str) -> frozenset:
    """All blocks that must be depleted (transitively) before ``b`` may start."""
    if b not in inst.block_map:
        raise UnknownBlock(b)
    return inst._closures[0][b]


def successors(inst: Instance, b: str) -> frozenset:
    if b not in inst.block_map:
        raise UnknownBlock(b)
    return inst._closures[1][b]


def _find_cycle(blocks: Iterable[str], precedences) -> list[str] | None:
    adj = defaultdict(list)
    for i, j in precedences:
        adj[i].append(j)
    color: dict[str, int] = {}
    for start in blocks:
        if color.get(start):
            continue
        stack = [(start, iter(adj[start]))]
        color[start] = 1
        path = [start]
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = 2
                stack.pop()
                path.pop()
            elif color.get(nxt, 0) == 1:
                return path[path.index(nxt):] + [nxt]
            elif color.get(nxt, 0) == 0:
                color[nxt] = 1
                stack.append((nxt, iter(adj[nxt])))
                path.append(nxt)
    return None


def check_integrity(inst: Instance) -> list[str]:
    """Return a description of every violated invariant; empty means the instance is valid."""
    v: list[str] = []
    T = inst.periods
    if not isinstance(T, int) or T < 1:
        v.append(f"periods must be a positive integer, got {T!r}")
        T = 0
    if len(inst.discount) != T:
        v.append(f"discount has {len(inst.discount)} entries, expected {T}")
    for t, d in enumerate(inst.discount, start=1):
        if not (math.isfinite(d) and 0 < d <= 1):
            v.append(f"discount factor for period {t} is {d}, must lie in (0, 1]")

    elements = set(inst.elements)
    if len(elements) != len(inst.elements):
        v.append("duplicate element ids")
    product_ids = [r.id for r in inst.products]
    if len(set(product_ids)) != len(product_ids):
        v.append("duplicate product ids")
    for r in inst.products:
        if not (math.isfinite(r.revenue_per_ton) and r.revenue_per_ton >= 0):
            v.append(f"product {r.id}: revenue_per_ton must be >= 0")
        for e, (lo, hi) in r.grade_windows.items():
            if e not in elements:
                v.append(f"product {r.id}: grade window for unknown element {e}")
            if not (0 <= lo <= hi <= 1):
                v.append(f"product {r.id}: grade window for {e} is [{lo}, {hi}], need 0 <= min <= max <= 1")

    pit_ids = [m.id for m in inst.pits]
    if len(set(pit_ids)) != len(pit_ids):
        v.append("duplicate pit ids")
    block_ids = [b.id for b in inst.blocks]
    if len(set(block_ids)) != len(block_ids):
        v.append("duplicate block ids")
    known_blocks = set(block_ids)
    parcel_ids = [p.id for b in inst.blocks for p in b.parcels]
    if len(set(parcel_ids)) != len(parcel_ids):
        v.append("duplicate parcel ids")

    pit_of_block: dict[str, list[str]] = defaultdict(list)
    for m in inst.pits:
        if not (math.isfinite(m.capex_cost) and m.capex_cost >= 0):
            v.append(f"pit {m.id}: capex_cost must be >= 0")
        if not (math.isfinite(m.mining_capacity) and m.mining_capacity >= 0):
            v.append(f"pit {m.id}: mining_capacity must be >= 0")
        if not m.blocks:
            v.append(f"pit {m.id}: has no blocks")
        for b in m.blocks:
            pit_of_block[b].append(m.id)
            if b not in known_blocks:
                v.append(f"pit {m.id}: lists unknown block {b}")
        v.extend(_check_network(m, T, set(product_ids)))

    for b in inst.blocks:
        if b.pit not in inst.pit_map:
            v.append(f"block {b.id}: assigned to nonexistent pit {b.pit}")
        elif pit_of_block.get(b.id) != [b.pit]:
            v.append(f"block {b.id}: must be listed by exactly its own pit {b.pit}, listed by {pit_of_block.get(b.id, [])}")
        if not isinstance(b.bench, int) or b.bench < 0:
            v.append(f"block {b.id}: bench must be a non-negative integer")
        if not b.parcels:
            v.append(f"block {b.id}: has no parcels")
        for p in b.parcels:
            if not (math.isfinite(p.tonnage) and p.tonnage > 0):
                v.append(f"parcel {p.id}: tonnage must be > 0")
            if not (math.isfinite(p.extraction_cost) and p.extraction_cost >= 0):
                v.append(f"parcel {p.id}: extraction_cost must be >= 0")
            for e, g in p.grades.items():
                if e not in elements:
                    v.append(f"parcel {p.id}: grade for unknown element {e}")
                if not (0 <= g <= 1):
                    v.append(f"parcel {p.id}: grade {e}={g} outside [0, 1]")

    for i, j in inst.precedences:
        for x in (i, j):
            if x not in known_blocks:
                v.append(f"precedence ({i}, {j}): unknown block {x}")
        if i == j:
            v.append(f"precedence cycle: block {i} requires itself")
    cycle = _find_cycle(block_ids, [(i, j) for i, j in inst.precedences if i != j])
    if cycle:
        v.append("precedence cycle: " + " -> ".join(cycle))

    for k, g in enumerate(inst.min_production_groups):
        if not g.pits:
            v.append(f"min production group {k}: has no pits")
        for m in g.pits:
            if m not in inst.pit_map:
                v.append(f"min production group {k}: unknown pit {m}")
        if len(g.minimum) != T:
            v.append(f"min production group {k}: minimum has {len(g.minimum)} entries, expected {T}")
        for t, om in enumerate(g.minimum, start=1):
            if not (math.isfinite(om) and om >= 0):
                v.append(f"min production group {k}: minimum in period {t} must be >= 0")
    return v


def _check_network(m: Pit, T: int, products: set[str]) -> list[str]:
    v = []
    net = m.network
    ids = [n.id for n in net.nodes]
    if len(set(ids)) != len(ids):
        v.append(f"pit {m.id}: duplicate node ids")
    known = set(ids)
    sources = [n for n in net.nodes if n.kind == SOURCE]
    if len(sources) != 1:
        v.append(f"pit {m.id}: network must have exactly one source node, found {len(sources)}")
    for n in net.nodes:
        if n.kind not in NODE_KINDS:
            v.append(f"pit {m.id}: node {n.id} has unknown kind {n.kind}")
        if n.kind == PRODUCT and n.product not in products:
            v.append(f"pit {m.id}: product node {n.id} refers to unknown product {n.product}")
        if n.kind == STOCKPILE:
            cap = n.stockpile_capacity
            if cap is None or len(cap) != T:
                for t in range(1 + (len(cap) if cap else 0), T + 1):
                    v.append(f"pit {m.id}: stockpile node {n.id} missing capacity for period {t}")
            elif any(not (math.isfinite(c) and c >= 0) for c in cap):
                v.append(f"pit {m.id}: stockpile node {n.id} has negative capacity")
        if n.kind in (STOCKPILE, INTERMEDIATE):
            if n.exit_capacity is None:
                v.append(f"pit {m.id}: node {n.id} missing exit_capacity")
            elif not n.exit_capacity >= 0:
                v.append(f"pit {m.id}: node {n.id} has negative exit_capacity")
    kinds = {n.id: n.kind for n in net.nodes}
    for a, b in net.arcs:
        if a not in known or b not in known:
            v.append(f"pit {m.id}: arc ({a}, {b}) has unknown endpoint")
            continue
        if a == b:
            v.append(f"pit {m.id}: self-loop at node {a}")
        if kinds[b] == SOURCE:
            v.append(f"pit {m.id}: source node {b} has an incoming arc")
        if kinds[a] == PRODUCT:
            v.append(f"pit {m.id}: product node {a} has an outgoing arc")
    if not v:
        sinks = {n.id for n in net.nodes if n.kind == PRODUCT}
        for n in net.nodes:
            if n.kind != PRODUCT and not (net.reachable_from(n.id) & sinks):
                v.append(f"pit {m.id}: node {n.id} has no path to a product node")
    return v


# ---------------------------------------------------------------- JSON I/O


def instance_to_dict(inst: Instance) -> dict:
    def node(n: Node) -> dict:
        d = {"id": n.id, "kind": n.kind}
        if n.product is not None:
            d["product"] = n.product
        if n.exit_capacity is not None:
            d["exit_capacity"] = n.exit_capacity
        if n.stockpile_capacity is not None:
            d["stockpile_capacity"] = list(n.stockpile_capacity)
        return d

    return {
        "periods": inst.periods,
        "discount": list(inst.discount),
        "elements": list(inst.elements),
        "products": [
            {"id": r.id, "revenue_per_ton": r.revenue_per_ton,
             "grade_windows": {e: [lo, hi] for e, (lo, hi) in r.grade_windows.items()}}
            for r in inst.products
        ],
        "pits": [
            {
                "id": m.id,
                "capex_cost": m.capex_cost,
                "mining_capacity": m.mining_capacity,
                "network": {"nodes": [node(n) for n in m.network.nodes],
                            "arcs": [list(a) for a in m.network.arcs]},
                "blocks": [
                    {"id": b.id, "bench": b.bench,
                     "parcels": [{"id": p.id, "type": p.type, "tonnage": p.tonnage,
                                  "extraction_cost": p.extraction_cost, "grades": dict(p.grades)}
                                 for p in b.parcels]}
                    for b in (inst.block_map[bid] for bid in m.blocks)
                ],
            }
            for m in inst.pits
        ],
        "precedences": [list(p) for p in inst.precedences],
        "min_production_groups": [{"pits": list(g.pits), "minimum": list(g.minimum)}
                                  for g in inst.min_production_groups],
    }


def _num(x, what: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise ParseError(f"{what}: expected a finite number, got {x!r}")
    return float(x)


def instance_from_dict(d: dict) -> Instance:
    """Build an Instance from the JSON structure, raising ParseError on schema problems."""
    try:
        periods = d["periods"]
        if isinstance(periods, bool) or not isinstance(periods, int):
            raise ParseError(f"periods: expected an integer, got {periods!r}")
        products = tuple(
            Product(str(r["id"]), _num(r["revenue_per_ton"], f"product {r['id']} revenue"),
                    {str(e): (_num(w[0], "grade window"), _num(w[1], "grade window"))
                     for e, w in r.get("grade_windows", {}).items()})
            for r in d["products"]
        )
        pits, blocks = [], []
        for m in d["pits"]:
            nodes = []
            for n in m["network"]["nodes"]:
                cap = n.get("stockpile_capacity")
                nodes.append(Node(
                    str(n["id"]), str(n["kind"]),
                    product=None if n.get("product") is None else str(n["product"]),
                    exit_capacity=None if n.get("exit_capacity") is None else _num(n["exit_capacity"], "exit_capacity"),
                    stockpile_capacity=None if cap is None else tuple(_num(c, "stockpile_capacity") for c in cap),
                ))
            arcs = tuple((str(a), str(b)) for a, b in m["network"]["arcs"])
            bids = []
            for b in m["blocks"]:
                parcels = tuple(
                    Parcel(str(p["id"]), str(p.get("type", "default")),
                           _num(p["tonnage"], "tonnage"), _num(p["extraction_cost"], "extraction_cost"),
                           {str(e): _num(g, "grade") for e, g in p.get("grades", {}).items()})
                    for p in b["parcels"]
                )
                bench = b.get("bench", 0)
                blocks.append(Block(str(b["id"]), str(m["id"]), bench, parcels))
                bids.append(str(b["id"]))
            pits.append(Pit(str(m["id"]), _num(m.get("capex_cost", 0.0), "capex_cost"),
                            _num(m["mining_capacity"], "mining_capacity"),
                            FlowNetwork(tuple(nodes), arcs), tuple(bids)))
        groups = tuple(
            MinProductionGroup(tuple(str(p) for p in g["pits"]),
                               tuple(_num(x, "minimum") for x in g["minimum"]))
            for g in d.get("min_production_groups", [])
        )
        return Instance(
            periods=periods,
            discount=tuple(_num(x, "discount") for x in d["discount"]),
            elements=tuple(str(e) for e in d.get("elements", [])),
            products=products,
            pits=tuple(pits),
            blocks=tuple(blocks),
            precedences=tuple((str(i), str(j)) for i, j in d.get("precedences", [])),
            min_production_groups=groups,
        )
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError, IndexError, AttributeError) as exc:
        raise ParseError(f"malformed instance: {exc!r}") from exc


def load_instance(path) -> Instance:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise IoError(f"cannot read instance {path}: {exc}") from exc
    inst = instance_from_dict(data)
    problems = check_integrity(inst)
    if problems:
        raise IntegrityError(problems)
    return inst


def save_instance(inst: Instance, path) -> None:
    text = json.dumps(instance_to_dict(inst), indent=1)
    try:
        Path(path).write_text(text + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write instance to {path}: {exc}") from exc
