"""Which variables a restricted solve keeps at their incumbent values."""

from __future__ import annotations

import enum

from ..errors import MissingValues
from ..instance import Instance
from ..model import FixSet
from ..solution import INTEGER_KINDS, Solution, VarKey


class Fixing(str, enum.Enum):
    SD = "sd"     # start and depletion binaries of blocks outside the neighbourhood
    SDF = "sdf"   # additionally flows of pits the neighbourhood does not touch


def fix_set_for(inst: Instance, incumbent: Solution, nb, fixing: Fixing, uw: int | None) -> FixSet:
    """Fix-set for the restricted MIP around neighbourhood ``nb``; ``uw=None`` is an unbounded window."""
    fixing = Fixing(fixing)
    T = inst.periods
    inside = set(nb.blocks)
    fixes: FixSet = {}

    def pin(b, periods):
        for t in periods:
            for kind in ("Z", "Y"):
                key = VarKey(kind, (b, t))
                fixes[key] = incumbent[key]

    for b in inst.blocks:
        if b.id not in inside:
            pin(b.id, range(1, T + 1))
        elif uw is not None:
            s, f = incumbent.start_finish(b.id, T)
            lo = 1 if s > T else s - uw
            hi = T if (s > T or f > T) else f + uw
            pin(b.id, [t for t in range(1, T + 1) if t < lo or t > hi])

    if fixing == Fixing.SDF:
        touched = {inst.block_map[b].pit for b in inside}
        for m in inst.pits:
            if m.id in touched:
                continue
            for bid in m.blocks:
                for p in inst.block_map[bid].parcels:
                    for t in range(1, T + 1):
                        for (i, j) in m.network.arcs:
                            key = VarKey("F", (p.id, i, j, t))
                            fixes[key] = incumbent[key]
    return fixes


def rins_fixes(lp, incumbent: Solution, tol: float = 1e-5) -> FixSet:
    """Integer variables on which the LP relaxation and the incumbent agree, fixed to the incumbent."""
    if lp is None or lp.values is None:
        raise MissingValues("LP relaxation result carries no values")
    out: FixSet = {}
    for key, v in lp.values.items():
        if key.kind not in INTEGER_KINDS:
            continue
        inc = incumbent[key]
        if abs(v - inc) <= tol:
            out[key] = inc
    return out
