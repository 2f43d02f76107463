"""The Solution container: a full assignment of every decision variable."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

from .errors import DimensionMismatch, IoError, ParseError

KINDS = ("X", "Y", "Z", "F", "S", "WI", "WP")
INTEGER_KINDS = frozenset({"Y", "Z", "WI", "WP"})
INT_TOL = 1e-5


class VarKey(NamedTuple):
    """Addresses one model variable.

    ``index`` layout per kind: X/Y/Z ``(block, t)``; F ``(parcel, from, to, t)``;
    S ``(stockpile node, parcel, t)``; WI/WP ``(pit, t)``.
    """

    kind: str
    index: tuple

    @property
    def period(self) -> int:
        return self.index[-1]

    @property
    def is_integer(self) -> bool:
        return self.kind in INTEGER_KINDS


_FIELD = {"X": "x", "Y": "y", "Z": "z", "F": "f", "S": "s", "WI": "wi", "WP": "wp"}


@dataclass
class Solution:
    x: dict = field(default_factory=dict)
    y: dict = field(default_factory=dict)
    z: dict = field(default_factory=dict)
    f: dict = field(default_factory=dict)
    s: dict = field(default_factory=dict)
    wi: dict = field(default_factory=dict)
    wp: dict = field(default_factory=dict)
    objective: float = 0.0

    def table(self, kind: str) -> dict:
        return getattr(self, _FIELD[kind])

    def get(self, key: VarKey, default=None):
        return self.table(key.kind).get(key.index, default)

    def __getitem__(self, key: VarKey) -> float:
        try:
            return self.table(key.kind)[key.index]
        except KeyError:
            raise DimensionMismatch(f"solution has no value for {key}") from None

    def __setitem__(self, key: VarKey, value: float) -> None:
        self.table(key.kind)[key.index] = value

    def keys(self) -> Iterator[VarKey]:
        for kind in KINDS:
            for idx in self.table(kind):
                yield VarKey(kind, idx)

    def items(self) -> Iterator[tuple[VarKey, float]]:
        for kind in KINDS:
            for idx, v in self.table(kind).items():
                yield VarKey(kind, idx), v

    def copy(self) -> "Solution":
        return Solution(*(dict(self.table(k)) for k in KINDS), objective=self.objective)

    @classmethod
    def from_values(cls, values, objective: float = 0.0) -> "Solution":
        sol = cls(objective=objective)
        for key, v in values.items():
            sol.table(key.kind)[key.index] = float(v)
        return sol

    def start_finish(self, block: str, periods: int) -> tuple[int, int]:
        """First period with extraction and first period with depletion; ``periods + 1`` when absent."""
        start = finish = periods + 1
        for t in range(1, periods + 1):
            if self.x.get((block, t), 0.0) > 1e-6:
                start = t
                break
        for t in range(1, periods + 1):
            if self.y.get((block, t), 0.0) > 0.5:
                finish = t
                break
        return start, finish

    # -------------------------------------------------------------- JSON

    def to_dict(self) -> dict:
        out: dict = {"objective": self.objective}
        for kind in KINDS:
            out[_FIELD[kind]] = [[*idx, v] for idx, v in self.table(kind).items()]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Solution":
        try:
            sol = cls(objective=float(d.get("objective", 0.0)))
            for kind in KINDS:
                table = sol.table(kind)
                for row in d.get(_FIELD[kind], []):
                    idx = tuple(int(v) if i == len(row) - 2 else str(v) for i, v in enumerate(row[:-1]))
                    table[idx] = float(row[-1])
            return sol
        except (TypeError, ValueError, IndexError) as exc:
            raise ParseError(f"malformed solution: {exc!r}") from exc


def save_solution(sol: Solution, path) -> None:
    try:
        Path(path).write_text(json.dumps(sol.to_dict()) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write solution to {path}: {exc}") from exc


def load_solution(path) -> Solution:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise IoError(f"cannot read solution {path}: {exc}") from exc
    return Solution.from_dict(data)
