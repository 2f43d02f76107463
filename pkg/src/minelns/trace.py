"""Run traces: rows of per-window or per-iteration measurements, written as CSV."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IoError

SW_COLUMNS = ("window_start", "solve_time_s", "objective", "status")
LNS_COLUMNS = ("wall_time_s", "iteration", "worker", "strategy", "neighbourhood_size",
               "solve_status", "objective", "gap_pct", "accepted")


@dataclass
class Trace:
    columns: tuple
    rows: list = field(default_factory=list)

    def add(self, **row) -> None:
        missing = set(self.columns) - row.keys()
        if missing:
            raise KeyError(f"trace row lacks {sorted(missing)}")
        self.rows.append({c: row[c] for c in self.columns})

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.columns, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: "" if v is None else v for k, v in r.items()})
        return buf.getvalue()

    def write_csv(self, path) -> None:
        try:
            Path(path).write_text(self.to_csv(), encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot write trace {path}: {exc}") from exc
