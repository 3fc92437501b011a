"""Progress traces: one row per completed evaluation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = ["TraceRow", "ProgressTrace"]


@dataclass
class TraceRow:
    eval_index: int
    t_start: float
    t_end: float
    worker: int
    value: float
    best: float
    point: list


@dataclass
class ProgressTrace:
    """Completed evaluations in completion order.

    ``updates`` keeps partial values reported while evaluations ran, as
    ``(record_id, time, value)`` triples.
    """

    trial: int = 0
    rows: list = field(default_factory=list)
    updates: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def append(self, t_start, t_end, worker, value, point):
        best = min(value, self.rows[-1].best) if self.rows else value
        row = TraceRow(len(self.rows), float(t_start), float(t_end), int(worker),
                       float(value), float(best), [float(v) for v in point])
        self.rows.append(row)
        return row

    def __len__(self):
        return len(self.rows)

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.rows])

    @property
    def best(self) -> np.ndarray:
        return np.array([r.best for r in self.rows])

    @property
    def t_end(self) -> np.ndarray:
        return np.array([r.t_end for r in self.rows])

    def best_at(self, t: float) -> float:
        """Best value among evaluations finished by time ``t`` (``inf`` if none)."""
        out = math.inf
        for r in self.rows:
            if r.t_end > t:
                break
            out = r.best
        return out

    def time_to(self, target: float) -> float:
        """First completion time with best value ``<= target`` (``inf`` if never)."""
        for r in self.rows:
            if r.best <= target:
                return r.t_end
        return math.inf

    def to_dict(self) -> dict:
        return {
            "trial": self.trial,
            "config": self.config,
            "rows": [asdict(r) for r in self.rows],
            "updates": [list(u) for u in self.updates],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProgressTrace":
        return cls(
            trial=data.get("trial", 0),
            rows=[TraceRow(**r) for r in data.get("rows", [])],
            updates=[tuple(u) for u in data.get("updates", [])],
            config=dict(data.get("config", {})),
        )
