"""Per-round metrics and their CSV form.

One row per completed round: round id, virtual time of the commit, model
version, eval accuracy, the trust vector, and cumulative messages sent.
Float columns use repr (shortest round-trip form), so identical runs write
byte-identical files.
"""

from __future__ import annotations

import io
from dataclasses import dataclass


@dataclass(frozen=True)
class RoundMetrics:
    round_id: int
    virtual_time: float
    version: int
    accuracy: float
    phi: tuple
    msgs_sent: int


class MetricsLog:
    """Append-only rows plus run metadata written as # comments."""

    def __init__(self, meta: dict = None):
        self.meta = dict(meta or {})
        self.rows = []

    def append(self, row: RoundMetrics) -> None:
        self.rows.append(row)

    @property
    def n_trainers(self) -> int:
        return len(self.rows[0].phi) if self.rows else 0

    def accuracies(self) -> list:
        return [r.accuracy for r in self.rows]

    def final_accuracy(self) -> float:
        return self.rows[-1].accuracy if self.rows else 0.0

    def max_accuracy(self) -> tuple:
        """(best accuracy, 1-based round index where it was first reached)."""
        best, best_round = -1.0, 0
        for i, row in enumerate(self.rows):
            if row.accuracy > best:
                best, best_round = row.accuracy, i + 1
        return best, best_round

    def rounds_completed(self) -> int:
        return len(self.rows)

    def to_csv(self) -> str:
        out = io.StringIO()
        for key in sorted(self.meta):
            out.write(f"# {key}={self.meta[key]}\n")
        phi_cols = ",".join(f"phi_{i}" for i in range(self.n_trainers))
        out.write(f"round,virtual_time,version,accuracy,{phi_cols},msgs_sent\n")
        for r in self.rows:
            phi = ",".join(repr(p) for p in r.phi)
            out.write(f"{r.round_id},{r.virtual_time!r},{r.version},"
                      f"{r.accuracy!r},{phi},{r.msgs_sent}\n")
        return out.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_csv())
