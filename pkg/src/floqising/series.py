"""Per-step observable series with CSV round-tripping."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .exceptions import InputDomainError

CSV_COLUMNS = ("s", "mean", "stderr", "tag")


@dataclass
class ObservableSeries:
    """Values of one observable at Trotter steps ``s`` with standard errors."""

    s: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    tag: str = "raw"

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=int)
        self.mean = np.asarray(self.mean, dtype=float)
        self.stderr = np.zeros_like(self.mean) if self.stderr is None else np.asarray(self.stderr, dtype=float)
        if not (self.s.shape == self.mean.shape == self.stderr.shape) or self.s.ndim != 1:
            raise InputDomainError("s, mean and stderr must be 1-D arrays of equal length")

    def __len__(self) -> int:
        return self.s.size

    def window(self, s_min: int, s_max: int) -> "ObservableSeries":
        sel = (self.s >= s_min) & (self.s <= s_max)
        return ObservableSeries(self.s[sel], self.mean[sel], self.stderr[sel], self.tag)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for s, m, e in zip(self.s, self.mean, self.stderr):
            w.writerow([int(s), repr(float(m)), repr(float(e)), self.tag])
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str) -> list["ObservableSeries"]:
        """Parse a CSV with one or more tags; returns one series per tag in order of appearance."""
        rows = list(csv.DictReader(io.StringIO(text)))
        if rows and set(CSV_COLUMNS) - set(rows[0]):
            raise InputDomainError(f"CSV needs columns {CSV_COLUMNS}")
        out: dict[str, list] = {}
        for r in rows:
            out.setdefault(r["tag"], []).append((int(r["s"]), float(r["mean"]), float(r["stderr"])))
        return [ObservableSeries(*map(np.array, zip(*vals)), tag=tag) for tag, vals in out.items()]


def series_to_csv(series: list[ObservableSeries]) -> str:
    parts = [s.to_csv() for s in series]
    return parts[0] + "".join(p.split("\n", 1)[1] for p in parts[1:]) if parts else ",".join(CSV_COLUMNS) + "\n"
