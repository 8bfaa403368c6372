"""Allocation-tracking instrument for the memory-scaling experiments.

The meter records logical buffer registrations, not allocator internals:
every strategy registers the buffers it retains under a class
("graph" for differentiation working set, "io" for input/output payload,
"accumulator" for gradient buffers) and releases them when it lets go.
This isolates the algorithmic retained-state structure from allocator noise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

GRAPH = "graph"
IO = "io"
ACCUMULATOR = "accumulator"


class MeterError(RuntimeError):
    """Unbalanced ledger: instrumentation bug, not a numerical failure."""


@dataclass
class MeterEvent:
    seq: int
    op: str  # "track" | "release"
    cls: str
    nbytes: int
    live: int
    peak: int


@dataclass
class MemoryMeter:
    """Live/peak byte ledger partitioned by buffer class."""

    _live: dict = field(default_factory=dict)
    _peak: dict = field(default_factory=dict)
    events: list = field(default_factory=list)

    def track(self, cls: str, nbytes: int) -> None:
        if nbytes < 0:
            raise MeterError(f"track({cls}): negative byte count {nbytes}")
        if nbytes == 0:
            return
        live = self._live.get(cls, 0) + nbytes
        self._live[cls] = live
        self._peak[cls] = max(self._peak.get(cls, 0), live)
        self.events.append(
            MeterEvent(len(self.events), "track", cls, nbytes, live, self._peak[cls])
        )

    def release(self, cls: str, nbytes: int) -> None:
        if nbytes < 0:
            raise MeterError(f"release({cls}): negative byte count {nbytes}")
        if nbytes == 0:
            return
        live = self._live.get(cls, 0)
        if nbytes > live:
            raise MeterError(
                f"release({cls}, {nbytes}) exceeds live bytes {live}: unbalanced ledger"
            )
        self._live[cls] = live - nbytes
        self.events.append(
            MeterEvent(
                len(self.events), "release", cls, nbytes, live - nbytes, self._peak.get(cls, 0)
            )
        )

    def track_arrays(self, cls: str, *arrays) -> int:
        total = sum(int(np.asarray(a).nbytes) for a in arrays)
        self.track(cls, total)
        return total

    def live(self, cls: str) -> int:
        return self._live.get(cls, 0)

    def peak(self, cls: str) -> int:
        return self._peak.get(cls, 0)

    def total_peak(self) -> int:
        # Peak of the summed live curve, replayed from the event log.
        total, peak = 0, 0
        for ev in self.events:
            total += ev.nbytes if ev.op == "track" else -ev.nbytes
            peak = max(peak, total)
        return peak

    def assert_balanced(self, classes=None) -> None:
        keys = classes if classes is not None else list(self._live)
        bad = {c: self._live.get(c, 0) for c in keys if self._live.get(c, 0) != 0}
        if bad:
            raise MeterError(f"ledger not balanced at end of run: live={bad}")

    def write_event_csv(self, path) -> None:
        # "event" is a deterministic ordinal, not wall-clock time.
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["event", "op", "class", "bytes", "live", "peak"])
            for ev in self.events:
                w.writerow([ev.seq, ev.op, ev.cls, ev.nbytes, ev.live, ev.peak])


def slope_report(runs):
    """OLS of peak bytes against sequence length.

    ``runs`` is a list of (L, peak_bytes) pairs from at least 3 lengths.
    Returns a RegressionReport; for the streaming engine with memory-backed
    IO the slope recovers (IO tensors per step) * D * itemsize, while the
    unrolled oracle additionally carries the D*N graph term.
    """
    from .numerics import ols_slope_test

    if len(runs) < 3:
        raise ValueError("slope_report needs at least 3 (L, peak) pairs")
    xs = np.asarray([float(r[0]) for r in runs])
    ys = np.asarray([float(r[1]) for r in runs])
    return ols_slope_test(xs, ys)
