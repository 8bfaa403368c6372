"""Block-streamed joint primal/tangent evaluation with a bounded working set.

The sequence is processed in blocks; each block builds its step and
augmented operators, evolves the dual state, emits outputs, and releases
every per-block buffer before the next block starts. Only the boundary
dual state crosses blocks, so the differentiation working set is a
function of (block size, D, N) alone, independent of sequence length.

Sources yield (u, du) slices in block order; sinks consume (y, dy) slices
in block order and never get random access to past blocks. Both exist in
memory-backed, file-backed and generate/discard flavors. The file form is
raw little-endian float64, row-major [t, d], one file per tensor, with a
JSON sidecar {"L": ..., "D": ..., "dtype": ...}.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import meter as meter_mod
from .glr import GlrParams, discretize, output_map
from .tangent import (DualState, augment, fold, selectivity_jacobian,
                      tangent_output)


@dataclass
class BlockPlan:
    """Ordered cover of [0, L) by ``n_blocks`` blocks, the last one ragged."""

    length: int
    block_size: int

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("length must be >= 1")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")

    @property
    def n_blocks(self) -> int:
        return math.ceil(self.length / self.block_size)

    def blocks(self):
        for k in range(self.n_blocks):
            s = k * self.block_size
            yield k, s, min(s + self.block_size, self.length)


class ArraySource:
    """Memory-backed source; registers its payload with the meter."""

    def __init__(self, u, du, meter=None):
        self.u = np.ascontiguousarray(u)
        self.du = np.ascontiguousarray(du)
        if self.u.shape != self.du.shape:
            raise ValueError("u and du must have equal shape")
        self.length, self.d = self.u.shape
        if meter is not None:
            meter.track_arrays(meter_mod.IO, self.u, self.du)

    def read(self, start, stop):
        if stop > self.length:
            raise IndexError(f"source exhausted: asked for [{start}, {stop}) of {self.length}")
        return self.u[start:stop], self.du[start:stop]


class GeneratorSource:
    """Draws each block on the fly; retains nothing.

    Block k is seeded with (seed, k), so the stream is deterministic for a
    given (seed, block plan). ``pulse`` optionally injects du = eps * e_t0.
    """

    def __init__(self, length, d, seed=0, pulse=None):
        self.length, self.d = length, d
        self.seed = seed
        self.pulse = pulse  # (t0, eps) or None

    def read(self, start, stop):
        if stop > self.length:
            raise IndexError(f"source exhausted: asked for [{start}, {stop}) of {self.length}")
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(start,)))
        u = rng.standard_normal((stop - start, self.d))
        du = np.zeros_like(u)
        if self.pulse is not None:
            t0, eps = self.pulse
            if start <= t0 < stop:
                du[t0 - start, :] = eps
        return u, du


class FileSource:
    """Reads u/du blocks from raw float64 files described by JSON sidecars."""

    def __init__(self, directory):
        self.dir = directory
        meta = read_sidecar(os.path.join(directory, "u.json"))
        self.length, self.d = meta["L"], meta["D"]
        self._u = open(os.path.join(directory, "u.f64"), "rb")
        self._du = open(os.path.join(directory, "du.f64"), "rb")

    def read(self, start, stop):
        if stop > self.length:
            raise IndexError(f"source exhausted: asked for [{start}, {stop}) of {self.length}")
        out = []
        for f in (self._u, self._du):
            f.seek(8 * self.d * start)
            raw = f.read(8 * self.d * (stop - start))
            out.append(np.frombuffer(raw, dtype="<f8").reshape(stop - start, self.d))
        return out[0], out[1]

    def close(self):
        self._u.close()
        self._du.close()


class ArraySink:
    """Memory-backed sink; preallocates and registers the payload."""

    def __init__(self, length, d, meter=None, dtype=np.float64):
        self.y = np.zeros((length, d), dtype=dtype)
        self.dy = np.zeros((length, d), dtype=dtype)
        if meter is not None:
            meter.track_arrays(meter_mod.IO, self.y, self.dy)

    def write(self, start, stop, y, dy):
        self.y[start:stop] = y
        self.dy[start:stop] = dy


class DiscardSink:
    """Consumes outputs without retaining anything."""

    def write(self, start, stop, y, dy):
        pass


class FileSink:
    """Appends y/dy blocks to raw float64 files; sidecars written on close."""

    def __init__(self, directory, d):
        self.dir = directory
        self.d = d
        self.rows = 0
        os.makedirs(directory, exist_ok=True)
        self._y = open(os.path.join(directory, "y.f64"), "wb")
        self._dy = open(os.path.join(directory, "dy.f64"), "wb")

    def write(self, start, stop, y, dy):
        if start != self.rows:
            raise ValueError(f"sink requires block order: got start {start}, expected {self.rows}")
        self._y.write(np.ascontiguousarray(y, dtype="<f8").tobytes())
        self._dy.write(np.ascontiguousarray(dy, dtype="<f8").tobytes())
        self.rows = stop

    def close(self):
        self._y.close()
        self._dy.close()
        for name in ("y", "dy"):
            write_sidecar(os.path.join(self.dir, f"{name}.json"), self.rows, self.d)


def write_sidecar(path, length, d, dtype="float64"):
    with open(path, "w") as f:
        json.dump({"L": int(length), "D": int(d), "dtype": dtype}, f, sort_keys=True)
        f.write("\n")


def read_sidecar(path):
    with open(path) as f:
        meta = json.load(f)
    if meta.get("dtype", "float64") != "float64":
        raise ValueError(f"unsupported dtype in sidecar {path}: {meta['dtype']}")
    return meta


def write_raw_tensor(directory, name, arr):
    """One tensor = one raw .f64 file plus its sidecar."""
    os.makedirs(directory, exist_ok=True)
    arr = np.asarray(arr, dtype="<f8")
    with open(os.path.join(directory, f"{name}.f64"), "wb") as f:
        f.write(np.ascontiguousarray(arr).tobytes())
    write_sidecar(os.path.join(directory, f"{name}.json"), arr.shape[0],
                  arr.shape[1] if arr.ndim > 1 else 1)


def read_raw_tensor(directory, name):
    meta = read_sidecar(os.path.join(directory, f"{name}.json"))
    raw = np.fromfile(os.path.join(directory, f"{name}.f64"), dtype="<f8")
    return raw.reshape(meta["L"], meta["D"])


def handoff(state: DualState) -> DualState:
    """Boundary handoff: a value copy holding no reference to block buffers.

    After the handoff the block's arrays are reclaimable; calling it again
    on its own result is a no-op in value.
    """
    return DualState(h=np.array(state.h, copy=True), dh=np.array(state.dh, copy=True))


@dataclass
class RunStats:
    length: int
    block_size: int
    n_blocks: int = 0
    block_seconds: list = field(default_factory=list)
    graph_peak_bytes: int = 0
    io_peak_bytes: int = 0


def run_tose(params: GlrParams, source, sink, plan: BlockPlan, meter=None,
             h0=None, dh0=None):
    """Stream the joint evaluation over the plan's blocks.

    Returns (final DualState, RunStats). Per-block buffers are registered
    under the graph class and released before the next block begins; the
    carried dual state is the only survivor of each boundary.
    """
    d, n = params.d, params.n
    state = DualState(
        h=np.zeros((d, n)) if h0 is None else np.asarray(h0, dtype=np.float64),
        dh=np.zeros((d, n)) if dh0 is None else np.asarray(dh0, dtype=np.float64),
    )
    stats = RunStats(length=plan.length, block_size=plan.block_size)
    if meter is not None:
        meter.track(meter_mod.GRAPH, state.nbytes())

    for k, start, stop in plan.blocks():
        t_begin = time.perf_counter()
        try:
            u_blk, du_blk = source.read(start, stop)
        except (IndexError, ValueError) as exc:
            raise RuntimeError(f"source exhausted in block {k} ([{start}, {stop}))") from exc
        if u_blk.shape[0] != stop - start:
            raise RuntimeError(
                f"source exhausted in block {k}: got {u_blk.shape[0]} rows, "
                f"wanted {stop - start}"
            )

        step = discretize(params, u_blk)
        kk, jj = selectivity_jacobian(params, u_blk, du_blk, step)
        aug = augment(step, kk, jj)
        h_blk, dh_blk = fold(aug, state)
        y_blk, y_hat = output_map(params, h_blk, u_blk)
        dy_blk = tangent_output(params, dh_blk, du_blk, y_hat)

        block_bytes = (aug.nbytes() + step.delta.nbytes + h_blk.nbytes + dh_blk.nbytes
                       + y_blk.nbytes + y_hat.nbytes + dy_blk.nbytes)
        if meter is not None:
            meter.track(meter_mod.GRAPH, block_bytes)

        bad = ~(np.isfinite(h_blk).all(axis=(1, 2)) & np.isfinite(dh_blk).all(axis=(1, 2)))
        if bad.any():
            t_bad = int(np.argmax(bad))
            raise FloatingPointError(
                f"non-finite state in block {k} at step {start + t_bad}"
            )

        sink.write(start, stop, y_blk, dy_blk)
        state = handoff(DualState(h_blk[-1], dh_blk[-1]))
        del step, kk, jj, aug, h_blk, dh_blk, y_blk, y_hat, dy_blk
        if meter is not None:
            meter.release(meter_mod.GRAPH, block_bytes)
        stats.n_blocks += 1
        stats.block_seconds.append(time.perf_counter() - t_begin)

    if meter is not None:
        meter.release(meter_mod.GRAPH, state.nbytes())
        stats.graph_peak_bytes = meter.peak(meter_mod.GRAPH)
        stats.io_peak_bytes = meter.peak(meter_mod.IO)
    return state, stats


def jvp_streamed(params: GlrParams, u, du, block_size, meter=None, h0=None, dh0=None):
    """Convenience wrapper: memory-backed streaming run returning (y, dy)."""
    u = np.asarray(u, dtype=np.float64)
    plan = BlockPlan(length=u.shape[0], block_size=block_size)
    source = ArraySource(u, np.asarray(du, dtype=np.float64), meter=meter)
    sink = ArraySink(u.shape[0], params.d, meter=meter)
    run_tose(params, source, sink, plan, meter=meter, h0=h0, dh0=dh0)
    return sink.y, sink.dy
