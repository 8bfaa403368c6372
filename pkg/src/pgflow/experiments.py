"""Experiment implementations behind the CLI subcommands.

Each run_* function is pure given (config, seed) apart from wall-clock
measurements, returns plain rows ready for CSV serialization, and is shared
verbatim by the acceptance suite.
"""

from __future__ import annotations

import time

import numpy as np

from . import meter as meter_mod
from .glr import GlrParams, output_map, random_params
from .hessian import hvp_full
from .meter import MemoryMeter
from .numerics import log_shift_scan, ols_slope_test, relative_error
from .oracle import dense_rtrl_time, fd_hvp, fd_jvp, primal_fn, unrolled_jvp
from .paramgrad import accumulate_all, loss_sum_squares
from .streaming import (ArraySink, ArraySource, BlockPlan, DiscardSink,
                        FileSink, GeneratorSource, run_tose)
from .tangent import DualState, build_augmented, jvp_dense, tangent_output


DEFAULTS = {
    "verify": {
        "lengths": [128, 512, 2048, 8192],
        "channels": [2, 4],
        "states": [4, 16],
        "seeds": 5,
        "fd_eps": 1e-5,
        "tol_unrolled": 1e-12,
        "tol_fd": 1e-5,
        "precision": "f64",
    },
    "invariance": {
        "n_lengths": 30,
        "min_length": 100,
        "max_length": 100000,
        "channels": 4,
        "states": 8,
        "precision": "f32",
    },
    "ghost-pulse": {
        "length": 128000,
        "pulse_index": 100000,
        "pulse_eps": 1e-6,
        "channels": 4,
        "states": 8,
        "block_size": 256,
        "io_dir": "",
    },
    "stiffness": {
        "grid_min": -8.0,
        "grid_max": -1.0,
        "grid_points": 15,
        "length": 64,
        "channels": 2,
        "states": 4,
        "tol": 1e-6,
        "precision": "f32",
    },
    "memory": {
        "lengths": [10000, 20000, 40000],
        "unrolled_lengths": [1000, 2000, 4000],
        "block_size": 256,
        "channels": 4,
        "states": 8,
    },
    "complexity": {
        "state_grid": [8, 16, 32, 64],
        "length": 256,
        "repeats": 3,
        "rtrl_slices": 256,
        "pgf_channels": 2,
    },
    "hessian": {
        "length": 256,
        "channels": 2,
        "states": 4,
        "n_seeds": 3,
        "fd_eps": 1e-5,
        "tol_fd": 1e-4,
        "tol_symmetry": 1e-12,
    },
    "params": {
        "length": 128,
        "channels": 2,
        "states": 4,
        "block_size": 16,
        "fd_eps": 1e-5,
        "tol_fd": 1e-5,
        "tol_block": 1e-12,
        "dense_b": False,
    },
}


def _dtype(precision):
    if precision not in ("f32", "f64"):
        raise ValueError(f"precision must be f32 or f64, got {precision!r}")
    return np.float32 if precision == "f32" else np.float64


def _instance(seed, d, n, ln, dtype=np.float64, **kw):
    rng = np.random.default_rng(seed)
    params = random_params(rng, d, n, **kw)
    u = rng.standard_normal((ln, d)).astype(dtype)
    du = rng.standard_normal((ln, d)).astype(dtype)
    return params, u, du


# --- verify -----------------------------------------------------------------

def run_verify(cfg, seed):
    """Exactness and FD-agreement grid; returns (rows, breaches)."""
    rows, breaches = [], []
    for ln in cfg["lengths"]:
        for d in cfg["channels"]:
            for n in cfg["states"]:
                for s in range(cfg["seeds"]):
                    params, u, du = _instance(seed + s, d, n, ln,
                                              dtype=_dtype(cfg["precision"]))
                    _, dy = jvp_dense(params, u, du)
                    dy_unrolled = unrolled_jvp(params, u, du)
                    dy_fd = fd_jvp(primal_fn(params), u, du, eps=cfg["fd_eps"])
                    row = {
                        "L": ln, "D": d, "N": n, "seed": seed + s,
                        "rel_err_unrolled": relative_error(dy, dy_unrolled),
                        "rel_err_fd": relative_error(dy, dy_fd),
                    }
                    rows.append(row)
                    if row["rel_err_unrolled"] > cfg["tol_unrolled"]:
                        breaches.append(("rel_err_unrolled", row))
                    if row["rel_err_fd"] > cfg["tol_fd"]:
                        breaches.append(("rel_err_fd", row))
    return rows, breaches


# --- invariance -------------------------------------------------------------

def invariance_lengths(cfg):
    grid = np.logspace(np.log10(cfg["min_length"]), np.log10(cfg["max_length"]),
                       cfg["n_lengths"])
    return sorted(set(int(round(x)) for x in grid))


def run_invariance(cfg, seed):
    """Relative error of the reduced-precision path vs the f64 reference,
    per length, plus the slope regression; returns (rows, report)."""
    dt = _dtype(cfg["precision"])
    rows = []
    for i, ln in enumerate(invariance_lengths(cfg)):
        params, u, du = _instance(seed + i, cfg["channels"], cfg["states"], ln)
        _, dy_ref = jvp_dense(params, u, du)
        _, dy_low = jvp_dense(params, u.astype(dt), du.astype(dt))
        rows.append({"L": ln, "rel_err": relative_error(dy_low, dy_ref)})
    report = ols_slope_test([r["L"] for r in rows], [r["rel_err"] for r in rows])
    return rows, report


# --- ghost pulse ------------------------------------------------------------

class MagnitudeSink:
    """Keeps only the per-step 2-norm of dy; O(L) floats, no trajectories."""

    def __init__(self, length):
        self.mag = np.zeros(length)

    def write(self, start, stop, y, dy):
        self.mag[start:stop] = np.linalg.norm(dy, axis=1)


class TeeSink:
    def __init__(self, *sinks):
        self.sinks = sinks

    def write(self, start, stop, y, dy):
        for s in self.sinks:
            s.write(start, stop, y, dy)


class TeeSource:
    """Wraps a source, simultaneously spooling u/du to raw files."""

    def __init__(self, inner, directory):
        import os
        self.inner = inner
        self.length, self.d = inner.length, inner.d
        os.makedirs(directory, exist_ok=True)
        self._u = open(f"{directory}/u.f64", "wb")
        self._du = open(f"{directory}/du.f64", "wb")
        self.dir = directory

    def read(self, start, stop):
        u, du = self.inner.read(start, stop)
        self._u.write(np.ascontiguousarray(u, dtype="<f8").tobytes())
        self._du.write(np.ascontiguousarray(du, dtype="<f8").tobytes())
        return u, du

    def close(self):
        from .streaming import write_sidecar
        self._u.close()
        self._du.close()
        write_sidecar(f"{self.dir}/u.json", self.length, self.d)
        write_sidecar(f"{self.dir}/du.json", self.length, self.d)


def run_ghost_pulse(cfg, seed):
    """Streamed impulse-response run; returns (magnitudes, summary)."""
    ln, t0 = cfg["length"], cfg["pulse_index"]
    if not 0 <= t0 < ln:
        raise ValueError("pulse index must lie inside the sequence")
    rng = np.random.default_rng(seed)
    params = random_params(rng, cfg["channels"], cfg["states"])
    source = GeneratorSource(ln, cfg["channels"], seed=seed,
                             pulse=(t0, cfg["pulse_eps"]))
    sink = MagnitudeSink(ln)
    out_sink = sink
    if cfg.get("io_dir"):
        source = TeeSource(source, cfg["io_dir"])
        out_sink = TeeSink(sink, FileSink(cfg["io_dir"], cfg["channels"]))
    meter = MemoryMeter()
    t_start = time.perf_counter()
    plan = BlockPlan(length=ln, block_size=cfg["block_size"])
    run_tose(params, source, out_sink, plan, meter=meter)
    elapsed = time.perf_counter() - t_start
    if cfg.get("io_dir"):
        source.close()
        out_sink.sinks[1].close()
    pre = sink.mag[:t0]
    post = sink.mag[t0:]
    summary = {
        "length": ln,
        "pulse_index": t0,
        "pre_pulse_all_zero": bool(np.all(pre == 0.0)),
        "max_pre_pulse": float(np.max(pre)) if pre.size else 0.0,
        "max_post_pulse": float(np.max(post)),
        "graph_peak_bytes": meter.peak(meter_mod.GRAPH),
        "seconds": elapsed,
    }
    return sink.mag, summary


# --- stiffness --------------------------------------------------------------

def stiffness_params(log_decay, d, n, rng):
    """Instance whose per-step log decay sits near the requested value.

    delta_bias is softplus-inverted so Delta ~ 1, a mild selectivity keeps
    the tangent sources alive, and a_log places |A| at |log_decay|.
    """
    bias = float(np.log(np.expm1(1.0)))  # softplus(bias) == 1
    return GlrParams(
        a_log=np.full((d, n), np.log(-log_decay)),
        b_weight=rng.normal(0.0, 1.0, size=(n, d)) / np.sqrt(d),
        c_weight=rng.normal(0.0, 1.0, size=(d, n)) / np.sqrt(n),
        d_res=rng.normal(0.0, 1.0, size=d),
        delta_weight=np.full(d, 0.05),
        delta_bias=np.full(d, bias),
        activation="identity",
        discretization="zoh",
    )


def run_stiffness(cfg, seed):
    """Stabilized reduced-precision path vs the f64 oracle across the
    damping grid; returns rows of (stiffness, rel_err, naive_underflowed)."""
    dt = _dtype(cfg["precision"])
    grid = np.linspace(cfg["grid_min"], cfg["grid_max"], cfg["grid_points"])
    rows = []
    for s_log in grid:
        rng = np.random.default_rng(seed)
        params = stiffness_params(float(s_log), cfg["channels"], cfg["states"], rng)
        u64 = rng.standard_normal((cfg["length"], cfg["channels"]))
        du64 = rng.standard_normal((cfg["length"], cfg["channels"]))
        _, dy64 = jvp_dense(params, u64, du64)

        u, du = u64.astype(dt), du64.astype(dt)
        aug = build_augmented(params, u, du)
        naive_underflowed = bool(np.any(np.cumprod(aug.a, axis=0) == 0.0))
        zero = np.zeros((cfg["channels"], cfg["states"]), dtype=dt)
        traj = log_shift_scan(aug, DualState(h=zero.copy(), dh=zero.copy()))
        _, y_hat = output_map(params, traj.h, u)
        dy = tangent_output(params, traj.dh, du, y_hat)
        rows.append({
            "stiffness": float(s_log),
            "rel_err": relative_error(dy, dy64),
            "naive_underflowed": naive_underflowed,
        })
    return rows


# --- memory -----------------------------------------------------------------

def run_memory(cfg, seed):
    """Meter the streamed paths and the unrolled oracle across lengths.

    Returns (rows, slope_rows, timing_rows); byte counts are exact, so
    everything except the wall-time rows is byte-identical across reruns.
    """
    d, n, blk = cfg["channels"], cfg["states"], cfg["block_size"]
    rng = np.random.default_rng(seed)
    params = random_params(rng, d, n)
    rows, timing_rows = [], []

    for ln in cfg["lengths"]:
        meter = MemoryMeter()
        plan = BlockPlan(length=ln, block_size=blk)
        t0 = time.perf_counter()
        run_tose(params, GeneratorSource(ln, d, seed=seed), DiscardSink(), plan,
                 meter=meter)
        timing_rows.append({"strategy": "streamed-discard", "L": ln,
                            "seconds": time.perf_counter() - t0})
        meter.assert_balanced()
        rows.append(_mem_row("streamed-discard", ln, blk, d, n, meter))

    for ln in cfg["lengths"]:
        meter = MemoryMeter()
        gen = np.random.default_rng(seed)
        u = gen.standard_normal((ln, d))
        du = gen.standard_normal((ln, d))
        plan = BlockPlan(length=ln, block_size=blk)
        source = ArraySource(u, du, meter=meter)
        sink = ArraySink(ln, d, meter=meter)
        t0 = time.perf_counter()
        run_tose(params, source, sink, plan, meter=meter)
        timing_rows.append({"strategy": "streamed-memory", "L": ln,
                            "seconds": time.perf_counter() - t0})
        rows.append(_mem_row("streamed-memory", ln, blk, d, n, meter))

    for ln in cfg["unrolled_lengths"]:
        meter = MemoryMeter()
        gen = np.random.default_rng(seed)
        u = gen.standard_normal((ln, d))
        du = gen.standard_normal((ln, d))
        t0 = time.perf_counter()
        unrolled_jvp(params, u, du, meter=meter)
        timing_rows.append({"strategy": "unrolled", "L": ln,
                            "seconds": time.perf_counter() - t0})
        rows.append(_mem_row("unrolled", ln, blk, d, n, meter))

    slope_rows = []
    for strategy in ("streamed-discard", "streamed-memory", "unrolled"):
        sub = [r for r in rows if r["strategy"] == strategy]
        for metric in ("graph_peak_bytes", "total_peak_bytes"):
            rep = ols_slope_test([r["L"] for r in sub], [r[metric] for r in sub])
            slope_rows.append({
                "strategy": strategy, "metric": metric,
                "slope": rep.slope, "intercept": rep.intercept,
                "stderr": rep.stderr, "t_stat": rep.t_stat,
                "p_value": rep.p_value, "n": rep.n,
            })
    return rows, slope_rows, timing_rows


def _mem_row(strategy, ln, blk, d, n, meter):
    return {
        "strategy": strategy, "L": ln, "B": blk, "D": d, "N": n,
        "graph_peak_bytes": meter.peak(meter_mod.GRAPH),
        "io_peak_bytes": meter.peak(meter_mod.IO),
        "total_peak_bytes": meter.total_peak(),
    }


# --- complexity -------------------------------------------------------------

def pgf_time(n, length, repeats, d, seed):
    """Best-of wall time of the dense joint evaluation at state size n."""
    params, u, du = _instance(seed, d, n, length)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        jvp_dense(params, u, du)
        best = min(best, time.perf_counter() - t0)
    return best


def run_complexity(cfg, seed):
    """Timing grid over the state dimension; returns (rows, slope_rows).

    Wall times are physical measurements: everything here except the
    seconds columns is deterministic.
    """
    rows = []
    for n in cfg["state_grid"]:
        rows.append({"method": "dense-rtrl", "N": n,
                     "seconds": dense_rtrl_time(n, cfg["length"], cfg["repeats"],
                                                cfg["rtrl_slices"], seed)})
    for n in cfg["state_grid"]:
        rows.append({"method": "pgf", "N": n,
                     "seconds": pgf_time(n, cfg["length"], cfg["repeats"],
                                         cfg["pgf_channels"], seed)})
    slope_rows = []
    for method in ("dense-rtrl", "pgf"):
        sub = [r for r in rows if r["method"] == method]
        rep = ols_slope_test(np.log([r["N"] for r in sub]),
                             np.log([r["seconds"] for r in sub]))
        slope_rows.append({"method": method, "loglog_slope": rep.slope,
                           "stderr": rep.stderr, "n": rep.n})
    return rows, slope_rows


# --- hessian ----------------------------------------------------------------

def run_hessian(cfg, seed):
    rows = []
    for s in range(cfg["n_seeds"]):
        rng = np.random.default_rng(seed + s)
        params = random_params(rng, cfg["channels"], cfg["states"], activation="silu")
        ln = cfg["length"]
        u = rng.standard_normal((ln, cfg["channels"]))
        v = rng.standard_normal((ln, cfg["channels"]))
        w = rng.standard_normal((ln, cfg["channels"]))
        _, _, _, d2y = hvp_full(params, u, v, w)
        _, _, _, d2y_swapped = hvp_full(params, u, w, v)
        d2y_fd = fd_hvp(params, u, v, w, eps=cfg["fd_eps"])
        rows.append({"seed": seed + s, "check": "fd_agreement",
                     "rel_err": relative_error(d2y, d2y_fd),
                     "tolerance": cfg["tol_fd"]})
        rows.append({"seed": seed + s, "check": "schwarz_symmetry",
                     "rel_err": relative_error(d2y_swapped, d2y),
                     "tolerance": cfg["tol_symmetry"]})
    return rows


# --- parameter gradients ----------------------------------------------------

def _primal_y(params, u):
    return primal_fn(params)(u)


def fd_param(params, u, adjoint, mutate, eps):
    """Central FD of sum(adjoint * y) under a parameter mutation closure."""
    p_hi, p_lo = mutate(eps), mutate(-eps)
    f_hi = float(np.sum(adjoint * _primal_y(p_hi, u)))
    f_lo = float(np.sum(adjoint * _primal_y(p_lo, u)))
    return (f_hi - f_lo) / (2.0 * eps)


def _param_entries(params, acc):
    """(name, index, analytic value, mutation closure) per tracked parameter."""
    from dataclasses import replace

    entries = []
    d, n = params.d, params.n
    for di in range(d):
        for ni in range(n):
            def mut_c(e, di=di, ni=ni):
                c = params.c_weight.copy()
                c[di, ni] += e
                return replace(params, c_weight=c)
            entries.append(("c", f"{di},{ni}", acc.g_c[di, ni], mut_c))
    for di in range(d):
        for ni in range(n):
            def mut_a(e, di=di, ni=ni):
                a_new = params.a.copy()
                a_new[di, ni] += e
                return params.with_a(a_new)
            entries.append(("a", f"{di},{ni}", acc.g_a[di, ni], mut_a))
    if acc.b_mode == "fixed":
        for ni in range(n):
            def mut_b(e, ni=ni):
                b = params.b_fixed.copy()
                b[ni] += e
                return replace(params, b_fixed=b)
            entries.append(("b", str(ni), acc.g_b[ni], mut_b))
    elif acc.b_mode == "diag":
        for i in range(min(n, d)):
            def mut_b(e, i=i):
                w = params.b_weight.copy()
                w[i, i] += e
                return replace(params, b_weight=w)
            entries.append(("b", f"{i},{i}", acc.g_b[i], mut_b))
    else:
        for ni in range(n):
            for di in range(d):
                def mut_b(e, ni=ni, di=di):
                    w = params.b_weight.copy()
                    w[ni, di] += e
                    return replace(params, b_weight=w)
                entries.append(("b", f"{ni},{di}", acc.g_b[ni, di], mut_b))
    return entries


def run_params(cfg, seed):
    """Accumulated gradients vs parameter-wise FD for both drive modes.

    Returns (rows, block_rows, accs): per-parameter relative errors, the
    block-invariance comparison of whole accumulator sets, and the
    accumulators themselves keyed by mode.
    """
    rows, block_rows, accs = [], [], {}
    for mode in ("fixed", "selective"):
        rng = np.random.default_rng(seed)
        params = random_params(rng, cfg["channels"], cfg["states"],
                               selective_b=(mode == "selective"),
                               activation="silu")
        u = rng.standard_normal((cfg["length"], cfg["channels"]))
        y = _primal_y(params, u)
        _, adjoint = loss_sum_squares(y)
        dense_b = bool(cfg.get("dense_b")) and mode == "selective"
        acc = accumulate_all(params, u, adjoint, dense_b=dense_b)
        accs[mode] = acc
        for name, idx, analytic, mutate in _param_entries(params, acc):
            fd = fd_param(params, u, adjoint, mutate, cfg["fd_eps"])
            denom = max(abs(fd), 1e-12)
            rows.append({"mode": mode, "param": name, "index": idx,
                         "analytic": float(analytic), "fd": fd,
                         "rel_err": abs(float(analytic) - fd) / denom})
        acc_blk = accumulate_all(params, u, adjoint, block_size=cfg["block_size"],
                                 dense_b=dense_b)
        for name, whole, blocked in (("c", acc.g_c, acc_blk.g_c),
                                     ("b", acc.g_b, acc_blk.g_b),
                                     ("a", acc.g_a, acc_blk.g_a)):
            block_rows.append({"mode": mode, "param": name,
                               "rel_err": relative_error(blocked, whole)})
    return rows, block_rows, accs
