"""Online parameter-gradient accumulation during the forward pass.

Given an external adjoint signal g_t = dL/dy_t, the gradients of the
output projection, the input matrix and the continuous transition are
folded into static accumulators while the state streams by:

    G_C[d, n] += w_t[d] * h_t[d, n]                    (outer-product collapse)
    G_A[d, n] += w_t[d] * C[d, n] * Gamma_A_t[d, n]
    G_B[...]  += w_t[d] * C[d, n] * Gamma_B_t[...]

with w_t = g_t * act'(y_hat_t) and sensitivity flows that ride the same
per-lane decay as the primal state:

    Gamma_A_t = A_bar_t Gamma_A_{t-1} + (Delta_t A_bar_t) h_{t-1} + dA(b_bar_t)
    Gamma_B_t = A_bar_t Gamma_B_{t-1} + dB(b_bar_t)

Per-step buffers live only within a block; block boundaries hand off the
flows exactly like the streaming engine hands off the dual state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import meter as meter_mod
from .glr import GlrParams, StepOperator, act_d1, discretize
from .streaming import BlockPlan


@dataclass
class SensitivityFlow:
    """Parameter-tangent states, zero-initialized, one lane set per parameter slice.

    gamma_a: [D, N] for the diagonal continuous transition.
    gamma_b: [D, N] in fixed-B mode (parameter B[n]);
             [D, min(N, D)] for the diagonal of the selective projection;
             [D, N, D] when dense selective tracking is enabled.
    """

    gamma_a: np.ndarray
    gamma_b: np.ndarray
    b_mode: str  # "fixed" | "diag" | "dense"

    def nbytes(self) -> int:
        return self.gamma_a.nbytes + self.gamma_b.nbytes


@dataclass
class GradAccumulators:
    g_c: np.ndarray
    g_b: np.ndarray
    g_a: np.ndarray
    b_mode: str

    def scaled(self, alpha):
        return GradAccumulators(alpha * self.g_c, alpha * self.g_b, alpha * self.g_a,
                                self.b_mode)


def init_flow(params: GlrParams, dense_b=False) -> SensitivityFlow:
    d, n = params.d, params.n
    if not params.selective_b:
        mode, shape = "fixed", (d, n)
    elif dense_b:
        mode, shape = "dense", (d, n, d)
    else:
        mode, shape = "diag", (d, min(n, d))
    return SensitivityFlow(gamma_a=np.zeros((d, n)), gamma_b=np.zeros(shape), b_mode=mode)


def init_accumulators(params: GlrParams, flow: SensitivityFlow) -> GradAccumulators:
    d, n = params.d, params.n
    if flow.b_mode == "fixed":
        g_b = np.zeros(n)
    elif flow.b_mode == "diag":
        g_b = np.zeros(min(n, d))
    else:
        g_b = np.zeros((n, d))
    return GradAccumulators(g_c=np.zeros((d, n)), g_b=g_b, g_a=np.zeros((d, n)),
                            b_mode=flow.b_mode)


def _drive_factor(params, a_bar_t, delta_t):
    """Multiplier f with b_bar = f * (B_t[n] u_t[d])."""
    if params.discretization == "euler":
        return np.broadcast_to(delta_t[:, None], a_bar_t.shape)
    return (a_bar_t - 1.0) / params.a


def gamma_evolve(params: GlrParams, step: StepOperator, t: int, u_t, h_prev,
                 flow: SensitivityFlow) -> SensitivityFlow:
    """Advance both flows from step t-1 to t; h_prev is the primal h_{t-1}."""
    a_bar_t = step.a_bar[t]
    delta_t = step.delta[t]
    a = params.a

    # dA_bar/dA = Delta * A_bar; ZOH drive adds the quotient-rule path
    # d/dA[(A_bar - 1)/A] = (Delta*A_bar*A - A_bar + 1) / A^2.
    da_bar = delta_t[:, None] * a_bar_t
    if params.discretization == "zoh":
        drive = params.b_of(u_t)[None, :] * u_t[:, None]
        d_bbar_da = (delta_t[:, None] * a_bar_t * a - a_bar_t + 1.0) / (a * a) * drive
    else:
        d_bbar_da = 0.0
    gamma_a = a_bar_t * flow.gamma_a + da_bar * h_prev + d_bbar_da

    f = _drive_factor(params, a_bar_t, delta_t)
    if flow.b_mode == "fixed":
        gamma_b = a_bar_t * flow.gamma_b + f * u_t[:, None]
    elif flow.b_mode == "diag":
        m = flow.gamma_b.shape[1]
        gamma_b = a_bar_t[:, :m] * flow.gamma_b + f[:, :m] * u_t[None, :m] * u_t[:, None]
    else:
        gamma_b = (a_bar_t[:, :, None] * flow.gamma_b
                   + f[:, :, None] * u_t[None, None, :] * u_t[:, None, None])
    return SensitivityFlow(gamma_a=gamma_a, gamma_b=gamma_b, b_mode=flow.b_mode)


def grad_c_accumulate(params: GlrParams, adjoint_t, y_hat_t, h_t,
                      acc: GradAccumulators) -> GradAccumulators:
    """Fold one step's output-projection gradient into the accumulator."""
    w = adjoint_t * act_d1(params.activation, y_hat_t)
    acc.g_c += w[:, None] * h_t
    return acc


def _accumulate_flows(params, c, w, h_t, flow, acc):
    acc.g_c += w[:, None] * h_t
    acc.g_a += w[:, None] * c * flow.gamma_a
    if flow.b_mode == "fixed":
        acc.g_b += np.einsum("d,dn,dn->n", w, c, flow.gamma_b)
    elif flow.b_mode == "diag":
        m = flow.gamma_b.shape[1]
        acc.g_b += np.einsum("d,dn,dn->n", w, c[:, :m], flow.gamma_b)
    else:
        acc.g_b += np.einsum("d,dn,dnm->nm", w, c, flow.gamma_b)


def accumulate_all(params: GlrParams, u, adjoint, block_size: Optional[int] = None,
                   meter=None, dense_b=False, h0=None) -> GradAccumulators:
    """Single forward pass over blocks, returning (G_C, G_B, G_A).

    The adjoint is an external input of shape [L, D] (e.g. dL/dy of a
    scalar loss at the unperturbed output). Peak tracked graph bytes scale
    with the block size, never with L.
    """
    u = np.asarray(u, dtype=np.float64)
    adjoint = np.asarray(adjoint, dtype=np.float64)
    ln = u.shape[0]
    if adjoint.shape[0] != ln:
        raise ValueError("adjoint length must match u")
    plan = BlockPlan(length=ln, block_size=block_size or ln)

    flow = init_flow(params, dense_b=dense_b)
    acc = init_accumulators(params, flow)
    c = params.c_weight
    h = np.zeros((params.d, params.n)) if h0 is None else np.asarray(h0, dtype=np.float64)
    if meter is not None:
        meter.track(meter_mod.GRAPH, h.nbytes + flow.nbytes())
        meter.track_arrays(meter_mod.ACCUMULATOR, acc.g_c, acc.g_b, acc.g_a)
        meter.track_arrays(meter_mod.IO, u, adjoint)

    for _, start, stop in plan.blocks():
        u_blk = u[start:stop]
        step = discretize(params, u_blk)
        block_bytes = step.a_bar.nbytes + step.b_bar.nbytes + step.delta.nbytes
        if meter is not None:
            meter.track(meter_mod.GRAPH, block_bytes)
        for t in range(stop - start):
            flow = gamma_evolve(params, step, t, u_blk[t], h, flow)
            h = step.a_bar[t] * h + step.b_bar[t]
            y_hat_t = np.einsum("dn,dn->d", h, c) + params.d_res * u_blk[t]
            w = adjoint[start + t] * act_d1(params.activation, y_hat_t)
            _accumulate_flows(params, c, w, h, flow, acc)
        if not np.isfinite(h).all():
            raise FloatingPointError(f"non-finite state at block starting {start}")
        if meter is not None:
            meter.release(meter_mod.GRAPH, block_bytes)

    if meter is not None:
        meter.release(meter_mod.GRAPH, h.nbytes + flow.nbytes())
    return acc


def loss_sum_squares(y):
    """loss = 0.5 * sum(y^2); returns (loss, adjoint)."""
    y = np.asarray(y)
    return 0.5 * float(np.sum(y * y)), y.copy()


def loss_mean(y):
    """loss = mean(y); returns (loss, adjoint)."""
    y = np.asarray(y)
    return float(np.mean(y)), np.full_like(y, 1.0 / y.size)


def save_accumulators(acc: GradAccumulators, directory) -> None:
    """Raw-float64 file per accumulator plus JSON sidecars, like the stream IO."""
    import json
    import os

    from .streaming import write_raw_tensor

    write_raw_tensor(directory, "g_c", acc.g_c)
    write_raw_tensor(directory, "g_b", acc.g_b.reshape(acc.g_b.shape[0], -1))
    write_raw_tensor(directory, "g_a", acc.g_a)
    with open(os.path.join(directory, "meta.json"), "w") as f:
        json.dump({"b_mode": acc.b_mode, "g_b_shape": list(acc.g_b.shape)}, f,
                  sort_keys=True)
        f.write("\n")


def load_accumulators(directory) -> GradAccumulators:
    import json
    import os

    from .streaming import read_raw_tensor

    with open(os.path.join(directory, "meta.json")) as f:
        meta = json.load(f)
    g_b = read_raw_tensor(directory, "g_b").reshape(meta["g_b_shape"])
    return GradAccumulators(g_c=read_raw_tensor(directory, "g_c"), g_b=g_b,
                            g_a=read_raw_tensor(directory, "g_a"),
                            b_mode=meta["b_mode"])
