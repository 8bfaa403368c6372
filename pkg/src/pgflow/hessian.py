"""Second-order flow: exact Hessian-vector products along direction pairs.

The mixed second variation of the state obeys another recurrence with the
same per-lane decay coefficient:

    d2h_t = A_bar_t d2h_{t-1} + H_t
    H_t   = (dA_w) dh_v_{t-1} + (dA_v) dh_w_{t-1}       (cross-talk)
          + (d2A_vw) h_{t-1} + d2b_vw                   (curvature source)

so primal, the two first-order tangents and the second-order state evolve
as three synchronized scans with the usual block handoff. The output-level
second variation needs the activation's second derivative:

    d2y = act''(y_hat) * (dy_hat_v * dy_hat_w) + act'(y_hat) * (C . d2h)

since the input enters the pre-activation linearly in each direction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit as sigmoid

from . import meter as meter_mod
from .glr import GlrParams, act_d1, act_d2, act_value, discretize
from .streaming import BlockPlan


@dataclass
class TripleState:
    """Primal, two first-order tangents, and the mixed second-order state."""

    h: np.ndarray
    dh_v: np.ndarray
    dh_w: np.ndarray
    d2h: np.ndarray

    def copy(self) -> "TripleState":
        return TripleState(self.h.copy(), self.dh_v.copy(), self.dh_w.copy(),
                           self.d2h.copy())

    def nbytes(self) -> int:
        return self.h.nbytes + self.dh_v.nbytes + self.dh_w.nbytes + self.d2h.nbytes


def _direction_sources(params: GlrParams, u, v, w, step):
    """Per-step tangent and curvature sources for a block.

    Returns (k_v, k_w, j_v, j_w, d2a, d2b), each [L, D, N]. The step-size
    chain runs through softplus: with z = dw*u + db and s = sigmoid(z),
        dDelta_x  = s * dw * x
        d2Delta   = s(1-s) * dw^2 * v * w.
    """
    a = params.a
    dw = params.delta_weight
    z = dw * u + params.delta_bias
    s = sigmoid(z)
    d_delta_v = s * dw * v
    d_delta_w = s * dw * w
    d2_delta = s * (1.0 - s) * dw * dw * v * w

    a_bar = step.a_bar
    k_v = a_bar * a * d_delta_v[..., None]
    k_w = a_bar * a * d_delta_w[..., None]
    d2a = a_bar * (a * a * (d_delta_v * d_delta_w)[..., None]
                   + a * d2_delta[..., None])

    b_t = params.b_of(u)
    if params.selective_b:
        db_v, db_w = params.b_of(v), params.b_of(w)
    else:
        db_v = np.zeros_like(b_t)
        db_w = np.zeros_like(b_t)
    p = b_t[..., None, :] * u[..., :, None]
    dp_v = db_v[..., None, :] * u[..., :, None] + b_t[..., None, :] * v[..., :, None]
    dp_w = db_w[..., None, :] * u[..., :, None] + b_t[..., None, :] * w[..., :, None]
    d2p = db_v[..., None, :] * w[..., :, None] + db_w[..., None, :] * v[..., :, None]

    if params.discretization == "euler":
        delta = step.delta[..., None]
        j_v = d_delta_v[..., None] * p + delta * dp_v
        j_w = d_delta_w[..., None] * p + delta * dp_w
        d2b = (d2_delta[..., None] * p + d_delta_v[..., None] * dp_w
               + d_delta_w[..., None] * dp_v + delta * d2p)
    else:
        g = (a_bar - 1.0) / a
        dg_v = a_bar * d_delta_v[..., None]
        dg_w = a_bar * d_delta_w[..., None]
        d2g = a_bar * (a * (d_delta_v * d_delta_w)[..., None] + d2_delta[..., None])
        j_v = dg_v * p + g * dp_v
        j_w = dg_w * p + g * dp_w
        d2b = d2g * p + dg_v * dp_w + dg_w * dp_v + g * d2p
    return k_v, k_w, j_v, j_w, d2a, d2b


def hessian_source(params: GlrParams, u_t, v_t, w_t, h_prev, dhv_prev, dhw_prev):
    """Second-order source H_t for a single step (inputs shaped [D])."""
    u_t = np.asarray(u_t, dtype=np.float64).reshape(1, -1)
    v_t = np.asarray(v_t, dtype=np.float64).reshape(1, -1)
    w_t = np.asarray(w_t, dtype=np.float64).reshape(1, -1)
    step = discretize(params, u_t)
    k_v, k_w, _, _, d2a, d2b = _direction_sources(params, u_t, v_t, w_t, step)
    return (k_w[0] * dhv_prev + k_v[0] * dhw_prev + d2a[0] * h_prev + d2b[0])


def hvp_full(params: GlrParams, u, v, w, block_size: Optional[int] = None,
             meter=None) -> tuple:
    """Blocked triple-scan; returns (y, dy_v, dy_w, d2y), each [L, D]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if v.shape != u.shape or w.shape != u.shape:
        raise ValueError("direction shapes must match u")
    ln, d = u.shape
    n = params.n
    plan = BlockPlan(length=ln, block_size=block_size or ln)
    st = TripleState(h=np.zeros((d, n)), dh_v=np.zeros((d, n)),
                     dh_w=np.zeros((d, n)), d2h=np.zeros((d, n)))
    if meter is not None:
        meter.track(meter_mod.GRAPH, st.nbytes())

    y = np.empty((ln, d))
    dy_v = np.empty((ln, d))
    dy_w = np.empty((ln, d))
    d2y = np.empty((ln, d))
    c = params.c_weight
    d_res = params.d_res

    for _, start, stop in plan.blocks():
        ub, vb, wb = u[start:stop], v[start:stop], w[start:stop]
        step = discretize(params, ub)
        k_v, k_w, j_v, j_w, d2a, d2b = _direction_sources(params, ub, vb, wb, step)
        block_bytes = (step.a_bar.nbytes + step.b_bar.nbytes + step.delta.nbytes
                       + k_v.nbytes + k_w.nbytes + j_v.nbytes + j_w.nbytes
                       + d2a.nbytes + d2b.nbytes)
        if meter is not None:
            meter.track(meter_mod.GRAPH, block_bytes)
        for t in range(stop - start):
            a_t = step.a_bar[t]
            d2h = (a_t * st.d2h + k_w[t] * st.dh_v + k_v[t] * st.dh_w
                   + d2a[t] * st.h + d2b[t])
            dh_v = a_t * st.dh_v + k_v[t] * st.h + j_v[t]
            dh_w = a_t * st.dh_w + k_w[t] * st.h + j_w[t]
            h = a_t * st.h + step.b_bar[t]
            st = TripleState(h, dh_v, dh_w, d2h)

            g = start + t
            y_hat = np.einsum("dn,dn->d", h, c) + d_res * ub[t]
            lv = np.einsum("dn,dn->d", dh_v, c) + d_res * vb[t]
            lw = np.einsum("dn,dn->d", dh_w, c) + d_res * wb[t]
            l2 = np.einsum("dn,dn->d", d2h, c)
            s1 = act_d1(params.activation, y_hat)
            y[g] = act_value(params.activation, y_hat)
            dy_v[g] = s1 * lv
            dy_w[g] = s1 * lw
            d2y[g] = act_d2(params.activation, y_hat) * lv * lw + s1 * l2
        if not np.isfinite(st.d2h).all():
            raise FloatingPointError(f"non-finite second-order state in block at {start}")
        st = st.copy()  # boundary handoff: no reference into block buffers
        if meter is not None:
            meter.release(meter_mod.GRAPH, block_bytes)

    if meter is not None:
        meter.release(meter_mod.GRAPH, st.nbytes())
    return y, dy_v, dy_w, d2y


def hvp(params: GlrParams, u, v, w, block_size: Optional[int] = None, meter=None):
    """Mixed second variation d2y of the output along directions (v, w)."""
    return hvp_full(params, u, v, w, block_size=block_size, meter=meter)[3]
