"""Tangent flows for two sibling recurrences, run through the same engine.

Linear attention accumulates key-value outer products with a normalizer,

    h_t = h_{t-1} + k_t v_t^T,   z_t = z_{t-1} + k_t,
    y_t = (q_t^T h_t) / (q_t^T z_t),

and its variation is plain accumulation of the product-rule terms plus the
quotient rule at the readout. Decaying recurrences (RWKV/RetNet style)

    h_t = alpha_t h_{t-1} + k_t v_t^T

map directly onto the four-field operator from the tangent module with
a = alpha_t, k = dalpha_t, b = k_t v_t^T, j = dk_t v_t^T + k_t dv_t^T,
reusing compose/apply verbatim. Both variants stream in blocks with the
usual boundary handoff, so the differentiation working set stays
L-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import meter as meter_mod
from .streaming import BlockPlan
from .tangent import AugmentedOperator, DualState, fold

DEN_GUARD = 1e-12


@dataclass
class LinAttState:
    """Accumulated key-value state with normalizer and their tangents.

    Each step adds a rank-1 update to h; z stays strictly positive when the
    keys come from a positive feature map.
    """

    h: np.ndarray
    dh: np.ndarray
    z: np.ndarray
    dz: np.ndarray

    @staticmethod
    def zeros(nk, nv) -> "LinAttState":
        return LinAttState(np.zeros((nk, nv)), np.zeros((nk, nv)),
                           np.zeros(nk), np.zeros(nk))

    def copy(self) -> "LinAttState":
        return LinAttState(self.h.copy(), self.dh.copy(), self.z.copy(),
                           self.dz.copy())

    def nbytes(self) -> int:
        return self.h.nbytes + self.dh.nbytes + self.z.nbytes + self.dz.nbytes


def feature_map(x):
    """elu(x) + 1: strictly positive, the standard linear-attention choice."""
    return np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))


def feature_map_tangent(x, dx):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0))) * dx


def selective_decay(x, w):
    """RWKV-style per-step decay alpha = exp(-softplus(x @ w)) in (0, 1)."""
    z = x @ w
    return np.exp(-np.logaddexp(0.0, z))


def selective_decay_tangent(x, dx, w):
    z = x @ w
    s = 1.0 / (1.0 + np.exp(-z))
    return np.exp(-np.logaddexp(0.0, z)) * (-s) * (dx @ w)


def linatt_primal(keys, values, queries):
    """Reference forward pass; returns y with shape [L, N_v]."""
    ln, nk = keys.shape
    nv = values.shape[1]
    h = np.zeros((nk, nv))
    z = np.zeros(nk)
    y = np.empty((ln, nv))
    for t in range(ln):
        h = h + np.outer(keys[t], values[t])
        z = z + keys[t]
        den = float(queries[t] @ z)
        if abs(den) < DEN_GUARD:
            raise ZeroDivisionError(f"normalizer below {DEN_GUARD} at step {t}")
        y[t] = (queries[t] @ h) / den
    return y


def linatt_jvp(keys, values, queries, dkeys, dvalues, dqueries,
               block_size=None, meter=None):
    """Joint evolution of (h, dh, z, dz) with the full quotient-rule readout.

    Expects a positive feature map applied upstream to keys/queries (with
    dkeys/dqueries its pushed-forward tangents). Returns dy [L, N_v].
    """
    keys = np.asarray(keys, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    ln, nk = keys.shape
    nv = values.shape[1]
    plan = BlockPlan(length=ln, block_size=block_size or ln)

    st = LinAttState.zeros(nk, nv)
    dy = np.empty((ln, nv))
    if meter is not None:
        meter.track(meter_mod.GRAPH, st.nbytes())
        meter.track_arrays(meter_mod.IO, dy)

    for _, start, stop in plan.blocks():
        # Per-block working copies of the input slices, as a streaming
        # loader would hold them.
        block_bytes = 8 * (stop - start) * (4 * nk + 2 * nv)
        if meter is not None:
            meter.track(meter_mod.GRAPH, block_bytes)
        for t in range(start, stop):
            st.h = st.h + np.outer(keys[t], values[t])
            st.dh = st.dh + np.outer(dkeys[t], values[t]) + np.outer(keys[t], dvalues[t])
            st.z = st.z + keys[t]
            st.dz = st.dz + dkeys[t]
            den = float(queries[t] @ st.z)
            if abs(den) < DEN_GUARD:
                raise ZeroDivisionError(f"normalizer below {DEN_GUARD} at step {t}")
            num = queries[t] @ st.h
            dnum = dqueries[t] @ st.h + queries[t] @ st.dh
            dden = float(dqueries[t] @ st.z + queries[t] @ st.dz)
            dy[t] = dnum / den - num * dden / (den * den)
        st = st.copy()  # boundary handoff
        if meter is not None:
            meter.release(meter_mod.GRAPH, block_bytes)

    if meter is not None:
        meter.release(meter_mod.GRAPH, st.nbytes())
    return dy


def decay_primal(alphas, keys, values):
    """Reference state trajectory h_t = alpha_t h_{t-1} + k_t v_t^T."""
    ln, nk = keys.shape
    nv = values.shape[1]
    h = np.zeros((nk, nv))
    out = np.empty((ln, nk, nv))
    for t in range(ln):
        h = alphas[t] * h + np.outer(keys[t], values[t])
        out[t] = h
    return out


def decay_operators(alphas, dalphas, keys, values, dkeys, dvalues) -> AugmentedOperator:
    """Pack the decaying recurrence into the shared four-field operator."""
    alphas = np.asarray(alphas, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    ln, nk = keys.shape
    nv = values.shape[1]
    shape = (ln, nk, nv)
    a = np.broadcast_to(alphas[:, None, None], shape).copy()
    k = np.broadcast_to(np.asarray(dalphas, dtype=np.float64)[:, None, None], shape).copy()
    b = keys[:, :, None] * values[:, None, :]
    j = (np.asarray(dkeys, dtype=np.float64)[:, :, None] * values[:, None, :]
         + keys[:, :, None] * np.asarray(dvalues, dtype=np.float64)[:, None, :])
    return AugmentedOperator(a=a, k=k, b=b, j=j)


def decay_jvp(alphas, dalphas, keys, values, dkeys, dvalues,
              block_size=None, meter=None):
    """State tangent trajectory dh [L, N_k, N_v] via the shared operator fold."""
    if np.any((np.asarray(alphas) <= 0) | (np.asarray(alphas) > 1)):
        raise ValueError("decay factors must lie in (0, 1]")
    keys = np.asarray(keys, dtype=np.float64)
    ln, nk = keys.shape
    nv = np.asarray(values).shape[1]
    plan = BlockPlan(length=ln, block_size=block_size or ln)
    state = DualState(h=np.zeros((nk, nv)), dh=np.zeros((nk, nv)))
    dh_out = np.empty((ln, nk, nv))
    if meter is not None:
        meter.track(meter_mod.GRAPH, state.nbytes())
        meter.track_arrays(meter_mod.IO, dh_out)

    for _, start, stop in plan.blocks():
        aug = decay_operators(alphas[start:stop], dalphas[start:stop],
                              keys[start:stop], values[start:stop],
                              dkeys[start:stop], dvalues[start:stop])
        block_bytes = aug.nbytes()
        if meter is not None:
            meter.track(meter_mod.GRAPH, block_bytes)
        h_blk, dh_blk = fold(aug, state)
        dh_out[start:stop] = dh_blk
        state = DualState(h_blk[-1].copy(), dh_blk[-1].copy())
        del aug, h_blk, dh_blk
        if meter is not None:
            meter.release(meter_mod.GRAPH, block_bytes)

    if meter is not None:
        meter.release(meter_mod.GRAPH, state.nbytes())
    return dh_out
