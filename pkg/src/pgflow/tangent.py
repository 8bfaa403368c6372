"""First-order tangent flow of the selective recurrence.

For an input perturbation du, the state variation obeys a recurrence
isomorphic to the primal one:

    dh_t = A_bar_t * dh_{t-1} + K_t * h_{t-1} + j_t

where K_t = (d A_bar_t / d u_t) du_t and j_t = (d b_bar_t / d u_t) du_t are
the input-driven variations through the discretization chain. The joint
(h, dh) update embeds into a homogeneous per-lane operator with four
scalars (a, k, b, j), acting as

    h'  = a h + b
    dh' = k h + a dh + j

and composing associatively:

    (a, k, b, j)_2 after (a, k, b, j)_1 =
        (a2 a1,  k2 a1 + a2 k1,  a2 b1 + b2,  k2 b1 + a2 j1 + j2).

Both the sequential fold and the doubling scan over this operator are
provided; they agree to accumulation rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

from .glr import GlrParams, StepOperator, act_d1, discretize, output_map


@dataclass
class AugmentedOperator:
    """Four scalars per lane encoding the joint primal+tangent step.

    Fields may be batched [L, D, N] or single-step [D, N].
    The zero block and unit row of the underlying 3x3 form are implicit.
    """

    a: np.ndarray
    k: np.ndarray
    b: np.ndarray
    j: np.ndarray

    def __len__(self):
        return self.a.shape[0]

    def step(self, t) -> "AugmentedOperator":
        return AugmentedOperator(self.a[t], self.k[t], self.b[t], self.j[t])

    def slice(self, start, stop) -> "AugmentedOperator":
        return AugmentedOperator(self.a[start:stop], self.k[start:stop],
                                 self.b[start:stop], self.j[start:stop])

    def nbytes(self) -> int:
        return self.a.nbytes + self.k.nbytes + self.b.nbytes + self.j.nbytes

    @staticmethod
    def identity(shape, dtype=np.float64) -> "AugmentedOperator":
        one = np.ones(shape, dtype=dtype)
        zero = np.zeros(shape, dtype=dtype)
        return AugmentedOperator(one, zero.copy(), zero.copy(), zero.copy())


@dataclass
class DualState:
    """Synchronized primal/tangent state pair, one value per lane."""

    h: np.ndarray
    dh: np.ndarray

    def copy(self) -> "DualState":
        return DualState(self.h.copy(), self.dh.copy())

    def nbytes(self) -> int:
        return self.h.nbytes + self.dh.nbytes


def delta_tangent(params: GlrParams, u, du):
    """Variation of the step size: dDelta = sigmoid(z) * delta_weight * du."""
    u = np.asarray(u)
    dt = u.dtype
    dw = params.delta_weight.astype(dt)
    z = dw * u + params.delta_bias.astype(dt)
    return sigmoid(z) * dw * np.asarray(du)


def selectivity_jacobian(params: GlrParams, u, du, step: StepOperator):
    """Input-driven variations (K, j) of the discretized pair.

    Accepts u, du of shape [..., D] with matching step fields [..., D, N];
    returns K, j of shape [..., D, N].

    K = A_bar * A * dDelta.
    j differentiates the drive product through both the step-size path and
    the input-projection path:
        euler: b_bar = Delta * P            => j = dDelta * P + Delta * dP
        zoh:   b_bar = (A_bar - 1)/A * P    => j = (A_bar * dDelta) * P
                                                   + (A_bar - 1)/A * dP
    with P = B_t[n] * u[d] and dP = dB_t[n] * u[d] + B_t[n] * du[d].
    """
    u = np.asarray(u)
    du = np.asarray(du)
    dt = u.dtype
    a = params.a.astype(dt)
    d_delta = delta_tangent(params, u, du)
    k = step.a_bar * a * d_delta[..., None]

    b_t = params.b_of(u)
    db_t = params.b_of(du) if params.selective_b else np.zeros_like(b_t)
    p = b_t[..., None, :] * u[..., :, None]
    dp = db_t[..., None, :] * u[..., :, None] + b_t[..., None, :] * du[..., :, None]
    if params.discretization == "euler":
        j = d_delta[..., None] * p + step.delta[..., None] * dp
    else:
        g = (step.a_bar - 1.0) / a
        j = (step.a_bar * d_delta[..., None]) * p + g * dp
    return k, j


def augment(step: StepOperator, k, j) -> AugmentedOperator:
    """Pack a step operator and its tangent sources into the 4-field layout."""
    return AugmentedOperator(a=step.a_bar, k=k, b=step.b_bar, j=j)


def compose(m2: AugmentedOperator, m1: AugmentedOperator) -> AugmentedOperator:
    """Operator for m1 followed by m2 (block product of the 3x3 forms)."""
    return AugmentedOperator(
        a=m2.a * m1.a,
        k=m2.k * m1.a + m2.a * m1.k,
        b=m2.a * m1.b + m2.b,
        j=m2.k * m1.b + m2.a * m1.j + m2.j,
    )


def apply_operator(m: AugmentedOperator, s: DualState) -> DualState:
    """Advance a dual state by one (possibly composed) operator."""
    return DualState(h=m.a * s.h + m.b, dh=m.k * s.h + m.a * s.dh + m.j)


def fold(aug: AugmentedOperator, state: DualState):
    """Sequential fold of batched operators; returns dense (h, dh) trajectories."""
    ln = len(aug)
    h_traj = np.empty_like(aug.b)
    dh_traj = np.empty_like(aug.b)
    h, dh = state.h, state.dh
    a, k, b, j = aug.a, aug.k, aug.b, aug.j
    for t in range(ln):
        h, dh = a[t] * h + b[t], k[t] * h + a[t] * dh + j[t]
        h_traj[t], dh_traj[t] = h, dh
    return h_traj, dh_traj


def prefix_augmented(aug: AugmentedOperator) -> AugmentedOperator:
    """Inclusive doubling scan: prefix[t] maps the entry state to step t."""
    out = AugmentedOperator(aug.a.copy(), aug.k.copy(), aug.b.copy(), aug.j.copy())
    n = len(out)
    shift = 1
    while shift < n:
        hi = out.slice(shift, n)
        lo = out.slice(0, n - shift)
        c = compose(hi, lo)
        out.a[shift:], out.k[shift:] = c.a, c.k
        out.b[shift:], out.j[shift:] = c.b, c.j
        shift *= 2
    return out


def fold_chunked(aug: AugmentedOperator, state: DualState, chunk: int):
    """Chunked associative-scan evolution, same contract as fold."""
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    ln = len(aug)
    h_traj = np.empty_like(aug.b)
    dh_traj = np.empty_like(aug.b)
    h, dh = state.h, state.dh
    for s in range(0, ln, chunk):
        e = min(s + chunk, ln)
        pref = prefix_augmented(aug.slice(s, e))
        h_traj[s:e] = pref.a * h + pref.b
        dh_traj[s:e] = pref.k * h + pref.a * dh + pref.j
        h, dh = h_traj[e - 1], dh_traj[e - 1]
    return h_traj, dh_traj


def tangent_output(params: GlrParams, dh, du, y_hat):
    """Output variation dy = act'(y_hat) * (C . dh + D_res * du)."""
    dh = np.asarray(dh)
    dt = dh.dtype
    c = params.c_weight.astype(dt)
    lin = np.einsum("...dn,dn->...d", dh, c) + params.d_res.astype(dt) * np.asarray(du)
    return act_d1(params.activation, y_hat) * lin


def build_augmented(params: GlrParams, u, du) -> AugmentedOperator:
    """Discretize a block and attach its tangent sources."""
    step = discretize(params, u)
    k, j = selectivity_jacobian(params, u, du, step)
    return augment(step, k, j)


def jvp_dense(params: GlrParams, u, du, h0=None, dh0=None, chunk=None):
    """Full-sequence primal + tangent evaluation with O(L) storage.

    Returns (y, dy), each [L, D]. The default path folds the augmented
    operators sequentially; passing ``chunk`` routes evolution through the
    associative scan instead (same contract).
    """
    u = np.asarray(u)
    du = np.asarray(du)
    if du.shape != u.shape:
        raise ValueError(f"du shape {du.shape} != u shape {u.shape}")
    d, n = params.d, params.n
    state = DualState(
        h=np.zeros((d, n), dtype=u.dtype) if h0 is None else np.asarray(h0, dtype=u.dtype),
        dh=np.zeros((d, n), dtype=u.dtype) if dh0 is None else np.asarray(dh0, dtype=u.dtype),
    )
    aug = build_augmented(params, u, du)
    if chunk is None:
        h_traj, dh_traj = fold(aug, state)
    else:
        h_traj, dh_traj = fold_chunked(aug, state, chunk)
    for name, arr in (("state", h_traj), ("tangent state", dh_traj)):
        if not np.isfinite(arr[-1]).all():
            raise FloatingPointError(f"non-finite {name} during dense evaluation")
    y, y_hat = output_map(params, h_traj, u)
    dy = tangent_output(params, dh_traj, du, y_hat)
    return y, dy
