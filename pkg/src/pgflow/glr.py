"""Selective diagonal linear recurrence: data model, discretization, primal scans.

The model evolves a per-channel diagonal state bank

    h_t[d, n] = A_bar_t[d, n] * h_{t-1}[d, n] + b_bar_t[d, n]
    y_t[d]    = act( sum_n C[d, n] * h_t[d, n] + D_res[d] * u_t[d] )

with input-selective step size and input drive:

    Delta_t[d]     = softplus(delta_weight[d] * u_t[d] + delta_bias[d])
    A[d, n]        = -exp(a_log[d, n])                  (strictly negative)
    A_bar_t[d, n]  = exp(Delta_t[d] * A[d, n])          (in (0, 1))
    B_t[n]         = b_weight @ u_t   (selective)  or a fixed column
    drive_t[d, n]  = B_t[n] * u_t[d]
    b_bar_t        = Delta_t * drive_t                  (euler)
                   = (A_bar_t - 1) / A * drive_t        (zero-order hold)

Lanes (d, n) are fully decoupled; every operation here is pure.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import expit as sigmoid

ACTIVATIONS = ("identity", "silu")
DISCRETIZATIONS = ("zoh", "euler")


def softplus(x):
    return np.logaddexp(0.0, x)


def silu(x):
    return x * sigmoid(x)


def act_value(kind, yhat):
    if kind == "identity":
        return np.asarray(yhat).copy()
    return silu(yhat)


def act_d1(kind, yhat):
    """First derivative of the output activation at the pre-activation value."""
    if kind == "identity":
        return np.ones_like(yhat)
    s = sigmoid(yhat)
    return s * (1.0 + yhat * (1.0 - s))


def act_d2(kind, yhat):
    """Second derivative of the output activation at the pre-activation value."""
    if kind == "identity":
        return np.zeros_like(yhat)
    s = sigmoid(yhat)
    return s * (1.0 - s) * (2.0 + yhat * (1.0 - 2.0 * s))


def _first_nonfinite(name, x):
    bad = ~np.isfinite(x)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"non-finite value in {name} at index {idx}")


@dataclass
class GlrParams:
    """Continuous-time diagonal system parameters and selectivity projections.

    a_log:        [D, N]; the continuous transition is A = -exp(a_log) < 0.
    b_weight:     [N, D]; selective input projection B_t = b_weight @ u_t.
    c_weight:     [D, N]; output projection, one row per channel.
    d_res:        [D];    residual weight on the raw input.
    delta_weight: [D], delta_bias: [D]; per-channel step-size projection.
    b_fixed:      optional [N]; when set, B_t is this constant vector
                  (non-selective drive) and b_weight is ignored.
    """

    a_log: np.ndarray
    b_weight: np.ndarray
    c_weight: np.ndarray
    d_res: np.ndarray
    delta_weight: np.ndarray
    delta_bias: np.ndarray
    activation: str = "identity"
    discretization: str = "zoh"
    b_fixed: Optional[np.ndarray] = None

    def __post_init__(self):
        self.a_log = np.asarray(self.a_log, dtype=np.float64)
        d, n = self.a_log.shape
        self.b_weight = np.asarray(self.b_weight, dtype=np.float64).reshape(n, d)
        self.c_weight = np.asarray(self.c_weight, dtype=np.float64).reshape(d, n)
        self.d_res = np.asarray(self.d_res, dtype=np.float64).reshape(d)
        self.delta_weight = np.asarray(self.delta_weight, dtype=np.float64).reshape(d)
        self.delta_bias = np.asarray(self.delta_bias, dtype=np.float64).reshape(d)
        if self.b_fixed is not None:
            self.b_fixed = np.asarray(self.b_fixed, dtype=np.float64).reshape(n)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.discretization not in DISCRETIZATIONS:
            raise ValueError(f"unknown discretization {self.discretization!r}")
        for name in ("a_log", "b_weight", "c_weight", "d_res", "delta_weight", "delta_bias"):
            _first_nonfinite(name, getattr(self, name))

    @property
    def d(self) -> int:
        return self.a_log.shape[0]

    @property
    def n(self) -> int:
        return self.a_log.shape[1]

    @property
    def a(self) -> np.ndarray:
        """Continuous diagonal transition A = -exp(a_log), strictly negative."""
        return -np.exp(self.a_log)

    @property
    def selective_b(self) -> bool:
        return self.b_fixed is None

    def b_of(self, u, dtype=None):
        """B_t for inputs u with shape [..., D]; returns [..., N]."""
        u = np.asarray(u)
        dt = dtype or u.dtype
        if self.b_fixed is not None:
            b = self.b_fixed.astype(dt)
            return np.broadcast_to(b, u.shape[:-1] + b.shape)
        return u @ self.b_weight.T.astype(dt)

    def with_a(self, a_new: np.ndarray) -> "GlrParams":
        """Copy with the continuous diagonal replaced (a_new must stay negative)."""
        a_new = np.asarray(a_new, dtype=np.float64)
        if np.any(a_new >= 0):
            raise ValueError("continuous transition must stay strictly negative")
        return replace(self, a_log=np.log(-a_new))


def random_params(rng, d, n, discretization="zoh", activation="identity",
                  selective_b=True, delta_scale=0.5):
    """Well-conditioned random instance for tests and experiments.

    Step sizes land around softplus(0.5) ~ 1 and decay rates around
    exp(-0.7), keeping A_bar in a benign (0.2, 0.9) band.
    """
    a_log = rng.normal(-0.7, 0.3, size=(d, n))
    b_weight = rng.normal(0.0, 1.0, size=(n, d)) / np.sqrt(d)
    b_fixed = None if selective_b else rng.normal(0.0, 1.0, size=n)
    return GlrParams(
        a_log=a_log,
        b_weight=b_weight,
        c_weight=rng.normal(0.0, 1.0, size=(d, n)) / np.sqrt(n),
        d_res=rng.normal(0.0, 1.0, size=d),
        delta_weight=rng.normal(0.0, delta_scale, size=d),
        delta_bias=rng.normal(0.5, 0.2, size=d),
        activation=activation,
        discretization=discretization,
        b_fixed=b_fixed,
    )


@dataclass
class StepOperator:
    """Per-step discretized pair (A_bar_t, b_bar_t) per lane, plus the step sizes.

    a_bar, b_bar: [L, D, N]; delta: [L, D] (retained for the selectivity
    Jacobians). 0 < a_bar < 1 elementwise by construction.
    """

    a_bar: np.ndarray
    b_bar: np.ndarray
    delta: np.ndarray

    def __len__(self):
        return self.a_bar.shape[0]

    def slice(self, start, stop) -> "StepOperator":
        return StepOperator(self.a_bar[start:stop], self.b_bar[start:stop],
                            self.delta[start:stop])


@dataclass
class StateTrajectory:
    """Either the full state history (dense) or only the final state (streaming)."""

    h: np.ndarray
    provenance: str  # "dense" | "streaming"

    @property
    def h_last(self):
        return self.h if self.provenance == "streaming" else self.h[-1]


def discretize(params: GlrParams, u: np.ndarray) -> StepOperator:
    """Build the per-lane step operators for an input block u of shape [L, D].

    Works in u's dtype; the zero-order-hold drive uses the exact quotient
    (A_bar - 1)/A, which is finite for every Delta > 0 since A != 0.
    """
    u = np.asarray(u)
    if u.ndim != 2:
        raise ValueError(f"u must be [L, D], got shape {u.shape}")
    if u.shape[0] < 1:
        raise ValueError("need at least one step")
    _first_nonfinite("u", u)
    dt = u.dtype
    a = params.a.astype(dt)  # [D, N]
    delta = softplus(params.delta_weight.astype(dt) * u + params.delta_bias.astype(dt))
    a_bar = np.exp(delta[:, :, None] * a[None])
    drive = params.b_of(u)[:, None, :] * u[:, :, None]  # [L, D, N] = B_t[n] u_t[d]
    if params.discretization == "euler":
        b_bar = delta[:, :, None] * drive
    else:
        b_bar = (a_bar - 1.0) / a[None] * drive
    return StepOperator(a_bar=a_bar, b_bar=b_bar, delta=delta)


def scan_sequential(ops: StepOperator, h0: np.ndarray) -> StateTrajectory:
    """Reference evolution h_t = a_t h_{t-1} + b_t in strict step order."""
    a, b = ops.a_bar, ops.b_bar
    out = np.empty_like(b)
    h = np.asarray(h0, dtype=b.dtype)
    for t in range(a.shape[0]):
        h = a[t] * h + b[t]
        out[t] = h
    return StateTrajectory(h=out, provenance="dense")


def affine_compose(a2, b2, a1, b1):
    """Composition of affine maps x -> a x + b, later (2) applied after earlier (1)."""
    return a2 * a1, a2 * b1 + b2


def prefix_affine(a, b):
    """Inclusive prefix composition of affine pairs along axis 0.

    Doubling (Hillis-Steele) form of the associative scan: after the pass,
    (a[t], b[t]) maps the chunk-entry state directly to the state at t.
    """
    a = a.copy()
    b = b.copy()
    n = a.shape[0]
    shift = 1
    while shift < n:
        a_hi, b_hi = a[shift:], b[shift:]
        a_lo, b_lo = a[:-shift], b[:-shift]
        a2, b2 = affine_compose(a_hi, b_hi, a_lo, b_lo)
        a[shift:], b[shift:] = a2, b2
        shift *= 2
    return a, b


def scan_chunked(ops: StepOperator, h0: np.ndarray, chunk: int) -> StateTrajectory:
    """Chunked associative scan; mathematically identical to scan_sequential.

    Within each chunk the affine pairs are prefix-composed with a doubling
    scan; chunk boundaries carry only the state.
    """
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    a, b = ops.a_bar, ops.b_bar
    ln = a.shape[0]
    out = np.empty_like(b)
    h = np.asarray(h0, dtype=b.dtype)
    for s in range(0, ln, chunk):
        e = min(s + chunk, ln)
        ap, bp = prefix_affine(a[s:e], b[s:e])
        out[s:e] = ap * h + bp
        h = out[e - 1]
    return StateTrajectory(h=out, provenance="dense")


def output_map(params: GlrParams, h, u):
    """Output projection: returns (y, y_hat) for h [..., D, N] and u [..., D].

    y_hat is the pre-activation, needed by the tangent output rule.
    """
    h = np.asarray(h)
    u = np.asarray(u)
    c = params.c_weight.astype(h.dtype)
    y_hat = np.einsum("...dn,dn->...d", h, c) + params.d_res.astype(h.dtype) * u
    return act_value(params.activation, y_hat), y_hat
