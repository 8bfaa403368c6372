"""Independent verification oracles.

Three derivative routes that deliberately avoid the hand-derived closed
forms in tangent.py:

* ``fd_jvp`` — central finite differences of any pure sequence map.
* ``unrolled_jvp`` — generic forward-mode (dual-number) evaluation of the
  model written out step by step, retaining every intermediate on purpose
  (the O(L)-memory stand-in for a taped autodiff JVP).
* ``fd_hvp`` — central difference of the unrolled JVP, for second order.

Plus ``dense_rtrl_time``: a dense sensitivity-propagation simulator whose
per-step cost is cubic in the state dimension by construction, used only
for complexity-exponent fits.
"""

from __future__ import annotations

import time

import numpy as np
from scipy.special import expit

from . import meter as meter_mod
from .glr import GlrParams, output_map, scan_sequential, discretize


class Dual:
    """Vectorized dual number: (primal, tangent) ndarray pair.

    Every operation propagates the tangent by its local derivative rule, so
    evaluating the model on Duals yields the exact directional derivative
    without any hand-derived Jacobians.
    """

    __slots__ = ("p", "t")

    def __init__(self, p, t=None):
        self.p = np.asarray(p)
        self.t = np.zeros_like(self.p) if t is None else np.asarray(t)

    @staticmethod
    def _lift(x):
        return x if isinstance(x, Dual) else Dual(np.asarray(x))

    def __getitem__(self, idx):
        return Dual(self.p[idx], self.t[idx])

    def __add__(self, other):
        o = Dual._lift(other)
        return Dual(self.p + o.p, self.t + o.t)

    __radd__ = __add__

    def __sub__(self, other):
        o = Dual._lift(other)
        return Dual(self.p - o.p, self.t - o.t)

    def __rsub__(self, other):
        o = Dual._lift(other)
        return Dual(o.p - self.p, o.t - self.t)

    def __mul__(self, other):
        o = Dual._lift(other)
        return Dual(self.p * o.p, self.t * o.p + self.p * o.t)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = Dual._lift(other)
        inv = 1.0 / o.p
        return Dual(self.p * inv, (self.t * o.p - self.p * o.t) * inv * inv)

    def __neg__(self):
        return Dual(-self.p, -self.t)

    def exp(self):
        e = np.exp(self.p)
        return Dual(e, e * self.t)

    def sigmoid(self):
        s = expit(self.p)
        return Dual(s, s * (1.0 - s) * self.t)

    def softplus(self):
        return Dual(np.logaddexp(0.0, self.p), expit(self.p) * self.t)

    def matvec(self, w):
        """Right-multiply the trailing axis by w.T (w constant): [..., D] @ w.T."""
        return Dual(self.p @ w.T, self.t @ w.T)

    def project(self, c):
        """Contract [..., D, N] lanes with a constant [D, N] weight."""
        return Dual(np.einsum("...dn,dn->...d", self.p, c),
                    np.einsum("...dn,dn->...d", self.t, c))


def _dual_activation(kind, y_hat: Dual) -> Dual:
    if kind == "identity":
        return y_hat
    return y_hat * y_hat.sigmoid()


def unrolled_jvp(params: GlrParams, u, du, h0=None, meter=None):
    """Directional derivative of the full sequence map via dual numbers.

    Evaluates discretization, recurrence and output map step by step on
    (primal, tangent) pairs, retaining every intermediate for the whole
    call; registered bytes grow linearly in L (that is the point of this
    oracle). Returns dy with shape [L, D].
    """
    u = np.asarray(u)
    du = np.asarray(du)
    ln, d = u.shape
    n = params.n
    dt = u.dtype
    uu = Dual(u, du)

    a = params.a.astype(dt)  # constant diagonal, [D, N]
    delta = (uu * params.delta_weight.astype(dt) + params.delta_bias.astype(dt)).softplus()
    a_bar = Dual(delta.p[:, :, None] * a, delta.t[:, :, None] * a).exp()
    if params.selective_b:
        b_t = uu.matvec(params.b_weight.astype(dt))
    else:
        b_t = Dual(np.broadcast_to(params.b_fixed.astype(dt), (ln, n)).copy())
    drive = Dual(b_t.p[:, None, :], b_t.t[:, None, :]) * Dual(uu.p[:, :, None], uu.t[:, :, None])
    if params.discretization == "euler":
        b_bar = Dual(delta.p[:, :, None], delta.t[:, :, None]) * drive
    else:
        b_bar = (a_bar - 1.0) / Dual(a) * drive

    h = Dual(np.zeros((d, n), dtype=dt) if h0 is None else np.asarray(h0, dtype=dt))
    h_all = Dual(np.empty((ln, d, n), dtype=dt), np.empty((ln, d, n), dtype=dt))
    for t in range(ln):
        h = a_bar[t] * h + b_bar[t]
        h_all.p[t], h_all.t[t] = h.p, h.t

    y_hat = h_all.project(params.c_weight.astype(dt)) + uu * params.d_res.astype(dt)
    y = _dual_activation(params.activation, y_hat)

    if meter is not None:
        retained = (delta, b_t, drive, a_bar, b_bar, h_all)
        nbytes = sum(x.p.nbytes + x.t.nbytes for x in retained)
        meter.track(meter_mod.GRAPH, nbytes)
        meter.release(meter_mod.GRAPH, nbytes)
    return y.t


def unrolled_retained_bytes(ln, d, n, itemsize=8):
    """Bytes unrolled_jvp registers: dual (delta, B, drive, a_bar, b_bar, h)."""
    return itemsize * 2 * (ln * d + ln * n + 4 * ln * d * n)


def primal_fn(params: GlrParams, h0=None):
    """The pure sequence map u -> y used as the FD target."""

    def f(u):
        ops = discretize(params, u)
        h00 = np.zeros((params.d, params.n), dtype=u.dtype) if h0 is None else h0
        traj = scan_sequential(ops, h00)
        y, _ = output_map(params, traj.h, u)
        return y

    return f


def fd_step(u, eps, floor=1.0):
    """Step size scaled by input magnitude with the documented floor of 1."""
    return eps * max(float(floor), float(np.max(np.abs(u))))


def fd_jvp(f, u, v, eps=1e-5):
    """Central difference (f(u + e v) - f(u - e v)) / 2e of a pure map."""
    u = np.asarray(u)
    v = np.asarray(v)
    if eps <= 0:
        raise ValueError("eps must be positive")
    e = fd_step(u, eps)
    return (f(u + e * v) - f(u - e * v)) / (2.0 * e)


def fd_hvp(params: GlrParams, u, v, w, eps=1e-5):
    """Second-order oracle: central difference of the unrolled JVP along w."""
    u = np.asarray(u)
    w = np.asarray(w)
    if eps <= 0:
        raise ValueError("eps must be positive")
    e = fd_step(u, eps)
    hi = unrolled_jvp(params, u + e * w, v)
    lo = unrolled_jvp(params, u - e * w, v)
    return (hi - lo) / (2.0 * e)


def dense_rtrl_time(n, length=256, repeats=3, slices=256, seed=0):
    """Wall time of dense sensitivity propagation, cubic in n per step.

    Tracks ``slices`` dense n x n influence matrices through
    S <- A S + P, i.e. one [n, n] @ [n, n*slices] product per step.
    Caller is responsible for pinning BLAS to one thread; returns the best
    of ``repeats`` timings in seconds.
    """
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    a *= 0.9 / max(1e-12, np.max(np.abs(np.linalg.eigvals(a))))
    p = rng.standard_normal((n, n * slices))
    best = np.inf
    for _ in range(repeats):
        s = np.zeros((n, n * slices))
        buf = np.empty_like(s)
        t0 = time.perf_counter()
        for _ in range(length):
            np.matmul(a, s, out=buf)
            buf += p
            s, buf = buf, s
        best = min(best, time.perf_counter() - t0)
    return best
