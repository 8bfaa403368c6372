"""Numerical armor and statistics: log-shifted evolution for stiff decay
regimes, the guarded relative-error metric, and the slope/p-value test used
by the length-invariance experiment.

Stiff lanes (strongly negative Delta * A) make cumulative decay products
underflow long before the true values stop mattering. The stabilizer keeps
a per-lane running shift m with the state stored as value = exp(m) * g, so
the cumulative decay lives in log space (m accumulates additively at rebase
boundaries) while the mantissa g stays in a relative scale near [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .tangent import AugmentedOperator, DualState

EPS_FLOOR = 1e-30


def relative_error(x, y) -> float:
    """||x - y||_2 / max(||y||_2, floor); the oracle goes in the y slot."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    return float(np.linalg.norm(x - y) / max(np.linalg.norm(y), EPS_FLOOR))


def log_decay_accumulate(log_a_steps):
    """Cumulative log of the decay product: logs add, nothing underflows."""
    return np.cumsum(np.asarray(log_a_steps), axis=0)


def _safe_span(dtype):
    # Largest admissible |log| drift inside one rebase window, with margin
    # against the dtype's exp overflow (~88 for f32, ~709 for f64).
    return 35.0 if np.dtype(dtype) == np.float32 else 350.0


def default_rebase_interval(aug: AugmentedOperator) -> int:
    """Windows sized so the within-window dynamic range stays representable."""
    span = _safe_span(aug.a.dtype)
    la_max = float(np.max(np.abs(np.log(aug.a))))
    return int(np.clip(math.floor(span / max(la_max, 1e-12)), 1, 512))


@dataclass
class LogShiftedTrajectory:
    """Reconstructed (h, dh) plus per-value flags for legitimate underflow."""

    h: np.ndarray
    dh: np.ndarray
    h_underflow: np.ndarray
    dh_underflow: np.ndarray
    shift_h: np.ndarray   # final per-lane log shifts
    shift_dh: np.ndarray


def log_shift_scan(aug: AugmentedOperator, dual0: DualState,
                   rebase_interval=None) -> LogShiftedTrajectory:
    """Evolve the dual state with per-lane log shifts rebased per window.

    Between rebases the shifts are frozen and the mantissas follow the plain
    recurrence with the sources rescaled into shifted coordinates; at each
    window boundary the shifts absorb the mantissa magnitudes. Reconstructed
    values that underflow to zero are flagged, not fatal (the true value is
    below the representable range). A non-finite mantissa inside a window
    means the window exceeded the representable dynamic range; the window
    size is checked at runtime.
    """
    a, k, b, j = aug.a, aug.k, aug.b, aug.j
    ln = a.shape[0]
    dt = a.dtype
    span = _safe_span(dt)
    r = default_rebase_interval(aug) if rebase_interval is None else int(rebase_interval)
    if r < 1:
        raise ValueError("rebase_interval must be >= 1")
    la_max = float(np.max(np.abs(np.log(a))))
    if r * la_max > 2.0 * span:
        raise ValueError(
            f"rebase interval {r} spans log range {r * la_max:.1f}, beyond the "
            f"representable budget {2.0 * span:.0f} for {np.dtype(dt).name}"
        )

    gh = np.asarray(dual0.h, dtype=dt).copy()
    gdh = np.asarray(dual0.dh, dtype=dt).copy()
    mh = np.zeros_like(gh)
    mdh = np.zeros_like(gdh)

    h_traj = np.empty_like(b)
    dh_traj = np.empty_like(b)
    h_under = np.zeros(b.shape, dtype=bool)
    dh_under = np.zeros(b.shape, dtype=bool)

    def rebase(m, g):
        nz = g != 0
        m[nz] += np.log(np.abs(g[nz]))
        g[nz] = np.sign(g[nz])

    with np.errstate(divide="ignore"):
        for s in range(0, ln, r):
            e = min(s + r, ln)
            rebase(mh, gh)
            rebase(mdh, gdh)

            # Window source scales; drop inherited state on lanes whose
            # incoming sources dominate beyond the representable span
            # (their contribution is below one ulp of the result anyway).
            lb = np.log(np.max(np.abs(b[s:e]), axis=0))        # -inf where silent
            lk = np.log(np.max(np.abs(k[s:e]), axis=0))
            lj = np.log(np.max(np.abs(j[s:e]), axis=0))
            drop_h = lb - mh > span
            if drop_h.any():
                gh[drop_h] = 0.0
                mh[drop_h] = lb[drop_h]
            l_dh_src = np.maximum(lk + mh, lj)
            drop_dh = l_dh_src - mdh > span
            if drop_dh.any():
                gdh[drop_dh] = 0.0
                mdh[drop_dh] = l_dh_src[drop_dh]

            fb = np.exp(np.minimum(-mh, span))
            fk = np.exp(np.minimum(mh - mdh, span))
            fj = np.exp(np.minimum(-mdh, span))
            eh = np.exp(mh)
            edh = np.exp(mdh)

            for t in range(s, e):
                src_h = np.where(b[t] == 0.0, 0.0, b[t] * fb)
                src_dh = (np.where(k[t] == 0.0, 0.0, k[t] * gh * fk)
                          + np.where(j[t] == 0.0, 0.0, j[t] * fj))
                gh = a[t] * gh + src_h
                gdh = a[t] * gdh + src_dh
                h_traj[t] = eh * gh
                dh_traj[t] = edh * gdh
                h_under[t] = (gh != 0.0) & (h_traj[t] == 0.0)
                dh_under[t] = (gdh != 0.0) & (dh_traj[t] == 0.0)

            if not (np.isfinite(gh).all() and np.isfinite(gdh).all()):
                raise FloatingPointError(
                    f"dynamic range exceeded in rebase window starting at step {s}; "
                    f"reduce rebase_interval (currently {r})"
                )

    return LogShiftedTrajectory(h=h_traj, dh=dh_traj, h_underflow=h_under,
                               dh_underflow=dh_under, shift_h=mh, shift_dh=mdh)


@dataclass
class RegressionReport:
    """OLS slope with the two-sided test against a zero slope."""

    slope: float
    intercept: float
    stderr: float
    t_stat: float
    p_value: float
    n: int
    method: str  # "exact-t" | "normal-approx"

    def to_dict(self):
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "stderr": self.stderr,
            "t_stat": self.t_stat,
            "p_value": self.p_value,
            "n": self.n,
            "method": self.method,
        }


def ols_slope_test(xs, ys) -> RegressionReport:
    """Least squares of ys on xs with a two-sided p-value for slope = 0.

    Uses the exact Student-t tail (regularized incomplete beta) for
    n <= 30 and the normal approximation above that; the choice is
    recorded in the report.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    n = xs.size
    if n < 3:
        raise ValueError("need at least 3 points")
    if ys.shape != xs.shape:
        raise ValueError("xs and ys must have equal length")
    xc = xs - xs.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise ValueError("degenerate regressor: xs are all equal")
    slope = float(xc @ (ys - ys.mean())) / sxx
    intercept = float(ys.mean() - slope * xs.mean())
    resid = ys - (intercept + slope * xs)
    dof = n - 2
    s2 = float(resid @ resid) / dof
    stderr = math.sqrt(s2 / sxx)
    if stderr == 0.0:
        t_stat = 0.0 if slope == 0.0 else math.copysign(math.inf, slope)
        p = 1.0 if slope == 0.0 else 0.0
        method = "exact-t" if n <= 30 else "normal-approx"
        return RegressionReport(slope, intercept, stderr, t_stat, p, n, method)
    t_stat = slope / stderr
    if n <= 30:
        p = float(betainc(dof / 2.0, 0.5, dof / (dof + t_stat * t_stat)))
        method = "exact-t"
    else:
        p = math.erfc(abs(t_stat) / math.sqrt(2.0))
        method = "normal-approx"
    return RegressionReport(slope, intercept, stderr, t_stat, min(max(p, 0.0), 1.0), n, method)
