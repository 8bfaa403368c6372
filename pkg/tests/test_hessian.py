import numpy as np
import pytest

from pgflow.glr import GlrParams, discretize, random_params
from pgflow.hessian import hessian_source, hvp, hvp_full
from pgflow.meter import GRAPH, MemoryMeter
from pgflow.numerics import relative_error
from pgflow.oracle import fd_hvp
from pgflow.tangent import jvp_dense


def make_instance(seed=0, d=2, n=4, ln=96, **kw):
    rng = np.random.default_rng(seed)
    params = random_params(rng, d, n, **kw)
    u = rng.standard_normal((ln, d))
    v = rng.standard_normal((ln, d))
    w = rng.standard_normal((ln, d))
    return params, u, v, w


def test_zero_direction_kills_second_variation():
    params, u, v, w = make_instance()
    assert np.all(hvp(params, u, v, np.zeros_like(w)) == 0.0)
    assert np.all(hvp(params, u, np.zeros_like(v), w) == 0.0)


def test_nonselective_system_has_zero_curvature():
    # Flat step size, fixed drive, identity output: the map is linear, so
    # the second variation vanishes identically.
    params, u, v, w = make_instance(seed=1, selective_b=False)
    params = GlrParams(**{**params.__dict__, "delta_weight": np.zeros(params.d),
                          "activation": "identity"})
    assert np.all(hvp(params, u, v, w) == 0.0)


def test_hessian_source_single_step_matches_fd():
    params, u, v, w = make_instance(seed=2, ln=1)
    rng = np.random.default_rng(3)
    h_prev = rng.standard_normal((params.d, params.n))
    dhv = np.zeros_like(h_prev)
    dhw = np.zeros_like(h_prev)
    src = hessian_source(params, u[0], v[0], w[0], h_prev, dhv, dhw)
    # With zero first-order states, H reduces to d2A h_prev + d2b; check by
    # differencing the step along w of the derivative along v.
    eps = 1e-5

    def step_tangent(u_t):
        ops = discretize(params, u_t[None, :])
        hi = discretize(params, (u_t + eps * v[0])[None, :])
        lo = discretize(params, (u_t - eps * v[0])[None, :])
        da = (hi.a_bar[0] - lo.a_bar[0]) / (2 * eps)
        db = (hi.b_bar[0] - lo.b_bar[0]) / (2 * eps)
        return da * h_prev + db

    fd = (step_tangent(u[0] + eps * w[0]) - step_tangent(u[0] - eps * w[0])) / (2 * eps)
    assert relative_error(src, fd) < 1e-4


@pytest.mark.parametrize("mode,act", [("zoh", "identity"), ("zoh", "silu"),
                                      ("euler", "silu")])
def test_hvp_matches_fd_of_jvp(mode, act):
    params, u, v, w = make_instance(seed=4, ln=128, discretization=mode,
                                    activation=act)
    d2y = hvp(params, u, v, w)
    d2y_fd = fd_hvp(params, u, v, w, eps=1e-5)
    assert relative_error(d2y, d2y_fd) < 1e-4


def test_first_order_outputs_agree_with_tangent_module():
    params, u, v, w = make_instance(seed=5, activation="silu")
    y, dy_v, dy_w, _ = hvp_full(params, u, v, w)
    y_ref, dyv_ref = jvp_dense(params, u, v)
    _, dyw_ref = jvp_dense(params, u, w)
    assert relative_error(y, y_ref) < 1e-13
    assert relative_error(dy_v, dyv_ref) < 1e-13
    assert relative_error(dy_w, dyw_ref) < 1e-13


def test_schwarz_symmetry():
    params, u, v, w = make_instance(seed=6, activation="silu")
    a = hvp(params, u, v, w)
    b = hvp(params, u, w, v)
    assert relative_error(b, a) < 1e-12


def test_bilinear_scaling_identity_activation():
    params, u, v, w = make_instance(seed=7, activation="identity")
    base = hvp(params, u, v, w)
    scaled = hvp(params, u, 2.0 * v, 3.0 * w)
    assert relative_error(scaled, 6.0 * base) < 1e-13


def test_state_level_bilinearity_under_nonlinear_output():
    # The state flow is independent of the output activation, and with an
    # identity readout d2y is linear in d2h: scaling through the identity
    # twin checks the state-level claim for the nonlinear instance.
    params, u, v, w = make_instance(seed=8, activation="silu")
    twin = GlrParams(**{**params.__dict__, "activation": "identity"})
    base = hvp(twin, u, v, w)
    scaled = hvp(twin, u, 5.0 * v, 0.5 * w)
    assert relative_error(scaled, 2.5 * base) < 1e-13


def test_block_handoff_matches_single_block():
    params, u, v, w = make_instance(seed=9, ln=90)
    whole = hvp(params, u, v, w)
    blocked = hvp(params, u, v, w, block_size=16)
    assert relative_error(blocked, whole) < 1e-12


def test_triple_scan_memory_independent_of_length():
    params, _, _, _ = make_instance(seed=10)
    peaks = []
    for ln in (256, 512, 1024):
        rng = np.random.default_rng(11)
        u = rng.standard_normal((ln, params.d))
        v = rng.standard_normal((ln, params.d))
        w = rng.standard_normal((ln, params.d))
        meter = MemoryMeter()
        hvp(params, u, v, w, block_size=32, meter=meter)
        peaks.append(meter.peak(GRAPH))
        assert meter.live(GRAPH) == 0
    assert peaks[0] == peaks[1] == peaks[2]
