import numpy as np
import pytest

from pgflow.glr import GlrParams, discretize, output_map, random_params
from pgflow.oracle import fd_jvp, primal_fn, unrolled_jvp
from pgflow.numerics import relative_error
from pgflow.tangent import (AugmentedOperator, DualState, apply_operator,
                            augment, build_augmented, compose, fold,
                            fold_chunked, jvp_dense, selectivity_jacobian,
                            tangent_output)


def make_instance(seed=0, d=2, n=3, ln=64, **kw):
    rng = np.random.default_rng(seed)
    params = random_params(rng, d, n, **kw)
    u = rng.standard_normal((ln, d))
    du = rng.standard_normal((ln, d))
    return params, u, du


# --- selectivity Jacobians ---------------------------------------------------

def test_jacobian_zero_perturbation():
    params, u, du = make_instance()
    step = discretize(params, u)
    k, j = selectivity_jacobian(params, u, np.zeros_like(du), step)
    assert np.all(k == 0.0) and np.all(j == 0.0)


def test_jacobian_selectivity_disabled():
    # Flat step size and fixed drive: K vanishes and j keeps only the term
    # linear in du.
    params, u, du = make_instance(selective_b=False)
    params = GlrParams(**{**params.__dict__, "delta_weight": np.zeros(params.d)})
    step = discretize(params, u)
    k, j = selectivity_jacobian(params, u, du, step)
    assert np.all(k == 0.0)
    factor = (step.a_bar - 1.0) / params.a  # zoh drive multiplier
    expected = factor * params.b_fixed[None, None, :] * du[:, :, None]
    assert np.allclose(j, expected, rtol=1e-14)


@pytest.mark.parametrize("mode", ["zoh", "euler"])
def test_jacobian_against_central_difference(mode):
    params, u, du = make_instance(seed=5, discretization=mode)
    step = discretize(params, u)
    k, j = selectivity_jacobian(params, u, du, step)
    eps = 1e-5
    hi, lo = discretize(params, u + eps * du), discretize(params, u - eps * du)
    k_fd = (hi.a_bar - lo.a_bar) / (2 * eps)
    j_fd = (hi.b_bar - lo.b_bar) / (2 * eps)
    assert relative_error(k, k_fd) < 1e-6
    assert relative_error(j, j_fd) < 1e-6


# --- operator algebra --------------------------------------------------------

def test_augment_roundtrip():
    params, u, du = make_instance()
    step = discretize(params, u)
    k, j = selectivity_jacobian(params, u, du, step)
    m = augment(step, k, j)
    assert m.a is step.a_bar and m.b is step.b_bar
    assert m.k is k and m.j is j


def test_compose_pointwise_example():
    # a2=0.5, a1=0.25, k2=0.1, k1=0.2 -> k = 0.1*0.25 + 0.5*0.2 = 0.125
    m2 = AugmentedOperator(*(np.array([x]) for x in (0.5, 0.1, 0.0, 0.0)))
    m1 = AugmentedOperator(*(np.array([x]) for x in (0.25, 0.2, 0.0, 0.0)))
    c = compose(m2, m1)
    assert c.a[0] == 0.125
    assert c.k[0] == pytest.approx(0.125, rel=1e-15)


def test_identity_is_two_sided():
    rng = np.random.default_rng(8)
    m = AugmentedOperator(rng.uniform(0.1, 1, (4,)), rng.standard_normal(4),
                          rng.standard_normal(4), rng.standard_normal(4))
    e = AugmentedOperator.identity((4,))
    for c in (compose(m, e), compose(e, m)):
        for f in ("a", "k", "b", "j"):
            assert np.allclose(getattr(c, f), getattr(m, f), rtol=1e-15)


def test_compose_associativity_random_triples():
    rng = np.random.default_rng(9)
    for _ in range(25):
        ops = [AugmentedOperator(rng.uniform(0.05, 1, (3, 2)),
                                 rng.standard_normal((3, 2)),
                                 rng.standard_normal((3, 2)),
                                 rng.standard_normal((3, 2))) for _ in range(3)]
        p, q, r = ops
        left = compose(compose(p, q), r)
        right = compose(p, compose(q, r))
        for f in ("a", "k", "b", "j"):
            assert np.allclose(getattr(left, f), getattr(right, f),
                               rtol=1e-13, atol=1e-14)


def test_apply_examples():
    rng = np.random.default_rng(10)
    s = DualState(rng.standard_normal((2, 2)), rng.standard_normal((2, 2)))
    e = AugmentedOperator.identity((2, 2))
    out = apply_operator(e, s)
    assert np.array_equal(out.h, s.h) and np.array_equal(out.dh, s.dh)

    m = AugmentedOperator(rng.uniform(0, 1, (2, 2)), rng.standard_normal((2, 2)),
                          rng.standard_normal((2, 2)), rng.standard_normal((2, 2)))
    out = apply_operator(m, DualState(np.zeros((2, 2)), np.zeros((2, 2))))
    assert np.array_equal(out.h, m.b) and np.array_equal(out.dh, m.j)

    # a = k = 0: a fixed point mapping any dual state to (b, j)
    zero_step = AugmentedOperator(np.zeros((2, 2)), np.zeros((2, 2)),
                                  rng.standard_normal((2, 2)),
                                  rng.standard_normal((2, 2)))
    out = apply_operator(zero_step, s)
    assert np.array_equal(out.h, zero_step.b) and np.array_equal(out.dh, zero_step.j)


def test_sequence_of_applies_equals_composed():
    rng = np.random.default_rng(11)
    ms = [AugmentedOperator(rng.uniform(0.1, 1, (2, 3)), rng.standard_normal((2, 3)),
                            rng.standard_normal((2, 3)), rng.standard_normal((2, 3)))
          for _ in range(6)]
    s = DualState(rng.standard_normal((2, 3)), rng.standard_normal((2, 3)))
    seq = s
    for m in ms:
        seq = apply_operator(m, seq)
    comp = ms[0]
    for m in ms[1:]:
        comp = compose(m, comp)
    direct = apply_operator(comp, s)
    assert relative_error(seq.h, direct.h) < 1e-12
    assert relative_error(seq.dh, direct.dh) < 1e-12


def test_fold_chunked_matches_fold():
    params, u, du = make_instance(seed=13, ln=200)
    aug = build_augmented(params, u, du)
    s = DualState(np.zeros((2, 3)), np.zeros((2, 3)))
    h_ref, dh_ref = fold(aug, s)
    for chunk in (1, 13, 64, 200):
        h, dh = fold_chunked(aug, s, chunk)
        assert relative_error(h, h_ref) < 1e-12
        assert relative_error(dh, dh_ref) < 1e-12


# --- output variation --------------------------------------------------------

def test_tangent_output_zero():
    params, u, _ = make_instance()
    p = GlrParams(**{**params.__dict__, "d_res": np.zeros(2)})
    dy = tangent_output(p, np.zeros((2, 3)), np.zeros(2), np.zeros(2))
    assert np.all(dy == 0.0)


def test_tangent_output_linearity():
    params, _, _ = make_instance()
    rng = np.random.default_rng(14)
    dh = rng.standard_normal((2, 3))
    du = rng.standard_normal(2)
    y_hat = rng.standard_normal(2)
    base = tangent_output(params, dh, du, y_hat)
    scaled = tangent_output(params, 2.5 * dh, 2.5 * du, y_hat)
    assert np.allclose(scaled, 2.5 * base, rtol=1e-14)


def test_tangent_output_silu_against_fd():
    params, u, du = make_instance(seed=15, activation="silu", ln=8)
    h = np.random.default_rng(16).standard_normal((8, 2, 3))
    dh = np.zeros_like(h)
    eps = 1e-6
    _, y_hat = output_map(params, h, u)
    dy = tangent_output(params, dh, du, y_hat)
    y_hi, _ = output_map(params, h, u + eps * du)
    y_lo, _ = output_map(params, h, u - eps * du)
    assert relative_error(dy, (y_hi - y_lo) / (2 * eps)) < 1e-6


# --- dense joint evaluation --------------------------------------------------

def test_jvp_zero_direction():
    params, u, du = make_instance(seed=17)
    _, dy = jvp_dense(params, u, np.zeros_like(du))
    assert np.all(dy == 0.0)


def test_jvp_linear_time_invariant_closed_form():
    # Non-selective instance: dy is the linear response of the fixed system
    # to the drive built from du alone.
    params, u, du = make_instance(seed=18, selective_b=False)
    params = GlrParams(**{**params.__dict__,
                          "delta_weight": np.zeros(params.d),
                          "activation": "identity"})
    _, dy = jvp_dense(params, u, du)

    step = discretize(params, u)
    factor = (step.a_bar - 1.0) / params.a
    drive = factor * params.b_fixed[None, None, :] * du[:, :, None]
    dh = np.zeros((params.d, params.n))
    expected = np.empty_like(dy)
    for t in range(len(u)):
        dh = step.a_bar[t] * dh + drive[t]
        expected[t] = np.einsum("dn,dn->d", dh, params.c_weight) + params.d_res * du[t]
    assert relative_error(dy, expected) < 1e-13


@pytest.mark.parametrize("mode,act", [("zoh", "identity"), ("zoh", "silu"),
                                      ("euler", "identity"), ("euler", "silu")])
def test_jvp_against_both_oracles(mode, act):
    params, u, du = make_instance(seed=19, ln=512, discretization=mode,
                                  activation=act)
    _, dy = jvp_dense(params, u, du)
    assert relative_error(dy, unrolled_jvp(params, u, du)) < 1e-12
    assert relative_error(dy, fd_jvp(primal_fn(params), u, du, eps=1e-5)) < 1e-5


def test_exactness_across_shapes():
    for d, n in ((1, 1), (4, 2), (8, 16)):
        params, u, du = make_instance(seed=20 + d, d=d, n=n, ln=256)
        _, dy = jvp_dense(params, u, du)
        assert relative_error(dy, unrolled_jvp(params, u, du)) < 1e-12


def test_causality_is_bitwise():
    params, u, du = make_instance(seed=21, ln=128)
    du = np.zeros_like(du)
    du[100:] = np.random.default_rng(22).standard_normal((28, 2))
    _, dy = jvp_dense(params, u, du)
    assert np.all(dy[:100] == 0.0)
    assert np.any(dy[100:] != 0.0)


@pytest.mark.parametrize("act", ["identity", "silu"])
def test_homogeneity_in_direction(act):
    params, u, du = make_instance(seed=23, activation=act)
    _, dy = jvp_dense(params, u, du)
    _, dy3 = jvp_dense(params, u, 3.0 * du)
    assert relative_error(dy3, 3.0 * dy) < 1e-13


def test_jvp_chunked_matches_default():
    params, u, du = make_instance(seed=24, ln=300)
    _, dy = jvp_dense(params, u, du)
    _, dyc = jvp_dense(params, u, du, chunk=32)
    assert relative_error(dyc, dy) < 1e-12


def test_jvp_rejects_shape_mismatch():
    params, u, du = make_instance()
    with pytest.raises(ValueError, match="shape"):
        jvp_dense(params, u, du[:-1])
