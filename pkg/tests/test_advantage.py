import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ezport.advantage import (AAEConfig, StepRecord, aae, aae_from_arrays, gae, normalize_advantages,
                              omega_weight, td_error_ez, td_errors_ez)

from helpers import unrolled_aae, unrolled_gae


# TD errors ----------------------------------------------------------------------

def test_td_error_examples():
    assert td_error_ez(StepRecord(value=1.3, next_value=1.0, ez_target=1.3)) == 0.0
    assert td_error_ez(StepRecord(value=1.0, next_value=1.0, ez_target=1.2)) == pytest.approx(0.2, abs=1e-15)


def test_td_error_batch_matches_elementwise():
    rng = np.random.default_rng(0)
    v, tg = rng.uniform(0.1, 2, 20), rng.uniform(0.1, 2, 20)
    recs = [StepRecord(value=a, next_value=1.0, ez_target=b) for a, b in zip(v, tg)]
    np.testing.assert_array_equal(td_errors_ez(v, tg), [td_error_ez(r) for r in recs])


def test_td_error_requires_target():
    with pytest.raises(ValueError):
        td_error_ez(StepRecord(value=1.0, next_value=1.0, reward=0.1))


# omega --------------------------------------------------------------------------

@pytest.mark.parametrize("psi", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("gamma", [2.0, 5.0, 10.0])
def test_omega_at_unit_value(psi, gamma):
    cfg = AAEConfig(beta=0.9, gamma_risk=gamma, psi=psi)
    assert omega_weight(1.0, cfg) == pytest.approx(0.9 * (1 - gamma), rel=1e-15)


def test_omega_default_spot_value():
    assert omega_weight(1.0, AAEConfig()) == -3.96


def test_omega_log_space_matches_direct():
    for psi in (0.5, 1.0, 2.0):
        cfg = AAEConfig(beta=0.99, gamma_risk=5.0, psi=psi)
        g = cfg.gamma_risk
        for V in np.logspace(-4, 4, 81):
            direct = (cfg.beta * (V ** (1 - g)) ** ((1 - 1 / psi) / (1 - g) - 1)
                      * V ** (-g) * (1 - g))
            assert omega_weight(V, cfg) == pytest.approx(direct, rel=1e-10)


@pytest.mark.parametrize("gamma", [2.0, 4.0])
def test_omega_is_derivative_of_ce_term_in_crra_case(gamma):
    # gamma = 1/psi gives rho = 1 - gamma, so omega is d/dV [beta (V^(1-g))^(rho/(1-g))]
    psi = 1.0 / gamma
    cfg = AAEConfig(beta=0.95, gamma_risk=gamma, psi=psi)
    rho = 1.0 - 1.0 / psi
    term = lambda V: cfg.beta * (V ** (1 - gamma)) ** (rho / (1 - gamma))
    h = 1e-6
    for V in (0.3, 0.8, 1.7, 3.0):
        fd = (term(V + h) - term(V - h)) / (2 * h)
        assert omega_weight(V, cfg) == pytest.approx(fd, rel=1e-6)


def test_omega_rejects_nonpositive():
    with pytest.raises(ValueError):
        omega_weight(0.0, AAEConfig())


def test_aae_config_validation():
    with pytest.raises(ValueError):
        AAEConfig(lam=1.5)
    with pytest.raises(ValueError):
        AAEConfig(gamma_risk=1.0)


# AAE ----------------------------------------------------------------------------

def test_aae_lambda_zero_is_td_error():
    rng = np.random.default_rng(1)
    recs = [StepRecord(value=v, next_value=n, ez_target=t)
            for v, n, t in rng.uniform(0.5, 1.5, size=(12, 3))]
    out = aae(recs, AAEConfig(lam=0.0))
    np.testing.assert_array_equal(out, [td_error_ez(r) for r in recs])


def test_aae_single_step():
    rec = StepRecord(value=1.0, next_value=0.8, ez_target=1.25)
    assert aae([rec], AAEConfig())[0] == 0.25


def test_aae_three_step_hand_values():
    d = np.array([0.1, -0.2, 0.3])
    w = np.array([-1.5, 0.7, 2.0])
    beta, lam = 0.99, 0.95
    bl = beta * lam
    want = [d[0] + bl * w[0] * d[1] + bl ** 2 * w[0] * w[1] * d[2],
            d[1] + bl * w[1] * d[2],
            d[2]]
    np.testing.assert_allclose(aae_from_arrays(d, w, beta, lam), want, rtol=0, atol=1e-12)


@settings(max_examples=200)
@given(st.integers(1, 64), st.floats(0.0, 1.0), st.floats(0.5, 0.999), st.integers(0, 2 ** 32 - 1))
def test_aae_recursion_equals_unrolled_sum(T, lam, beta, seed):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=T)
    w = rng.uniform(-1.0, 1.0, size=T)
    got = aae_from_arrays(d, w, beta, lam)
    want = unrolled_aae(d, w, beta, lam)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


@given(st.integers(1, 40), st.floats(0.0, 1.0), st.floats(0.5, 0.999), st.integers(0, 2 ** 32 - 1))
def test_aae_with_unit_omega_equals_gae(T, lam, beta, seed):
    rng = np.random.default_rng(seed)
    r, v, nv = rng.normal(size=(3, T))
    d = r + beta * nv - v
    np.testing.assert_array_equal(aae_from_arrays(d, np.ones(T), beta, lam), gae(r, v, nv, beta, lam))


@given(arrays(float, 16, elements=st.floats(-10, 10)), arrays(float, 16, elements=st.floats(-10, 10)),
       st.floats(-3, 3))
def test_aae_is_linear_in_deltas(d1, d2, c):
    w = np.linspace(-1.2, 0.8, 16)
    f = lambda d: aae_from_arrays(d, w, 0.99, 0.95)
    np.testing.assert_allclose(f(d1 + d2), f(d1) + f(d2), atol=1e-9)
    np.testing.assert_allclose(f(c * d1), c * f(d1), atol=1e-9)


def test_aae_done_resets_trace():
    d = np.array([1.0, 2.0, 3.0, 4.0])
    w = np.full(4, 0.5)
    dones = np.array([False, True, False, False])
    out = aae_from_arrays(d, w, 1.0, 1.0, dones)
    np.testing.assert_allclose(out[2:], unrolled_aae(d[2:], w[2:], 1.0, 1.0))
    np.testing.assert_allclose(out[:2], unrolled_aae(d[:2], w[:2], 1.0, 1.0))


def test_aae_errors():
    with pytest.raises(ValueError):
        aae([], AAEConfig())
    with pytest.raises(ValueError):
        aae_from_arrays([1.0, 2.0], [1.0], 0.9, 0.9)


# GAE ----------------------------------------------------------------------------

def test_gae_lambda_zero_is_td():
    r, v, nv = np.array([0.1, -0.3]), np.array([0.5, 0.2]), np.array([0.2, 0.7])
    np.testing.assert_array_equal(gae(r, v, nv, 0.9, 0.0), r + 0.9 * nv - v)


def test_gae_all_zero():
    z = np.zeros(6)
    np.testing.assert_array_equal(gae(z, z, z, 0.99, 0.95), z)


def test_gae_matches_unrolled_sum():
    rng = np.random.default_rng(4)
    r, v, nv = rng.normal(size=(3, 5))
    np.testing.assert_allclose(gae(r, v, nv, 0.99, 0.95), unrolled_gae(r, v, nv, 0.99, 0.95), atol=1e-13)


def test_gae_length_mismatch():
    with pytest.raises(ValueError):
        gae([0.0, 1.0], [0.0], [0.0, 1.0], 0.9, 0.9)


def test_gae_done_cuts_trace_but_keeps_bootstrap():
    r, v, nv = np.ones(3), np.zeros(3), np.full(3, 2.0)
    out = gae(r, v, nv, 0.5, 1.0, dones=[False, True, False])
    assert out[1] == 1.0 + 0.5 * 2.0
    assert out[0] == 2.0 + 0.5 * out[1]


# normalization ------------------------------------------------------------------

def test_normalize_advantages_huge_scale():
    a = np.array([1e300, -1e300, 5e299, 0.0])
    z = normalize_advantages(a)
    assert np.all(np.isfinite(z))
    assert abs(z.mean()) < 1e-12 and z.std() == pytest.approx(1.0, rel=1e-6)


def test_normalize_advantages_zero_and_nonfinite():
    np.testing.assert_array_equal(normalize_advantages(np.zeros(3)), np.zeros(3))
    with pytest.raises(FloatingPointError):
        normalize_advantages(np.array([1.0, np.inf]))
