import numpy as np
import pytest

from ezport.prior import (VarModel, fit_prior, fit_var, hedging_weights, kappa_rule, myopic_weights,
                          prior_weights, regularized_inverse, trailing_mean_state, write_prior_report)
from ezport.utility import EZParams


def simulate_var(coef, T, rng, noise=1.0):
    m = coef.shape[0]
    x = np.zeros((T, m))
    for t in range(1, T):
        x[t] = coef @ x[t - 1] + noise * rng.normal(size=m)
    return x


def test_white_noise_state_has_small_coefficients():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2000, 2))
    m = fit_var(x)
    assert np.all(np.abs(m.coef) < 3 * m.coef_se)


def test_known_var_recovered():
    rng = np.random.default_rng(1)
    x = simulate_var(np.array([[0.9]]), 5000, rng)
    assert abs(fit_var(x).coef[0, 0] - 0.9) < 0.05


def test_var_error_shrinks_with_sample_size():
    coef = np.array([[0.5, 0.1], [0.0, 0.7]])
    errs = []
    for T in (500, 2000, 5000):
        e = [np.abs(fit_var(simulate_var(coef, T, np.random.default_rng(s))).coef - coef).mean()
             for s in range(20)]
        errs.append(np.mean(e))
    assert errs[0] > errs[1] > errs[2]


def test_var_standard_errors_match_statsmodels_style_formula():
    rng = np.random.default_rng(2)
    x = simulate_var(np.array([[0.3, 0.0], [0.2, 0.4]]), 400, rng)
    m = fit_var(x)
    X = np.hstack([np.ones((399, 1)), x[:-1]])
    beta, *_ = np.linalg.lstsq(X, x[1:], rcond=None)
    resid = x[1:] - X @ beta
    s2 = resid.T @ resid / (399 - 3)
    se = np.sqrt(np.outer(np.diag(np.linalg.inv(X.T @ X)), np.diag(s2)))
    np.testing.assert_allclose(m.coef, beta[1:].T, rtol=1e-12)
    np.testing.assert_allclose(m.coef_se, se[1:].T, rtol=1e-12)
    np.testing.assert_allclose(m.resid_cov, s2, rtol=1e-12)
    assert np.all(np.linalg.eigvalsh(m.resid_cov) >= -1e-12)


def test_constant_state_is_rank_deficient():
    with pytest.raises(np.linalg.LinAlgError):
        fit_var(np.ones((50, 2)))


def test_too_short_series():
    with pytest.raises(ValueError):
        fit_var(np.random.default_rng(0).normal(size=(4, 2)))


def test_return_loading_by_regression():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3000, 2))
    B = np.array([[0.5, -0.2], [0.1, 0.3]])
    r = np.vstack([x[:-1] @ B.T + 0.01 * rng.normal(size=(2999, 2)), np.zeros((1, 2))])
    m = fit_var(x, r)
    np.testing.assert_allclose(m.B, B, atol=0.01)
    with pytest.raises(ValueError):
        fit_var(x, r[:-1])


def _model(B):
    return VarModel(np.zeros((2, 2)), np.zeros(2), np.eye(2), B=np.asarray(B, dtype=float))


def test_psi_one_has_no_hedging():
    sigma = np.array([[0.04, 0.01], [0.01, 0.09]])
    m = _model([[1.0, 0.0], [0.0, 1.0]])
    x = np.array([0.01, 0.02])
    p = EZParams(psi=1.0)
    np.testing.assert_array_equal(prior_weights(m, x, sigma, p, cov_rx=np.eye(2), a_alpha=np.ones(2)),
                                  myopic_weights(m, x, sigma, p.gamma))
    assert not hedging_weights(sigma, 1.0, np.eye(2), np.ones(2)).any()


def test_zero_expected_return_gives_zero_weights():
    sigma = np.diag([0.04, 0.09])
    out = prior_weights(_model([[1.0, 0.0], [0.0, 1.0]]), np.zeros(2), sigma, EZParams())
    np.testing.assert_array_equal(out, 0.0)


def test_myopic_scaling_and_linearity():
    sigma = np.array([[0.04, 0.01], [0.01, 0.09]])
    m = _model([[0.3, 0.1], [-0.2, 0.5]])
    x, y = np.array([0.01, -0.02]), np.array([0.005, 0.03])
    a5 = myopic_weights(m, x, sigma, 5.0)
    np.testing.assert_allclose(myopic_weights(m, x, sigma, 10.0), a5 / 2, rtol=1e-14)
    np.testing.assert_allclose(myopic_weights(m, x + 2 * y, sigma, 5.0),
                               a5 + 2 * myopic_weights(m, y, sigma, 5.0), rtol=1e-12)
    want = np.linalg.solve(sigma + 1e-8 * np.trace(sigma) / 2 * np.eye(2), m.B @ x) / 5.0
    np.testing.assert_allclose(a5, want, rtol=1e-12)


def test_hedging_hook_formula():
    sigma = np.diag([0.04, 0.09])
    cov_rx = np.array([[0.001, 0.0], [0.0, 0.002]])
    a = np.array([1.0, -1.0])
    out = hedging_weights(sigma, 0.5, cov_rx, a, ridge=0.0)
    np.testing.assert_allclose(out, (1 - 0.5) / 0.5 * np.linalg.solve(sigma, cov_rx @ a))
    assert not hedging_weights(sigma, 0.5).any()


def test_singular_covariance():
    with pytest.raises(np.linalg.LinAlgError):
        regularized_inverse(np.zeros((2, 2)), ridge=0.0)
    # the ridge rescues a rank-one matrix
    s = np.outer([1.0, 2.0], [1.0, 2.0])
    assert np.all(np.isfinite(regularized_inverse(s)))


def test_kappa_rule():
    assert kappa_rule(np.log(0.1), np.zeros(2), np.ones(2)) == pytest.approx(0.1)
    assert kappa_rule(0.0, [1.0, 2.0], [0.5, 0.25]) == pytest.approx(np.e)


def test_trailing_mean_state():
    r = np.arange(10.0)[:, None]
    x = trailing_mean_state(r, 3)
    assert x[0, 0] == 0.0 and x[1, 0] == 0.5 and x[5, 0] == 4.0


def test_fit_prior_and_report(tmp_path):
    rng = np.random.default_rng(0)
    R = rng.normal(0.0005, 0.01, size=(300, 3))
    fp = fit_prior(R, window=20)
    assert fp.model.B.shape == (3, 3)
    w = fp.weights(EZParams())
    assert w.shape == (3,) and np.all(np.isfinite(w))
    write_prior_report(tmp_path / "prior.txt", fp, EZParams())
    assert "B:" in (tmp_path / "prior.txt").read_text()
