import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ezport import nn

from helpers import fd_check


# forward ------------------------------------------------------------------------

def test_zero_net_gives_zero():
    net = nn.Mlp([3, 4, 2])
    np.testing.assert_array_equal(net.forward(np.ones(3)), np.zeros(2))


def test_identity_linear_net():
    net = nn.Mlp([1, 1])
    net.params[0][0, 0] = 1.0
    assert net.forward(np.array([2.0]))[0] == 2.0


def test_forward_matches_matrix_oracle():
    rng = np.random.default_rng(0)
    net = nn.Mlp([3, 5, 4, 2], rng)
    for p in net.params:
        p += rng.normal(size=p.shape) * 0.1
    x = rng.normal(size=(7, 3))
    W0, b0, W1, b1, W2, b2 = net.params
    h = np.maximum(x @ W0 + b0, 0)
    h = np.maximum(h @ W1 + b1, 0)
    np.testing.assert_allclose(net.forward(x), h @ W2 + b2, rtol=1e-14)


def test_forward_errors():
    net = nn.Mlp([2, 3, 1], np.random.default_rng(0))
    with pytest.raises(ValueError):
        net.forward(np.ones(3))
    net.params[0][0, 0] = np.inf
    with pytest.raises(FloatingPointError):
        net.forward(np.ones(2))
    with pytest.raises(ValueError):
        nn.Mlp([3])


def test_orthogonal_init_gains():
    net = nn.Mlp([6, 6, 1], np.random.default_rng(1), out_gain=0.01)
    W0 = net.params[0]
    np.testing.assert_allclose(W0.T @ W0, 2.0 * np.eye(6), atol=1e-12)
    assert np.linalg.norm(net.params[2]) == pytest.approx(0.01, rel=1e-12)


# backward -----------------------------------------------------------------------

def test_linear_net_squared_loss_gradient():
    net = nn.Mlp([3, 1])
    net.params[0][:] = np.array([[0.5], [-1.0], [2.0]])
    x = np.array([1.0, 2.0, 3.0])
    target = 1.5
    pred = net.forward(x)[0]
    grads = net.backward(np.array([2 * (pred - target)]))
    np.testing.assert_allclose(grads[0][:, 0], 2 * (pred - target) * x)
    assert grads[1][0] == 2 * (pred - target)


def test_backward_without_forward():
    with pytest.raises(RuntimeError):
        nn.Mlp([2, 1]).backward(np.ones(1))


def test_backward_shape_mismatch():
    net = nn.Mlp([2, 1])
    net.forward(np.ones((3, 2)))
    with pytest.raises(ValueError):
        net.backward(np.ones((2, 1)))


def test_constant_output_branch_has_zero_gradient():
    # dead ReLU layer: output does not depend on the first layer
    net = nn.Mlp([2, 3, 1])
    net.params[1][:] = -10.0
    net.params[2][:] = 1.0
    net.forward(np.array([0.1, 0.2]))
    g = net.backward(np.ones(1))
    assert not g[0].any() and not g[1].any()


@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = nn.Mlp([4, 8, 6, 3], rng)
    x = rng.normal(size=(5, 4))
    c = rng.normal(size=(5, 3))
    f = lambda: float(np.sum(c * net.forward(x)))
    f()
    grads = net.backward(c)
    assert fd_check(f, net.params, grads) < 1e-4


# Adam ---------------------------------------------------------------------------

def test_adam_zero_gradient_decays_moments():
    p = [np.array([1.0, -2.0])]
    opt = nn.Adam(p, lr=0.1)
    opt.m[0][:] = 0.5
    opt.v[0][:] = 0.25
    opt.step(p, [np.zeros(2)])
    np.testing.assert_allclose(opt.m[0], 0.45)
    np.testing.assert_allclose(opt.v[0], 0.25 * 0.999)


def test_adam_zero_gradient_from_rest():
    p = [np.array([1.0, -2.0])]
    nn.Adam(p, lr=0.1).step(p, [np.zeros(2)])
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_adam_first_step_is_signed_lr():
    p = [np.array([0.0, 0.0, 0.0])]
    g = np.array([3.0, -0.2, 1e-3])
    nn.Adam(p, lr=0.01).step(p, [g])
    np.testing.assert_allclose(p[0], -0.01 * np.sign(g), rtol=1e-4)


def test_adam_descends_quadratic():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(5, 5))
    A = A @ A.T + np.eye(5)
    p = [rng.normal(size=5)]
    opt = nn.Adam(p, lr=0.01)
    losses = []
    for _ in range(400):
        losses.append(float(p[0] @ A @ p[0]))
        opt.step(p, [2 * A @ p[0]])
    assert losses[-1] < 1e-2 * losses[0]
    tail = np.array(losses[50:200])
    assert np.all(np.diff(tail) < 0)


def test_adam_shape_mismatch():
    p = [np.zeros(2)]
    with pytest.raises(ValueError):
        nn.Adam(p).step(p, [np.zeros(3)])


def test_clip_grad_norm():
    g = [np.array([3.0, 0.0]), np.array([4.0])]
    total = nn.clip_grad_norm(g, 1.0)
    assert total == 5.0
    assert math.sqrt(sum(float(np.sum(x * x)) for x in g)) == pytest.approx(1.0, rel=1e-9)


# Gaussian head ------------------------------------------------------------------

def test_log_prob_standard_normal_at_mean():
    lp = nn.gaussian_log_prob(np.array([0.3]), np.array([0.3]), np.array([0.0]))
    assert lp[0] == pytest.approx(-0.5 * math.log(2 * math.pi), rel=1e-15)


def test_log_prob_matches_scipy():
    from scipy.stats import norm

    rng = np.random.default_rng(0)
    a, m = rng.normal(size=(2, 4))
    ls = rng.uniform(-2, 1, 4)
    want = norm.logpdf(a, m, np.exp(ls)).sum()
    assert nn.gaussian_log_prob(a, m, ls)[0] == pytest.approx(want, rel=1e-12)


def test_entropy_closed_form():
    from scipy.stats import norm

    ls = np.array([-1.0, 0.5])
    assert nn.gaussian_entropy(ls) == pytest.approx(sum(norm(0, np.exp(s)).entropy() for s in ls), rel=1e-12)


def test_sample_degenerate_std():
    a, _ = nn.policy_sample(np.array([0.2, -0.1]), np.full(2, -20.0), np.random.default_rng(0))
    np.testing.assert_allclose(a, [0.2, -0.1], atol=1e-7)


def test_sample_mean_monte_carlo():
    rng = np.random.default_rng(1)
    m, ls = np.array([0.5, -1.0]), np.array([0.0, -1.0])
    xs = np.array([nn.policy_sample(m, ls, rng)[0] for _ in range(100000)])
    se = np.exp(ls) / math.sqrt(xs.shape[0])
    assert np.all(np.abs(xs.mean(axis=0) - m) < 4 * se)


def test_sample_deterministic_and_logp_consistent():
    m, ls = np.array([0.1, 0.2]), np.array([-1.0, -2.0])
    a1, l1 = nn.policy_sample(m, ls, np.random.default_rng(5))
    a2, l2 = nn.policy_sample(m, ls, np.random.default_rng(5))
    np.testing.assert_array_equal(a1, a2)
    assert l1 == l2 == nn.gaussian_log_prob(a1, m, ls)[0]
    with pytest.raises(FloatingPointError):
        nn.policy_sample(np.array([np.nan]), np.zeros(1), np.random.default_rng(0))


def test_log_std_clamp():
    h = nn.GaussianPolicyHead(3, -2.0, (-5.0, 2.0))
    h.log_std[:] = [-9.0, 0.0, 7.0]
    np.testing.assert_array_equal(h.effective_log_std(), [-5.0, 0.0, 2.0])
    np.testing.assert_array_equal(h.inside_bounds(), [False, True, False])


def test_log_prob_grads_match_finite_differences():
    rng = np.random.default_rng(3)
    a, m = rng.normal(size=(2, 3, 4))
    ls = rng.uniform(-1, 0.5, 4)
    gm, gl = nn.gaussian_log_prob_grads(a, m, ls)
    h = 1e-6
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        fd_m = (nn.gaussian_log_prob(a, m + e, ls) - nn.gaussian_log_prob(a, m - e, ls)) / (2 * h)
        fd_l = (nn.gaussian_log_prob(a, m, ls + e) - nn.gaussian_log_prob(a, m, ls - e)) / (2 * h)
        np.testing.assert_allclose(gm[:, i], fd_m, rtol=1e-6)
        np.testing.assert_allclose(gl[:, i], fd_l, rtol=1e-6)


# positive critic head -------------------------------------------------------------

@given(st.floats(-1e6, 1e6))
def test_positive_value_strictly_positive(x):
    assert nn.positive_value(x) >= nn.EPS_V


def test_positive_value_inverse_and_grad():
    for v in (1e-3, 0.1, 1.0, 25.0):
        assert nn.positive_value(nn.inverse_positive_value(v)) == pytest.approx(v, rel=1e-12)
    x, h = 0.7, 1e-6
    fd = (nn.positive_value(x + h) - nn.positive_value(x - h)) / (2 * h)
    assert nn.positive_value_grad(x) == pytest.approx(fd, rel=1e-8)


# checkpoints --------------------------------------------------------------------

def test_checkpoint_bit_exact_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"w": rng.normal(size=(3, 4)), "b": rng.normal(size=4) * 1e-300, "s": np.array(np.pi)}
    nn.save_arrays(tmp_path / "c.txt", arrays)
    back = nn.load_arrays(tmp_path / "c.txt")
    assert set(back) == set(arrays)
    for k in arrays:
        assert back[k].shape == np.shape(arrays[k])
        assert back[k].tobytes() == np.asarray(arrays[k]).tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("hello\n")
    with pytest.raises(ValueError):
        nn.load_arrays(p)
    p.write_text("# ezport-checkpoint v1\ntensor w 1 3\n0x1p+0 0x1p+0\n")
    with pytest.raises(ValueError):
        nn.load_arrays(p)
