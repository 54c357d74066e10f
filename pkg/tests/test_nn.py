import math

import numpy as np
import pytest
from scipy import stats

from gradcheck import check_case, loss_cases
from uavmec.nn import (Adam, Mlp, adam_update, dirichlet_concentration, dirichlet_log_prob,
                       dirichlet_sample, gaussian_log_prob, gaussian_sample, sigmoid)


def reference_forward(params, x, layers):
    """Plain-Python forward pass written independently of Mlp.forward."""
    h = list(x)
    for i in range(layers):
        W, b = params[f"W{i}"], params[f"b{i}"]
        z = [sum(h[r] * W[r][c] for r in range(len(h))) + b[c] for c in range(len(b))]
        h = [math.tanh(v) for v in z] if i < layers - 1 else z
    return h


def test_zero_weights_give_head_of_bias():
    net = Mlp(3, 2, "gaussian", (4, 4))
    for k in net.params:
        if k.startswith("W"):
            net.params[k][:] = 0.0
    net.params["b2"][:] = [0.3, -1.2]
    np.testing.assert_array_equal(net(np.ones(3))[0], [0.3, -1.2])
    d = Mlp(3, 2, "dirichlet", (4, 4))
    for k in d.params:
        d.params[k][:] = 0.0
    d.params["b2"][:] = [0.0, 2.0]
    np.testing.assert_allclose(d(np.ones(3))[0], [math.log(2) + 1, math.log1p(math.e ** 2) + 1])


def test_discriminator_zero_preactivation():
    net = Mlp(4, 1, "discriminator", (3, 3))
    for k in net.params:
        net.params[k][:] = 0.0
    assert net(np.ones(4))[0] == 0.5


def test_forward_matches_reference():
    rng = np.random.default_rng(0)
    for _ in range(5):
        net = Mlp(6, 3, "value", (7, 5), rng, out_gain=1.0)
        x = rng.normal(size=6)
        out, _ = net.forward(x)
        ref = reference_forward(net.params, x, 3)
        np.testing.assert_allclose(out[0], ref, rtol=1e-12, atol=1e-12)


def test_forward_shape_mismatch():
    with pytest.raises(ValueError):
        Mlp(3, 1, "value").forward(np.ones(4))


def test_gaussian_log_prob_cases():
    assert gaussian_log_prob(np.zeros(1), np.zeros(1), np.zeros(1)) == pytest.approx(
        -0.5 * math.log(2 * math.pi))
    mu, ls = np.array([1.0, -2.0]), np.array([0.3, -0.7])
    assert gaussian_log_prob(mu, ls, mu) == pytest.approx(-np.sum(ls + 0.5 * math.log(2 * math.pi)))
    rng = np.random.default_rng(1)
    for _ in range(20):
        mu, ls, x = rng.normal(size=3), rng.normal(size=3) * 0.5, rng.normal(size=3)
        ref = stats.norm.logpdf(x, mu, np.exp(ls)).sum()
        assert gaussian_log_prob(mu, ls, x) == pytest.approx(ref, rel=1e-12)


def test_gaussian_sample_moments():
    rng = np.random.default_rng(2)
    s = gaussian_sample(np.full((100_000, 2), 1.5), np.log([0.5, 2.0]), rng)
    np.testing.assert_allclose(s.mean(axis=0), 1.5, atol=0.03)
    np.testing.assert_allclose(s.std(axis=0), [0.5, 2.0], rtol=0.02)


def test_dirichlet_uniform_density():
    for x in ([0.2, 0.3, 0.5], [1 / 3] * 3, [0.9, 0.05, 0.05]):
        assert dirichlet_log_prob(np.ones(3), np.array(x)) == pytest.approx(math.log(2))


def test_dirichlet_matches_scipy():
    rng = np.random.default_rng(3)
    for _ in range(50):
        conc = rng.uniform(1.0, 8.0, 5)
        x = rng.dirichlet(np.ones(5))
        assert dirichlet_log_prob(conc, x) == pytest.approx(stats.dirichlet.logpdf(x, conc),
                                                            rel=1e-10)


def test_dirichlet_rejects_off_simplex():
    with pytest.raises(ValueError):
        dirichlet_log_prob(np.ones(3), np.array([0.5, 0.5, 0.1]))


def test_dirichlet_symmetric_sample_mean():
    rng = np.random.default_rng(4)
    s_dim, n = 5, 100_000
    x = dirichlet_sample(np.full((n, s_dim), 2.0), rng)
    se = x.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(x.mean(axis=0) - 1 / s_dim) < 3 * se)


def test_million_draws_are_valid_and_finite():
    rng = np.random.default_rng(5)
    n = 1_000_000
    conc = dirichlet_concentration(rng.normal(0, 2, size=(n, 5)))
    x = dirichlet_sample(conc, rng)
    assert np.all(np.abs(x.sum(axis=1) - 1) <= 1e-9)
    assert np.all((x > 0) & (x < 1))
    assert np.all(np.isfinite(dirichlet_log_prob(conc, x)))
    mu = rng.normal(size=(n, 2))
    u = gaussian_sample(mu, np.log([0.5, 0.5]), rng)
    assert np.all(np.isfinite(gaussian_log_prob(mu, np.log([0.5, 0.5]), u)))


def test_backward_zero_upstream_gives_zero():
    net = Mlp(4, 2, "gaussian", (3, 3), np.random.default_rng(0))
    _, acts = net.forward(np.ones((2, 4)))
    grads = net.backward(acts, np.zeros((2, 2)))
    assert all(not g.any() for g in grads.values())


def test_linear_net_quadratic_loss_closed_form():
    rng = np.random.default_rng(6)
    net = Mlp(3, 2, "value", hidden=(), rng=rng, out_gain=1.0)
    x, y = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    out, acts = net.forward(x)
    grads = net.backward(acts, out - y)
    # loss = 0.5 * ||xW + b - y||^2
    np.testing.assert_allclose(grads["W0"], x.T @ (x @ net.params["W0"] + net.params["b0"] - y))
    np.testing.assert_allclose(grads["b0"], (x @ net.params["W0"] + net.params["b0"] - y).sum(0))


@pytest.mark.parametrize("seed", range(3))
def test_finite_difference_all_losses(seed):
    for name, net, fn in loss_cases(np.random.default_rng(seed)):
        assert check_case(net, fn) < 1e-4, name


def test_forward_backward_deterministic():
    rng = np.random.default_rng(7)
    net = Mlp(4, 3, "dirichlet", (5, 5), rng, out_gain=1.0)
    x = rng.normal(size=(3, 4))
    a = net.backward(net.forward(x)[1], np.ones((3, 3)))
    b = net.backward(net.forward(x)[1], np.ones((3, 3)))
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    opt = Adam(lr=0.1)
    opt.update(p, {"w": np.array([3.0, 3.0])})
    before = p["w"].copy()
    m_before, v_before = opt.m["w"].copy(), opt.v["w"].copy()
    opt.update(p, {"w": np.zeros(2)})
    np.testing.assert_allclose(opt.m["w"], 0.9 * m_before)
    np.testing.assert_allclose(opt.v["w"], 0.999 * v_before)
    # with zero gradient the step is driven only by decayed moments, params still move
    assert not np.array_equal(p["w"], before)
    fresh = {"w": np.array([1.0])}
    adam_update(fresh, {"w": np.zeros(1)}, Adam(lr=0.1))
    assert fresh["w"][0] == 1.0


def test_adam_first_step_is_signed_lr():
    p = {"w": np.array([0.0, 0.0, 0.0])}
    adam_update(p, {"w": np.array([0.5, -3.0, 1e-3])}, Adam(), lr=0.01)
    np.testing.assert_allclose(p["w"], [-0.01, 0.01, -0.01], rtol=1e-4)


def test_adam_descends_quadratic_bowl():
    rng = np.random.default_rng(8)
    A = np.diag([1.0, 4.0, 9.0])
    p = {"w": rng.normal(size=3)}
    opt = Adam(lr=0.05)
    hist = []
    for _ in range(100):
        w = p["w"]
        hist.append(0.5 * w @ A @ w)
        opt.update(p, {"w": A @ w})
    assert all(b < a for a, b in zip(hist[5:30], hist[6:31]))
    assert hist[-1] < hist[0]


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    for head, out in (("gaussian", 2), ("dirichlet", 5), ("value", 1), ("discriminator", 1)):
        net = Mlp(7, out, head, (64, 64), rng)
        net.save(tmp_path / f"{head}.npz")
        back = Mlp.load(tmp_path / f"{head}.npz")
        assert back.head == head and back.hidden == (64, 64)
        assert net.params.keys() == back.params.keys()
        for k in net.params:
            assert net.params[k].tobytes() == back.params[k].tobytes()


def test_sigmoid_range():
    z = np.linspace(-50, 50, 101)
    s = sigmoid(z)
    assert np.all((s >= 0) & (s <= 1)) and s[50] == 0.5
