"""Network, optimizer, and distribution tests with finite-difference oracles."""

import math

import numpy as np
import pytest

from ppdnav.numerics import (
    MLP,
    AdamState,
    Categorical,
    NoCachedForward,
    NonFiniteValue,
    ShapeMismatch,
    TwoHeadNet,
    adam_update,
    deserialize_net,
    orthogonal,
    serialize_net,
)


def central_diff(f, theta, h=1e-4):
    """Central finite differences of a scalar function over a flat vector."""
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (f(up) - f(dn)) / (2.0 * h)
    return grad


def test_linear_layer_forward_known_values():
    net = MLP([2, 2])
    net.set_params(np.array([1.0, 2.0, 3.0, 4.0, 0.5, -0.5]))
    out = net.forward(np.array([1.0, 1.0]))
    assert out.shape == (1, 2)
    assert out[0, 0] == 3.5
    assert out[0, 1] == 6.5


def test_hidden_layers_apply_tanh():
    net = MLP([1, 1, 1])
    net.set_params(np.array([2.0, 0.0, 1.0, 0.0]))  # w0=2, b0=0, w1=1, b1=0
    out = net.forward(np.array([3.0]))
    assert out[0, 0] == pytest.approx(math.tanh(6.0), abs=1e-15)


def test_orthogonal_init_rows_have_requested_gain():
    rng = np.random.default_rng(11)
    w = orthogonal(rng, 3, 8, gain=2.0)
    assert np.allclose(w @ w.T, 4.0 * np.eye(3), atol=1e-10)


def test_mlp_parameter_gradient_matches_finite_differences():
    rng = np.random.default_rng(101)
    for trial in range(4):
        net = MLP([3, 8, 2], rng=rng)
        x = rng.normal(size=(5, 3))
        upstream = rng.normal(size=(5, 2))

        def loss(theta):
            probe = net.clone()
            probe.set_params(theta)
            return float((probe.forward(x) * upstream).sum())

        net.forward(x)
        analytic = net.backward(upstream)
        numeric = central_diff(loss, net.get_params())
        assert np.allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_mlp_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    net = MLP([4, 6, 3], rng=rng)
    x = rng.normal(size=(2, 4))
    upstream = rng.normal(size=(2, 3))
    net.forward(x)
    net.backward(upstream)
    analytic = net.input_grad.reshape(-1)

    def loss(flat):
        return float((net.forward(flat.reshape(2, 4)) * upstream).sum())

    numeric = central_diff(loss, x.reshape(-1))
    assert np.allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_two_head_gradient_matches_finite_differences():
    rng = np.random.default_rng(55)
    net = TwoHeadNet(5, 4, hidden=(8,), rng=rng)
    obs = rng.normal(size=(6, 5))
    u_logits = rng.normal(size=(6, 4))
    u_values = rng.normal(size=6)

    def loss(theta):
        probe = net.clone()
        probe.set_params(theta)
        logits, values = probe.forward(obs)
        return float((logits * u_logits).sum() + (values * u_values).sum())

    net.forward(obs)
    analytic = net.backward(u_logits, u_values)
    numeric = central_diff(loss, net.get_params())
    assert np.allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_two_head_forward_shapes_and_small_policy_init():
    rng = np.random.default_rng(1)
    net = TwoHeadNet(10, 6, rng=rng)
    logits, values = net.forward(rng.normal(size=(3, 10)))
    assert logits.shape == (3, 6)
    assert values.shape == (3,)
    # the policy head starts near zero so the initial policy is near-uniform
    probs = Categorical(logits).probs
    assert np.abs(probs - 1.0 / 6.0).max() < 0.05


def test_param_roundtrip_and_clone_independence():
    rng = np.random.default_rng(2)
    net = TwoHeadNet(4, 3, hidden=(5,), rng=rng)
    theta = net.get_params()
    twin = net.clone()
    twin.set_params(np.zeros(twin.n_params))
    assert np.array_equal(net.get_params(), theta)
    net.set_params(theta)
    assert np.array_equal(net.get_params(), theta)
    with pytest.raises(ShapeMismatch):
        net.set_params(theta[:-1])


def test_forward_input_validation():
    net = MLP([3, 2])
    with pytest.raises(ShapeMismatch):
        net.forward(np.zeros((1, 4)))
    with pytest.raises(NonFiniteValue):
        net.forward(np.array([1.0, np.nan, 0.0]))
    with pytest.raises(NoCachedForward):
        MLP([3, 2]).backward(np.zeros((1, 2)))
    net.forward(np.zeros((2, 3)))
    with pytest.raises(ShapeMismatch):
        net.backward(np.zeros((3, 2)))


def test_adam_first_step_closed_form():
    """Bias correction makes step one equal -lr * g / (|g| + eps) exactly."""
    rng = np.random.default_rng(31)
    theta = rng.normal(size=20)
    grad = rng.normal(size=20)
    state = AdamState(lr=0.01)
    new = adam_update(state, theta, grad)
    expected = theta - 0.01 * grad / (np.abs(grad) + state.eps)
    assert np.allclose(new, expected, atol=1e-15)
    assert state.step == 1


def test_adam_matches_reference_loop():
    rng = np.random.default_rng(32)
    theta = rng.normal(size=12)
    grads = rng.normal(size=(5, 12))
    state = AdamState(lr=0.003)

    ref = theta.copy()
    m = np.zeros(12)
    v = np.zeros(12)
    for t, g in enumerate(grads, start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.003 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)

    out = theta.copy()
    for g in grads:
        out = adam_update(state, out, g)
    assert np.allclose(out, ref, atol=1e-14)


def test_adam_rejects_bad_inputs():
    state = AdamState()
    with pytest.raises(ShapeMismatch):
        adam_update(state, np.zeros(3), np.zeros(4))
    with pytest.raises(NonFiniteValue):
        adam_update(state, np.zeros(3), np.array([1.0, np.inf, 0.0]))
    state.ensure(3)
    with pytest.raises(ShapeMismatch):
        state.ensure(5)


def test_categorical_identities():
    rng = np.random.default_rng(9)
    logits = rng.normal(size=(40, 7)) * 3
    dist = Categorical(logits)
    assert np.allclose(dist.probs.sum(axis=-1), 1.0, atol=1e-12)
    assert np.allclose(dist.log_probs, np.log(dist.probs), atol=1e-12)
    actions = rng.integers(7, size=40)
    assert np.array_equal(dist.log_prob(actions),
                          dist.log_probs[np.arange(40), actions])
    ent = dist.entropy()
    assert np.all(ent >= 0)
    assert np.all(ent <= math.log(7) + 1e-12)
    # shifting logits by a constant leaves the distribution unchanged
    shifted = Categorical(logits + 123.456)
    assert np.allclose(shifted.probs, dist.probs, atol=1e-12)


def test_categorical_uniform_entropy_and_extremes():
    dist = Categorical(np.zeros((1, 5)))
    assert dist.entropy()[0] == pytest.approx(math.log(5), abs=1e-14)
    sharp = Categorical(np.array([[1000.0, 0.0, 0.0]]))
    assert sharp.probs[0, 0] == 1.0
    assert sharp.entropy()[0] == 0.0
    with pytest.raises(NonFiniteValue):
        Categorical(np.array([[np.nan, 0.0]]))


def test_categorical_sampling_tracks_probabilities():
    p = np.array([0.2, 0.3, 0.5])
    dist = Categorical(np.log(p)[None, :].repeat(20000, axis=0))
    draws = dist.sample(np.random.default_rng(123))
    freq = np.bincount(draws, minlength=3) / 20000
    assert np.abs(freq - p).max() < 0.02
    again = dist.sample(np.random.default_rng(123))
    assert np.array_equal(draws, again)
    assert draws.min() >= 0 and draws.max() <= 2


def test_serialize_roundtrip_is_byte_identical():
    rng = np.random.default_rng(44)
    for net in (MLP([3, 7, 2], rng=rng), TwoHeadNet(6, 4, hidden=(8, 5), rng=rng)):
        opt = AdamState(lr=0.001, step=17,
                        m=rng.normal(size=net.n_params),
                        v=np.abs(rng.normal(size=net.n_params)))
        blob = serialize_net(net, opt)
        copy, opt2, used = deserialize_net(blob)
        assert used == len(blob)
        assert np.array_equal(copy.get_params(), net.get_params())
        assert opt2.step == 17 and opt2.lr == 0.001
        assert np.array_equal(opt2.m, opt.m)
        assert np.array_equal(opt2.v, opt.v)
        assert serialize_net(copy, opt2) == blob


def test_serialize_without_optimizer():
    net = MLP([2, 2])
    blob = serialize_net(net)
    copy, opt, used = deserialize_net(blob)
    assert opt is None
    assert used == len(blob)
    assert np.array_equal(copy.get_params(), net.get_params())
    assert isinstance(copy, MLP)


def test_deserialize_rejects_bad_magic():
    blob = serialize_net(MLP([2, 2]))
    with pytest.raises(ValueError):
        deserialize_net(b"NOTMAGIC" + blob[8:])
