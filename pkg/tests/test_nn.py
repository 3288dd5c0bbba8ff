import numpy as np
import pytest

from onpolicy import nn
from onpolicy.errors import NumericError, UsageError
from conftest import fd_grad, rel_err


def test_activation_values():
    y, d = nn.activation_fn("tanh", 0.0)
    assert y == 0.0 and d == 1.0
    y, _ = nn.activation_fn("relu", np.array([-1.0, 2.0]))
    np.testing.assert_array_equal(y, [0.0, 2.0])
    assert nn.activation_fn("swish", 0.0)[0] == 0.0
    assert nn.activation_fn("swish", 1.0)[0] == pytest.approx(1.0 / (1.0 + np.exp(-1.0)), abs=1e-15)
    assert nn.activation_fn("swish", 1.0)[0] == pytest.approx(0.731059, abs=1e-6)
    assert nn.activation_fn("leaky_relu", -2.0)[0] == pytest.approx(-0.02)
    assert nn.activation_fn("elu", -1.0)[0] == pytest.approx(np.exp(-1) - 1)


@pytest.mark.parametrize("kind", nn.ACTIVATIONS)
def test_activation_derivatives(kind, rng):
    x = rng.normal(0, 2, 50)
    x = x[np.abs(x) > 1e-3]  # keep away from kinks
    _, d = nn.activation_fn(kind, x)
    h = 1e-6
    num = (nn.activation_fn(kind, x + h)[0] - nn.activation_fn(kind, x - h)[0]) / (2 * h)
    np.testing.assert_allclose(d, num, rtol=1e-6, atol=1e-8)


def test_orthogonal_square():
    w = nn.init_weight("orthogonal", 64, 64, np.random.default_rng(0))
    np.testing.assert_allclose(w.T @ w, np.eye(64), atol=1e-6)


@pytest.mark.parametrize("shape", [(10, 4), (4, 10)])
def test_semi_orthogonal_with_gain(shape):
    w = nn.init_weight("orthogonal_1.41", *shape, np.random.default_rng(0))
    small = min(shape)
    gram = w.T @ w if shape[0] >= shape[1] else w @ w.T
    np.testing.assert_allclose(gram, 1.41**2 * np.eye(small), atol=1e-10)


def test_last_layer_scale_exact_factor():
    a = nn.init_mlp(nn.MlpSpec(3, [8], 2, last_layer_scale=0.01), np.random.default_rng(4))
    b = nn.init_mlp(nn.MlpSpec(3, [8], 2, last_layer_scale=1.0), np.random.default_rng(4))
    np.testing.assert_allclose(b.weights[-1], 100 * a.weights[-1], rtol=1e-13)
    np.testing.assert_array_equal(a.weights[0], b.weights[0])
    assert all(np.all(bias == 0) for bias in a.biases)


VARIANCE = {
    "glorot_normal": lambda i, o: 2 / (i + o), "glorot_uniform": lambda i, o: 2 / (i + o),
    "he_normal": lambda i, o: 2 / i, "he_uniform": lambda i, o: 2 / i,
    "lecun_normal": lambda i, o: 1 / i, "lecun_uniform": lambda i, o: 1 / i,
    "orthogonal": lambda i, o: 1 / max(i, o), "orthogonal_1.41": lambda i, o: 1.41**2 / max(i, o),
}


@pytest.mark.parametrize("kind", nn.INITIALIZERS)
def test_initializer_variance(kind):
    w = nn.init_weight(kind, 100, 100, np.random.default_rng(0))
    assert w.size >= 10_000
    assert np.var(w) == pytest.approx(VARIANCE[kind](100, 100), rel=0.2)


def test_forward_trivial_cases():
    spec = nn.MlpSpec(3, [4], 2)
    p = nn.init_mlp(spec, np.random.default_rng(0))
    for w in p.weights:
        w[...] = 0
    y, _ = nn.forward(p, np.ones((5, 3)))
    np.testing.assert_array_equal(y, 0)
    p = nn.init_mlp(nn.MlpSpec(2, [3], 2, "tanh"), np.random.default_rng(0))
    for w in p.weights:
        w[...] = 1.0
    y, _ = nn.forward(p, np.zeros(2))
    np.testing.assert_array_equal(y, 0)


def test_identity_output_layer():
    # a 1-unit-wide relu tower feeding an identity-like head still reproduces a positive input
    p = nn.init_mlp(nn.MlpSpec(1, [1], 1, "relu"), np.random.default_rng(0))
    p.weights[0][...] = 1.0
    p.weights[1][...] = 1.0
    y, _ = nn.forward(p, np.array([[2.5]]))
    assert y[0, 0] == 2.5


def test_backward_scalar_chain_rule():
    p = nn.init_mlp(nn.MlpSpec(1, [1], 1, "relu"), np.random.default_rng(0))
    p.weights[0][...] = 1.0
    p.weights[1][...] = 3.0
    y, cache = nn.forward(p, np.array([[2.0]]))
    grads, dx = nn.backward(p, cache, np.array([[1.0]]))
    assert grads["weights"][1][0, 0] == 2.0   # dy/dw2 = hidden = 2
    assert grads["weights"][0][0, 0] == 6.0   # w2 * x
    assert dx[0, 0] == 3.0


def test_backward_zero_upstream():
    p = nn.init_mlp(nn.MlpSpec(3, [5, 5], 2), np.random.default_rng(0))
    _, cache = nn.forward(p, np.ones((4, 3)))
    grads, dx = nn.backward(p, cache, np.zeros((4, 2)))
    assert all(np.all(g == 0) for g in grads["weights"] + grads["biases"])
    assert np.all(dx == 0)


def test_errors():
    p = nn.init_mlp(nn.MlpSpec(3, [5], 2), np.random.default_rng(0))
    with pytest.raises(NumericError):
        nn.forward(p, np.array([np.nan, 0, 0]))
    with pytest.raises(UsageError):
        nn.forward(p, np.zeros(4))
    _, cache = nn.forward(p, np.zeros(3))
    p.touch()
    with pytest.raises(UsageError):
        nn.backward(p, cache, np.zeros(2))
    with pytest.raises(UsageError):
        nn.MlpSpec(3, [], 2)
    with pytest.raises(UsageError):
        nn.MlpSpec(3, [4], 2, last_layer_scale=0.0)


def mlp_fd_case(activation, init, widths, seed, h=1e-5):
    r = np.random.default_rng(seed)
    spec = nn.MlpSpec(3, widths, 2, activation, init, 1.0)
    p = nn.init_mlp(spec, r)
    for b in p.biases:
        b[...] = r.normal(0, 0.3, b.shape)
    x = r.normal(size=(4, 3))
    dy = r.normal(size=(4, 2))
    _, cache = nn.forward(p, x)
    grads, dx = nn.backward(p, cache, dy)
    errs = []
    for i in range(len(p.weights)):
        for arr, g in ((p.weights[i], grads["weights"][i]), (p.biases[i], grads["biases"][i])):
            orig = arr.copy()

            def f(v, arr=arr):
                arr[...] = v
                return float(np.sum(nn.forward(p, x)[0] * dy))
            num = fd_grad(f, orig, h)
            arr[...] = orig
            errs.append(rel_err(g, num))
    errs.append(rel_err(dx, fd_grad(lambda v: float(np.sum(nn.forward(p, v)[0] * dy)), x, h)))
    return max(errs)


@pytest.mark.parametrize("activation", ["tanh", "elu", "sigmoid", "swish"])
@pytest.mark.parametrize("init", nn.INITIALIZERS)
def test_backward_matches_finite_differences(activation, init):
    assert mlp_fd_case(activation, init, [5, 4], 0) < 1e-4


@pytest.mark.parametrize("activation", ["relu", "leaky_relu"])
def test_backward_piecewise_linear(activation):
    assert mlp_fd_case(activation, "glorot_normal", [6], 3) < 1e-4
