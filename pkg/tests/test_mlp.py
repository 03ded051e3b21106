import numpy as np
import pytest

from nodgames import autodiff as ad
from nodgames.mlp import (
    MLPWeights,
    init_mlp,
    load_weights,
    mlp_backward,
    mlp_forward,
    save_weights,
    weights_from_dict,
    weights_to_dict,
)


def test_zero_weights_give_zero_output():
    w = MLPWeights(((np.zeros((3, 2)), np.zeros(3)), (np.zeros((1, 3)), np.zeros(1))))
    np.testing.assert_array_equal(mlp_forward(w, np.array([1.0, -2.0])), np.zeros(1))


def test_identity_linear_layer():
    w = MLPWeights(((np.eye(4), np.zeros(4)),))
    x = np.array([0.1, -0.2, 0.3, 4.0])
    np.testing.assert_array_equal(mlp_forward(w, x), x)


def test_forward_matches_independent_reimplementation():
    rng = np.random.default_rng(7)
    w = init_mlp(rng, (3, 5, 2), activation="tanh")
    x = rng.normal(size=3)

    # loop-based re-computation, no shared code path
    h = [float(v) for v in x]
    (w0, b0), (w1, b1) = w.layers
    hidden = []
    for r in range(5):
        acc = b0[r]
        for c in range(3):
            acc += w0[r, c] * h[c]
        hidden.append(np.tanh(acc))
    out = []
    for r in range(2):
        acc = b1[r]
        for c in range(5):
            acc += w1[r, c] * hidden[c]
        out.append(acc)

    np.testing.assert_allclose(mlp_forward(w, x), out, atol=1e-10)


def test_forward_dimension_check():
    w = MLPWeights(((np.eye(2), np.zeros(2)),))
    with pytest.raises(ValueError):
        mlp_forward(w, np.zeros(3))


def test_weights_validation():
    with pytest.raises(ValueError):
        MLPWeights(((np.zeros((2, 2)), np.zeros(3)),))
    with pytest.raises(ValueError):
        MLPWeights(((np.zeros((2, 2)), np.zeros(2)), (np.zeros((1, 3)), np.zeros(1))))
    with pytest.raises(ValueError):
        MLPWeights(((np.full((2, 2), np.nan), np.zeros(2)),))
    with pytest.raises(ValueError):
        MLPWeights(((np.eye(2), np.zeros(2)),), activation="gelu")


def test_backward_identity_layer_passes_upstream():
    w = MLPWeights(((np.eye(3), np.zeros(3)),))
    upstream = np.array([1.0, -2.0, 0.5])
    grads, gin = mlp_backward(w, np.zeros(3), upstream)
    np.testing.assert_allclose(gin, upstream)
    np.testing.assert_allclose(grads[0][1], upstream)


def test_backward_zero_upstream_zero_grads():
    rng = np.random.default_rng(8)
    w = init_mlp(rng, (2, 4, 3))
    grads, gin = mlp_backward(w, rng.normal(size=2), np.zeros(3))
    assert np.all(gin == 0)
    for dw, db in grads:
        assert np.all(dw == 0) and np.all(db == 0)


def _flatten(weights):
    return np.concatenate([np.concatenate([np.ravel(w), np.ravel(b)])
                           for w, b in weights.layers])


def _unflatten(weights, vec):
    layers, pos = [], 0
    for w, b in weights.layers:
        layers.append((vec[pos:pos + w.size].reshape(w.shape),
                       vec[pos + w.size:pos + w.size + b.size]))
        pos += w.size + b.size
    return MLPWeights(tuple(layers), weights.activation)


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_backward_matches_finite_differences(activation):
    rng = np.random.default_rng(9)
    for trial in range(20):
        w = init_mlp(rng, (3, 4, 2), activation=activation)
        x = rng.normal(size=3)
        upstream = rng.normal(size=2)

        grads, gin = mlp_backward(w, x, upstream)
        flat = np.concatenate([np.concatenate([np.ravel(dw), np.ravel(db)])
                               for dw, db in grads])

        theta = _flatten(w)
        h = 1e-5
        fd = np.zeros_like(theta)
        for k in range(theta.size):
            e = np.zeros_like(theta)
            e[k] = h
            up = float(upstream @ mlp_forward(_unflatten(w, theta + e), x))
            dn = float(upstream @ mlp_forward(_unflatten(w, theta - e), x))
            fd[k] = (up - dn) / (2 * h)
        denom = np.maximum(np.abs(fd), 1.0)
        assert np.max(np.abs(flat - fd) / denom) < 1e-5

        fd_in = np.zeros_like(x)
        for k in range(x.size):
            e = np.zeros_like(x)
            e[k] = h
            fd_in[k] = (float(upstream @ mlp_forward(w, x + e))
                        - float(upstream @ mlp_forward(w, x - e))) / (2 * h)
        np.testing.assert_allclose(gin, fd_in, rtol=1e-5, atol=1e-7)


def test_forward_accepts_taped_weights():
    rng = np.random.default_rng(10)
    w = init_mlp(rng, (2, 3, 1))
    x = rng.normal(size=2)
    out_plain = mlp_forward(w, x)
    out_taped = mlp_forward(w.as_leaves(), x)
    np.testing.assert_allclose(ad.value_of(out_taped), out_plain)


def test_weights_json_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    w = init_mlp(rng, (3, 8, 8, 4), activation="relu")
    path = tmp_path / "weights.json"
    save_weights(w, path)
    again = load_weights(path)
    assert again.activation == "relu"
    for (w1, b1), (w2, b2) in zip(w.layers, again.layers):
        np.testing.assert_array_equal(w1, w2)
        np.testing.assert_array_equal(b1, b2)
    # plain dict roundtrip too
    again2 = weights_from_dict(weights_to_dict(w))
    np.testing.assert_array_equal(again2.layers[0][0], w.layers[0][0])


def test_init_is_seed_deterministic():
    w1 = init_mlp(np.random.default_rng(42), (4, 8, 2))
    w2 = init_mlp(np.random.default_rng(42), (4, 8, 2))
    for (a, _), (b, _) in zip(w1.layers, w2.layers):
        np.testing.assert_array_equal(a, b)
