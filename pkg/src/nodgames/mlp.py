"""Small multilayer perceptrons with exact reverse-mode gradients."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class MLPWeights:
    """Layers as (weight, bias) pairs; final layer is linear."""

    layers: tuple
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        layers = tuple((w, b) for w, b in self.layers)
        if not layers:
            raise ValueError("need at least one layer")
        prev = None
        for w, b in layers:
            w_val, b_val = ad.value_of(w), ad.value_of(b)
            if np.ndim(w_val) != 2 or np.ndim(b_val) != 1:
                raise ValueError("each layer is a 2-d weight and 1-d bias")
            if np.shape(w_val)[0] != np.shape(b_val)[0]:
                raise ValueError("weight rows must match bias length")
            if prev is not None and np.shape(w_val)[1] != prev:
                raise ValueError("consecutive layer dimensions must chain")
            if not ad.is_node(w) and not (np.all(np.isfinite(w_val)) and np.all(np.isfinite(b_val))):
                raise ValueError("weights must be finite")
            prev = np.shape(w_val)[0]
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self):
        return np.shape(ad.value_of(self.layers[0][0]))[1]

    @property
    def output_dim(self):
        return np.shape(ad.value_of(self.layers[-1][0]))[0]

    def as_leaves(self):
        """Copy with every array wrapped as an autodiff leaf (for training)."""
        return MLPWeights(
            tuple((ad.leaf(np.asarray(w)), ad.leaf(np.asarray(b))) for w, b in self.layers),
            self.activation)

    def detached(self):
        """Copy with plain ndarray parameters."""
        return MLPWeights(
            tuple((np.asarray(ad.value_of(w)), np.asarray(ad.value_of(b)))
                  for w, b in self.layers),
            self.activation)


def init_mlp(rng, dims, activation="tanh"):
    """Glorot-style uniform fan-based initialization; dims chains
    input -> hidden... -> output."""
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append((w, np.zeros(fan_out)))
    return MLPWeights(tuple(layers), activation)


def mlp_forward(weights, x):
    """Affine-activation chain; the last layer stays linear."""
    if np.shape(ad.value_of(x)) != (weights.input_dim,):
        raise ValueError(
            f"input length {np.shape(ad.value_of(x))} != expected ({weights.input_dim},)")
    act = ad.tanh if weights.activation == "tanh" else ad.relu
    h = x
    last = len(weights.layers) - 1
    for k, (w, b) in enumerate(weights.layers):
        h = ad.add(ad.matmul(w, h), b)
        if k != last:
            h = act(h)
    return h


def mlp_backward(weights, x, upstream):
    """Reverse-mode gradients of dot(output, upstream).

    Returns (per-layer (dW, db) list, input gradient).
    """
    taped = weights.as_leaves()
    xin = ad.leaf(np.asarray(x, dtype=float))
    out = mlp_forward(taped, xin)
    loss = ad.dot(np.asarray(upstream, dtype=float), out)
    ad.backward(loss)
    grads = [(np.asarray(w.grad if w.grad is not None else np.zeros(w.shape)),
              np.asarray(b.grad if b.grad is not None else np.zeros(b.shape)))
             for w, b in taped.layers]
    gin = xin.grad if xin.grad is not None else np.zeros(weights.input_dim)
    return grads, np.asarray(gin)


# ---------------------------------------------------------------------------
# JSON serialization: layer dims + row-major float arrays


def weights_to_dict(weights):
    return {
        "activation": weights.activation,
        "layers": [
            {
                "shape": list(np.shape(np.asarray(ad.value_of(w)))),
                "weight": np.asarray(ad.value_of(w)).ravel().tolist(),
                "bias": np.asarray(ad.value_of(b)).tolist(),
            }
            for w, b in weights.layers
        ],
    }


def weights_from_dict(doc):
    layers = []
    for layer in doc["layers"]:
        shape = tuple(layer["shape"])
        layers.append((np.asarray(layer["weight"], dtype=float).reshape(shape),
                       np.asarray(layer["bias"], dtype=float)))
    return MLPWeights(tuple(layers), doc["activation"])


def save_weights(weights, path):
    with open(path, "w") as f:
        json.dump(weights_to_dict(weights), f, sort_keys=True)
        f.write("\n")


def load_weights(path):
    with open(path) as f:
        return weights_from_dict(json.load(f))
