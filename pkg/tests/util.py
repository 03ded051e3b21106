"""Shared test helpers: random instances and finite-difference oracles."""

import numpy as np

from nodgames import autodiff as ad
from nodgames.opinions import NODParams, SaturationSpec, Topology


def random_topology(rng, max_agents=4, max_options=8):
    num_agents = int(rng.integers(1, max_agents + 1))
    options = tuple(int(rng.integers(1, max_options + 1)) for _ in range(num_agents))
    return Topology(num_agents, options)


def random_params(rng, topology=None, coupling_scale=0.5, self_gain_scale=1.0,
                  bias_scale=0.0, saturation=None):
    topo = topology or random_topology(rng)
    n = topo.total_dim
    inter = {}
    for i in range(topo.num_agents):
        for j in range(topo.num_agents):
            if j != i:
                ni, nj = topo.options_per_agent[i], topo.options_per_agent[j]
                inter[(i, j)] = coupling_scale * rng.normal(size=(ni, nj))
    intra = []
    for ni in topo.options_per_agent:
        m = coupling_scale * rng.uniform(0, 1, size=(ni, ni))
        np.fill_diagonal(m, 0.0)
        intra.append(m)
    return NODParams(
        topology=topo,
        damping=rng.uniform(0.5, 2.0, size=n),
        bias=bias_scale * rng.normal(size=n),
        attention=float(rng.uniform(0.5, 2.0)),
        self_gain=self_gain_scale * rng.uniform(0, 1, size=n),
        intra_coupling=tuple(intra),
        inter_coupling=inter,
        saturation=saturation or SaturationSpec(),
    )


def finite_difference_gradient(f, x, h=1e-5):
    """Central-difference gradient of scalar f at vector x."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        g.flat[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def finite_difference_jacobian(f, x, h=1e-6):
    """Central-difference Jacobian of vector-valued f at vector x."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x))
    jac = np.zeros((f0.size, x.size))
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        jac[:, k] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h)
    return jac


def grad_via_tape(f, x):
    """Gradient of scalar-valued f(vector) through the autodiff tape."""
    leaf = ad.leaf(np.asarray(x, dtype=float))
    out = f(leaf)
    ad.backward(out)
    return np.asarray(leaf.grad, dtype=float)
