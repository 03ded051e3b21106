"""Decoders from raw network outputs to constrained opinion-dynamics
parameters and initial opinions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .mlp import mlp_forward
from .opinions import NODParams, OpinionState, SaturationSpec, Topology

POSITIVITY_FLOOR = 1e-3


def _softplus_floored(x):
    return ad.softplus(x) + POSITIVITY_FLOOR


@dataclass(frozen=True)
class ParamDecoder:
    """Slices a raw output vector into the parameter blocks and squashes
    each block into its admissible range.

    Layout (row-major within blocks, N = total_dim, n_i = options of agent i):
      damping      N        softplus + 1e-3 floor
      bias         N        identity
      self_gain    N        softplus
      attention    1        softplus + 1e-3 floor
      intra        sum n_i*(n_i-1)   off-diagonal entries per agent, softplus
      inter        sum_{i != j} n_i*n_j   per ordered pair (i,j), identity
    """

    topology: Topology
    z_max: float = 5.0
    saturation: SaturationSpec = field(default_factory=SaturationSpec)

    @property
    def raw_dim(self):
        topo = self.topology
        n = topo.total_dim
        intra = sum(m * (m - 1) for m in topo.options_per_agent)
        inter = sum(topo.options_per_agent[i] * topo.options_per_agent[j]
                    for i in range(topo.num_agents)
                    for j in range(topo.num_agents) if j != i)
        return 3 * n + 1 + intra + inter

    @property
    def opinion_raw_dim(self):
        return self.topology.total_dim

    def decode_params(self, raw):
        if np.shape(ad.value_of(raw))[0] != self.raw_dim:
            raise ValueError(f"raw vector length != {self.raw_dim}")
        topo = self.topology
        n = topo.total_dim
        pos = 0

        def take(k):
            nonlocal pos
            out = raw[pos:pos + k]
            pos += k
            return out

        damping = _softplus_floored(take(n))
        bias = take(n)
        self_gain = ad.softplus(take(n))
        attention = _softplus_floored(take(1)[0])

        intra = []
        for ni in topo.options_per_agent:
            gains = ad.softplus(take(ni * (ni - 1)))
            rows, k = [], 0
            for l in range(ni):
                row = []
                for p in range(ni):
                    if p == l:
                        row.append(0.0)
                    else:
                        row.append(gains[k])
                        k += 1
                rows.append(row)
            intra.append(ad.amat(rows) if ni > 1 else np.zeros((1, 1)))

        inter = {}
        for i in range(topo.num_agents):
            for j in range(topo.num_agents):
                if j == i:
                    continue
                ni, nj = topo.options_per_agent[i], topo.options_per_agent[j]
                inter[(i, j)] = ad.reshape(take(ni * nj), (ni, nj))

        return NODParams(
            topology=topo,
            damping=damping,
            bias=bias,
            attention=attention,
            self_gain=self_gain,
            intra_coupling=tuple(intra),
            inter_coupling=inter,
            saturation=self.saturation,
        )

    def decode_opinion(self, raw):
        """Initial opinion in (-z_max, z_max) elementwise."""
        if np.shape(ad.value_of(raw))[0] != self.topology.total_dim:
            raise ValueError("raw opinion vector has wrong length")
        return self.z_max * ad.tanh(raw)


@dataclass(frozen=True)
class DirectWeightDecoder:
    """Baseline decoder: network output maps straight to cost weights,
    bounded like opinions but with no opinion dynamics in between."""

    topology: Topology
    z_max: float = 5.0

    @property
    def raw_dim(self):
        return self.topology.total_dim

    def decode_weights(self, raw):
        if np.shape(ad.value_of(raw))[0] != self.topology.total_dim:
            raise ValueError("raw weight vector has wrong length")
        return self.z_max * ad.tanh(raw)


def predict_nod_params(weights, decoder, features):
    """Network + decoder: physical-state features to valid NOD parameters."""
    return decoder.decode_params(mlp_forward(weights, features))


def predict_initial_opinion(weights0, decoder, features):
    """Network + decoder: initial-state features to a bounded opinion prior."""
    values = decoder.decode_opinion(mlp_forward(weights0, features))
    if ad.is_node(values):
        return values
    return OpinionState(decoder.topology, values)
