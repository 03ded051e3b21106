"""Nonlinear opinion dynamics: parameters, vector field, and integration.

Opinion values are stacked agent-major: the flat index of (agent i,
option l) is ``sum(options_per_agent[:i]) + l``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# topology and opinion state


@dataclass(frozen=True)
class Topology:
    """Agent/option index structure of an opinion system."""

    num_agents: int
    options_per_agent: tuple

    def __post_init__(self):
        object.__setattr__(self, "options_per_agent", tuple(int(n) for n in self.options_per_agent))
        if self.num_agents < 1:
            raise ValueError("need at least one agent")
        if len(self.options_per_agent) != self.num_agents:
            raise ValueError("options_per_agent length must equal num_agents")
        if any(n < 1 for n in self.options_per_agent):
            raise ValueError("every agent needs at least one option")

    @property
    def total_dim(self):
        return sum(self.options_per_agent)

    def offset(self, agent):
        return sum(self.options_per_agent[:agent])

    def flat_index(self, agent, option):
        if not (0 <= agent < self.num_agents):
            raise IndexError("agent out of range")
        if not (0 <= option < self.options_per_agent[agent]):
            raise IndexError("option out of range")
        return self.offset(agent) + option

    def agent_slice(self, agent):
        off = self.offset(agent)
        return slice(off, off + self.options_per_agent[agent])


@dataclass(frozen=True)
class OpinionState:
    """Stacked opinion values for all agents and options."""

    topology: Topology
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.topology.total_dim,):
            raise ValueError(
                f"opinion vector length {vals.shape} != total_dim {self.topology.total_dim}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("opinion values must be finite")
        object.__setattr__(self, "values", vals)

    def agent_values(self, agent):
        return self.values[self.topology.agent_slice(agent)]

    @classmethod
    def neutral(cls, topology):
        return cls(topology, np.zeros(topology.total_dim))


# ---------------------------------------------------------------------------
# saturation functions

VALID_SATURATIONS = ("tanh", "scaled-sigmoid")


def saturation_eval(kind, v):
    """Evaluate a saturation function: S(0)=0, S'(0)=1, bounded output."""
    if not ad.is_node(v) and not np.all(np.isfinite(v)):
        raise ValueError("saturation input must be finite")
    if kind == "tanh":
        return ad.tanh(v)
    if kind == "scaled-sigmoid":
        # 2*sigmoid(2v) - 1 recenters the sigmoid so S(0)=0 and S'(0)=1.
        return 2.0 * ad.sigmoid(2.0 * v) - 1.0
    raise ValueError(f"unknown saturation kind {kind!r}")


@dataclass(frozen=True)
class SaturationSpec:
    """Kinds of the two saturation functions in the coupling term."""

    s1: str = "tanh"
    s2: str = "tanh"

    def __post_init__(self):
        for kind in (self.s1, self.s2):
            if kind not in VALID_SATURATIONS:
                raise ValueError(f"unknown saturation kind {kind!r}")


# ---------------------------------------------------------------------------
# parameters


def _is_plain(x):
    return not ad.is_node(x)


@dataclass(frozen=True)
class NODParams:
    """Full parameter set of one opinion-dynamics instance.

    ``intra_coupling[i]`` is the (N_i x N_i) same-agent inter-option gain
    matrix (zero diagonal).  ``inter_coupling[(i, j)]`` is an (N_i x N_j)
    matrix whose diagonal entries are same-option gains and off-diagonal
    entries are cross-option gains toward agent j.

    Array fields may be autodiff Nodes during training, in which case
    validation is skipped.
    """

    topology: Topology
    damping: object
    bias: object
    attention: object
    self_gain: object
    intra_coupling: tuple
    inter_coupling: dict
    saturation: SaturationSpec = field(default_factory=SaturationSpec)

    def __post_init__(self):
        topo = self.topology
        n = topo.total_dim
        if _is_plain(self.damping):
            d = np.asarray(self.damping, dtype=float)
            if d.shape != (n,) or not np.all(d > 0):
                raise ValueError("damping must be a positive vector of length total_dim")
            object.__setattr__(self, "damping", d)
        if _is_plain(self.bias):
            b = np.asarray(self.bias, dtype=float)
            if b.shape != (n,) or not np.all(np.isfinite(b)):
                raise ValueError("bias must be a finite vector of length total_dim")
            object.__setattr__(self, "bias", b)
        if _is_plain(self.attention):
            lam = float(self.attention)
            if not lam > 0:
                raise ValueError("attention must be positive")
            object.__setattr__(self, "attention", lam)
        if _is_plain(self.self_gain):
            a = np.asarray(self.self_gain, dtype=float)
            if a.shape != (n,) or not np.all(a >= 0):
                raise ValueError("self_gain must be a nonnegative vector of length total_dim")
            object.__setattr__(self, "self_gain", a)
        intra = tuple(self.intra_coupling)
        if all(_is_plain(m) for m in intra):
            intra = tuple(np.asarray(m, dtype=float) for m in intra)
            for i, m in enumerate(intra):
                ni = topo.options_per_agent[i]
                if m.shape != (ni, ni):
                    raise ValueError(f"intra_coupling[{i}] must be {ni}x{ni}")
                if np.any(np.diag(m) != 0):
                    raise ValueError("intra_coupling diagonal must be zero")
                if np.any(m < 0):
                    raise ValueError("intra_coupling gains must be nonnegative")
        object.__setattr__(self, "intra_coupling", intra)
        inter = dict(self.inter_coupling)
        for (i, j), m in inter.items():
            if i == j:
                raise ValueError("inter_coupling keys must have distinct agents")
            if _is_plain(m):
                m = np.asarray(m, dtype=float)
                ni, nj = topo.options_per_agent[i], topo.options_per_agent[j]
                if m.shape != (ni, nj):
                    raise ValueError(f"inter_coupling[{(i, j)}] must be {ni}x{nj}")
                inter[(i, j)] = m
        object.__setattr__(self, "inter_coupling", inter)

    def with_attention(self, lam):
        return replace(self, attention=lam)

    def with_bias(self, b):
        return replace(self, bias=b)

    @classmethod
    def zero_coupling(cls, topology, damping=None, bias=None, attention=1.0,
                      self_gain=None, saturation=None):
        """Params with all coupling gains zero (convenient test fixture)."""
        n = topology.total_dim
        return cls(
            topology=topology,
            damping=np.ones(n) if damping is None else damping,
            bias=np.zeros(n) if bias is None else bias,
            attention=attention,
            self_gain=np.zeros(n) if self_gain is None else self_gain,
            intra_coupling=tuple(np.zeros((m, m)) for m in topology.options_per_agent),
            inter_coupling={
                (i, j): np.zeros((topology.options_per_agent[i], topology.options_per_agent[j]))
                for i in range(topology.num_agents)
                for j in range(topology.num_agents) if j != i
            },
            saturation=saturation or SaturationSpec(),
        )


# ---------------------------------------------------------------------------
# vector field and integration


def coupling_term(values, params):
    """Saturated coupling vector S(z), entry by entry (autodiff-safe)."""
    topo = params.topology
    entries = []
    for i in range(topo.num_agents):
        ni = topo.options_per_agent[i]
        off_i = topo.offset(i)
        for l in range(ni):
            idx = off_i + l
            inner = params.self_gain[idx] * values[idx]
            for j in range(topo.num_agents):
                if j == i or l >= topo.options_per_agent[j]:
                    continue
                inner = inner + params.inter_coupling[(i, j)][l, l] * values[topo.offset(j) + l]
            s = saturation_eval(params.saturation.s1, inner)
            for p in range(ni):
                if p == l:
                    continue
                arg = params.intra_coupling[i][l, p] * values[off_i + p]
                for j in range(topo.num_agents):
                    if j == i or p >= topo.options_per_agent[j]:
                        continue
                    arg = arg + params.inter_coupling[(i, j)][l, p] * values[topo.offset(j) + p]
                s = s + saturation_eval(params.saturation.s2, arg)
            entries.append(s)
    return ad.avec(entries)


def rate_values(values, params):
    """dz/dt = -D z + b + lambda * S(z) on a raw value vector."""
    return -1.0 * ad.mul(params.damping, values) + params.bias \
        + ad.mul(params.attention, coupling_term(values, params))


def nod_rate(z, params):
    """Continuous-time opinion rate for an OpinionState."""
    if z.topology != params.topology:
        raise ValueError("opinion state and parameters have mismatched topologies")
    return rate_values(z.values, params)


def step_values(values, params, dt, method="euler"):
    """One integration step on a raw value vector (autodiff-safe)."""
    if not ad.is_node(dt) and dt <= 0:
        raise ValueError("dt must be positive")
    if method == "euler":
        return values + dt * rate_values(values, params)
    if method == "rk4":
        k1 = rate_values(values, params)
        k2 = rate_values(values + (dt / 2.0) * k1, params)
        k3 = rate_values(values + (dt / 2.0) * k2, params)
        k4 = rate_values(values + dt * k3, params)
        return values + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    raise ValueError(f"unknown integration method {method!r}")


def nod_step(z, params, dt, method="euler"):
    """Discrete-time opinion update; forward Euler by default."""
    if z.topology != params.topology:
        raise ValueError("opinion state and parameters have mismatched topologies")
    return OpinionState(z.topology, step_values(z.values, params, dt, method))


def simulate_opinions(z0, params_sequence, dt, steps, method="euler"):
    """Roll the opinion dynamics forward; returns steps+1 states.

    ``params_sequence`` is either a single NODParams (held constant) or a
    list with at least ``steps`` entries.
    """
    if isinstance(params_sequence, NODParams):
        params_sequence = [params_sequence] * steps
    if len(params_sequence) < steps:
        raise ValueError("params_sequence shorter than number of steps")
    traj = [z0]
    z = z0
    for t in range(steps):
        z = nod_step(z, params_sequence[t], dt, method)
        traj.append(z)
    return traj


# ---------------------------------------------------------------------------
# JSON serialization (schema documented in schemas/nod_params.schema.json)


def params_to_dict(params):
    topo = params.topology
    return {
        "schema_version": SCHEMA_VERSION,
        "topology": {
            "num_agents": topo.num_agents,
            "options_per_agent": list(topo.options_per_agent),
        },
        "damping": np.asarray(params.damping).tolist(),
        "bias": np.asarray(params.bias).tolist(),
        "attention": float(params.attention),
        "self_gain": np.asarray(params.self_gain).tolist(),
        "intra_coupling": [np.asarray(m).tolist() for m in params.intra_coupling],
        "inter_coupling": [
            {"agent": i, "other": j, "gains": np.asarray(m).tolist()}
            for (i, j), m in sorted(params.inter_coupling.items())
        ],
        "saturation": {"s1": params.saturation.s1, "s2": params.saturation.s2},
    }


def params_from_dict(doc):
    topo = Topology(doc["topology"]["num_agents"], tuple(doc["topology"]["options_per_agent"]))
    inter = {
        (entry["agent"], entry["other"]): np.asarray(entry["gains"], dtype=float)
        for entry in doc["inter_coupling"]
    }
    return NODParams(
        topology=topo,
        damping=np.asarray(doc["damping"], dtype=float),
        bias=np.asarray(doc["bias"], dtype=float),
        attention=float(doc["attention"]),
        self_gain=np.asarray(doc["self_gain"], dtype=float),
        intra_coupling=tuple(np.asarray(m, dtype=float) for m in doc["intra_coupling"]),
        inter_coupling=inter,
        saturation=SaturationSpec(**doc["saturation"]),
    )


def save_params(params, path):
    with open(path, "w") as f:
        json.dump(params_to_dict(params), f, indent=2, sort_keys=True)
        f.write("\n")


def load_params(path):
    with open(path) as f:
        return params_from_dict(json.load(f))
