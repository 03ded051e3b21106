"""Joint multi-vehicle dynamics models with analytic linearizations.

All step/linearize functions accept plain arrays or autodiff Nodes, so the
same model drives both fast simulation and taped training rollouts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class LinearDynamics:
    """x+ = A x + sum_i B_i u_i (dt baked into the matrices)."""

    a: np.ndarray
    b_list: tuple

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "b_list", tuple(np.asarray(b, dtype=float) for b in self.b_list))

    @property
    def state_dim(self):
        return self.a.shape[0]

    @property
    def num_players(self):
        return len(self.b_list)

    @property
    def control_dims(self):
        return tuple(b.shape[1] for b in self.b_list)

    def control_slice(self, player):
        off = sum(self.control_dims[:player])
        return slice(off, off + self.control_dims[player])

    def step(self, x, u, dt=None):
        out = ad.matmul(self.a, x)
        for i, b in enumerate(self.b_list):
            out = ad.add(out, ad.matmul(b, u[self.control_slice(i)]))
        return out

    def linearize(self, x, u, dt=None):
        return self.a, list(self.b_list)


def double_integrator_chain(num_players, dt):
    """Per-player (position, speed) with acceleration control, stacked."""
    blk_a = np.array([[1.0, dt], [0.0, 1.0]])
    a = np.kron(np.eye(num_players), blk_a)
    b_list = []
    for i in range(num_players):
        b = np.zeros((2 * num_players, 1))
        b[2 * i] = 0.5 * dt * dt
        b[2 * i + 1] = dt
        b_list.append(b)
    return LinearDynamics(a, tuple(b_list))


@dataclass(frozen=True)
class BicycleDynamics:
    """Kinematic bicycle per vehicle: state (x, y, heading, speed),
    control (acceleration, steering angle); speed clamped at zero."""

    num_vehicles: int
    wheelbase: float = 2.9

    def __post_init__(self):
        if self.wheelbase <= 0:
            raise ValueError("wheelbase must be positive")

    @property
    def state_dim(self):
        return 4 * self.num_vehicles

    @property
    def num_players(self):
        return self.num_vehicles

    @property
    def control_dims(self):
        return (2,) * self.num_vehicles

    def control_slice(self, player):
        return slice(2 * player, 2 * player + 2)

    def step(self, x, u, dt):
        if dt <= 0:
            raise ValueError("dt must be positive")
        parts = []
        for i in range(self.num_vehicles):
            px, py, th, v = (x[4 * i + k] for k in range(4))
            acc, steer = u[2 * i], u[2 * i + 1]
            parts.append(ad.avec([
                px + v * ad.cos(th) * dt,
                py + v * ad.sin(th) * dt,
                th + v * ad.tan(steer) * dt / self.wheelbase,
                ad.relu(v + acc * dt),
            ]))
        return ad.concat(parts)

    def linearize(self, x, u, dt):
        """Analytic Jacobians of step at (x, u): returns (A, B per player)."""
        n = self.state_dim
        rows = [[1.0 if r == c else 0.0 for c in range(n)] for r in range(n)]
        b_list = []
        for i in range(self.num_vehicles):
            o = 4 * i
            th, v = x[o + 2], x[o + 3]
            acc, steer = u[2 * i], u[2 * i + 1]
            moving = float(ad.value_of(v) + ad.value_of(acc) * dt > 0.0)
            rows[o][o + 2] = -v * ad.sin(th) * dt
            rows[o][o + 3] = ad.cos(th) * dt
            rows[o + 1][o + 2] = v * ad.cos(th) * dt
            rows[o + 1][o + 3] = ad.sin(th) * dt
            rows[o + 2][o + 3] = ad.tan(steer) * dt / self.wheelbase
            rows[o + 3][o + 3] = moving

            cos_s = ad.cos(steer)
            b_rows = [[0.0, 0.0] for _ in range(n)]
            b_rows[o + 2][1] = v * dt / (self.wheelbase * cos_s * cos_s)
            b_rows[o + 3][0] = moving * dt
            b_list.append(ad.amat(b_rows))
        return ad.amat(rows), b_list
