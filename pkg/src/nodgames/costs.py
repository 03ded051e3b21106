"""Stage costs for opinionated dynamic games.

Each state-dependent term is a smooth scalar profile applied to a feature
that is affine in the joint state at the evaluation point (track-frame
coordinates are affine in position once the nearest segment is fixed).
That makes values, gradients, and Hessians closed-form and autodiff-safe,
which the iterative LQ solver needs for its quadraticization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

# ---------------------------------------------------------------------------
# evaluation contexts


class LineCtx:
    """Context for the 1-d race: per-car state (arc length, speed)."""

    def __init__(self, x, num_cars):
        self.x = x
        self.num_cars = num_cars
        self.state_dim = 2 * num_cars

    def arc_length(self, car):
        g = np.zeros(self.state_dim)
        g[2 * car] = 1.0
        return self.x[2 * car], g

    def speed(self, car):
        g = np.zeros(self.state_dim)
        g[2 * car + 1] = 1.0
        return self.x[2 * car + 1], g

    def lateral(self, car):
        return 0.0, np.zeros(self.state_dim)

    def heading_error(self, car):
        return 0.0, np.zeros(self.state_dim)

    def halfwidth(self, car):
        return np.inf

    def position_rows(self, car):
        return None  # no 2-d positions in this model


class TrackCtx:
    """Track-frame context for bicycle states (x, y, heading, speed)."""

    def __init__(self, x, track, num_cars):
        self.x = x
        self.track = track
        self.num_cars = num_cars
        self.state_dim = 4 * num_cars
        self._frames = []
        for i in range(num_cars):
            px, py = x[4 * i], x[4 * i + 1]
            seg = track.nearest_segment((px, py))
            s, e, t, n = track.frame(px, py, seg)
            gs = np.zeros(self.state_dim)
            gs[4 * i], gs[4 * i + 1] = t
            ge = np.zeros(self.state_dim)
            ge[4 * i], ge[4 * i + 1] = n
            self._frames.append({
                "s": s, "e": e, "grad_s": gs, "grad_e": ge,
                "angle": track.tangent_angle(seg),
                "halfwidth": track.halfwidth_at(float(ad.value_of(s))),
            })
        # constant offsets that bring all cars' arc lengths into one chart
        # on a closed track (value-level; constants do not affect gradients)
        self._s_shift = [0.0] * num_cars
        if track.closed and num_cars > 1:
            ref = float(ad.value_of(self._frames[0]["s"]))
            half = 0.5 * track.length
            for i in range(1, num_cars):
                raw = float(ad.value_of(self._frames[i]["s"]))
                d = raw - ref
                while d > half:
                    d -= track.length
                    self._s_shift[i] -= track.length
                while d < -half:
                    d += track.length
                    self._s_shift[i] += track.length

    def arc_length(self, car):
        f = self._frames[car]
        return f["s"] + self._s_shift[car], f["grad_s"]

    def lateral(self, car):
        f = self._frames[car]
        return f["e"], f["grad_e"]

    def speed(self, car):
        g = np.zeros(self.state_dim)
        g[4 * car + 3] = 1.0
        return self.x[4 * car + 3], g

    def heading_error(self, car):
        f = self._frames[car]
        g = np.zeros(self.state_dim)
        g[4 * car + 2] = 1.0
        th = self.x[4 * car + 2]
        err = th - f["angle"]
        # wrap by value only; the constant shift keeps gradients intact
        shift = 2 * np.pi * np.round(float(ad.value_of(err)) / (2 * np.pi))
        return err - shift, g

    def halfwidth(self, car):
        return self._frames[car]["halfwidth"]

    def position_rows(self, car):
        rows = np.zeros((2, self.state_dim))
        rows[0, 4 * car] = 1.0
        rows[1, 4 * car + 1] = 1.0
        return rows


# ---------------------------------------------------------------------------
# features (affine in x at the evaluation point)


@dataclass(frozen=True)
class Feature:
    """Linear combination of named context channels minus a constant."""

    channels: tuple  # ((name, car, coeff), ...)
    offset: float = 0.0

    def eval(self, ctx):
        value = -self.offset
        grad = np.zeros(ctx.state_dim)
        for name, car, coeff in self.channels:
            v, g = getattr(ctx, name)(car)
            value = value + coeff * v
            grad = grad + coeff * g
        return value, grad


def arc_length(car):
    return Feature((("arc_length", car, 1.0),))


def arc_gap(front, back, offset=0.0):
    """Arc length of `front` minus `back`, minus offset."""
    return Feature((("arc_length", front, 1.0), ("arc_length", back, -1.0)), offset)


def lateral(car, offset=0.0):
    return Feature((("lateral", car, 1.0),), offset)


def lateral_diff(a, b):
    return Feature((("lateral", a, 1.0), ("lateral", b, -1.0)))


def speed(car, target=0.0):
    return Feature((("speed", car, 1.0),), target)


def heading_error(car):
    return Feature((("heading_error", car, 1.0),))


# ---------------------------------------------------------------------------
# scalar profiles


class Square:
    nonnegative = True

    def f(self, w):
        return ad.mul(w, w)

    def df(self, w):
        return 2.0 * w

    def d2f(self, w):
        return 2.0 if not ad.is_node(w) else ad.add(ad.mul(w, 0.0), 2.0)


class Linear:
    nonnegative = False

    def f(self, w):
        return w

    def df(self, w):
        return 1.0 if not ad.is_node(w) else ad.add(ad.mul(w, 0.0), 1.0)

    def d2f(self, w):
        return 0.0


@dataclass(frozen=True)
class Softplus:
    """kappa * softplus(w / kappa): smooth hinge at w = 0."""

    kappa: float = 1.0
    nonnegative = True

    def f(self, w):
        return self.kappa * ad.softplus(ad.div(w, self.kappa))

    def df(self, w):
        return ad.sigmoid(ad.div(w, self.kappa))

    def d2f(self, w):
        s = ad.sigmoid(ad.div(w, self.kappa))
        return ad.div(ad.mul(s, 1.0 - s), self.kappa)


@dataclass(frozen=True)
class Gaussian:
    """exp(-w^2 / (2 sigma^2)): smooth proximity bump."""

    sigma: float = 1.0
    nonnegative = True

    def f(self, w):
        return ad.exp(ad.div(ad.mul(w, -w), 2.0 * self.sigma ** 2))

    def df(self, w):
        return ad.mul(ad.div(-w, self.sigma ** 2), self.f(w))

    def d2f(self, w):
        fw = self.f(w)
        w2 = ad.mul(w, w)
        return ad.mul(ad.div(w2, self.sigma ** 4) - 1.0 / self.sigma ** 2, fw)


# ---------------------------------------------------------------------------
# cost terms


class ShapedCost:
    """gain * profile(feature value); state-dependent only."""

    kind = "state"

    def __init__(self, feature, profile, gain=1.0):
        self.feature = feature
        self.profile = profile
        self.gain = gain

    @property
    def nonnegative(self):
        return self.profile.nonnegative and self.gain >= 0

    def value(self, x, u, ctx):
        w, _ = self.feature.eval(ctx)
        return ad.mul(self.gain, self.profile.f(w))

    def quad(self, x, u, ctx):
        """(Hessian, gradient) with respect to the joint state."""
        w, a = self.feature.eval(ctx)
        g = ad.mul(ad.mul(self.gain, self.profile.df(w)), a)
        h = ad.mul(ad.mul(self.gain, self.profile.d2f(w)), np.outer(a, a))
        return h, g


class ControlEffort:
    """Quadratic penalty on a player's own control: u' diag(r) u."""

    kind = "control"
    nonnegative = True

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=float)
        if np.any(self.weights < 0):
            raise ValueError("control effort weights must be nonnegative")

    def value(self, x, u_own, ctx):
        return ad.dot(self.weights, ad.mul(u_own, u_own))

    def quad(self, x, u_own, ctx):
        """(Hessian, gradient) with respect to the player's own control."""
        h = 2.0 * np.diag(self.weights)
        g = ad.mul(2.0 * self.weights, u_own)
        return h, g


class CollisionPenalty:
    """gain * kappa * softplus((radius - distance) / kappa) between two cars.

    Exact gradient and Hessian through the Euclidean distance.
    """

    kind = "state"
    nonnegative = True

    def __init__(self, car_a, car_b, radius, kappa=0.5, gain=1.0, eps=1e-9):
        self.car_a, self.car_b = car_a, car_b
        self.radius, self.kappa, self.gain, self.eps = radius, kappa, gain, eps

    def _distance(self, ctx):
        rows_a = ctx.position_rows(self.car_a)
        rows_b = ctx.position_rows(self.car_b)
        if rows_a is None:
            raise ValueError("collision penalty needs 2-d positions")
        sel = rows_a - rows_b  # (2, n_x), constant
        rel = ad.matmul(sel, ctx.x)
        d = ad.sqrt(ad.dot(rel, rel) + self.eps)
        return d, rel, sel

    def value(self, x, u, ctx):
        d, _, _ = self._distance(ctx)
        return self.gain * self.kappa * ad.softplus(ad.div(self.radius - d, self.kappa))

    def quad(self, x, u, ctx):
        d, rel, sel = self._distance(ctx)
        sig = ad.sigmoid(ad.div(self.radius - d, self.kappa))
        dphi = ad.mul(-self.gain, sig)                       # d cost / d distance
        d2phi = ad.div(ad.mul(self.gain, ad.mul(sig, 1.0 - sig)), self.kappa)

        nhat = ad.div(rel, d)                                 # unit separation, len 2
        grad_d = ad.matmul(ad.transpose(sel), nhat)           # (n_x,)
        g = ad.mul(dphi, grad_d)

        outer_n = ad.stack([ad.mul(nhat[0], nhat), ad.mul(nhat[1], nhat)])
        hess_d = ad.div(
            ad.matmul(ad.matmul(ad.transpose(sel), ad.sub(np.eye(2), outer_n)), sel), d)
        n_x = len(ad.value_of(grad_d))
        outer_gd = ad.stack([ad.mul(grad_d[i], grad_d) for i in range(n_x)])
        h = ad.add(ad.mul(d2phi, outer_gd), ad.mul(dphi, hess_d))
        return h, g


class CompositeCost:
    """Sum of state-dependent terms, usable as a single basis cost."""

    kind = "state"

    def __init__(self, terms):
        self.terms = tuple(terms)
        if any(t.kind != "state" for t in self.terms):
            raise ValueError("composite cost terms must be state-dependent")

    @property
    def nonnegative(self):
        return all(t.nonnegative for t in self.terms)

    def value(self, x, u, ctx):
        total = 0.0
        for t in self.terms:
            total = ad.add(total, t.value(x, u, ctx))
        return total

    def quad(self, x, u, ctx):
        h_total, g_total = None, None
        for t in self.terms:
            h, g = t.quad(x, u, ctx)
            h_total = h if h_total is None else ad.add(h_total, h)
            g_total = g if g_total is None else ad.add(g_total, g)
        return h_total, g_total


# ---------------------------------------------------------------------------
# per-player cost model


@dataclass(frozen=True)
class PlayerCosts:
    residual: tuple
    basis: tuple  # ((label, term), ...)

    def __post_init__(self):
        labels = [label for label, _ in self.basis]
        if len(set(labels)) != len(labels):
            raise ValueError("basis cost labels must be unique per player")
        for label, term in self.basis:
            if not term.nonnegative:
                raise ValueError(f"basis cost {label!r} is not nonnegative by construction")

    @property
    def labels(self):
        return tuple(label for label, _ in self.basis)


@dataclass(frozen=True)
class CostModel:
    players: tuple
    ctx_builder: object = None  # callable x -> ctx

    def num_basis(self, player):
        return len(self.players[player].basis)

    def make_ctx(self, x):
        return self.ctx_builder(x)

    def stage_cost(self, player, x, u_own, z_player, ctx):
        """Residual plus opinion-weighted basis sum for one player."""
        pc = self.players[player]
        if len(np.atleast_1d(ad.value_of(z_player))) != len(pc.basis):
            raise ValueError("opinion slice length must match number of basis costs")
        total = 0.0
        for term in pc.residual:
            total = ad.add(total, term.value(x, u_own, ctx))
        for k, (_, term) in enumerate(pc.basis):
            total = ad.add(total, ad.mul(z_player[k], term.value(x, u_own, ctx)))
        return total

    def terminal_cost(self, player, x, z_player, ctx):
        """State-dependent part of the stage cost, for the final state."""
        pc = self.players[player]
        total = 0.0
        for term in pc.residual:
            if term.kind == "state":
                total = ad.add(total, term.value(x, None, ctx))
        for k, (_, term) in enumerate(pc.basis):
            if term.kind == "state":
                total = ad.add(total, ad.mul(z_player[k], term.value(x, None, ctx)))
        return total

    def quadraticize(self, player, x, u_own, z_player, ctx, terminal=False):
        """Second-order model: (Q, q) in state and (R, r) in own control."""
        pc = self.players[player]
        n = ctx.state_dim
        m = len(np.atleast_1d(ad.value_of(u_own))) if u_own is not None else 0
        q_mat, q_vec = np.zeros((n, n)), np.zeros(n)
        r_mat, r_vec = np.zeros((m, m)), np.zeros(m)

        def accumulate(term, weight):
            nonlocal q_mat, q_vec, r_mat, r_vec
            if term.kind == "control":
                if terminal or u_own is None:
                    return
                h, g = term.quad(x, u_own, ctx)
                r_mat = ad.add(r_mat, ad.mul(weight, h))
                r_vec = ad.add(r_vec, ad.mul(weight, g))
            else:
                h, g = term.quad(x, u_own, ctx)
                q_mat = ad.add(q_mat, ad.mul(weight, h))
                q_vec = ad.add(q_vec, ad.mul(weight, g))

        for term in pc.residual:
            accumulate(term, 1.0)
        for k, (_, term) in enumerate(pc.basis):
            accumulate(term, z_player[k])
        return q_mat, q_vec, r_mat, r_vec
