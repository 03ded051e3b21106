"""Concrete two-player opinionated games: a full track race and a 1-d race.

Player 0 is the ego, player 1 the rival.  Basis cost labels are ordered to
match the opinion topology: the ego weighs overtake/follow/inside/outside,
the rival weighs block/inside/outside.  The 1-d "line race" keeps the same
structure at minimum size (ego: overtake/follow; rival: block) for fast
training experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .costs import (
    CollisionPenalty,
    ControlEffort,
    CostModel,
    Feature,
    Gaussian,
    Linear,
    LineCtx,
    PlayerCosts,
    ShapedCost,
    Softplus,
    Square,
    TrackCtx,
    arc_gap,
    arc_length,
    heading_error,
    lateral,
    lateral_diff,
    speed,
)
from .dynamics import BicycleDynamics, double_integrator_chain
from .ilq import OpinionatedGame
from .opinions import Topology

EGO = 0
RIVAL = 1

RACE_EGO_OPTIONS = ("overtake", "follow", "inside", "outside")
RACE_RIVAL_OPTIONS = ("block", "inside", "outside")
RACE_TOPOLOGY = Topology(2, (len(RACE_EGO_OPTIONS), len(RACE_RIVAL_OPTIONS)))

LINE_EGO_OPTIONS = ("overtake", "follow")
LINE_RIVAL_OPTIONS = ("block",)
LINE_TOPOLOGY = Topology(2, (len(LINE_EGO_OPTIONS), len(LINE_RIVAL_OPTIONS)))


def _off_track(car, halfwidth, margin, kappa, gain):
    """Softplus barriers on both lane boundaries for one car."""
    limit = halfwidth - margin
    right = ShapedCost(Feature((("lateral", car, 1.0),), limit), Softplus(kappa), gain)
    left = ShapedCost(Feature((("lateral", car, -1.0),), limit), Softplus(kappa), gain)
    return right, left


@dataclass(frozen=True)
class RaceConfig:
    """Constants of the two-car racing game (all units SI)."""

    dt: float = 0.1
    horizon: int = 15
    wheelbase: float = 2.9
    halfwidth: float = 6.0
    v_ref_ego: float = 10.0
    v_ref_rival: float = 8.0
    overtake_margin: float = 4.0      # ego wants s_ego > s_rival + margin
    follow_gap: float = 6.0           # trail point this far behind the rival
    lane_fraction: float = 0.5        # inside/outside target = fraction * halfwidth
    collision_radius: float = 3.8
    collision_gain: float = 20.0
    collision_kappa: float = 0.5
    progress_gain: float = 1.0
    speed_gain: float = 0.2
    heading_gain: float = 0.5
    boundary_margin: float = 0.8
    boundary_kappa: float = 0.3
    boundary_gain: float = 40.0
    overtake_kappa: float = 2.0
    follow_gain: float = 0.05
    lane_gain: float = 0.1
    block_gain: float = 0.1
    accel_bounds: tuple = (-6.0, 4.0)
    steer_bounds: tuple = (-0.35, 0.35)


def racing_game(track, config=None):
    """Two kinematic bicycles on a track with opinion-weighted incentives."""
    cfg = config if config is not None else RaceConfig()
    dyn = BicycleDynamics(2, wheelbase=cfg.wheelbase)
    hw = cfg.halfwidth
    lane = cfg.lane_fraction * hw

    def residual(car, v_ref, with_collision):
        terms = [
            ShapedCost(arc_length(car), Linear(), gain=-cfg.progress_gain),
            ShapedCost(speed(car, target=v_ref), Square(), gain=cfg.speed_gain),
            ShapedCost(heading_error(car), Square(), gain=cfg.heading_gain),
            *_off_track(car, hw, cfg.boundary_margin, cfg.boundary_kappa,
                        cfg.boundary_gain),
            ControlEffort([1.0, 10.0]),
        ]
        if with_collision:
            terms.append(CollisionPenalty(EGO, RIVAL, cfg.collision_radius,
                                          kappa=cfg.collision_kappa,
                                          gain=cfg.collision_gain))
        return tuple(terms)

    ego_basis = (
        ("overtake", ShapedCost(arc_gap(RIVAL, EGO, offset=-cfg.overtake_margin),
                                Softplus(kappa=cfg.overtake_kappa), gain=1.0)),
        ("follow", ShapedCost(arc_gap(EGO, RIVAL, offset=-cfg.follow_gap),
                              Square(), gain=cfg.follow_gain)),
        ("inside", ShapedCost(lateral(EGO, offset=-lane), Square(), gain=cfg.lane_gain)),
        ("outside", ShapedCost(lateral(EGO, offset=lane), Square(), gain=cfg.lane_gain)),
    )
    rival_basis = (
        ("block", ShapedCost(lateral_diff(RIVAL, EGO), Square(), gain=cfg.block_gain)),
        ("inside", ShapedCost(lateral(RIVAL, offset=-lane), Square(), gain=cfg.lane_gain)),
        ("outside", ShapedCost(lateral(RIVAL, offset=lane), Square(), gain=cfg.lane_gain)),
    )
    model = CostModel(
        players=(
            PlayerCosts(residual(EGO, cfg.v_ref_ego, with_collision=True), ego_basis),
            PlayerCosts(residual(RIVAL, cfg.v_ref_rival, with_collision=False),
                        rival_basis),
        ),
        ctx_builder=lambda x: TrackCtx(x, track, num_cars=2))
    lo = np.array([cfg.accel_bounds[0], cfg.steer_bounds[0]] * 2)
    hi = np.array([cfg.accel_bounds[1], cfg.steer_bounds[1]] * 2)
    return OpinionatedGame(dyn, model, cfg.dt, cfg.horizon, control_bounds=(lo, hi))


def race_features(track, x):
    """Seven scaled features of the joint race state for the neural maps:
    arc gap, both lateral offsets, both speeds, both heading errors."""
    ctx = TrackCtx(x, track, num_cars=2)
    gap, _ = arc_gap(EGO, RIVAL).eval(ctx)
    e_e, _ = lateral(EGO).eval(ctx)
    e_r, _ = lateral(RIVAL).eval(ctx)
    v_e, _ = speed(EGO).eval(ctx)
    v_r, _ = speed(RIVAL).eval(ctx)
    h_e, _ = heading_error(EGO).eval(ctx)
    h_r, _ = heading_error(RIVAL).eval(ctx)
    hw = ctx.halfwidth(EGO)
    return ad.avec([ad.div(gap, 10.0), ad.div(e_e, hw), ad.div(e_r, hw),
                    ad.div(v_e, 10.0), ad.div(v_r, 10.0), h_e, h_r])


@dataclass(frozen=True)
class LineConfig:
    """Constants of the 1-d race (per-car state: position, speed)."""

    dt: float = 0.1
    horizon: int = 15
    v_ref_ego: float = 5.0
    v_ref_rival: float = 4.5
    overtake_margin: float = 2.0
    follow_gap: float = 3.0
    proximity_sigma: float = 1.5
    proximity_gain: float = 4.0
    speed_gain: float = 0.5
    effort_gain: float = 0.2
    overtake_kappa: float = 1.0
    follow_gain: float = 0.1
    block_kappa: float = 1.0
    accel_bounds: tuple = (-4.0, 4.0)


def line_race_game(config=None):
    """Two double integrators racing along a line."""
    cfg = config if config is not None else LineConfig()
    dyn = double_integrator_chain(2, cfg.dt)

    ego_residual = (
        ShapedCost(speed(EGO, target=cfg.v_ref_ego), Square(), gain=cfg.speed_gain),
        ShapedCost(arc_gap(EGO, RIVAL), Gaussian(sigma=cfg.proximity_sigma),
                   gain=cfg.proximity_gain),
        ControlEffort([cfg.effort_gain]),
    )
    ego_basis = (
        ("overtake", ShapedCost(arc_gap(RIVAL, EGO, offset=-cfg.overtake_margin),
                                Softplus(kappa=cfg.overtake_kappa), gain=1.0)),
        ("follow", ShapedCost(arc_gap(EGO, RIVAL, offset=-cfg.follow_gap),
                              Square(), gain=cfg.follow_gain)),
    )
    rival_residual = (
        ShapedCost(speed(RIVAL, target=cfg.v_ref_rival), Square(), gain=cfg.speed_gain),
        ControlEffort([cfg.effort_gain]),
    )
    rival_basis = (
        ("block", ShapedCost(arc_gap(EGO, RIVAL, offset=-cfg.overtake_margin),
                             Softplus(kappa=cfg.block_kappa), gain=1.0)),
    )
    model = CostModel(
        players=(PlayerCosts(ego_residual, ego_basis),
                 PlayerCosts(rival_residual, rival_basis)),
        ctx_builder=lambda x: LineCtx(x, num_cars=2))
    lo = np.array([cfg.accel_bounds[0]] * 2)
    hi = np.array([cfg.accel_bounds[1]] * 2)
    return OpinionatedGame(dyn, model, cfg.dt, cfg.horizon, control_bounds=(lo, hi))


def line_features(x):
    """Four scaled features of the 1-d race state."""
    s_e, v_e, s_r, v_r = x[0], x[1], x[2], x[3]
    return ad.avec([ad.div(ad.sub(s_e, s_r), 10.0),
                    ad.div(ad.sub(v_e, v_r), 5.0),
                    ad.div(v_e, 10.0), ad.div(v_r, 10.0)])


def opinion_slices(topology, values):
    """Split a stacked opinion vector into per-agent weight vectors."""
    return [values[topology.agent_slice(i)] for i in range(topology.num_agents)]
