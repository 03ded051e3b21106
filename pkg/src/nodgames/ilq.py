"""Iterative linear-quadratic solver for opinionated dynamic games.

Repeatedly linearizes the joint dynamics and quadraticizes each player's
opinion-weighted cost along a nominal trajectory, solves the resulting LQ
game for feedback Nash policies, and rolls the policies out with a
backtracking line search on the feedforward term.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .lq_solver import lq_feedback_nash


@dataclass(frozen=True)
class OpinionatedGame:
    """Joint dynamics plus per-player opinion-weighted cost model."""

    dynamics: object
    costs: object  # CostModel
    dt: float
    horizon: int
    control_bounds: tuple = None  # optional (lower, upper) stacked arrays

    def __post_init__(self):
        if self.dt <= 0 or self.horizon < 1:
            raise ValueError("dt must be positive and horizon at least 1")
        if self.control_bounds is not None:
            lo, hi = (np.asarray(v, dtype=float) for v in self.control_bounds)
            if lo.shape != hi.shape or np.any(lo >= hi):
                raise ValueError("control bounds must satisfy lower < upper")
            object.__setattr__(self, "control_bounds", (lo, hi))

    @property
    def num_players(self):
        return self.dynamics.num_players

    @property
    def control_dim(self):
        return sum(self.dynamics.control_dims)

    def clamp_controls(self, u):
        if self.control_bounds is None:
            return u
        lo, hi = self.control_bounds
        # lo + relu(u - lo) - relu(u - hi): box clip, autodiff-safe
        return ad.sub(ad.add(lo, ad.relu(ad.sub(u, lo))), ad.relu(ad.sub(u, hi)))


@dataclass
class EquilibriumSolution:
    states: list          # [T+1] joint states
    controls: list        # [T] stacked controls
    gains: list           # [T][N] feedback gains about `states`
    offsets: list         # [T][N] feedforward terms (≈ 0 at convergence)
    opinions: list        # [T][N] opinion weight schedule used
    player_costs: np.ndarray
    iterations: int
    converged: bool
    final_delta: float = np.inf


class SolverDivergence(RuntimeError):
    """ILQ iterates blew up; `.solution` holds the last finite iterate."""

    def __init__(self, message, solution):
        super().__init__(message)
        self.solution = solution


def _normalize_schedule(game, opinions):
    """Accept a constant per-player list or a length-T schedule of them."""
    num_players = game.num_players
    if len(opinions) == 0:
        raise ValueError("opinions must be a per-player list or a schedule")
    if isinstance(opinions[0], (list, tuple)):
        if len(opinions) != game.horizon:
            raise ValueError("opinion schedule length must equal the horizon")
        schedule = list(opinions)
    else:
        schedule = [list(opinions)] * game.horizon
    for row in schedule:
        if len(row) != num_players:
            raise ValueError("need one opinion weight vector per player")
        for i in range(num_players):
            if len(np.atleast_1d(ad.value_of(row[i]))) != game.costs.num_basis(i):
                raise ValueError(
                    f"opinion weights for player {i} have the wrong length")
    return schedule


def _zero_controls(game):
    return [np.zeros(game.control_dim) for _ in range(game.horizon)]


def _rollout_open_loop(game, x0, controls):
    xs = [x0]
    for t in range(game.horizon):
        xs.append(game.dynamics.step(xs[-1], controls[t], game.dt))
    return xs


def _rollout_policy(game, x0, ref_states, ref_controls, gains, offsets, sigma):
    """Roll out u = clamp(u_ref - P (x - x_ref) - sigma * a)."""
    dyn = game.dynamics
    xs, us = [x0], []
    for t in range(game.horizon):
        dx = ad.sub(xs[-1], ref_states[t])
        parts = []
        for i in range(game.num_players):
            sl = dyn.control_slice(i)
            u_i = ad.sub(ref_controls[t][sl],
                         ad.add(ad.matmul(gains[t][i], dx),
                                ad.mul(sigma, offsets[t][i])))
            parts.append(u_i)
        u = game.clamp_controls(ad.concat(parts))
        us.append(u)
        xs.append(dyn.step(xs[-1], u, game.dt))
    return xs, us


def total_player_costs(game, states, controls, schedule):
    """Per-player trajectory costs (stage sum plus terminal state cost)."""
    model = game.costs
    totals = [0.0] * game.num_players
    for t in range(game.horizon):
        ctx = model.make_ctx(states[t])
        for i in range(game.num_players):
            u_own = controls[t][game.dynamics.control_slice(i)]
            totals[i] = ad.add(
                totals[i], model.stage_cost(i, states[t], u_own, schedule[t][i], ctx))
    ctx = model.make_ctx(states[-1])
    for i in range(game.num_players):
        totals[i] = ad.add(
            totals[i], model.terminal_cost(i, states[-1], schedule[-1][i], ctx))
    return totals


def _lq_approximation(game, states, controls, schedule):
    dyn, model = game.dynamics, game.costs
    a_seq, b_seq, q_seq, r_seq = [], [], [], []
    for t in range(game.horizon):
        a_t, b_t = dyn.linearize(states[t], controls[t], game.dt)
        a_seq.append(a_t)
        b_seq.append(b_t)
        ctx = model.make_ctx(states[t])
        q_row, r_row = [], []
        for i in range(game.num_players):
            u_own = controls[t][dyn.control_slice(i)]
            q_mat, q_vec, r_mat, r_vec = model.quadraticize(
                i, states[t], u_own, schedule[t][i], ctx)
            q_row.append((q_mat, q_vec))
            r_row.append((r_mat, r_vec))
        q_seq.append(q_row)
        r_seq.append(r_row)
    ctx = model.make_ctx(states[-1])
    q_term = []
    for i in range(game.num_players):
        q_mat, q_vec, _, _ = model.quadraticize(
            i, states[-1], None, schedule[-1][i], ctx, terminal=True)
        q_term.append((q_mat, q_vec))
    return a_seq, b_seq, q_seq, r_seq, q_term


def _as_solution(game, states, controls, gains, offsets, schedule,
                 iterations, converged, final_delta=np.inf, compute_costs=True):
    if compute_costs:
        totals = total_player_costs(game, states, controls, schedule)
        costs = np.array([float(ad.value_of(c)) for c in totals])
    else:
        costs = None  # skipped in training mode; recompute on demand
    return EquilibriumSolution(
        states=states, controls=controls, gains=gains, offsets=offsets,
        opinions=schedule, player_costs=costs,
        iterations=iterations, converged=converged, final_delta=final_delta)


def _trajectory_delta(xs_new, us_new, xs_old, us_old):
    d = 0.0
    for a, b in zip(list(xs_new) + list(us_new), list(xs_old) + list(us_old)):
        d = max(d, float(np.max(np.abs(np.asarray(ad.value_of(a))
                                       - np.asarray(ad.value_of(b))))))
    return d


def shift_warm_start(solution):
    """Receding-horizon warm start: drop stage 0, repeat the final stage."""
    return EquilibriumSolution(
        states=list(solution.states[1:]) + [solution.states[-1]],
        controls=list(solution.controls[1:]) + [solution.controls[-1]],
        gains=list(solution.gains[1:]) + [solution.gains[-1]],
        offsets=list(solution.offsets[1:]) + [solution.offsets[-1]],
        opinions=solution.opinions,
        player_costs=solution.player_costs,
        iterations=solution.iterations,
        converged=solution.converged,
        final_delta=solution.final_delta)


def solve_ilq(game, x0, opinions, initial_controls=None, warm_start=None,
              max_iterations=50, tolerance=1e-3, fixed_iterations=None,
              divergence_threshold=1e6,
              step_sizes=(1.0, 0.5, 0.25, 0.125, 1 / 16, 1 / 32, 1 / 64)):
    """Find approximate feedback Nash policies of an opinionated game.

    `opinions` is either one weight vector per player (held constant) or a
    length-`horizon` schedule of such lists.  The reported `iterations`
    counts policy updates that moved the trajectory by at least `tolerance`
    (an LQ game needs one; a warm start at the solution needs none).

    With `fixed_iterations` set, exactly that many full-step updates run with
    no line search or convergence checks; this keeps the computation smooth
    in its inputs and works on taped quantities for training.
    """
    schedule = _normalize_schedule(game, opinions)

    if warm_start is not None:
        xs, us = _rollout_policy(game, x0, warm_start.states, warm_start.controls,
                                 warm_start.gains, warm_start.offsets, sigma=1.0)
        gains, offsets = warm_start.gains, warm_start.offsets
    else:
        us = initial_controls if initial_controls is not None else _zero_controls(game)
        xs = _rollout_open_loop(game, x0, us)
        gains = offsets = None

    if fixed_iterations is not None:
        for _ in range(fixed_iterations):
            lq = _lq_approximation(game, xs, us, schedule)
            gains, offsets = lq_feedback_nash(*lq)
            xs, us = _rollout_policy(game, x0, xs, us, gains, offsets, sigma=1.0)
        return _as_solution(game, xs, us, gains, offsets, schedule,
                            fixed_iterations, converged=False, compute_costs=False)

    best_cost = float(sum(ad.value_of(c) for c in
                          total_player_costs(game, xs, us, schedule)))
    iterations = 0
    converged = False
    delta = np.inf
    for _ in range(max_iterations):
        lq = _lq_approximation(game, xs, us, schedule)
        new_gains, new_offsets = lq_feedback_nash(*lq)

        # backtracking on the feedforward: take the largest step that either
        # improves the summed cost or contracts the trajectory delta (near a
        # Nash fixed point the summed cost may legitimately rise)
        accepted = None
        fallback = None
        for sigma in step_sizes:
            cand_xs, cand_us = _rollout_policy(
                game, x0, xs, us, new_gains, new_offsets, sigma)
            cost = sum(float(ad.value_of(c)) for c in
                       total_player_costs(game, cand_xs, cand_us, schedule))
            if not np.isfinite(cost):
                continue
            cand_delta = _trajectory_delta(cand_xs, cand_us, xs, us)
            fallback = (cand_xs, cand_us, cost, cand_delta)
            if (cost <= best_cost + 1e-9 * (1.0 + abs(best_cost))
                    or cand_delta <= 0.9 * delta):
                accepted = fallback
                break
        gains, offsets = new_gains, new_offsets
        if accepted is None:
            accepted = fallback  # smallest stable step keeps iterating
        if accepted is None:
            sol = _as_solution(game, xs, us, gains, offsets, schedule,
                               iterations, converged=False, final_delta=delta)
            raise SolverDivergence("every ILQ step produced non-finite cost", sol)
        cand_xs, cand_us, cost, cand_delta = accepted
        state_norm = max(float(np.max(np.abs(np.asarray(ad.value_of(x)))))
                         for x in cand_xs)
        if state_norm > divergence_threshold:
            sol = _as_solution(game, xs, us, gains, offsets, schedule,
                               iterations, converged=False, final_delta=delta)
            raise SolverDivergence("ILQ iterates diverged", sol)
        delta = cand_delta
        xs, us, best_cost = cand_xs, cand_us, cost
        if delta < tolerance:
            converged = True
            break
        iterations += 1

    if gains is None:  # max_iterations == 0 edge case
        lq = _lq_approximation(game, xs, us, schedule)
        gains, offsets = lq_feedback_nash(*lq)
    return _as_solution(game, xs, us, gains, offsets, schedule,
                        iterations, converged, final_delta=delta)


def save_solution(solution, path):
    """CSV export: one row per stage with state, control, opinion weights."""
    states = [np.asarray(ad.value_of(x), dtype=float) for x in solution.states]
    controls = [np.asarray(ad.value_of(u), dtype=float) for u in solution.controls]
    z_rows = [np.concatenate([np.atleast_1d(np.asarray(ad.value_of(z), dtype=float))
                              for z in row]) for row in solution.opinions]
    n = len(states[0])
    m = len(controls[0]) if controls else 0
    k = len(z_rows[0]) if z_rows else 0
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t"] + [f"x{j}" for j in range(n)]
                        + [f"u{j}" for j in range(m)] + [f"z{j}" for j in range(k)])
        for t, x in enumerate(states):
            u = controls[t] if t < len(controls) else np.full(m, np.nan)
            z = z_rows[t] if t < len(z_rows) else np.full(k, np.nan)
            writer.writerow([t] + [repr(float(v)) for v in x]
                            + [repr(float(v)) for v in u]
                            + [repr(float(v)) for v in z])
