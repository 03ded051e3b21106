"""Closed-loop two-car racing: policies, race loop, metrics, trials.

Each policy controls one car and sees the joint state.  The simulator steps
the joint bicycle dynamics, terminates on collision or the ego leaving the
track, and logs everything needed for the safe-rate / overtaking-rate /
end-time-lead metrics.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .dynamics import BicycleDynamics
from .games import EGO, RIVAL, RaceConfig, racing_game
from .ilq import shift_warm_start, solve_ilq
from .track import ArcUnwrapper

# disc-disc collision model: radius = half the vehicle diagonal
VEHICLE_LENGTH = 3.0
VEHICLE_WIDTH = 1.6
COLLISION_RADIUS = 0.5 * float(np.hypot(VEHICLE_LENGTH, VEHICLE_WIDTH))


# ---------------------------------------------------------------------------
# policies


class GamePolicy:
    """Receding-horizon ILQ policy with fixed opinion weights."""

    def __init__(self, game, opinions, player, solver_tolerance=1e-3,
                 max_iterations=6):
        self.game = game
        self.opinions = [np.asarray(z, dtype=float) for z in opinions]
        self.player = player
        self.solver_tolerance = solver_tolerance
        self.max_iterations = max_iterations
        self._warm = None

    @property
    def current_opinion(self):
        return np.concatenate(self.opinions)

    def control(self, x):
        sol = solve_ilq(self.game, x, self.opinions, warm_start=self._warm,
                        tolerance=self.solver_tolerance,
                        max_iterations=self.max_iterations)
        self._warm = shift_warm_start(sol)
        return np.asarray(sol.controls[0])[self.game.dynamics.control_slice(self.player)]

    def observe(self, x):
        pass

    def reset(self, x):
        self._warm = None


class OpinionControllerPolicy:
    """Wraps an opinion controller (neural NOD or the direct baseline)."""

    def __init__(self, controller, game, player=EGO, solver_tolerance=1e-3,
                 max_iterations=6):
        self.controller = controller
        self.game = game
        self.player = player
        self.solver_tolerance = solver_tolerance
        self.max_iterations = max_iterations
        self._z = None
        self._warm = None

    @property
    def current_opinion(self):
        return None if self._z is None else np.asarray(ad.value_of(self._z))

    def control(self, x):
        if self._z is None:
            self._z = self.controller.initial_opinion(x)
        topo = self.controller.topology
        opinions = [self._z[topo.agent_slice(i)] for i in range(topo.num_agents)]
        sol = solve_ilq(self.game, x, opinions, warm_start=self._warm,
                        tolerance=self.solver_tolerance,
                        max_iterations=self.max_iterations)
        self._warm = shift_warm_start(sol)
        return np.asarray(sol.controls[0])[self.game.dynamics.control_slice(self.player)]

    def observe(self, x):
        if self._z is not None:
            self._z = self.controller.advance(self._z, x)

    def reset(self, x):
        """Opinion re-initialization hook (used at endurance respawns)."""
        self._z = self.controller.initial_opinion(x)
        self._warm = None


class StationaryPolicy:
    """An obstacle: zero control (the speed clamp keeps it parked)."""

    current_opinion = None

    def control(self, x):
        return np.zeros(2)

    def observe(self, x):
        pass

    def reset(self, x):
        pass


class CenterlinePolicy:
    """Rule-based driving: track the centerline at a target speed."""

    current_opinion = None

    def __init__(self, track, target_speed, player, k_lateral=0.08,
                 k_heading=0.8, k_speed=1.5, steer_limit=0.35, accel_limit=4.0):
        self.track = track
        self.target_speed = target_speed
        self.player = player
        self.k_lateral = k_lateral
        self.k_heading = k_heading
        self.k_speed = k_speed
        self.steer_limit = steer_limit
        self.accel_limit = accel_limit

    def control(self, x):
        o = 4 * self.player
        px, py, th, v = x[o], x[o + 1], x[o + 2], x[o + 3]
        seg = self.track.nearest_segment((px, py))
        _, e, _, _ = self.track.frame(px, py, seg)
        herr = th - self.track.tangent_angle(seg)
        herr = (herr + np.pi) % (2 * np.pi) - np.pi
        steer = np.clip(-self.k_lateral * e - self.k_heading * herr,
                        -self.steer_limit, self.steer_limit)
        accel = np.clip(self.k_speed * (self.target_speed - v),
                        -self.accel_limit, self.accel_limit)
        return np.array([accel, steer])

    def observe(self, x):
        pass

    def reset(self, x):
        pass


# ---------------------------------------------------------------------------
# race loop


@dataclass
class RaceLog:
    states: list            # [k+1] joint states
    controls: list          # [k] joint controls
    opinions: list          # [k] (ego opinion vector or None, rival ditto)
    leads: list             # [k+1] signed ego arc lead over the rival [m]
    reason: str             # time-limit | collision | off-track | error:<msg>
    rival_off_track: bool   # logged but never terminal
    dt: float

    @property
    def steps(self):
        return len(self.controls)

    @property
    def safe(self):
        return self.reason == "time-limit"

    @property
    def overtook(self):
        """Started at or behind, finished ahead, and stayed safe."""
        return self.safe and self.leads[0] <= 0.0 and self.leads[-1] > 0.0


def _clearance(x):
    return float(np.hypot(x[0] - x[4], x[1] - x[5]))


def run_race(ego_policy, rival_policy, track, x0, step_limit,
             dt=0.1, wheelbase=2.9, collision_radius=COLLISION_RADIUS):
    """Simulate until collision, ego off-track, or the step limit."""
    dyn = BicycleDynamics(2, wheelbase=wheelbase)
    x = np.asarray(x0, dtype=float)
    ego_arc = ArcUnwrapper(track, track.project(x[0:2])[0])
    rival_arc = ArcUnwrapper(track, track.project(x[4:6])[0])
    lead0 = ego_arc.total - rival_arc.total
    if track.closed:  # start both unwrapped arcs in the same chart
        half = 0.5 * track.length
        lead0 = (lead0 + half) % track.length - half
        rival_arc.total = ego_arc.total - lead0
    log = RaceLog(states=[x], controls=[], opinions=[], leads=[lead0],
                  reason="time-limit", rival_off_track=False, dt=dt)
    for _ in range(step_limit):
        try:
            u_e = np.asarray(ego_policy.control(x), dtype=float)
            u_r = np.asarray(rival_policy.control(x), dtype=float)
        except Exception as err:  # noqa: BLE001 - policy errors abort the log
            log.reason = f"error:{err}"
            return log
        u = np.concatenate([u_e, u_r])
        x = np.asarray(dyn.step(x, u, dt), dtype=float)
        ego_policy.observe(x)
        rival_policy.observe(x)
        log.controls.append(u)
        log.opinions.append((ego_policy.current_opinion,
                             rival_policy.current_opinion))
        log.states.append(x)
        s_e = ego_arc.update(track.project(x[0:2])[0])
        s_r = rival_arc.update(track.project(x[4:6])[0])
        log.leads.append(s_e - s_r)
        if _clearance(x) < 2.0 * collision_radius:
            log.reason = "collision"
            return log
        s_abs, e_e = track.project(x[0:2])
        if abs(e_e) > track.halfwidth_at(s_abs):
            log.reason = "off-track"
            return log
        s_riv, e_r = track.project(x[4:6])
        if abs(e_r) > track.halfwidth_at(s_riv):
            log.rival_off_track = True  # non-terminal: the ego carries the duty of care
    return log


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class RaceMetrics:
    safe_rate: float        # percent
    overtake_rate: float    # percent; numerator counts only safe trials
    lead_mean: float        # signed end-time lead [m], all trials
    lead_std: float         # population standard deviation [m]
    n_trial: int
    n_safe: int
    n_overtake: int


def compute_metrics(logs):
    """SR, OR, and end-time lead statistics over a list of race logs."""
    if not logs:
        raise ValueError("need at least one race log")
    n = len(logs)
    n_safe = sum(1 for log in logs if log.safe)
    n_overtake = sum(1 for log in logs if log.overtook)
    leads = np.array([log.leads[-1] for log in logs], dtype=float)
    return RaceMetrics(
        safe_rate=100.0 * n_safe / n,
        overtake_rate=100.0 * n_overtake / n,
        lead_mean=float(np.mean(leads)),
        lead_std=float(np.std(leads)),  # population std
        n_trial=n, n_safe=n_safe, n_overtake=n_overtake)


# ---------------------------------------------------------------------------
# randomized trials


@dataclass(frozen=True)
class TrialConfig:
    """Initial-condition randomization ranges for two-car trials."""

    gap_range: tuple = (4.0, 12.0)      # rival this far ahead of the ego [m]
    offset_fraction: float = 0.5        # lateral offsets within ± this * halfwidth
    speed_range: tuple = (8.0, 14.0)
    step_limit: int = 100
    ego_start_arc: float = 10.0


def sample_initial_state(track, rng, trial_config):
    """Random on-track two-car start: rival ahead, both roughly aligned."""
    tc = trial_config
    s_e = tc.ego_start_arc
    s_r = s_e + rng.uniform(*tc.gap_range)
    cars = []
    for s in (s_e, s_r):
        e = rng.uniform(-1.0, 1.0) * tc.offset_fraction * track.halfwidth_at(s)
        p = track.point_at(s, e)
        cars.extend([p[0], p[1], track.heading_at(s), rng.uniform(*tc.speed_range)])
    return np.array(cars)


def randomized_trials(ego_policy_factory, track, n, seed, rival_weight_range,
                      race_config=None, trial_config=None, game=None, workers=1):
    """n seeded races against blocking rivals with randomized weights.

    Initial states and rival weights come from separate seed streams, so
    changing the weight range leaves the initial states untouched.  Returns
    (metrics, per-trial row dicts).  Individual race errors count as unsafe.
    Trials are independent; `workers > 1` runs them in a thread pool with
    results merged in trial order, so the output does not depend on workers.
    """
    if n < 1:
        raise ValueError("need at least one trial")
    if workers < 1:
        raise ValueError("workers must be at least 1")
    cfg = race_config if race_config is not None else RaceConfig()
    tc = trial_config if trial_config is not None else TrialConfig()
    if game is None:
        game = racing_game(track, cfg)
    init_ss, weight_ss = np.random.SeedSequence(seed).spawn(2)
    init_rngs = [np.random.default_rng(s) for s in init_ss.spawn(n)]
    weight_rngs = [np.random.default_rng(s) for s in weight_ss.spawn(n)]

    def one_trial(k):
        x0 = sample_initial_state(track, init_rngs[k], tc)
        w_block = weight_rngs[k].uniform(*rival_weight_range)
        rival = GamePolicy(game, [np.zeros(4), np.array([w_block, 0.0, 0.0])],
                           player=RIVAL)
        ego = ego_policy_factory()
        log = run_race(ego, rival, track, x0, tc.step_limit, dt=cfg.dt,
                       wheelbase=cfg.wheelbase)
        row = {
            "trial": k,
            "rival_block_weight": w_block,
            "reason": log.reason,
            "steps": log.steps,
            "lead_initial": log.leads[0],
            "lead_final": log.leads[-1],
            "safe": int(log.safe),
            "overtake": int(log.overtook),
        }
        return log, row

    if workers == 1:
        results = [one_trial(k) for k in range(n)]
    else:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_trial, range(n)))
    logs = [log for log, _ in results]
    rows = [row for _, row in results]
    return compute_metrics(logs), rows


def save_trial_rows(rows, path, header_comment=None):
    fields = ["trial", "rival_block_weight", "reason", "steps",
              "lead_initial", "lead_final", "safe", "overtake"]
    with open(path, "w", newline="") as f:
        if header_comment:
            f.write(f"# {header_comment}\n")
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for key in ("rival_block_weight", "lead_initial", "lead_final"):
                out[key] = repr(float(out[key]))
            writer.writerow(out)


# ---------------------------------------------------------------------------
# endurance mode


@dataclass(frozen=True)
class EnduranceSummary:
    overtakes: int
    collisions: int
    steps: int
    finish_time: float      # seconds; step_limit * dt when the lap is unfinished
    lap_completed: bool


def endurance_race(ego_policy, track, step_limit, respawn_gap, seed,
                   rival_factory=None, race_config=None,
                   overtake_clearance=6.0, collision_radius=COLLISION_RADIUS):
    """One lap of a closed track against a chain of respawning rivals.

    Each rival the ego clears by `overtake_clearance` meters despawns and a
    fresh one spawns `respawn_gap` meters ahead; the ego's opinion state is
    re-initialized through its reset hook at every respawn.  Collisions are
    counted and trigger a respawn instead of ending the run.  Passing
    `respawn_gap=None` disables rivals entirely (pure time trial).
    """
    if not track.closed:
        raise ValueError("endurance mode needs a closed track")
    cfg = race_config if race_config is not None else RaceConfig()
    dyn = BicycleDynamics(2, wheelbase=cfg.wheelbase)
    rng = np.random.default_rng(seed)

    def spawn(s_ego, v_ego):
        s = s_ego + (respawn_gap if respawn_gap is not None else 0.25 * track.length)
        p = track.point_at(s, 0.0)
        rival = (rival_factory(rng) if rival_factory is not None
                 else CenterlinePolicy(track, target_speed=0.6 * cfg.v_ref_ego,
                                       player=RIVAL))
        return np.array([p[0], p[1], track.heading_at(s), 0.6 * v_ego]), rival

    s0 = 0.0
    p0 = track.point_at(s0, 0.0)
    v0 = 0.8 * cfg.v_ref_ego
    rival_state, rival_policy = spawn(s0, v0)
    x = np.concatenate([[p0[0], p0[1], track.heading_at(s0), v0], rival_state])
    ego_policy.reset(x)

    ego_arc = ArcUnwrapper(track, track.project(x[0:2])[0])
    rival_arc = ArcUnwrapper(track, track.project(x[4:6])[0])
    rival_arc.total = ego_arc.total + (respawn_gap or 0.25 * track.length)

    overtakes = 0
    collisions = 0
    lap_completed = False
    steps = 0
    start_total = ego_arc.total
    states = [x]
    for steps in range(1, step_limit + 1):
        u_e = np.asarray(ego_policy.control(x), dtype=float)
        u_r = (np.asarray(rival_policy.control(x), dtype=float)
               if respawn_gap is not None else np.zeros(2))
        x = np.asarray(dyn.step(x, np.concatenate([u_e, u_r]), cfg.dt), dtype=float)
        states.append(x)
        ego_policy.observe(x)
        rival_policy.observe(x)
        s_e = ego_arc.update(track.project(x[0:2])[0])
        s_r = rival_arc.update(track.project(x[4:6])[0])

        if respawn_gap is not None:
            collided = _clearance(x) < 2.0 * collision_radius
            if collided:
                collisions += 1
            if collided or s_e - s_r > overtake_clearance:
                if not collided:
                    overtakes += 1
                rival_state, rival_policy = spawn(track.project(x[0:2])[0], x[3])
                x = np.concatenate([x[:4], rival_state])
                rival_arc = ArcUnwrapper(track, track.project(x[4:6])[0])
                rival_arc.total = s_e + respawn_gap
                ego_policy.reset(x)

        if s_e - start_total >= track.length:
            lap_completed = True
            break
    summary = EnduranceSummary(
        overtakes=overtakes, collisions=collisions, steps=steps,
        finish_time=steps * cfg.dt, lap_completed=lap_completed)
    return states, summary
