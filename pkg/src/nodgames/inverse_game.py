"""Maximum-likelihood training of opinion controllers from demonstrations.

Episodes hold noisy, partially observed joint-state trajectories.  The loss
is the negative Gaussian log-likelihood of the observations under the
closed-loop rollout of a controller (a neural NOD model or the direct
weight-prediction baseline), and gradients flow through the unrolled
receding-horizon game solves.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .ilq import shift_warm_start, solve_ilq
from .mlp import MLPWeights, init_mlp, mlp_forward, weights_from_dict, weights_to_dict
from .neural_nod import predict_nod_params
from .opinions import step_values

DATASET_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# episodes and datasets


@dataclass(frozen=True)
class Episode:
    """One demonstration: exact initial state plus masked noisy observations."""

    x0: np.ndarray
    observations: np.ndarray  # (T+1, n)
    mask: np.ndarray          # (T+1, n) booleans; True = observed
    dt: float
    source: str = "synthetic"

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float)
        obs = np.asarray(self.observations, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if obs.ndim != 2 or mask.shape != obs.shape or obs.shape[1] != x0.shape[0]:
            raise ValueError("observation and mask arrays must be (T+1, state_dim)")
        if not np.any(mask):
            raise ValueError("episode must contain at least one observed entry")
        if self.dt <= 0 or not np.all(np.isfinite(x0)):
            raise ValueError("dt must be positive and x0 finite")
        if self.source not in ("synthetic", "human-format"):
            raise ValueError(f"unknown episode source {self.source!r}")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "mask", mask)

    @property
    def steps(self):
        return self.observations.shape[0] - 1


@dataclass(frozen=True)
class EpisodeDataset:
    episodes: tuple

    def __post_init__(self):
        object.__setattr__(self, "episodes", tuple(self.episodes))
        if not self.episodes:
            raise ValueError("dataset must contain at least one episode")

    def __len__(self):
        return len(self.episodes)

    def __getitem__(self, idx):
        return self.episodes[idx]


def observation_log_likelihood(episode, states, sigma_obs):
    """Gaussian log-likelihood of masked observations, constant dropped:
    -sum over observed entries of (y - x)^2 / (2 sigma^2)."""
    if sigma_obs <= 0:
        raise ValueError("sigma_obs must be positive")
    if len(states) != episode.observations.shape[0]:
        raise ValueError("trajectory length must match the observations")
    total = 0.0
    for t in range(episode.observations.shape[0]):
        m = episode.mask[t].astype(float)
        if not m.any():
            continue
        r = ad.sub(episode.observations[t], states[t])
        total = ad.add(total, ad.dot(m, ad.mul(r, r)))
    return ad.mul(-1.0 / (2.0 * sigma_obs ** 2), total)


# ---------------------------------------------------------------------------
# opinion controllers


class NeuralNODController:
    """h_z0 seeds the opinion; h_eta drives its dynamics between solves."""

    def __init__(self, eta_weights, z0_weights, decoder, features_fn, dt):
        if eta_weights.output_dim != decoder.raw_dim:
            raise ValueError("eta network output must match the decoder input")
        if z0_weights.output_dim != decoder.opinion_raw_dim:
            raise ValueError("z0 network output must match the opinion dimension")
        self.eta_weights = eta_weights
        self.z0_weights = z0_weights
        self.decoder = decoder
        self.features_fn = features_fn
        self.dt = dt

    @property
    def topology(self):
        return self.decoder.topology

    @property
    def weight_sets(self):
        return (self.eta_weights, self.z0_weights)

    def with_weights(self, sets):
        return NeuralNODController(sets[0], sets[1], self.decoder,
                                   self.features_fn, self.dt)

    def initial_opinion(self, x):
        raw = mlp_forward(self.z0_weights, self.features_fn(x))
        return self.decoder.decode_opinion(raw)

    def advance(self, z, x):
        params = predict_nod_params(self.eta_weights, self.decoder,
                                    self.features_fn(x))
        return step_values(z, params, self.dt)


class MLPIGController:
    """Baseline: the network predicts the stacked cost weights directly."""

    def __init__(self, weights, decoder, features_fn):
        if weights.output_dim != decoder.raw_dim:
            raise ValueError("network output must match the weight dimension")
        self.weights = weights
        self.decoder = decoder
        self.features_fn = features_fn

    @property
    def topology(self):
        return self.decoder.topology

    @property
    def weight_sets(self):
        return (self.weights,)

    def with_weights(self, sets):
        return MLPIGController(sets[0], self.decoder, self.features_fn)

    def initial_opinion(self, x):
        return self.decoder.decode_weights(mlp_forward(self.weights,
                                                       self.features_fn(x)))

    def advance(self, z, x):
        return self.initial_opinion(x)


# ---------------------------------------------------------------------------
# closed-loop rollouts


def closed_loop_rollout(controller, game, x0, steps, train_mode=False,
                        solver_iterations=3, solver_tolerance=1e-3):
    """Receding-horizon rollout: solve the game under the current opinion,
    apply the first joint control, then advance the opinion from the new
    state.  Training mode uses a fixed truncated solver iteration count so
    the whole computation stays smooth and tape-friendly."""
    topo = controller.topology
    z = controller.initial_opinion(x0)
    xs, us, zs = [x0], [], [z]
    warm = None
    x = x0
    for _ in range(steps):
        opinions = [z[topo.agent_slice(i)] for i in range(topo.num_agents)]
        if train_mode:
            sol = solve_ilq(game, x, opinions, warm_start=warm,
                            fixed_iterations=solver_iterations)
        else:
            sol = solve_ilq(game, x, opinions, warm_start=warm,
                            tolerance=solver_tolerance)
        u = sol.controls[0]
        x = sol.states[1]
        warm = shift_warm_start(sol)
        us.append(u)
        xs.append(x)
        z = controller.advance(z, x)
        zs.append(z)
    return xs, us, zs


def rollout_under_neural_nod(eta_weights, z0_weights, x0, game, steps,
                             decoder, features_fn, **kwargs):
    """Convenience wrapper for the neural NOD controller."""
    controller = NeuralNODController(eta_weights, z0_weights, decoder,
                                     features_fn, game.dt)
    return closed_loop_rollout(controller, game, x0, steps, **kwargs)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 8
    sigma_obs: float = 0.1
    solver_iterations: int = 3
    gradient_mode: str = "unrolled"  # or "finite-difference"
    seed: int = 0

    def __post_init__(self):
        if min(self.learning_rate, self.beta1, self.beta2, self.adam_eps,
               self.batch_size, self.sigma_obs, self.solver_iterations) <= 0:
            raise ValueError("training hyperparameters must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.gradient_mode not in ("unrolled", "finite-difference"):
            raise ValueError(f"unknown gradient mode {self.gradient_mode!r}")


@dataclass
class TrainReport:
    losses: list           # per-epoch mean batch loss
    grad_norms: list       # per-epoch mean gradient norm
    wall_time: float       # seconds; excluded from serialized outputs
    weights: tuple         # final weight sets


class TrainAborted(RuntimeError):
    """Training hit a non-finite loss; `.report` holds the partial result."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


def _flatten_sets(weight_sets):
    chunks = []
    for w in weight_sets:
        for mat, bias in w.layers:
            chunks.append(np.ravel(np.asarray(ad.value_of(mat), dtype=float)))
            chunks.append(np.asarray(ad.value_of(bias), dtype=float))
    return np.concatenate(chunks)


def _unflatten_sets(weight_sets, vec):
    out, pos = [], 0
    for w in weight_sets:
        layers = []
        for mat, bias in w.layers:
            mv = np.asarray(ad.value_of(mat))
            bv = np.asarray(ad.value_of(bias))
            layers.append((vec[pos:pos + mv.size].reshape(mv.shape),
                           vec[pos + mv.size:pos + mv.size + bv.size].copy()))
            pos += mv.size + bv.size
        out.append(MLPWeights(tuple(layers), w.activation))
    return tuple(out)


def batch_loss(controller, game, episodes, config):
    """Summed negative log-likelihood over a batch (fixed episode order)."""
    total = 0.0
    for k, ep in enumerate(episodes):
        try:
            xs, _, _ = closed_loop_rollout(
                controller, game, ep.x0, ep.steps, train_mode=True,
                solver_iterations=config.solver_iterations)
        except Exception as err:
            raise RuntimeError(f"rollout failed on batch episode {k}") from err
        total = ad.sub(total, observation_log_likelihood(ep, xs, config.sigma_obs))
    return total


def loss_and_gradient(controller, game, episodes, config):
    """(loss, flat gradient) over one batch of episodes."""
    if not episodes:
        raise ValueError("batch must be nonempty")
    if config.gradient_mode == "finite-difference":
        theta = _flatten_sets(controller.weight_sets)

        def f(vec):
            ctl = controller.with_weights(_unflatten_sets(controller.weight_sets, vec))
            return float(ad.value_of(batch_loss(ctl, game, episodes, config)))

        loss = f(theta)
        grad = np.zeros_like(theta)
        h = 1e-5
        for k in range(theta.size):
            e = np.zeros_like(theta)
            e[k] = h
            grad[k] = (f(theta + e) - f(theta - e)) / (2 * h)
        return loss, grad

    taped = [w.as_leaves() for w in controller.weight_sets]
    ctl = controller.with_weights(tuple(taped))
    out = batch_loss(ctl, game, episodes, config)
    loss = float(ad.value_of(out))
    if ad.is_node(out):
        ad.backward(out)
        chunks = []
        for w in taped:
            for mat, bias in w.layers:
                chunks.append(np.ravel(np.asarray(mat.grad, dtype=float)))
                chunks.append(np.asarray(bias.grad, dtype=float))
        grad = np.concatenate(chunks)
    else:  # loss does not depend on the weights
        grad = np.zeros_like(_flatten_sets(controller.weight_sets))
    return loss, grad


def train(controller, game, dataset, config):
    """Adam loop over shuffled batches; returns the trained controller and
    a report with per-epoch losses and gradient norms."""
    start = time.time()
    rng = np.random.default_rng(config.seed)
    theta = _flatten_sets(controller.weight_sets)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    losses, grad_norms = [], []
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(dataset))
        epoch_losses, epoch_norms = [], []
        for lo in range(0, len(dataset), config.batch_size):
            batch = [dataset[int(i)] for i in order[lo:lo + config.batch_size]]
            ctl = controller.with_weights(
                _unflatten_sets(controller.weight_sets, theta))
            loss, grad = loss_and_gradient(ctl, game, batch, config)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                report = TrainReport(losses, grad_norms, time.time() - start,
                                     _unflatten_sets(controller.weight_sets, theta))
                raise TrainAborted(
                    f"non-finite loss at epoch {len(losses)}, batch {lo}", report)
            step += 1
            m = config.beta1 * m + (1 - config.beta1) * grad
            v = config.beta2 * v + (1 - config.beta2) * grad * grad
            m_hat = m / (1 - config.beta1 ** step)
            v_hat = v / (1 - config.beta2 ** step)
            theta = theta - config.learning_rate * m_hat / (np.sqrt(v_hat)
                                                            + config.adam_eps)
            epoch_losses.append(loss)
            epoch_norms.append(float(np.linalg.norm(grad)))
        losses.append(float(np.mean(epoch_losses)))
        grad_norms.append(float(np.mean(epoch_norms)))
    final_sets = _unflatten_sets(controller.weight_sets, theta)
    report = TrainReport(losses, grad_norms, time.time() - start, final_sets)
    return controller.with_weights(final_sets), report


def train_mlp_ig_baseline(weights, decoder, features_fn, game, dataset, config):
    """Same pipeline with the direct weight-prediction controller."""
    controller = MLPIGController(weights, decoder, features_fn)
    return train(controller, game, dataset, config)


# ---------------------------------------------------------------------------
# synthetic data


def generate_synthetic_dataset(controller, game, n_episodes, steps, noise_sigma,
                               missing_fraction, seed, x0_sampler,
                               train_mode=False, solver_iterations=3):
    """Roll the controller out from randomized initial states and corrupt
    the resulting trajectories with Gaussian noise and random masking."""
    if n_episodes < 1 or steps < 1:
        raise ValueError("need at least one episode and one step")
    if noise_sigma < 0 or not 0 <= missing_fraction < 1:
        raise ValueError("noise must be nonnegative and missing fraction in [0, 1)")
    rng = np.random.default_rng(seed)
    episodes = []
    for _ in range(n_episodes):
        x0 = np.asarray(x0_sampler(rng), dtype=float)
        xs, _, _ = closed_loop_rollout(controller, game, x0, steps,
                                       train_mode=train_mode,
                                       solver_iterations=solver_iterations)
        states = np.array([np.asarray(ad.value_of(x), dtype=float) for x in xs])
        obs = states + noise_sigma * rng.normal(size=states.shape)
        mask = rng.random(size=states.shape) >= missing_fraction
        if not mask.any():
            mask.flat[int(rng.integers(mask.size))] = True
        episodes.append(Episode(x0, obs, mask, game.dt))
    return EpisodeDataset(tuple(episodes))


# ---------------------------------------------------------------------------
# dataset serialization (JSON document, or CSV-per-episode with a manifest)


def dataset_to_dict(dataset):
    return {
        "schema_version": DATASET_SCHEMA_VERSION,
        "episodes": [{
            "x0": [repr(float(v)) for v in ep.x0],
            "observations": [[repr(float(v)) for v in row]
                             for row in ep.observations],
            "mask": [[int(v) for v in row] for row in ep.mask],
            "dt": repr(float(ep.dt)),
            "source": ep.source,
        } for ep in dataset.episodes],
    }


def dataset_from_dict(doc):
    if doc.get("schema_version") != DATASET_SCHEMA_VERSION:
        raise ValueError("unsupported dataset schema version")
    episodes = []
    for e in doc["episodes"]:
        episodes.append(Episode(
            np.array([float(v) for v in e["x0"]]),
            np.array([[float(v) for v in row] for row in e["observations"]]),
            np.array(e["mask"], dtype=bool),
            float(e["dt"]),
            e.get("source", "synthetic")))
    return EpisodeDataset(tuple(episodes))


def save_dataset(dataset, path):
    with open(path, "w") as f:
        json.dump(dataset_to_dict(dataset), f, indent=2, sort_keys=True)
        f.write("\n")


def load_dataset(path):
    with open(path) as f:
        return dataset_from_dict(json.load(f))


def save_dataset_csv(dataset, directory):
    """One CSV per episode plus a JSON manifest, for spreadsheet inspection."""
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"schema_version": DATASET_SCHEMA_VERSION, "episodes": []}
    for k, ep in enumerate(dataset.episodes):
        name = f"episode_{k:04d}.csv"
        n = ep.observations.shape[1]
        with open(directory / name, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["t"] + [f"y{j}" for j in range(n)]
                            + [f"m{j}" for j in range(n)])
            for t in range(ep.observations.shape[0]):
                writer.writerow([t] + [repr(float(v)) for v in ep.observations[t]]
                                + [int(v) for v in ep.mask[t]])
        manifest["episodes"].append({
            "file": name,
            "x0": [repr(float(v)) for v in ep.x0],
            "dt": repr(float(ep.dt)),
            "source": ep.source,
        })
    with open(directory / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_dataset_csv(directory):
    with open(directory / "manifest.json") as f:
        manifest = json.load(f)
    if manifest.get("schema_version") != DATASET_SCHEMA_VERSION:
        raise ValueError("unsupported dataset schema version")
    episodes = []
    for entry in manifest["episodes"]:
        rows = []
        with open(directory / entry["file"], newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            n = (len(header) - 1) // 2
            for row in reader:
                rows.append(row[1:])
        obs = np.array([[float(v) for v in row[:n]] for row in rows])
        mask = np.array([[bool(int(v)) for v in row[n:]] for row in rows])
        episodes.append(Episode(
            np.array([float(v) for v in entry["x0"]]), obs, mask,
            float(entry["dt"]), entry.get("source", "synthetic")))
    return EpisodeDataset(tuple(episodes))
