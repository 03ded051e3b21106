"""Command-line pipeline: dataset generation, training, bifurcation
analysis, single races, randomized trials, and endurance runs.

Option precedence is flags > config file > built-in defaults.  Every output
file embeds the tool version, a hash of the resolved configuration, and the
seed, and re-running with the same triple reproduces the bytes exactly.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bifurcation import analyze as analyze_params
from .games import (
    EGO,
    LINE_TOPOLOGY,
    RACE_TOPOLOGY,
    LineConfig,
    RaceConfig,
    line_features,
    line_race_game,
    opinion_slices,
    race_features,
    racing_game,
)
from .inverse_game import (
    MLPIGController,
    NeuralNODController,
    TrainConfig,
    dataset_to_dict,
    generate_synthetic_dataset,
    load_dataset,
    train,
)
from .mlp import init_mlp, mlp_forward, weights_from_dict, weights_to_dict
from .neural_nod import DirectWeightDecoder, ParamDecoder
from .opinions import load_params, params_to_dict
from .race import (
    CenterlinePolicy,
    GamePolicy,
    OpinionControllerPolicy,
    TrialConfig,
    endurance_race,
    randomized_trials,
    run_race,
    sample_initial_state,
    save_trial_rows,
)
from .track import make_track

WEIGHTS_SCHEMA_VERSION = 1


class UsageError(Exception):
    """Bad flags or config values detected before any work starts."""


# ---------------------------------------------------------------------------
# option resolution


DEFAULTS = {
    "gen-data": {
        "out": "dataset.json",
        "game": "race",
        "track": "straight",
        "episodes": 4,
        "steps": 3,
        "noise-sigma": 0.05,
        "missing-fraction": 0.0,
        "hidden": 8,
        "layers": 2,
        "horizon": 8,
        "solver-iterations": 1,
        "z-max": 5.0,
        "seed": 0,
    },
    "train": {
        "data": None,
        "out": "weights.json",
        "report-out": "train_report.json",
        "params-out": "nod_params.json",
        "controller": "nod",
        "game": "race",
        "track": "straight",
        "hidden": 8,
        "layers": 2,
        "horizon": 8,
        "epochs": 2,
        "learning-rate": 1e-2,
        "batch-size": 4,
        "sigma-obs": 0.1,
        "solver-iterations": 1,
        "gradient-mode": "unrolled",
        "z-max": 5.0,
        "seed": 0,
    },
    "analyze": {
        "params": None,
        "out": "bifurcation.json",
        "spectrum-csv": None,
        "seed": 0,
    },
    "race": {
        "track": "straight",
        "ego": "game",
        "weights": None,
        "ego-weights": "2,0,0,1,0,0,0",
        "rival-block-weight": 10.0,
        "steps": 40,
        "horizon": 15,
        "max-iterations": 6,
        "out": "race_log.csv",
        "summary-out": "race_summary.json",
        "seed": 0,
    },
    "trials": {
        "track": "straight",
        "ego": "game",
        "weights": None,
        "ego-weights": "2,0,0,1,0,0,0",
        "n": 4,
        "weight-lo": 0.0,
        "weight-hi": 30.0,
        "step-limit": 60,
        "horizon": 15,
        "max-iterations": 6,
        "workers": 1,
        "out": "trials.csv",
        "metrics-out": "metrics.json",
        "seed": 0,
    },
    "endurance": {
        "track": "oval",
        "ego": "centerline",
        "weights": None,
        "ego-weights": "2,0,0,1,0,0,0",
        "steps": 300,
        "respawn-gap": 40.0,
        "horizon": 8,
        "max-iterations": 4,
        "out": "endurance.json",
        "seed": 0,
    },
}


def _add_options(parser, name):
    parser.add_argument("--config", help="JSON config file (flat or keyed "
                                         "by subcommand)")
    parser.add_argument("--out-dir", help="output directory (or env "
                                          "NODGAMES_OUT_DIR); default .")
    for key, default in DEFAULTS[name].items():
        kind = type(default) if default is not None else str
        if kind is bool:
            kind = int
        parser.add_argument(f"--{key}", type=kind, default=None,
                            dest=key.replace("-", "_"))


def _resolve(args, name):
    """Merge flags over the config file over the defaults."""
    defaults = DEFAULTS[name]
    file_cfg = {}
    if args.config:
        try:
            with open(args.config) as f:
                doc = json.load(f)
        except (OSError, json.JSONDecodeError) as err:
            raise UsageError(f"cannot read config file: {err}")
        file_cfg = doc.get(name, doc if not any(k in DEFAULTS for k in doc)
                           else {})
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys for {name}: "
                             f"{sorted(unknown)}")
    resolved = {}
    for key, default in defaults.items():
        flag = getattr(args, key.replace("-", "_"))
        value = flag if flag is not None else file_cfg.get(key, default)
        if default is not None and value is not None:
            value = type(default)(value)
        resolved[key] = value
    return resolved


def _config_hash(resolved):
    blob = json.dumps(resolved, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _meta(resolved):
    return {
        "tool_version": __version__,
        "config_hash": _config_hash(resolved),
        "seed": resolved.get("seed", 0),
    }


def _out_dir(args):
    if args.out_dir:
        d = Path(args.out_dir)
    elif os.environ.get("NODGAMES_OUT_DIR"):
        d = Path(os.environ["NODGAMES_OUT_DIR"])
    else:
        d = Path(".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _out_path(out_dir, name):
    p = Path(name)
    return p if p.is_absolute() else out_dir / p


def _write_json(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# shared builders


def _hidden_dims(resolved):
    return [int(resolved["hidden"])] * int(resolved["layers"])


def _build_game(resolved, track):
    if resolved["game"] == "race":
        game = racing_game(track, RaceConfig(horizon=int(resolved["horizon"])))
        return game, RACE_TOPOLOGY, (lambda x: race_features(track, x))
    if resolved["game"] == "line":
        game = line_race_game(LineConfig(horizon=int(resolved["horizon"])))
        return game, LINE_TOPOLOGY, line_features
    raise UsageError(f"unknown game {resolved['game']!r}")


def _feature_dim(resolved):
    return 7 if resolved["game"] == "race" else 4


def _build_controller(resolved, rng, features_fn, topology, dt):
    feat_dim = _feature_dim(resolved)
    hidden = _hidden_dims(resolved)
    if resolved["controller"] == "nod":
        decoder = ParamDecoder(topology, z_max=float(resolved["z-max"]))
        eta = init_mlp(rng, [feat_dim] + hidden + [decoder.raw_dim])
        z0 = init_mlp(rng, [feat_dim] + hidden + [decoder.opinion_raw_dim])
        return NeuralNODController(eta, z0, decoder, features_fn, dt)
    if resolved["controller"] == "mlp-ig":
        decoder = DirectWeightDecoder(topology, z_max=float(resolved["z-max"]))
        net = init_mlp(rng, [feat_dim] + hidden + [decoder.raw_dim])
        return MLPIGController(net, decoder, features_fn)
    raise UsageError(f"unknown controller {resolved['controller']!r}")


def _save_controller(controller, path, meta, game_name, dt, z_max):
    doc = {
        "meta": meta,
        "schema_version": WEIGHTS_SCHEMA_VERSION,
        "controller": "nod" if isinstance(controller, NeuralNODController)
                      else "mlp-ig",
        "game": game_name,
        "dt": repr(float(dt)),
        "z_max": repr(float(z_max)),
        "weights": [weights_to_dict(w) for w in controller.weight_sets],
    }
    _write_json(path, doc)


def _load_controller(path, track):
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as err:
        raise UsageError(f"cannot read weights file: {err}")
    if doc.get("schema_version") != WEIGHTS_SCHEMA_VERSION:
        raise UsageError("unsupported weights schema version")
    game_name = doc["game"]
    if game_name == "race":
        topo = RACE_TOPOLOGY
        feats = lambda x, _t=track: race_features(_t, x)  # noqa: E731
    else:
        topo, feats = LINE_TOPOLOGY, line_features
    sets = [weights_from_dict(w) for w in doc["weights"]]
    z_max = float(doc["z_max"])
    if doc["controller"] == "nod":
        decoder = ParamDecoder(topo, z_max=z_max)
        ctl = NeuralNODController(sets[0], sets[1], decoder, feats,
                                  float(doc["dt"]))
    else:
        ctl = MLPIGController(sets[0], DirectWeightDecoder(topo, z_max=z_max),
                              feats)
    return ctl, game_name


def _ego_factory(resolved, game, track):
    kind = resolved["ego"]
    max_it = int(resolved.get("max-iterations", 6))
    if kind == "game":
        vec = np.array([float(v) for v in resolved["ego-weights"].split(",")])
        if len(vec) != RACE_TOPOLOGY.total_dim:
            raise UsageError(f"--ego-weights needs "
                             f"{RACE_TOPOLOGY.total_dim} comma-separated values")
        slices = [np.array(s) for s in opinion_slices(RACE_TOPOLOGY, vec)]
        return lambda: GamePolicy(game, slices, player=EGO,
                                  max_iterations=max_it)
    if kind in ("nod", "mlp-ig"):
        if not resolved.get("weights"):
            raise UsageError(f"--weights is required for ego {kind!r}")
        controller, game_name = _load_controller(resolved["weights"], track)
        if game_name != "race":
            raise UsageError("racing commands need weights trained on the "
                             "race game")
        want_nod = kind == "nod"
        if want_nod != isinstance(controller, NeuralNODController):
            raise UsageError(f"weights file holds a "
                             f"{'nod' if not want_nod else 'mlp-ig'} "
                             f"controller, but ego {kind!r} was requested")
        return lambda: OpinionControllerPolicy(controller, game, player=EGO,
                                               max_iterations=max_it)
    if kind == "centerline":
        return lambda: CenterlinePolicy(track, target_speed=9.0, player=EGO)
    raise UsageError(f"unknown ego policy {kind!r}")


def _line_x0_sampler(rng):
    return np.array([0.0, rng.uniform(3.0, 6.0),
                     rng.uniform(2.0, 8.0), rng.uniform(2.0, 5.0)])


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    resolved = _resolve(args, "gen-data")
    out = _out_path(_out_dir(args), resolved["out"])
    track = make_track(resolved["track"]) if resolved["game"] == "race" else None
    game, topo, feats = _build_game(resolved, track)
    seed = int(resolved["seed"])
    teacher_ss, data_ss = np.random.SeedSequence(seed).spawn(2)
    resolved_ctl = dict(resolved, controller="nod")
    teacher = _build_controller(resolved_ctl, np.random.default_rng(teacher_ss),
                                feats, topo, game.dt)
    if resolved["game"] == "race":
        sampler = lambda rng: sample_initial_state(track, rng, TrialConfig())  # noqa: E731
    else:
        sampler = _line_x0_sampler
    dataset = generate_synthetic_dataset(
        teacher, game,
        n_episodes=int(resolved["episodes"]), steps=int(resolved["steps"]),
        noise_sigma=float(resolved["noise-sigma"]),
        missing_fraction=float(resolved["missing-fraction"]),
        seed=data_ss, x0_sampler=sampler,
        train_mode=True, solver_iterations=int(resolved["solver-iterations"]))
    doc = dataset_to_dict(dataset)
    doc["meta"] = _meta(resolved)
    _write_json(out, doc)
    print(f"wrote {len(dataset)} episodes to {out}")
    return 0


def cmd_train(args):
    resolved = _resolve(args, "train")
    if not resolved["data"]:
        raise UsageError("--data is required")
    out_dir = _out_dir(args)
    out = _out_path(out_dir, resolved["out"])
    report_out = _out_path(out_dir, resolved["report-out"])
    try:
        dataset = load_dataset(resolved["data"])
    except (OSError, json.JSONDecodeError, ValueError, KeyError) as err:
        raise UsageError(f"cannot read dataset: {err}")
    track = make_track(resolved["track"]) if resolved["game"] == "race" else None
    game, topo, feats = _build_game(resolved, track)
    seed = int(resolved["seed"])
    controller = _build_controller(resolved, np.random.default_rng(seed),
                                   feats, topo, game.dt)
    config = TrainConfig(
        learning_rate=float(resolved["learning-rate"]),
        epochs=int(resolved["epochs"]),
        batch_size=int(resolved["batch-size"]),
        sigma_obs=float(resolved["sigma-obs"]),
        solver_iterations=int(resolved["solver-iterations"]),
        gradient_mode=resolved["gradient-mode"],
        seed=seed)
    trained, report = train(controller, game, dataset, config)
    meta = _meta(resolved)
    _save_controller(trained, out, meta, resolved["game"], game.dt,
                     float(resolved["z-max"]))
    _write_json(report_out, {
        "meta": meta,
        "losses": [repr(v) for v in report.losses],
        "grad_norms": [repr(v) for v in report.grad_norms],
    })
    if isinstance(trained, NeuralNODController) and resolved["params-out"]:
        # decoded opinion-dynamics parameters at the first episode's initial
        # state, for the analyze subcommand
        raw = mlp_forward(trained.eta_weights, feats(dataset[0].x0))
        doc = params_to_dict(trained.decoder.decode_params(raw))
        doc["meta"] = meta
        _write_json(_out_path(out_dir, resolved["params-out"]), doc)
    last = report.losses[-1] if report.losses else float("nan")
    print(f"trained {resolved['controller']} for {config.epochs} epochs "
          f"(final loss {last:.6g}); wrote {out}")
    return 0


def cmd_analyze(args):
    resolved = _resolve(args, "analyze")
    if not resolved["params"]:
        raise UsageError("--params is required")
    out_dir = _out_dir(args)
    out = _out_path(out_dir, resolved["out"])
    try:
        params = load_params(resolved["params"])
    except (OSError, json.JSONDecodeError, ValueError, KeyError) as err:
        raise UsageError(f"cannot read params file: {err}")
    report = analyze_params(params)
    _write_json(out, {"meta": _meta(resolved), "report": report.to_dict()})
    if resolved["spectrum-csv"]:
        spath = _out_path(out_dir, resolved["spectrum-csv"])
        with open(spath, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["index", "real", "imag"])
            for i, e in enumerate(report.eigenvalues):
                writer.writerow([i, repr(float(e.real)), repr(float(e.imag))])
    lam = report.critical_attention
    print(f"max Re eigenvalue {float(np.max(report.eigenvalues.real)):.6g}, "
          f"critical attention "
          f"{'undefined' if lam is None else format(lam, '.6g')}; wrote {out}")
    return 0


def _save_race_log(log, path, meta):
    n = len(log.states[0])
    m = len(log.controls[0]) if log.controls else 4
    with open(path, "w", newline="") as f:
        f.write(f"# tool_version={meta['tool_version']} "
                f"config_hash={meta['config_hash']} seed={meta['seed']}\n")
        writer = csv.writer(f)
        writer.writerow(["t"] + [f"x{j}" for j in range(n)]
                        + [f"u{j}" for j in range(m)] + ["lead"])
        for k, x in enumerate(log.states):
            u = ([repr(float(v)) for v in log.controls[k]]
                 if k < len(log.controls) else [""] * m)
            writer.writerow([repr(k * log.dt)]
                            + [repr(float(v)) for v in x] + u
                            + [repr(float(log.leads[k]))])


def cmd_race(args):
    resolved = _resolve(args, "race")
    out_dir = _out_dir(args)
    out = _out_path(out_dir, resolved["out"])
    summary_out = _out_path(out_dir, resolved["summary-out"])
    track = make_track(resolved["track"])
    cfg = RaceConfig(horizon=int(resolved["horizon"]))
    game = racing_game(track, cfg)
    resolved_g = dict(resolved, game="race")
    ego = _ego_factory(resolved_g, game, track)()
    w = float(resolved["rival-block-weight"])
    rival = GamePolicy(game, [np.zeros(4), np.array([w, 0.0, 0.0])],
                       player=1, max_iterations=int(resolved["max-iterations"]))
    rng = np.random.default_rng(int(resolved["seed"]))
    x0 = sample_initial_state(track, rng, TrialConfig())
    log = run_race(ego, rival, track, x0, int(resolved["steps"]),
                   dt=cfg.dt, wheelbase=cfg.wheelbase)
    meta = _meta(resolved)
    _save_race_log(log, out, meta)
    _write_json(summary_out, {
        "meta": meta,
        "reason": log.reason,
        "steps": log.steps,
        "safe": log.safe,
        "overtake": log.overtook,
        "lead_initial": repr(float(log.leads[0])),
        "lead_final": repr(float(log.leads[-1])),
    })
    print(f"race ended after {log.steps} steps ({log.reason}); "
          f"final lead {log.leads[-1]:.2f} m; wrote {out}")
    return 0


def cmd_trials(args):
    resolved = _resolve(args, "trials")
    out_dir = _out_dir(args)
    out = _out_path(out_dir, resolved["out"])
    metrics_out = _out_path(out_dir, resolved["metrics-out"])
    if int(resolved["n"]) < 1:
        raise UsageError("--n must be at least 1")
    if int(resolved["workers"]) < 1:
        raise UsageError("--workers must be at least 1")
    track = make_track(resolved["track"])
    cfg = RaceConfig(horizon=int(resolved["horizon"]))
    game = racing_game(track, cfg)
    resolved_g = dict(resolved, game="race")
    factory = _ego_factory(resolved_g, game, track)
    tc = TrialConfig(step_limit=int(resolved["step-limit"]))
    metrics, rows = randomized_trials(
        factory, track, int(resolved["n"]), int(resolved["seed"]),
        (float(resolved["weight-lo"]), float(resolved["weight-hi"])),
        race_config=cfg, trial_config=tc, game=game,
        workers=int(resolved["workers"]))
    meta = _meta(resolved)
    save_trial_rows(rows, out,
                    header_comment=f"tool_version={meta['tool_version']} "
                                   f"config_hash={meta['config_hash']} "
                                   f"seed={meta['seed']}")
    _write_json(metrics_out, {
        "meta": meta,
        "safe_rate": repr(metrics.safe_rate),
        "overtake_rate": repr(metrics.overtake_rate),
        "lead_mean": repr(metrics.lead_mean),
        "lead_std": repr(metrics.lead_std),
        "n_trial": metrics.n_trial,
        "n_safe": metrics.n_safe,
        "n_overtake": metrics.n_overtake,
    })
    print(f"{metrics.n_trial} trials: SR {metrics.safe_rate:.1f}%, "
          f"OR {metrics.overtake_rate:.1f}%, "
          f"lead {metrics.lead_mean:.2f} +- {metrics.lead_std:.2f} m; "
          f"wrote {out}")
    return 0


def cmd_endurance(args):
    resolved = _resolve(args, "endurance")
    out_dir = _out_dir(args)
    out = _out_path(out_dir, resolved["out"])
    track = make_track(resolved["track"])
    if not track.closed:
        raise UsageError("endurance mode needs a closed track")
    cfg = RaceConfig(horizon=int(resolved["horizon"]))
    game = racing_game(track, cfg)
    resolved_g = dict(resolved, game="race")
    ego = _ego_factory(resolved_g, game, track)()
    gap = float(resolved["respawn-gap"])
    states, summary = endurance_race(
        ego, track, int(resolved["steps"]),
        respawn_gap=(gap if gap > 0 else None),
        seed=int(resolved["seed"]), race_config=cfg)
    _write_json(out, {
        "meta": _meta(resolved),
        "overtakes": summary.overtakes,
        "collisions": summary.collisions,
        "steps": summary.steps,
        "finish_time": repr(summary.finish_time),
        "lap_completed": summary.lap_completed,
    })
    print(f"endurance: {summary.overtakes} overtakes, "
          f"{summary.collisions} collisions, "
          f"lap {'completed' if summary.lap_completed else 'not completed'} "
          f"in {summary.finish_time:.1f} s; wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# entry point


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "analyze": cmd_analyze,
    "race": cmd_race,
    "trials": cmd_trials,
    "endurance": cmd_endurance,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nodgames",
        description="Neural opinion dynamics for game cost tuning: data "
                    "generation, training, analysis, and racing simulation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in COMMANDS:
        _add_options(sub.add_parser(name), name)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return err.code if err.code is not None else 0
    try:
        return COMMANDS[args.subcommand](args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - one-line diagnostic, exit 1
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
