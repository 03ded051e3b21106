"""Stability analysis of the neutral opinion: Jacobians, critical attention,
and empirical verification of indecision breaking."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .opinions import NODParams, OpinionState, simulate_opinions

__all__ = [
    "BifurcationReport", "Lemma1Result", "GrowthReport",
    "jacobian_at_neutral", "check_lemma1", "critical_attention",
    "verify_instability", "bias_unfolding_sweep", "analyze",
]


def jacobian_at_neutral(params: NODParams):
    """Jacobian of the stacked coupling term S(z) at z = 0.

    Returns (J0, barJ0) where barJ0 has the self-gain diagonal zeroed.
    Analytic: the saturations have unit slope at zero, so every gain enters
    linearly.
    """
    topo = params.topology
    n = topo.total_dim
    j0 = np.zeros((n, n))
    for i in range(topo.num_agents):
        ni = topo.options_per_agent[i]
        off_i = topo.offset(i)
        for l in range(ni):
            row = off_i + l
            j0[row, row] = params.self_gain[row]
            for p in range(ni):
                if p != l:
                    j0[row, off_i + p] = params.intra_coupling[i][l, p]
            for j in range(topo.num_agents):
                if j == i:
                    continue
                off_j = topo.offset(j)
                nj = topo.options_per_agent[j]
                gains = params.inter_coupling[(i, j)]
                # column (j, p) exists for p < nj; the coupling term uses it
                # only when p is also one of agent i's option indices
                for p in range(min(ni, nj)):
                    j0[row, off_j + p] = gains[l, p]
    bar = j0.copy()
    np.fill_diagonal(bar, np.diag(bar) - np.asarray(params.self_gain))
    return j0, bar


@dataclass(frozen=True)
class Lemma1Result:
    pairing_defined: bool
    sufficient_condition: Optional[bool]
    witness: Optional[tuple]
    direct_unstable: bool
    max_real_part: float


def _positional_eigenvalues(bar_j0):
    """Pair each eigenvalue of barJ0 with the flat index where its
    eigenvector component dominates; None if the pairing is ambiguous."""
    vals, vecs = np.linalg.eig(bar_j0)
    n = bar_j0.shape[0]
    assignment = {}
    for k in range(n):
        pos = int(np.argmax(np.abs(vecs[:, k])))
        if pos in assignment:
            return None
        assignment[pos] = vals[k]
    if len(assignment) != n:
        return None
    return assignment


def check_lemma1(params: NODParams) -> Lemma1Result:
    """Sufficient self-gain condition for an unstable coupling Jacobian.

    The positional eigenvalue pairing is only defined for diagonalizable
    matrices with an unambiguous dominant-component assignment; the direct
    eigenvalue check on J0 is always computed and is what downstream logic
    consumes.
    """
    j0, bar = jacobian_at_neutral(params)
    try:
        eigs = np.linalg.eigvals(j0)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        raise ArithmeticError(
            f"eigenvalue computation failed (cond={np.linalg.cond(j0):.3e})") from exc
    max_real = float(np.max(eigs.real))
    direct = max_real > 0

    assignment = _positional_eigenvalues(bar)
    topo = params.topology
    if assignment is None:
        return Lemma1Result(False, None, None, direct, max_real)
    witness = None
    for i in range(topo.num_agents):
        for l in range(topo.options_per_agent[i]):
            idx = topo.flat_index(i, l)
            if params.self_gain[idx] + assignment[idx].real > 0:
                witness = (i, l)
                break
        if witness:
            break
    return Lemma1Result(True, witness is not None, witness, direct, max_real)


def critical_attention(params: NODParams) -> Optional[float]:
    """Attention threshold above which the neutral opinion is unstable
    (with zero bias): ||d||_inf / max positive real part of sigma(J0)."""
    j0, _ = jacobian_at_neutral(params)
    eigs = np.linalg.eigvals(j0)
    positive = eigs.real[eigs.real > 0]
    if positive.size == 0:
        return None
    return float(np.max(np.abs(params.damping)) / np.max(positive))


def linearized_rate(params: NODParams, lam: float) -> float:
    """Dominant eigenvalue real part of -D + lam * J0."""
    j0, _ = jacobian_at_neutral(params)
    m = -np.diag(np.asarray(params.damping)) + lam * j0
    return float(np.max(np.linalg.eigvals(m).real))


@dataclass(frozen=True)
class GrowthReport:
    exponent: float
    predicted_rate: float
    positive: bool
    n_samples: int


def verify_instability(params: NODParams, lam: float, perturbation_scale: float,
                       horizon: float, dt: float = 1e-3, seed: int = 0) -> GrowthReport:
    """Simulate from a small random perturbation of z=0 and fit the
    exponential rate of ||z(t)|| in the linear regime."""
    if np.any(np.asarray(params.bias) != 0):
        raise ValueError("verify_instability requires zero bias")
    if perturbation_scale > 1e-4:
        raise ValueError("perturbation_scale must be <= 1e-4")
    rng = np.random.default_rng(seed)
    topo = params.topology
    z0 = perturbation_scale * rng.normal(size=topo.total_dim)
    z0 *= perturbation_scale / np.linalg.norm(z0)
    params = params.with_attention(lam)

    steps = int(round(horizon / dt))
    traj = simulate_opinions(OpinionState(topo, z0), params, dt, steps, method="rk4")
    norms = np.array([np.linalg.norm(z.values) for z in traj])
    times = dt * np.arange(steps + 1)
    predicted = linearized_rate(params, lam)

    if predicted >= 0:
        # growth: fit while the trajectory is past the initial transient but
        # still in the linear regime
        mask = (norms >= 2 * perturbation_scale) & (norms <= 1e-2)
    else:
        # decay: fit the second half of the horizon, where the slowest mode
        # dominates, staying well above the numerical noise floor
        lo = max(1e-13, perturbation_scale * 1e-6)
        mask = (times >= 0.5 * times[-1]) & (norms >= lo)
    if np.count_nonzero(mask) < 10:
        # marginal case: the norm never leaves the perturbation scale, so fit
        # everything past the initial transient
        mask = (times > 0.1 * horizon) & (norms > 1e-13)
    if np.count_nonzero(mask) < 10:
        raise ValueError("horizon too short: fewer than 10 samples in the fit window")
    slope = np.polyfit(times[mask], np.log(norms[mask]), 1)[0]
    return GrowthReport(float(slope), predicted, bool(slope > 0), int(np.count_nonzero(mask)))


@dataclass(frozen=True)
class SweepRow:
    bias: float
    settled: bool
    final_values: np.ndarray
    signs: tuple


def bias_unfolding_sweep(params: NODParams, lam: float, bias_magnitudes,
                         direction=None, dt: float = 0.01, max_steps: int = 200000,
                         settle_tol: float = 1e-10):
    """Settle the dynamics for each bias magnitude and record sign patterns.

    The bias vector is magnitude * direction (default: first coordinate).
    Non-settling rows are flagged, not errors.
    """
    topo = params.topology
    if direction is None:
        direction = np.zeros(topo.total_dim)
        direction[0] = 1.0
    direction = np.asarray(direction, dtype=float)
    rows = []
    for mag in bias_magnitudes:
        p = replace(params.with_attention(lam), bias=mag * direction)
        z = OpinionState.neutral(topo)
        settled = False
        from .opinions import rate_values, step_values
        values = z.values
        for _ in range(max_steps):
            rate = np.asarray(rate_values(values, p))
            if np.max(np.abs(rate)) < settle_tol:
                settled = True
                break
            values = np.asarray(step_values(values, p, dt))
        rows.append(SweepRow(float(mag), settled, values,
                             tuple(int(np.sign(v)) for v in values)))
    return rows


# ---------------------------------------------------------------------------
# report for the CLI `analyze` subcommand


@dataclass(frozen=True)
class BifurcationReport:
    jacobian_full: np.ndarray
    jacobian_reduced: np.ndarray
    alpha_matrix: np.ndarray
    eigenvalues: np.ndarray
    lemma1: Lemma1Result
    max_positive_real: Optional[float]
    critical_attention: Optional[float]

    def to_dict(self):
        return {
            "jacobian_full": self.jacobian_full.tolist(),
            "jacobian_reduced": self.jacobian_reduced.tolist(),
            "alpha_matrix": self.alpha_matrix.tolist(),
            "eigenvalues": [[float(e.real), float(e.imag)] for e in self.eigenvalues],
            "lemma1": {
                "pairing_defined": self.lemma1.pairing_defined,
                "sufficient_condition": self.lemma1.sufficient_condition,
                "witness": list(self.lemma1.witness) if self.lemma1.witness else None,
                "direct_unstable": self.lemma1.direct_unstable,
                "max_real_part": self.lemma1.max_real_part,
            },
            "max_positive_real": self.max_positive_real,
            "critical_attention": self.critical_attention,
        }


def analyze(params: NODParams) -> BifurcationReport:
    j0, bar = jacobian_at_neutral(params)
    eigs = np.linalg.eigvals(j0)
    lemma = check_lemma1(params)
    max_pos = float(np.max(eigs.real)) if np.max(eigs.real) > 0 else None
    return BifurcationReport(
        jacobian_full=j0,
        jacobian_reduced=bar,
        alpha_matrix=np.diag(np.asarray(params.self_gain)),
        eigenvalues=eigs,
        lemma1=lemma,
        max_positive_real=max_pos,
        critical_attention=critical_attention(params),
    )


def save_report(report: BifurcationReport, path):
    with open(path, "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
