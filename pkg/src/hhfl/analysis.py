"""Bound evaluators, time and resource models, and convergence comparisons."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import (IncompleteConstants, InsufficientData, InvalidBoundConfig,
                     NoConvergence)
from .learner import ProblemConstants


# --------------------------------------------------------------------------
# bounds


def _drift_factor(E: int, G: int) -> float:
    return (G * E + G - 2) * ((G * E - 1) + E * E * (G - 1))


def drift_bound(E: int, G: int, H_sq: float, eta_t: float) -> float:
    """Upper bound on ``E sum_i p_i ||wbar^t - w_i^t||^2`` at step t."""
    if E < 1 or G < 1:
        raise ValueError("E and G must be >= 1")
    return eta_t ** 2 * 4.0 ** G * H_sq * _drift_factor(E, G)


def corollary2_X(constants: ProblemConstants, p, E: int, G: int) -> float:
    """Per-step noise constant of the one-step recursion of the optimality distance."""
    if constants.gamma is None or constants.sigma_sq is None:
        raise IncompleteConstants("X needs sigma_sq, L, H_sq and the optimality gap Gamma")
    p = np.asarray(p, dtype=float)
    sigma_sq = np.asarray(constants.sigma_sq, dtype=float)
    if sigma_sq.shape != p.shape:
        raise IncompleteConstants("sigma_sq must have one entry per client")
    noise = float(np.sum(p ** 2 * sigma_sq))
    return noise + 6.0 * constants.L * constants.gamma + 2.0 ** (2 * G + 1) * constants.H_sq * _drift_factor(E, G)


@dataclass(frozen=True)
class BoundConfig:
    constants: ProblemConstants
    p: np.ndarray
    E: int
    G: int
    beta: float
    alpha: float
    delta0: float

    def check(self) -> None:
        mu, L = self.constants.mu, self.constants.L
        if mu is None or mu <= 0:
            raise InvalidBoundConfig("mu > 0 required (strong convexity)")
        if not self.beta > 1.0 / mu:
            raise InvalidBoundConfig(f"beta > 1/mu violated: beta={self.beta}, 1/mu={1.0 / mu}")
        if not self.alpha >= self.E > 0:
            raise InvalidBoundConfig(f"alpha >= E > 0 violated: alpha={self.alpha}, E={self.E}")
        eta0 = self.beta / self.alpha
        limit = min(1.0 / mu, 1.0 / (4.0 * L))
        if not eta0 <= limit:
            raise InvalidBoundConfig(f"eta0 <= min(1/mu, 1/(4L)) violated: eta0={eta0}, limit={limit}")

    @property
    def Z(self) -> float:
        X = corollary2_X(self.constants, self.p, self.E, self.G)
        mu = self.constants.mu
        return max(self.beta ** 2 * X / (self.beta * mu + 1.0), self.delta0 * self.alpha)


def theorem1_bound(cfg: BoundConfig, t) -> float | np.ndarray:
    """``(L/2) Z / (t + alpha)``; accepts a scalar step or an array of steps."""
    cfg.check()
    out = 0.5 * cfg.constants.L * cfg.Z / (np.asarray(t, dtype=float) + cfg.alpha)
    return float(out) if np.ndim(out) == 0 else out


def disagreement(p, client_params) -> float:
    """``sum_i p_i ||wbar - w_i||^2`` for one state."""
    p = np.asarray(p, float)
    w = np.asarray(client_params, float)
    wbar = p @ w
    return float(p @ np.sum((w - wbar) ** 2, axis=1))


def compare_disagreement(trace_hfl, trace_hhfl) -> dict:
    """Measured drift of two runs: per-step arrays and their means."""
    return {
        "hfl": trace_hfl.drift,
        "hhfl": trace_hhfl.drift,
        "hfl_mean": float(np.mean(trace_hfl.drift)),
        "hhfl_mean": float(np.mean(trace_hhfl.drift)),
    }


# --------------------------------------------------------------------------
# time and resources


@dataclass(frozen=True)
class TimeModel:
    """Time in units of one E-step block of local computation."""

    ratio_ces: float = 10.0
    ratio_ecs: float = 10.0
    t_sgd_unit: float = 1.0

    def __post_init__(self):
        if not (self.ratio_ces > 0 and self.ratio_ecs > 0 and self.t_sgd_unit > 0):
            raise ValueError("time-model ratios must be positive")


def overall_time(T: int, schedule, tm: TimeModel) -> float:
    """Computation plus ES-client and CS-ES communication time for T steps."""
    if T < 1:
        raise ValueError("T must be >= 1")
    E, G = schedule.E, schedule.G
    return (T / E
            + math.ceil(T / E) * tm.ratio_ces
            + math.ceil(T / (E * G)) * (tm.ratio_ces / tm.ratio_ecs))


@dataclass(frozen=True)
class ResourceReport:
    links_per_round: int
    R_upper: float
    total_client_es_units: int
    R_upper_exact: Fraction


def resource_report(topology, trace) -> ResourceReport:
    """Per-round link count, unicast resource factor bound, and total link-rounds."""
    links = int(sum(len(s) for s in topology.connectivity))
    k = topology.num_clients
    return ResourceReport(
        links_per_round=links,
        R_upper=links / k,
        total_client_es_units=links * trace.edge_rounds(),
        R_upper_exact=Fraction(links, k),
    )


def units_to_step(topology, step: int, E: int) -> int:
    """Unicast-equivalent ES-client link-rounds needed to reach ``step``."""
    return int(sum(len(s) for s in topology.connectivity)) * (step // E)


# --------------------------------------------------------------------------
# convergence


@dataclass(frozen=True)
class ConvergenceCriterion:
    """Sliding-window slope rule over an accuracy curve.

    Converged at the first point whose trailing ``window`` points have a
    mean per-point accuracy increase below ``slope_threshold``.
    """

    slope_threshold: float = 0.001
    window: int = 10

    def __post_init__(self):
        if not self.slope_threshold > 0:
            raise ValueError("slope_threshold must be positive")
        if self.window < 2:
            raise ValueError("window must be >= 2")


def detect_convergence(accuracy_curve: Sequence[tuple[int, float]], criterion: ConvergenceCriterion):
    w = criterion.window
    if len(accuracy_curve) < w:
        raise InsufficientData(f"curve has {len(accuracy_curve)} points, window needs {w}")
    steps = np.array([s for s, _ in accuracy_curve])
    acc = np.array([a for _, a in accuracy_curve], dtype=float)
    if np.any(np.diff(steps) <= 0):
        raise InsufficientData("curve steps must be strictly increasing")
    for j in range(w - 1, len(acc)):
        # mean of the w-1 increments inside the window telescopes
        slope = (acc[j] - acc[j - w + 1]) / (w - 1)
        if slope < criterion.slope_threshold:
            return int(steps[j])
    return None


def convergence_step(trace, criterion: ConvergenceCriterion, name: str = "trace") -> int:
    step = detect_convergence(trace.accuracy_curve(), criterion)
    if step is None:
        raise NoConvergence(f"{name} did not converge", trace_name=name)
    return step


def efficiency_gain(trace_a, trace_b, criterion: ConvergenceCriterion) -> float:
    """Baseline steps over candidate steps to convergence (a = HFL, b = HHFL)."""
    sa = convergence_step(trace_a, criterion, name=f"baseline ({trace_a.arch})")
    sb = convergence_step(trace_b, criterion, name=f"candidate ({trace_b.arch})")
    return sa / sb


def efficiency_gain_time(trace_a, trace_b, criterion: ConvergenceCriterion, tm: TimeModel) -> float:
    sa = convergence_step(trace_a, criterion, name=f"baseline ({trace_a.arch})")
    sb = convergence_step(trace_b, criterion, name=f"candidate ({trace_b.arch})")
    return overall_time(sa, trace_a.schedule, tm) / overall_time(sb, trace_b.schedule, tm)
