"""Differentiable learning problems and the local SGD step.

Parameters are flat float64 vectors. Data learners take a :class:`Batch`
of features and labels; the quadratic learner takes a :class:`QuadBatch`
naming the client whose objective is evaluated plus an additive noise draw.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .errors import NumericFailure


class Batch(NamedTuple):
    X: np.ndarray
    y: np.ndarray


class QuadBatch(NamedTuple):
    client: int
    noise: np.ndarray | None = None


@dataclass(frozen=True)
class LrSchedule:
    """Learning-rate schedule.

    ``exp_decay``: ``init * factor ** (step // steps_per_epoch)``.
    ``inverse``: ``beta / (step + alpha)``.
    """

    kind: str
    init: float = 0.1
    factor: float = 1.0
    steps_per_epoch: int = 1
    beta: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind == "exp_decay":
            if not (self.init > 0 and 0 < self.factor <= 1 and self.steps_per_epoch >= 1):
                raise ValueError("exp_decay needs init > 0, 0 < factor <= 1, steps_per_epoch >= 1")
        elif self.kind == "inverse":
            if not (self.beta > 0 and self.alpha > 0):
                raise ValueError("inverse schedule needs beta > 0 and alpha > 0")
        else:
            raise ValueError(f"unknown lr schedule kind {self.kind!r}")

    @classmethod
    def exp_decay(cls, init: float, factor: float, steps_per_epoch: int = 1) -> "LrSchedule":
        return cls("exp_decay", init=init, factor=factor, steps_per_epoch=steps_per_epoch)

    @classmethod
    def inverse(cls, beta: float, alpha: float) -> "LrSchedule":
        return cls("inverse", beta=beta, alpha=alpha)

    def value(self, step: int) -> float:
        if self.kind == "exp_decay":
            return self.init * self.factor ** (step // self.steps_per_epoch)
        return self.beta / (step + self.alpha)


@dataclass
class ProblemConstants:
    """Constants of the smoothness / convexity / noise assumptions.

    ``None`` marks a constant that could not be determined (non-convex or
    empirically probed learners).
    """

    L: float
    mu: float | None
    sigma_sq: np.ndarray
    H_sq: float
    gamma: float | None = None
    f_star: float | None = None
    f_k_star: np.ndarray | None = None
    exact: bool = True

    def __post_init__(self):
        self.sigma_sq = np.asarray(self.sigma_sq, dtype=float)
        if self.mu is not None and not self.L >= self.mu >= 0:
            raise ValueError(f"need L >= mu >= 0, got L={self.L}, mu={self.mu}")
        if np.any(self.sigma_sq < 0) or self.H_sq < 0:
            raise ValueError("variances must be nonnegative")
        if self.gamma is not None and self.gamma < -1e-12:
            raise ValueError(f"optimality gap must be nonnegative, got {self.gamma}")


# --------------------------------------------------------------------------
# learners


@dataclass
class QuadraticProblem:
    """Per-client objectives ``0.5 (w - a_i)^T A_i (w - a_i) + b_i``.

    Stochastic gradients add a noise vector drawn uniformly from the sphere of
    radius ``sigma[i]``, so the noise second moment equals ``sigma[i]**2``.
    """

    A: np.ndarray  # (K, d, d)
    a: np.ndarray  # (K, d)
    b: np.ndarray  # (K,)
    sigma: np.ndarray  # (K,)
    p: np.ndarray  # (K,)
    w_star: np.ndarray
    domain_center: np.ndarray
    domain_radius: float
    constants: ProblemConstants = field(repr=False)

    @property
    def dim(self) -> int:
        return self.a.shape[1]

    @property
    def num_clients(self) -> int:
        return self.a.shape[0]

    def client_value(self, i: int, w: np.ndarray) -> float:
        d = w - self.a[i]
        return float(0.5 * d @ self.A[i] @ d + self.b[i])

    def global_value(self, w: np.ndarray) -> float:
        return float(sum(self.p[i] * self.client_value(i, w) for i in range(self.num_clients)))

    def draw_noise(self, i: int, rng: np.random.Generator) -> np.ndarray:
        if self.sigma[i] == 0:
            return np.zeros(self.dim)
        z = rng.standard_normal(self.dim)
        return self.sigma[i] * z / np.linalg.norm(z)


class QuadraticLearner:
    kind = "quadratic"

    def __init__(self, problem: QuadraticProblem):
        self.problem = problem
        self.dim = problem.dim

    def loss(self, params, batch: QuadBatch) -> float:
        return self.problem.client_value(batch.client, np.asarray(params, float))

    def gradient(self, params, batch: QuadBatch) -> np.ndarray:
        i = batch.client
        g = self.problem.A[i] @ (np.asarray(params, float) - self.problem.a[i])
        if batch.noise is not None:
            g = g + batch.noise
        return g

    def metrics(self, params, data=None) -> tuple[float, float]:
        """Global objective value; accuracy is undefined (NaN)."""
        return self.problem.global_value(np.asarray(params, float)), math.nan

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.dim) / math.sqrt(self.dim)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class LogisticLearner:
    """Multinomial logistic (softmax) regression with a bias per class."""

    kind = "logistic"

    def __init__(self, num_features: int, num_classes: int):
        self.num_features = num_features
        self.num_classes = num_classes
        self.dim = num_features * num_classes + num_classes

    def _unpack(self, params):
        split = self.num_features * self.num_classes
        return params[:split].reshape(self.num_features, self.num_classes), params[split:]

    def loss(self, params, batch: Batch) -> float:
        w, b = self._unpack(np.asarray(params, float))
        logp = _log_softmax(batch.X @ w + b)
        return float(-logp[np.arange(len(batch.y)), batch.y].mean())

    def gradient(self, params, batch: Batch) -> np.ndarray:
        w, b = self._unpack(np.asarray(params, float))
        prob = np.exp(_log_softmax(batch.X @ w + b))
        prob[np.arange(len(batch.y)), batch.y] -= 1.0
        prob /= len(batch.y)
        return np.concatenate([(batch.X.T @ prob).ravel(), prob.sum(axis=0)])

    def metrics(self, params, data) -> tuple[float, float]:
        w, b = self._unpack(np.asarray(params, float))
        z = data.X @ w + b
        logp = _log_softmax(z)
        loss = float(-logp[np.arange(len(data.y)), data.y].mean())
        acc = float(np.mean(z.argmax(axis=1) == data.y))
        return loss, acc

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        w = rng.standard_normal((self.num_features, self.num_classes)) / math.sqrt(self.num_features)
        return np.concatenate([w.ravel(), np.zeros(self.num_classes)])

    def batched_step(self, params: np.ndarray, batches: Sequence[Batch], lr: float, source=None):
        """SGD step for all clients through the kernel backend.

        ``source`` is ``(X, y, idx, offsets)`` referencing the training set
        directly; without it the batches are concatenated.
        """
        if source is None:
            X = np.concatenate([bt.X for bt in batches])
            y = np.concatenate([bt.y for bt in batches])
            sizes = [len(bt.y) for bt in batches]
            offsets = np.concatenate([[0], np.cumsum(sizes)])
            idx = np.arange(len(y))
        else:
            X, y, idx, offsets = source
        return kernels.softmax_local_step(params, X, y, idx, offsets, lr, self.num_classes)


class MLPLearner:
    """One hidden tanh layer followed by a softmax output."""

    kind = "mlp"

    def __init__(self, num_features: int, num_classes: int, hidden: int = 64):
        self.num_features = num_features
        self.num_classes = num_classes
        self.hidden = hidden
        self._shapes = [(num_features, hidden), (hidden,), (hidden, num_classes), (num_classes,)]
        self.dim = sum(int(np.prod(s)) for s in self._shapes)

    def _unpack(self, params):
        out, pos = [], 0
        for s in self._shapes:
            n = int(np.prod(s))
            out.append(params[pos:pos + n].reshape(s))
            pos += n
        return out

    def _forward(self, params, X):
        w1, b1, w2, b2 = self._unpack(np.asarray(params, float))
        h = np.tanh(X @ w1 + b1)
        return h, _log_softmax(h @ w2 + b2)

    def loss(self, params, batch: Batch) -> float:
        _, logp = self._forward(params, batch.X)
        return float(-logp[np.arange(len(batch.y)), batch.y].mean())

    def gradient(self, params, batch: Batch) -> np.ndarray:
        w1, b1, w2, b2 = self._unpack(np.asarray(params, float))
        h, logp = self._forward(params, batch.X)
        d2 = np.exp(logp)
        d2[np.arange(len(batch.y)), batch.y] -= 1.0
        d2 /= len(batch.y)
        d1 = (d2 @ w2.T) * (1.0 - h * h)
        return np.concatenate([
            (batch.X.T @ d1).ravel(), d1.sum(axis=0), (h.T @ d2).ravel(), d2.sum(axis=0),
        ])

    def metrics(self, params, data) -> tuple[float, float]:
        _, logp = self._forward(params, data.X)
        loss = float(-logp[np.arange(len(data.y)), data.y].mean())
        return loss, float(np.mean(logp.argmax(axis=1) == data.y))

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        w1 = rng.standard_normal((self.num_features, self.hidden)) / math.sqrt(self.num_features)
        w2 = rng.standard_normal((self.hidden, self.num_classes)) / math.sqrt(self.hidden)
        return np.concatenate([w1.ravel(), np.zeros(self.hidden), w2.ravel(), np.zeros(self.num_classes)])


def make_learner(kind: str, num_features: int = 0, num_classes: int = 0, hidden: int = 64, problem=None):
    if kind == "logistic":
        return LogisticLearner(num_features, num_classes)
    if kind == "mlp":
        return MLPLearner(num_features, num_classes, hidden)
    if kind == "quadratic":
        if problem is None:
            raise ValueError("quadratic learner needs a QuadraticProblem")
        return QuadraticLearner(problem)
    raise ValueError(f"unknown learner kind {kind!r}")


# --------------------------------------------------------------------------
# operations


def sgd_step(learner, params, batch, lr: float, *, step: int | None = None, client: int | None = None):
    """Return ``params - lr * gradient(params, batch)`` without touching ``params``."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    g = learner.gradient(params, batch)
    if not np.all(np.isfinite(g)):
        raise NumericFailure(f"non-finite gradient at step {step}, client {client}", step, client)
    return np.asarray(params, float) - lr * g


def grad_check(learner, params, batch, h: float = 1e-5) -> float:
    """Max componentwise relative error between analytic and central-FD gradients.

    The denominator is ``max(|analytic|, |numeric|, 1e-6)`` so components that
    are exactly zero do not amplify rounding noise.
    """
    params = np.array(params, dtype=float)
    analytic = learner.gradient(params, batch)
    numeric = np.empty_like(params)
    for j in range(params.size):
        old = params[j]
        params[j] = old + h
        up = learner.loss(params, batch)
        params[j] = old - h
        down = learner.loss(params, batch)
        params[j] = old
        numeric[j] = (up - down) / (2 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _power_iteration(grad_fn, w, rng, iters=30, eps=1e-4):
    v = rng.standard_normal(w.size)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        hv = (grad_fn(w + eps * v) - grad_fn(w - eps * v)) / (2 * eps)
        lam = float(np.linalg.norm(hv))
        if lam == 0.0:
            break
        v = hv / lam
    return lam


def estimate_constants(learner, assignment, probes: int, rng_seed: int, *, dataset=None,
                       batch_size: int = 20) -> ProblemConstants:
    """Constants for the bound evaluators.

    Quadratic learners return their exact constants. Data learners are
    probed at ``probes`` random points: H^2 is the largest mean squared
    mini-batch gradient norm, sigma_i^2 the mean squared deviation of
    mini-batch from full-shard gradients, and L the largest Hessian
    eigenvalue found by power iteration on finite-difference Hessian-vector
    products. mu, Gamma and F* are left as ``None``.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    if learner.kind == "quadratic":
        return learner.problem.constants
    if dataset is None:
        raise ValueError("data learners need the training dataset")
    rng = np.random.default_rng([int(rng_seed), 0xC0457])
    shards = assignment.shards
    sigma_sq = np.zeros(len(shards))
    h_sq = 0.0
    big_l = 0.0
    for _ in range(probes):
        w = learner.init_params(rng)
        for i, shard in enumerate(shards):
            if len(shard) == 0:
                continue
            full = Batch(dataset.X[shard], dataset.y[shard])
            g_full = learner.gradient(w, full)
            devs, norms = [], []
            for _ in range(4):
                pick = rng.choice(shard, size=min(batch_size, len(shard)), replace=False)
                g_b = learner.gradient(w, Batch(dataset.X[pick], dataset.y[pick]))
                devs.append(float(np.sum((g_b - g_full) ** 2)))
                norms.append(float(np.sum(g_b ** 2)))
            sigma_sq[i] = max(sigma_sq[i], float(np.mean(devs)))
            h_sq = max(h_sq, float(np.mean(norms)))
            big_l = max(big_l, _power_iteration(lambda u: learner.gradient(u, full), w, rng, iters=10))
    return ProblemConstants(L=big_l, mu=None, sigma_sq=sigma_sq, H_sq=h_sq, exact=False)
