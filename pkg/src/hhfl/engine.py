"""Step-by-step execution of FedAvg, Hier-FedAvg and HHFL.

All three architectures share the local SGD step; they differ only in which
aggregations run at edge-round (``E | t+1``) and cloud-round
(``EG | t+1``) boundaries. Aggregations are linear combinations evaluated by
:func:`hhfl.kernels.combine`, which sums in ascending client/ES order so a
run is bit-reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .errors import InvalidConfig, NumericFailure
from .learner import Batch, LrSchedule, QuadBatch, sgd_step
from .topology import SingleAssignment, Topology

ARCHITECTURES = ("fedavg", "hier_fedavg", "hhfl")


@dataclass(frozen=True)
class Schedule:
    E: int
    G: int
    T: int

    def __post_init__(self):
        for name in ("E", "G", "T"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {v!r}", field=name)


@dataclass
class SystemState:
    t: int
    client_params: np.ndarray
    client_intermediate: np.ndarray | None
    es_params: np.ndarray | None
    global_params: np.ndarray | None


@dataclass(frozen=True)
class EventRecord:
    t: int
    event: str
    links_used: int
    unicast_units: int
    multipoint_units: int


@dataclass
class TrainingTrace:
    """Per-step metrics of the virtual global model plus aggregation events.

    Step arrays are indexed by ``t = 0..T``. ``drift[t]`` is the
    disagreement ``sum_i p_i ||wbar - w_i||^2``.
    """

    arch: str
    schedule: Schedule
    seed: int
    steps: np.ndarray
    loss: np.ndarray
    accuracy: np.ndarray
    lr: np.ndarray
    drift: np.ndarray
    events: list[EventRecord] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    final_params: np.ndarray | None = None

    def edge_rounds(self) -> int:
        return sum(1 for e in self.events if e.event == "edge_agg")

    def accuracy_curve(self, every: int | None = None) -> list[tuple[int, float]]:
        """(step, accuracy) pairs sampled every ``every`` steps (default E)."""
        every = every or self.schedule.E
        return [(int(t), float(a)) for t, a in zip(self.steps, self.accuracy)
                if t % every == 0 and not math.isnan(a)]

    def units_until(self, step: int, kind: str = "unicast") -> int:
        attr = "unicast_units" if kind == "unicast" else "multipoint_units"
        return sum(getattr(e, attr) for e in self.events if e.t <= step)


# --------------------------------------------------------------------------
# aggregation operators


def client_aggregate(topology: Topology, es_params, i: int) -> np.ndarray:
    """Plain mean of the models of the ESs client ``i`` connects to."""
    row = topology.client_matrix()[i:i + 1]
    return kernels.combine(row, np.asarray(es_params, float))[0]


def edge_aggregate(topology: Topology, client_params, n: int) -> np.ndarray:
    """ES ``n``'s model: weights ``p_i / |S_i| / lozenge_n`` over its coverage."""
    row = topology.edge_matrix()[n:n + 1]
    return kernels.combine(row, np.asarray(client_params, float))[0]


def cloud_aggregate(topology: Topology, es_params) -> np.ndarray:
    return kernels.combine(topology.lozenge[None, :], np.asarray(es_params, float))[0]


def virtual_global(topology, client_params) -> np.ndarray:
    """Flat form ``sum_i p_i w_i``."""
    return kernels.combine(np.asarray(topology.p)[None, :], np.asarray(client_params, float))[0]


def virtual_global_nested(topology: Topology, client_params) -> np.ndarray:
    """Edge-then-cloud form, summed explicitly ES by ES."""
    client_params = np.asarray(client_params, float)
    out = np.zeros(client_params.shape[1])
    for n, members in enumerate(topology.coverage):
        inner = np.zeros_like(out)
        for i in members:
            inner += (1.0 / topology.lozenge[n]) * (topology.p[i] / topology.degree[i]) * client_params[i]
        out += topology.lozenge[n] * inner
    return out


@dataclass(frozen=True, eq=False)
class _Plan:
    """Aggregation coefficients of one architecture on one layout."""

    p: np.ndarray  # (K,) virtual-global weights
    edge: np.ndarray | None  # (N, K)
    cloud: np.ndarray | None  # (1, N)
    client: np.ndarray | None  # (K, N)
    links: int
    num_clients: int
    num_es: int


def _hhfl_plan(topology: Topology) -> _Plan:
    return _Plan(
        p=np.asarray(topology.p), edge=topology.edge_matrix(), cloud=topology.lozenge[None, :].copy(),
        client=topology.client_matrix(), links=topology.num_links(),
        num_clients=topology.num_clients, num_es=topology.num_es,
    )


def _hier_fedavg_plan(sa: SingleAssignment) -> _Plan:
    counts = sa.base.sample_counts
    k, big_n = sa.num_clients, sa.num_es
    n_es = np.zeros(big_n)
    for i, n in enumerate(sa.assigned_es):
        n_es[n] += counts[i]
    total = n_es.sum()
    edge = np.zeros((big_n, k))
    client = np.zeros((k, big_n))
    for i, n in enumerate(sa.assigned_es):
        edge[n, i] = counts[i] / n_es[n]
        client[i, n] = 1.0
    return _Plan(p=counts / counts.sum(), edge=edge, cloud=(n_es / total)[None, :], client=client,
                 links=k, num_clients=k, num_es=big_n)


def _fedavg_plan(structure) -> _Plan:
    base = structure.base if isinstance(structure, SingleAssignment) else structure
    counts = base.sample_counts
    return _Plan(p=counts / counts.sum(), edge=None, cloud=None, client=None,
                 links=base.num_clients, num_clients=base.num_clients, num_es=0)


def make_plan(arch: str, structure) -> _Plan:
    if arch == "hhfl":
        if not isinstance(structure, Topology):
            raise InvalidConfig("hhfl runs on a multi-connectivity Topology", field="architecture")
        return _hhfl_plan(structure)
    if arch == "hier_fedavg":
        if not isinstance(structure, SingleAssignment):
            raise InvalidConfig("hier_fedavg runs on a SingleAssignment", field="architecture")
        return _hier_fedavg_plan(structure)
    if arch == "fedavg":
        return _fedavg_plan(structure)
    raise InvalidConfig(f"unknown architecture {arch!r}", field="architecture")


# --------------------------------------------------------------------------
# batch sampling


class ShardSampler:
    """Per-client mini-batches over local shards.

    Each client walks through its shard in epochs; epoch ``e`` of client
    ``i`` is a permutation drawn from a generator seeded by
    ``(seed, i, e)``, so batches never depend on client processing order.
    The last batch of an epoch may be short.
    """

    def __init__(self, dataset, shards, batch_size: int, seed: int):
        self.dataset = dataset
        self.shards = [np.asarray(s, dtype=np.int64) for s in shards]
        self.batch_size = batch_size
        self.seed = int(seed)
        self._perm_epoch = [-1] * len(self.shards)
        self._perm = [None] * len(self.shards)

    def batches_per_epoch(self, i: int) -> int:
        return max(1, math.ceil(len(self.shards[i]) / self.batch_size))

    def indices(self, i: int, t: int) -> np.ndarray:
        nb = self.batches_per_epoch(i)
        epoch, pos = divmod(t, nb)
        if self._perm_epoch[i] != epoch:
            rng = np.random.default_rng([self.seed, i, epoch])
            self._perm[i] = self.shards[i][rng.permutation(len(self.shards[i]))]
            self._perm_epoch[i] = epoch
        return self._perm[i][pos * self.batch_size:(pos + 1) * self.batch_size]

    def batches(self, t: int) -> list[Batch]:
        out = []
        for i in range(len(self.shards)):
            idx = self.indices(i, t)
            out.append(Batch(self.dataset.X[idx], self.dataset.y[idx]))
        return out

    def source(self, t: int):
        """Kernel-ready ``(X, y, idx, offsets)`` for step ``t``."""
        parts = [self.indices(i, t) for i in range(len(self.shards))]
        offsets = np.zeros(len(parts) + 1, dtype=np.int64)
        np.cumsum([len(p) for p in parts], out=offsets[1:])
        return self.dataset.X, self.dataset.y, np.concatenate(parts), offsets


class NoiseSampler:
    """Quadratic batches: one noise draw per client per step from a per-client stream."""

    def __init__(self, problem, seed: int, noisy: bool = True):
        self.problem = problem
        self.noisy = noisy
        self._rngs = [np.random.default_rng([int(seed), i, 0xB0]) for i in range(problem.num_clients)]

    def batches(self, t: int) -> list[QuadBatch]:
        if not self.noisy:
            return [QuadBatch(i) for i in range(self.problem.num_clients)]
        return [QuadBatch(i, self.problem.draw_noise(i, self._rngs[i])) for i in range(self.problem.num_clients)]


def steps_per_epoch(assignment, batch_size: int) -> int:
    """Local steps in one pass over the largest shard."""
    return max(1, math.ceil(int(assignment.sizes().max()) / batch_size))


# --------------------------------------------------------------------------
# run


def _local_update(learner, params, sampler, lr, t):
    if hasattr(learner, "batched_step") and isinstance(sampler, ShardSampler):
        out = learner.batched_step(params, None, lr, source=sampler.source(t))
        bad = ~np.all(np.isfinite(out), axis=1)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise NumericFailure(f"non-finite parameters at step {t}, client {i}", t, i)
        return out
    batches = sampler.batches(t)
    return np.stack([sgd_step(learner, params[i], batches[i], lr, step=t, client=i)
                     for i in range(len(batches))])


def run(arch: str, structure, assignment, learner, schedule: Schedule, lr: LrSchedule, rng_seed: int, *,
        dataset=None, eval_data=None, batch_size: int = 20, init_params=None, eval_every: int = 1,
        noisy: bool = True, observer: Callable[[SystemState], None] | None = None,
        config: dict | None = None) -> TrainingTrace:
    """Execute ``schedule.T`` local steps of ``arch`` and trace the virtual global model.

    ``structure`` is a :class:`Topology` for ``hhfl``, a
    :class:`SingleAssignment` for ``hier_fedavg`` and either for ``fedavg``.
    Data learners draw batches from ``assignment.shards`` over ``dataset``
    and are evaluated on ``eval_data``; the quadratic learner ignores both
    and reports its global objective. ``init_params`` is one vector shared by
    all clients or a ``(K, D)`` array of per-client starts. ``observer`` is
    called with the state after every step.
    """
    plan = make_plan(arch, structure)
    k = plan.num_clients
    E, G, T = schedule.E, schedule.G, schedule.T
    if learner.kind == "quadratic":
        if learner.problem.num_clients != k:
            raise InvalidConfig("quadratic problem and layout disagree on client count", field="learner")
        sampler = NoiseSampler(learner.problem, rng_seed, noisy)
    else:
        if dataset is None or assignment is None:
            raise InvalidConfig("data learners need a dataset and an assignment", field="dataset")
        if len(assignment.shards) != k:
            raise InvalidConfig("assignment and layout disagree on client count", field="assignment")
        if dataset.feature_dim != learner.num_features:
            raise InvalidConfig("dataset feature dimension does not match the learner", field="learner")
        sampler = ShardSampler(dataset, assignment.shards, batch_size, rng_seed)
    if init_params is None:
        init_params = learner.init_params(np.random.default_rng([int(rng_seed), 0x1417]))
    init_params = np.asarray(init_params, dtype=float)
    if init_params.ndim == 1:
        if init_params.shape[0] != learner.dim:
            raise InvalidConfig("initial parameters have the wrong dimension", field="init_params")
        w = np.tile(init_params, (k, 1))
    else:
        if init_params.shape != (k, learner.dim):
            raise InvalidConfig("initial parameters have the wrong shape", field="init_params")
        w = init_params.copy()
    p = plan.p
    pvec = p[None, :]

    loss = np.full(T + 1, np.nan)
    acc = np.full(T + 1, np.nan)
    lrs = np.array([lr.value(t) for t in range(T + 1)])
    drift = np.zeros(T + 1)
    events: list[EventRecord] = []

    def evaluate(t, params):
        wbar = kernels.combine(pvec, params)[0]
        drift[t] = float(p @ np.sum((params - wbar) ** 2, axis=1))
        if t % eval_every == 0 or t % E == 0 or t == T:
            loss[t], acc[t] = learner.metrics(wbar, eval_data)

    evaluate(0, w)
    es = None
    glob = None
    for t in range(T):
        v = _local_update(learner, w, sampler, lrs[t], t)
        step = t + 1
        if step % E:
            w = v
        elif arch == "fedavg":
            glob = kernels.combine(pvec, v)[0]
            w = np.tile(glob, (k, 1))
            events.append(EventRecord(step, "cloud_agg", plan.links, 2 * k, 2 * k))
        else:
            es = kernels.combine(plan.edge, v)
            events.append(EventRecord(step, "edge_agg", plan.links, plan.links, k))
            if step % (E * G) == 0:
                glob = kernels.combine(plan.cloud, es)[0]
                es = np.tile(glob, (plan.num_es, 1))
                events.append(EventRecord(step, "cloud_agg", plan.num_es, 0, 0))
            w = kernels.combine(plan.client, es)
            events.append(EventRecord(step, "client_agg", plan.links, plan.links, plan.links))
        evaluate(step, w)
        if observer is not None:
            observer(SystemState(step, w, v, es, glob))
    echo = {"arch": arch, "E": E, "G": G, "T": T, "seed": int(rng_seed), "learner": learner.kind}
    if config:
        echo.update(config)
    return TrainingTrace(
        arch=arch, schedule=schedule, seed=int(rng_seed), steps=np.arange(T + 1), loss=loss,
        accuracy=acc, lr=lrs, drift=drift, events=events, config=echo,
        final_params=kernels.combine(pvec, w)[0],
    )
