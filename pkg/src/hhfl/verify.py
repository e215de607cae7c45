"""Randomised property suites shared by the ``verify`` command and the tests.

Each suite draws small instances from a seeded generator, checks its
properties on all of them and reports the smallest failing instance
(fewest clients, then ESs) together with the step where it failed.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import BoundConfig, theorem1_bound
from .data import synth_quadratics
from .engine import (Schedule, client_aggregate, cloud_aggregate, edge_aggregate, run,
                     virtual_global)
from .learner import (Batch, LogisticLearner, LrSchedule, MLPLearner, QuadBatch,
                      QuadraticLearner, grad_check)
from .topology import SingleAssignment, build_topology, fig3_topology, random_topology_spec

SUITES = ("conservation", "reduction", "bounds", "gradcheck")

# gradient-check tolerances per learner kind
GRADCHECK_TOL = {"quadratic": 1e-6, "logistic": 1e-4, "mlp": 1e-3}


@dataclass
class Failure:
    instance: dict
    step: int | None
    message: str

    def size(self) -> tuple:
        return (self.instance.get("num_clients", 0), self.instance.get("num_es", 0))


@dataclass
class SuiteResult:
    suite: str
    seed: int
    instances: int
    checks: int = 0
    failures: list[Failure] = field(default_factory=list)
    worst: float = 0.0
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.failures

    def minimal_failure(self) -> Failure | None:
        return min(self.failures, key=Failure.size) if self.failures else None

    def report(self) -> str:
        head = (f"{self.suite}: seed={self.seed} instances={self.instances} checks={self.checks} "
                f"worst={self.worst:.3e} time={self.seconds:.2f}s -> {'PASS' if self.ok else 'FAIL'}")
        f = self.minimal_failure()
        if f is None:
            return head
        return (f"{head}\n  {len(self.failures)} failing instance(s); minimal: {f.message}"
                f" at step {f.step}\n  instance: {json.dumps(f.instance)}")


def _rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def probe_coefficients(topology, cloud: bool) -> np.ndarray:
    """Coefficient of each client's intermediate in the virtual global model after one boundary.

    Client ``i`` gets a one-hot intermediate and everyone else zero; the
    edge, optional cloud and client aggregations are applied through the
    public operators and the virtual global model is read back.
    """
    k, big_n = topology.num_clients, topology.num_es
    out = np.zeros(k)
    for i in range(k):
        v = np.zeros((k, 1))
        v[i, 0] = 1.0
        es = np.stack([edge_aggregate(topology, v, n) for n in range(big_n)])
        if cloud:
            es = np.tile(cloud_aggregate(topology, es), (big_n, 1))
        w = np.stack([client_aggregate(topology, es, j) for j in range(k)])
        out[i] = virtual_global(topology, w)[0]
    return out


def conservation(seed: int = 0, instances: int = 100, tol: float = 1e-9, probe_tol: float = 1e-12) -> SuiteResult:
    """Virtual global model is preserved by every aggregation and probes give ``p_i``."""
    t0 = time.perf_counter()
    res = SuiteResult("conservation", seed, instances)
    rng = np.random.default_rng(seed)
    for _ in range(instances):
        spec = random_topology_spec(rng, max_clients=20, max_es=4)
        topo = build_topology(spec)
        E, G = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        dim = int(rng.integers(2, 5))
        problem, _ = synth_quadratics(topo, dim, float(rng.uniform(0, 3)), int(rng.integers(1 << 30)))
        init = rng.normal(scale=3.0, size=(topo.num_clients, dim))
        inst = {**spec.to_dict(), "E": E, "G": G, "dim": dim}
        seen = set()

        def observe(state):
            t = state.t
            kind = "local" if t % E else ("cloud" if t % (E * G) == 0 else "edge")
            seen.add(kind)
            err = _rel(virtual_global(topo, state.client_params),
                       virtual_global(topo, state.client_intermediate))
            res.worst = max(res.worst, err)
            res.checks += 1
            if err > tol:
                res.failures.append(Failure(inst, t, f"{kind} step: relative error {err:.3e} > {tol}"))
            if kind == "cloud":
                spread = float(np.max(np.ptp(state.client_params, axis=0)))
                if spread > 1e-12 * max(1.0, float(np.max(np.abs(state.client_params)))):
                    res.failures.append(Failure(inst, t, f"clients differ by {spread:.3e} after a cloud round"))

        run("hhfl", topo, None, QuadraticLearner(problem), Schedule(E, G, 2 * E * G),
            LrSchedule.exp_decay(0.05, 1.0), int(rng.integers(1 << 30)), init_params=init,
            observer=observe)
        if seen != {"local", "edge", "cloud"}:
            res.failures.append(Failure(inst, None, f"step kinds covered: {sorted(seen)}"))
        for cloud in (False, True):
            gamma = probe_coefficients(topo, cloud)
            err = float(np.max(np.abs(gamma - topo.p)))
            res.checks += 1
            if err > probe_tol:
                res.failures.append(Failure(inst, None, f"probe ({'cloud' if cloud else 'edge'}) off by {err:.3e}"))
        # operators: nonnegative coefficients summing to one
        for mat in (topo.edge_matrix(), topo.client_matrix(), topo.lozenge[None, :]):
            res.checks += 1
            if np.any(mat < 0) or np.max(np.abs(mat.sum(axis=1) - 1.0)) > 1e-12:
                res.failures.append(Failure(inst, None, "aggregation coefficients not a convex combination"))
    res.seconds = time.perf_counter() - t0
    return res


def reduction(seed: int = 0, instances: int = 20, tol: float = 1e-12) -> SuiteResult:
    """HHFL on single-coverage layouts follows Hier-FedAvg exactly."""
    t0 = time.perf_counter()
    res = SuiteResult("reduction", seed, instances)
    rng = np.random.default_rng(seed)
    for _ in range(instances):
        spec = random_topology_spec(rng, max_clients=20, max_es=4, single_coverage=True)
        topo = build_topology(spec)
        sa = SingleAssignment(topo, tuple(s[0] for s in spec.connectivity))
        E, G = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        dim = int(rng.integers(2, 5))
        problem, _ = synth_quadratics(topo, dim, float(rng.uniform(0, 3)), int(rng.integers(1 << 30)))
        learner = QuadraticLearner(problem)
        init = rng.normal(size=dim)
        run_seed = int(rng.integers(1 << 30))
        inst = {**spec.to_dict(), "E": E, "G": G, "dim": dim}
        paths = {}
        for arch, structure in (("hhfl", topo), ("hier_fedavg", sa)):
            states = []
            run(arch, structure, None, learner, Schedule(E, G, 3 * E * G), LrSchedule.exp_decay(0.05, 1.0),
                run_seed, init_params=init, observer=lambda s, out=states: out.append(s.client_params.copy()))
            paths[arch] = np.stack(states)
        diff = np.abs(paths["hhfl"] - paths["hier_fedavg"])
        worst = float(diff.max())
        res.worst = max(res.worst, worst)
        res.checks += diff.shape[0]
        if worst > tol:
            step = int(np.flatnonzero(diff.reshape(diff.shape[0], -1).max(axis=1) > tol)[0]) + 1
            res.failures.append(Failure(inst, step, f"trajectories differ by {worst:.3e}"))
    res.seconds = time.perf_counter() - t0
    return res


def bounds(seed: int = 0, instances: int = 5, T: int = 500) -> SuiteResult:
    """Measured optimality gap stays under the convergence bound at every step."""
    t0 = time.perf_counter()
    res = SuiteResult("bounds", seed, instances)
    rng = np.random.default_rng(seed)
    topo = build_topology(fig3_topology())
    for j in range(instances):
        E, G = 5, 5
        dim = int(rng.integers(2, 6))
        problem, const = synth_quadratics(topo, dim, float(rng.uniform(0.5, 2.0)), int(rng.integers(1 << 30)),
                                          mu=0.5, L=2.0, noise=0.3)
        beta = 2.0 / const.mu
        alpha = max(float(E), beta * 4.0 * const.L)
        w0 = problem.domain_center + rng.normal(size=dim) * 0.5
        delta0 = float(np.sum((w0 - problem.w_star) ** 2))
        cfg = BoundConfig(const, topo.p, E, G, beta, alpha, delta0)
        tr = run("hhfl", topo, None, QuadraticLearner(problem), Schedule(E, G, T),
                 LrSchedule.inverse(beta, alpha), int(rng.integers(1 << 30)), init_params=w0)
        gap = tr.loss - const.f_star
        bound = theorem1_bound(cfg, tr.steps)
        inst = {"instance": j, "dim": dim, "num_clients": topo.num_clients, "num_es": topo.num_es,
                "beta": beta, "alpha": alpha}
        res.checks += len(gap)
        ratio = gap / bound
        res.worst = max(res.worst, float(ratio.max()))
        bad = np.flatnonzero(gap > bound)
        if bad.size:
            t = int(bad[0])
            res.failures.append(Failure(inst, t, f"gap {gap[t]:.6g} exceeds bound {bound[t]:.6g}"))
        scaled = bound * (tr.steps + alpha)
        if np.ptp(scaled) > 1e-9 * scaled[0] or np.any(np.diff(bound) > 0):
            res.failures.append(Failure(inst, None, "bound is not proportional to 1/(t + alpha)"))
    res.seconds = time.perf_counter() - t0
    return res


def _probe_learners(rng):
    topo = build_topology(fig3_topology())
    problem, _ = synth_quadratics(topo, 4, 1.0, int(rng.integers(1 << 30)), noise=0.0)
    quad = QuadraticLearner(problem)
    yield quad, lambda: QuadBatch(int(rng.integers(topo.num_clients)))
    feats, classes = 6, 4

    def data_batch():
        n = int(rng.integers(1, 21))
        return Batch(rng.normal(size=(n, feats)), rng.integers(0, classes, size=n))

    yield LogisticLearner(feats, classes), data_batch
    yield MLPLearner(feats, classes, hidden=8), data_batch


def gradcheck(seed: int = 0, probes: int = 20) -> SuiteResult:
    """Analytic gradients of all learners agree with central differences."""
    t0 = time.perf_counter()
    res = SuiteResult("gradcheck", seed, probes)
    rng = np.random.default_rng(seed)
    for learner, make_batch in _probe_learners(rng):
        tol = GRADCHECK_TOL[learner.kind]
        for j in range(probes):
            params = learner.init_params(rng) + rng.normal(scale=0.5, size=learner.dim)
            err = grad_check(learner, params, make_batch())
            res.checks += 1
            res.worst = max(res.worst, err / tol if tol > 0 else err)
            if err > tol:
                res.failures.append(Failure({"learner": learner.kind, "probe": j}, None,
                                            f"{learner.kind} relative error {err:.3e} > {tol}"))
    res.seconds = time.perf_counter() - t0
    return res


def run_suite(name: str, seed: int = 0) -> SuiteResult:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {list(SUITES)}")
    return {"conservation": conservation, "reduction": reduction, "bounds": bounds,
            "gradcheck": gradcheck}[name](seed)
