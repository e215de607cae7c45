"""Client / edge-server connectivity and aggregation weights.

ES and client indices are zero-based throughout the package.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidSpec


@dataclass(frozen=True)
class TopologySpec:
    num_clients: int
    num_es: int
    connectivity: tuple[tuple[int, ...], ...]
    data_weights: tuple[float, ...] | None = None
    layout_tag: str = ""

    def __post_init__(self):
        # normalise to sorted tuples so equal layouts compare equal
        conn = tuple(tuple(sorted(set(int(n) for n in s))) for s in self.connectivity)
        object.__setattr__(self, "connectivity", conn)
        if self.data_weights is not None:
            object.__setattr__(self, "data_weights", tuple(float(x) for x in self.data_weights))

    def validate(self) -> None:
        if self.num_clients < 1 or self.num_es < 1:
            raise InvalidSpec("num_clients and num_es must be positive")
        if len(self.connectivity) != self.num_clients:
            raise InvalidSpec(
                f"connectivity has {len(self.connectivity)} entries, expected {self.num_clients}"
            )
        covered = set()
        for i, s in enumerate(self.connectivity):
            if not s:
                raise InvalidSpec(f"client {i} has an empty connectivity set")
            for n in s:
                if not 0 <= n < self.num_es:
                    raise InvalidSpec(f"client {i} references ES {n} outside 0..{self.num_es - 1}")
            covered.update(s)
        empty = sorted(set(range(self.num_es)) - covered)
        if empty:
            raise InvalidSpec(f"ES {empty[0]} covers no clients")
        if self.data_weights is not None:
            if len(self.data_weights) != self.num_clients:
                raise InvalidSpec("data_weights length does not match num_clients")
            for i, w in enumerate(self.data_weights):
                if not (w > 0 and np.isfinite(w)):
                    raise InvalidSpec(f"client {i} has nonpositive data weight {w}")

    def to_dict(self) -> dict:
        return {
            "num_clients": self.num_clients,
            "num_es": self.num_es,
            "connectivity": [list(s) for s in self.connectivity],
            "data_weights": None if self.data_weights is None else list(self.data_weights),
            "layout_tag": self.layout_tag,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TopologySpec":
        conn = d["connectivity"]
        return cls(
            num_clients=int(d.get("num_clients", len(conn))),
            num_es=int(d["num_es"]),
            connectivity=tuple(tuple(s) for s in conn),
            data_weights=None if d.get("data_weights") is None else tuple(d["data_weights"]),
            layout_tag=d.get("layout_tag", ""),
        )


@dataclass(frozen=True, eq=False)
class Topology:
    """A validated layout with coverage sets and the HHFL weights.

    ``p[i]`` is client i's data share and ``lozenge[n]`` is the sum of
    ``p[i] / |S_i|`` over the clients ES n covers.
    """

    spec: TopologySpec
    coverage: tuple[tuple[int, ...], ...]
    p: np.ndarray
    lozenge: np.ndarray
    degree: np.ndarray = field(repr=False)

    @property
    def num_clients(self) -> int:
        return self.spec.num_clients

    @property
    def num_es(self) -> int:
        return self.spec.num_es

    @property
    def connectivity(self):
        return self.spec.connectivity

    @property
    def sample_counts(self) -> np.ndarray:
        if self.spec.data_weights is None:
            return np.ones(self.num_clients)
        return np.asarray(self.spec.data_weights, dtype=float)

    def num_links(self) -> int:
        return int(self.degree.sum())

    def edge_matrix(self) -> np.ndarray:
        """(N, K) coefficients of edge aggregation."""
        m = np.zeros((self.num_es, self.num_clients))
        for n, members in enumerate(self.coverage):
            for i in members:
                m[n, i] = self.p[i] / self.degree[i] / self.lozenge[n]
        return m

    def client_matrix(self) -> np.ndarray:
        """(K, N) coefficients of client aggregation: a plain mean over S_i."""
        m = np.zeros((self.num_clients, self.num_es))
        for i, s in enumerate(self.connectivity):
            for n in s:
                m[i, n] = 1.0 / len(s)
        return m


def build_topology(spec: TopologySpec) -> Topology:
    spec.validate()
    k, big_n = spec.num_clients, spec.num_es
    coverage = tuple(
        tuple(i for i in range(k) if n in spec.connectivity[i]) for n in range(big_n)
    )
    weights = np.ones(k) if spec.data_weights is None else np.asarray(spec.data_weights, float)
    p = weights / weights.sum()
    degree = np.array([len(s) for s in spec.connectivity], dtype=float)
    lozenge = np.zeros(big_n)
    for n, members in enumerate(coverage):
        acc = 0.0
        for i in members:
            acc += p[i] / degree[i]
        lozenge[n] = acc
    p.setflags(write=False)
    lozenge.setflags(write=False)
    degree.setflags(write=False)
    return Topology(spec=spec, coverage=coverage, p=p, lozenge=lozenge, degree=degree)


# Reference layout: per ES 14 exclusive clients, 4 in each two-ES region it
# belongs to (8 total) and the 3 clients shared by all three ESs.
_FIG3_EXCLUSIVE = 14
_FIG3_PAIR = 4
_FIG3_TRIPLE = 3


def fig3_topology() -> TopologySpec:
    conn: list[tuple[int, ...]] = []
    for n in range(3):
        conn.extend([(n,)] * _FIG3_EXCLUSIVE)
    for pair in ((0, 1), (0, 2), (1, 2)):
        conn.extend([pair] * _FIG3_PAIR)
    conn.extend([(0, 1, 2)] * _FIG3_TRIPLE)
    return TopologySpec(
        num_clients=len(conn), num_es=3, connectivity=tuple(conn), layout_tag="fig3-symmetric"
    )


@dataclass(frozen=True, eq=False)
class SingleAssignment:
    """HFL view of a layout: every client talks to exactly one ES."""

    base: Topology
    assigned_es: tuple[int, ...]

    def __post_init__(self):
        if len(self.assigned_es) != self.base.num_clients:
            raise InvalidSpec("assignment length does not match client count")
        for i, (n, s) in enumerate(zip(self.assigned_es, self.base.connectivity)):
            if n not in s:
                raise InvalidSpec(f"client {i} assigned to ES {n} outside its set {s}")

    @property
    def num_clients(self) -> int:
        return self.base.num_clients

    @property
    def num_es(self) -> int:
        return self.base.num_es

    def members(self) -> tuple[tuple[int, ...], ...]:
        return tuple(
            tuple(i for i, a in enumerate(self.assigned_es) if a == n)
            for n in range(self.num_es)
        )

    def counts(self) -> list[int]:
        return [len(m) for m in self.members()]

    def as_topology(self) -> Topology:
        """The same assignment seen as a single-coverage HHFL topology."""
        spec = TopologySpec(
            num_clients=self.base.num_clients,
            num_es=self.base.num_es,
            connectivity=tuple((n,) for n in self.assigned_es),
            data_weights=self.base.spec.data_weights,
            layout_tag=self.base.spec.layout_tag + "/single",
        )
        return build_topology(spec)


def to_single_assignment(topology: Topology, rng_seed: int) -> SingleAssignment:
    """Assign each overlap client to one of its ESs, balanced per overlap region."""
    rng = np.random.default_rng([int(rng_seed), 0x51A6])
    assigned = [s[0] for s in topology.connectivity]
    regions: dict[tuple[int, ...], list[int]] = {}
    for i, s in enumerate(topology.connectivity):
        if len(s) > 1:
            regions.setdefault(s, []).append(i)
    for region in sorted(regions):
        clients = regions[region]
        order = rng.permutation(len(clients))
        candidates = [region[j] for j in rng.permutation(len(region))]
        for slot, idx in enumerate(order):
            assigned[clients[idx]] = candidates[slot % len(candidates)]
    return SingleAssignment(base=topology, assigned_es=tuple(int(a) for a in assigned))


def relocate_overlap(
    spec: TopologySpec,
    home: Sequence[int],
    num_overlap: int,
    rng_seed: int,
) -> TopologySpec:
    """Move clients into or out of overlap regions, keeping each client's home ES.

    Returns a layout with exactly ``num_overlap`` multi-coverage clients.
    ``home`` is the frozen HFL association; every client keeps its home ES in
    its connectivity set so the same association stays valid. Clients moved
    into an overlap gain one extra ES, cycling through the other ESs; moves
    are spread round-robin over home ESs.
    """
    spec.validate()
    conn = [list(s) for s in spec.connectivity]
    for i, s in enumerate(conn):
        if home[i] not in s:
            raise InvalidSpec(f"home ES {home[i]} of client {i} not in its set {s}")
    rng = np.random.default_rng([int(rng_seed), 0x0E1A])
    current = sum(1 for s in conn if len(s) > 1)
    if not 0 <= num_overlap <= spec.num_clients:
        raise InvalidSpec(f"num_overlap={num_overlap} out of range")
    if num_overlap > current and spec.num_es < 2:
        raise InvalidSpec("cannot create overlap with a single ES")

    def pools(multi: bool) -> list[list[int]]:
        out = []
        for n in range(spec.num_es):
            cand = [i for i in range(spec.num_clients) if home[i] == n and (len(conn[i]) > 1) == multi]
            out.append([cand[j] for j in rng.permutation(len(cand))])
        return out

    if num_overlap > current:
        pool = pools(multi=False)
        partner_turn = [0] * spec.num_es
        need = num_overlap - current
        n = 0
        while need:
            if not any(pool):
                raise InvalidSpec("not enough single-coverage clients to relocate")
            if pool[n]:
                i = pool[n].pop()
                others = [m for m in range(spec.num_es) if m != n]
                partner = others[partner_turn[n] % len(others)]
                partner_turn[n] += 1
                conn[i] = sorted({n, partner})
                need -= 1
            n = (n + 1) % spec.num_es
    elif num_overlap < current:
        pool = pools(multi=True)
        need = current - num_overlap
        n = 0
        while need:
            if pool[n]:
                i = pool[n].pop()
                conn[i] = [home[i]]
                need -= 1
            n = (n + 1) % spec.num_es
    return TopologySpec(
        num_clients=spec.num_clients,
        num_es=spec.num_es,
        connectivity=tuple(tuple(s) for s in conn),
        data_weights=spec.data_weights,
        layout_tag=f"{spec.layout_tag}/overlap={num_overlap}",
    )


def random_topology_spec(
    rng: np.random.Generator,
    max_clients: int = 20,
    max_es: int = 4,
    single_coverage: bool = False,
    weighted: bool = True,
) -> TopologySpec:
    """Random valid layout used by the property suites."""
    big_n = int(rng.integers(1, max_es + 1))
    k = int(rng.integers(big_n, max_clients + 1))
    conn = []
    # first N clients pin every ES so none is empty
    for i in range(k):
        if i < big_n:
            s = {i}
        else:
            s = {int(rng.integers(big_n))}
        if not single_coverage:
            extra = rng.random(big_n) < 0.35
            s.update(int(n) for n in np.flatnonzero(extra))
        conn.append(tuple(sorted(s)))
    perm = rng.permutation(k)
    conn = [conn[j] for j in perm]
    weights = tuple(float(x) for x in rng.integers(1, 50, size=k)) if weighted else None
    return TopologySpec(k, big_n, tuple(conn), weights, layout_tag="random")
