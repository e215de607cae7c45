"""Datasets, IDX file I/O and the six client/ES distribution cases."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import InfeasiblePartition
from .learner import ProblemConstants, QuadraticProblem
from .topology import SingleAssignment, Topology, to_single_assignment


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int
    centers: np.ndarray | None = None

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.ndim != 1 or len(self.X) != len(self.y):
            raise ValueError("X must be (n, d) and y (n,) with matching n")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ValueError("labels outside 0..num_classes-1")

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.X[idx], self.y[idx], self.num_classes, self.centers)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.num_classes)


def synth_gaussian_classes(num_classes: int, feature_dim: int, samples_per_class: int,
                           separation: float, rng_seed: int, noise_std: float = 1.0) -> LabeledDataset:
    """Isotropic Gaussian blobs, one per class.

    Class centres are random directions rescaled so the closest pair sits
    exactly ``separation`` apart. Samples are ordered by class.
    """
    if min(num_classes, feature_dim, samples_per_class) < 1 or not separation > 0:
        raise ValueError("all parameters must be positive")
    rng = np.random.default_rng([int(rng_seed), 0x6A55])
    centers = rng.standard_normal((num_classes, feature_dim))
    if num_classes > 1:
        diff = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        closest = dist[~np.eye(num_classes, dtype=bool)].min()
        centers *= separation / closest
    X = np.repeat(centers, samples_per_class, axis=0)
    X = X + noise_std * rng.standard_normal(X.shape)
    y = np.repeat(np.arange(num_classes), samples_per_class)
    return LabeledDataset(X, y.astype(np.int64), num_classes, centers)


def split_stratified(dataset: LabeledDataset, test_per_class: int, rng_seed: int):
    """Hold out ``test_per_class`` samples of every class; returns (train, test)."""
    rng = np.random.default_rng([int(rng_seed), 0x5E17])
    test_idx = []
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.y == c)
        if len(idx) < test_per_class:
            raise ValueError(f"class {c} has only {len(idx)} samples")
        test_idx.append(rng.choice(idx, size=test_per_class, replace=False))
    test_idx = np.sort(np.concatenate(test_idx))
    mask = np.ones(len(dataset), dtype=bool)
    mask[test_idx] = False
    return dataset.subset(np.flatnonzero(mask)), dataset.subset(test_idx)


# --------------------------------------------------------------------------
# IDX format

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read an IDX file (optionally gzipped) into an array of its native dtype."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ValueError(f"{path}: bad IDX magic")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_TYPES:
        raise ValueError(f"{path}: unknown IDX type code 0x{code:02x}")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    dtype = _IDX_TYPES[code]
    count = int(np.prod(dims)) if ndim else 1
    body = raw[4 + 4 * ndim:]
    if len(body) != count * dtype.itemsize:
        raise ValueError(f"{path}: expected {count * dtype.itemsize} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    for code, dt in _IDX_TYPES.items():
        if dt.newbyteorder("=") == array.dtype.newbyteorder("="):
            break
    else:
        raise ValueError(f"dtype {array.dtype} has no IDX encoding")
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    opener = gzip.open if Path(path).suffix == ".gz" else open
    with opener(path, "wb") as f:
        f.write(header + array.astype(dt).tobytes())


def load_mnist(images_path, labels_path, subset: int | None = None, rng_seed: int = 0) -> LabeledDataset:
    """MNIST-style IDX pair as flattened [0, 1] features.

    ``subset`` draws a class-stratified sample of that size.
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64)
    if len(images) != len(labels):
        raise ValueError("image and label counts differ")
    X = images.reshape(len(images), -1).astype(np.float64) / 255.0
    ds = LabeledDataset(X, labels, int(labels.max()) + 1 if len(labels) else 10)
    if subset is not None and subset < len(ds):
        rng = np.random.default_rng([int(rng_seed), 0x3A15])
        per = subset // ds.num_classes
        keep = []
        for c in range(ds.num_classes):
            idx = np.flatnonzero(labels == c)
            keep.append(rng.choice(idx, size=min(per, len(idx)), replace=False))
        ds = ds.subset(np.sort(np.concatenate(keep)))
    return ds


# --------------------------------------------------------------------------
# distribution cases


class CaseId(str, Enum):
    IID_IID = "IID_IID"
    NONIID1_IID = "NONIID1_IID"
    NONIID2_IID = "NONIID2_IID"
    NONIID_NONIID1 = "NONIID_NONIID1"
    NONIID_NONIID2 = "NONIID_NONIID2"
    NONIID_NONIID2P = "NONIID_NONIID2P"


@dataclass(frozen=True)
class DistributionCase:
    case_id: CaseId
    classes_per_client: int
    missing_classes_per_es: int
    # extra single-coverage clients moved into overlap regions (the 2' case)
    relocated_clients: int = 0

    @property
    def es_iid(self) -> bool:
        return self.missing_classes_per_es == 0


CASES = {
    CaseId.IID_IID: DistributionCase(CaseId.IID_IID, 10, 0),
    CaseId.NONIID1_IID: DistributionCase(CaseId.NONIID1_IID, 6, 0),
    CaseId.NONIID2_IID: DistributionCase(CaseId.NONIID2_IID, 2, 0),
    CaseId.NONIID_NONIID1: DistributionCase(CaseId.NONIID_NONIID1, 2, 3),
    CaseId.NONIID_NONIID2: DistributionCase(CaseId.NONIID_NONIID2, 2, 4),
    CaseId.NONIID_NONIID2P: DistributionCase(CaseId.NONIID_NONIID2P, 2, 4, relocated_clients=6),
}


def get_case(name) -> DistributionCase:
    try:
        return CASES[CaseId(name)]
    except ValueError:
        raise ValueError(f"unknown distribution case {name!r}; choose from {[c.value for c in CaseId]}") from None


def es_allowed_classes(n: int, num_classes: int, missing: int) -> list[int]:
    """Classes ES n keeps; it misses ``{n*m, ..., n*m + m - 1} mod C``."""
    gone = {(n * missing + j) % num_classes for j in range(missing)}
    return [c for c in range(num_classes) if c not in gone]


@dataclass(frozen=True, eq=False)
class Assignment:
    shards: tuple[np.ndarray, ...]
    class_histogram: np.ndarray  # (K, C)
    es_class_histogram: np.ndarray  # (N, C) over multi-connectivity coverage
    home_class_histogram: np.ndarray  # (N, C) over the single-ES association
    client_classes: tuple[tuple[int, ...], ...]
    home: tuple[int, ...]
    case: DistributionCase

    @property
    def num_clients(self) -> int:
        return len(self.shards)

    def sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.shards])

    def to_dict(self) -> dict:
        return {
            "case": self.case.case_id.value,
            "home": list(self.home),
            "client_classes": [list(c) for c in self.client_classes],
            "class_histogram": self.class_histogram.tolist(),
            "es_class_histogram": self.es_class_histogram.tolist(),
            "home_class_histogram": self.home_class_histogram.tolist(),
            "shards": [s.tolist() for s in self.shards],
        }


def _client_class_sets(topology: Topology, home, case: DistributionCase, num_classes: int,
                       rng: np.random.Generator, overlap_rule: str) -> list[tuple[int, ...]]:
    c = case.classes_per_client
    k = topology.num_clients
    if c > num_classes:
        raise InfeasiblePartition(f"case needs {c} classes per client, dataset has {num_classes}")
    m = case.missing_classes_per_es
    allowed = [es_allowed_classes(n, num_classes, m) for n in range(topology.num_es)]
    if case.es_iid:
        # one shared class order keeps every ES histogram identical in slot counts
        order = [int(x) for x in rng.permutation(num_classes)]
        orders = [order] * topology.num_es
    else:
        orders = [[allowed[n][j] for j in rng.permutation(len(allowed[n]))] for n in range(topology.num_es)]
    for n in range(topology.num_es):
        if c > len(orders[n]):
            raise InfeasiblePartition(f"ES {n} keeps {len(orders[n])} classes, case needs {c} per client")
    classes: list[tuple[int, ...] | None] = [None] * k
    groups: dict[object, list[int]] = {}
    for i in range(k):
        if overlap_rule == "union" and len(topology.connectivity[i]) > 1 and not case.es_iid:
            groups.setdefault(topology.connectivity[i], []).append(i)
        else:
            groups.setdefault(home[i], []).append(i)
    for key in sorted(groups, key=lambda g: (isinstance(g, tuple), g)):
        members = groups[key]
        members = [members[j] for j in rng.permutation(len(members))]
        if isinstance(key, tuple):
            union = sorted(set().union(*(allowed[n] for n in key)))
            pool = [union[j] for j in rng.permutation(len(union))]
            if c > len(pool):
                raise InfeasiblePartition(f"region {key} has only {len(pool)} classes")
        else:
            pool = orders[key]
        for slot, i in enumerate(members):
            classes[i] = tuple(sorted(pool[(slot * c + j) % len(pool)] for j in range(c)))
    return classes  # type: ignore[return-value]


def _demand(classes, shard_size: int, num_classes: int) -> np.ndarray:
    need = np.zeros(num_classes, dtype=np.int64)
    for cls in classes:
        base, extra = divmod(shard_size, len(cls))
        for j, c in enumerate(cls):
            need[c] += base + (1 if j < extra else 0)
    return need


def partition(dataset: LabeledDataset, topology: Topology, case: DistributionCase, rng_seed: int,
              *, home: SingleAssignment | None = None, shard_size: int | None = None,
              overlap_rule: str = "home") -> Assignment:
    """Split ``dataset`` across the clients of ``topology`` under ``case``.

    Every client gets ``shard_size`` samples spread evenly (within one
    sample) over exactly ``case.classes_per_client`` classes. Class sets are
    drawn from the classes kept by the client's home ES (its HFL association),
    so under ES-level non-IID cases each ES of the single-ES view misses
    exactly ``case.missing_classes_per_es`` classes. With
    ``overlap_rule="union"`` multi-coverage clients instead draw from the
    union of their ESs' kept classes.

    When ``shard_size`` is omitted the largest feasible multiple of the
    per-client class count is used.
    """
    if overlap_rule not in ("home", "union"):
        raise ValueError(f"unknown overlap_rule {overlap_rule!r}")
    rng = np.random.default_rng([int(rng_seed), 0xDA7A])
    if home is None:
        home = to_single_assignment(topology, rng_seed)
    homes = home.assigned_es
    for i, (h, s) in enumerate(zip(homes, topology.connectivity)):
        if h not in s:
            raise InfeasiblePartition(f"home ES {h} of client {i} is not in its set {s}", client=i)
    num_classes = dataset.num_classes
    classes = _client_class_sets(topology, homes, case, num_classes, rng, overlap_rule)
    available = dataset.class_counts()
    c = case.classes_per_client
    if shard_size is None:
        shard_size = (len(dataset) // topology.num_clients) // c * c
        while shard_size > 0 and np.any(_demand(classes, shard_size, num_classes) > available):
            shard_size -= c
    if shard_size < c:
        raise InfeasiblePartition("dataset too small for one sample per (client, class) cell")
    pools = []
    for cl in range(num_classes):
        idx = np.flatnonzero(dataset.y == cl)
        pools.append(idx[rng.permutation(len(idx))])
    cursor = np.zeros(num_classes, dtype=np.int64)
    shards = []
    hist = np.zeros((topology.num_clients, num_classes), dtype=np.int64)
    for i, cls in enumerate(classes):
        base, extra = divmod(shard_size, len(cls))
        parts = []
        for j, cl in enumerate(cls):
            take = base + (1 if j < extra else 0)
            if cursor[cl] + take > len(pools[cl]):
                raise InfeasiblePartition(
                    f"not enough samples of class {cl} for client {i}", client=i, label=cl
                )
            parts.append(pools[cl][cursor[cl]:cursor[cl] + take])
            cursor[cl] += take
            hist[i, cl] = take
        shards.append(np.sort(np.concatenate(parts)))
    es_hist = np.zeros((topology.num_es, num_classes), dtype=np.int64)
    for n, members in enumerate(topology.coverage):
        es_hist[n] = hist[list(members)].sum(axis=0)
    home_hist = np.zeros_like(es_hist)
    for i, h in enumerate(homes):
        home_hist[h] += hist[i]
    return Assignment(
        shards=tuple(shards),
        class_histogram=hist,
        es_class_histogram=es_hist,
        home_class_histogram=home_hist,
        client_classes=tuple(classes),
        home=tuple(homes),
        case=case,
    )


# --------------------------------------------------------------------------
# synthetic quadratics


def synth_quadratics(topology: Topology, dim: int, heterogeneity: float, rng_seed: int, *,
                     mu: float = 0.5, L: float = 2.0, noise: float = 0.5,
                     optima=None, hessians=None, offsets=None,
                     domain_radius: float | None = None):
    """Per-client quadratics with exactly known constants.

    Returns ``(QuadraticProblem, ProblemConstants)``. Client Hessians have
    eigenvalues in ``[mu, L]``, with ``mu`` and ``L`` both attained. Client
    optima lie within ``heterogeneity`` of a common centre. ``optima``,
    ``hessians`` and ``offsets`` override the random draws.

    Gradients are bounded only on a ball, so ``H_sq`` is the bound over the
    ball of ``domain_radius`` around the centre (default ``2 + 3 *
    heterogeneity``); iterates started inside it stay inside when the step
    size is at most ``1/L`` and the noise is small.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if heterogeneity < 0:
        raise ValueError("heterogeneity must be nonnegative")
    rng = np.random.default_rng([int(rng_seed), 0x90AD])
    k = topology.num_clients
    p = np.asarray(topology.p, dtype=float)
    center = rng.standard_normal(dim)
    if optima is None:
        u = rng.standard_normal((k, dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        radius = rng.random(k) ** (1.0 / dim)
        a = center + heterogeneity * radius[:, None] * u
    else:
        a = np.asarray(optima, dtype=float).reshape(k, dim)
        center = a.mean(axis=0)
    if hessians is None:
        A = np.empty((k, dim, dim))
        eig_lo, eig_hi = mu, L
        for i in range(k):
            eigs = rng.uniform(mu, L, size=dim)
            if dim >= 2:
                eigs[0], eigs[1] = mu, L
            else:
                eigs[0] = mu if i % 2 == 0 else L
            q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
            A[i] = (q * eigs) @ q.T
            A[i] = 0.5 * (A[i] + A[i].T)
        if dim == 1 and k == 1:
            eig_hi = mu
    else:
        A = np.asarray(hessians, dtype=float).reshape(k, dim, dim)
        eigs = np.concatenate([np.linalg.eigvalsh(Ai) for Ai in A])
        eig_lo, eig_hi = float(eigs.min()), float(eigs.max())
    b = np.zeros(k) if offsets is None else np.asarray(offsets, dtype=float)
    sigma = noise * rng.uniform(0.5, 1.0, size=k)
    # closed-form minimiser of sum_i p_i F_i
    a_bar = np.einsum("i,ijk->jk", p, A)
    rhs = np.einsum("i,ijk,ik->j", p, A, a)
    w_star = np.linalg.solve(a_bar, rhs)
    f_k_star = b.copy()
    if domain_radius is None:
        domain_radius = 2.0 + 3.0 * heterogeneity
    reach = domain_radius + np.linalg.norm(a - center, axis=1)
    h_sq = float(np.max((eig_hi * reach) ** 2 + sigma ** 2))
    problem = QuadraticProblem(
        A=A, a=a, b=b, sigma=sigma, p=p, w_star=w_star,
        domain_center=center, domain_radius=float(domain_radius),
        constants=None,  # type: ignore[arg-type]
    )
    f_star = problem.global_value(w_star)
    gamma = f_star - float(p @ f_k_star)
    constants = ProblemConstants(
        L=float(eig_hi), mu=float(eig_lo), sigma_sq=sigma ** 2, H_sq=h_sq,
        gamma=max(gamma, 0.0), f_star=f_star, f_k_star=f_k_star, exact=True,
    )
    problem.constants = constants
    return problem, constants

