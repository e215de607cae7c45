"""Compare the compiled and pure-Python kernel backends.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Times the two hot kernels on shapes taken from the reference 57-client logistic run
(57 clients, 20 features, 10 classes, batch 20) and reports the largest
difference between backends. ``combine`` agrees bit for bit; the softmax
step differs only by rounding because numpy's matrix products sum in a
different order.
"""
import argparse
import timeit

import numpy as np

from hhfl import kernels
from hhfl.topology import build_topology, fig3_topology


def cases(rng):
    topo = build_topology(fig3_topology())
    k, feats, classes = topo.num_clients, 20, 10
    dim = feats * classes + classes
    params = rng.normal(size=(k, dim))
    X = rng.normal(size=(2000, feats))
    y = rng.integers(0, classes, size=2000)
    idx = rng.integers(0, 2000, size=20 * k).astype(np.int64)
    offsets = np.arange(0, 20 * k + 1, 20, dtype=np.int64)
    edge = topo.edge_matrix()
    return {
        "combine (edge, 3x57)": lambda impl: impl.combine(edge, params),
        "combine (virtual global, 1x57)": lambda impl: impl.combine(np.asarray(topo.p)[None, :].copy(), params),
        "softmax_local_step (57 clients)": lambda impl: impl.softmax_local_step(
            params, X, y, idx, offsets, 0.1, classes),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    impls = kernels.implementations()
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(impls)}")
    rng = np.random.default_rng(0)
    for name, fn in cases(rng).items():
        times = {}
        outs = {}
        for backend, impl in impls.items():
            outs[backend] = fn(impl)
            times[backend] = min(timeit.repeat(lambda: fn(impl), number=args.repeat, repeat=3)) / args.repeat
        line = f"{name:34s}" + "".join(f"  {b}={t * 1e6:9.1f} us" for b, t in times.items())
        if "cython" in times:
            diff = float(np.max(np.abs(outs["cython"] - outs["python"])))
            line += f"  speedup={times['python'] / times['cython']:6.1f}x  max|diff|={diff:.1e}"
        print(line)


if __name__ == "__main__":
    main()
