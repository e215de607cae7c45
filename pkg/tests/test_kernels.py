import os
import subprocess
import sys

import numpy as np
import pytest

from hhfl import kernels

IMPLS = kernels.implementations()


@pytest.mark.parametrize("name", sorted(IMPLS))
def test_combine_matches_matmul(rng, name):
    c = rng.random((3, 7))
    c[1, 2] = 0.0
    v = rng.normal(size=(7, 11))
    np.testing.assert_allclose(IMPLS[name].combine(c, v), c @ v, rtol=1e-13, atol=1e-13)


def test_backends_agree(rng):
    if "cython" not in IMPLS:
        pytest.skip("compiled extension not built")
    c = rng.random((4, 20))
    v = rng.normal(size=(20, 33))
    assert np.array_equal(IMPLS["cython"].combine(c, v), IMPLS["python"].combine(c, v))
    params = rng.normal(size=(5, 4 * 3 + 3))
    X = rng.normal(size=(30, 4))
    y = rng.integers(0, 3, size=30).astype(np.int64)
    idx = rng.integers(0, 30, size=25).astype(np.int64)
    offsets = np.array([0, 5, 5, 12, 20, 25], dtype=np.int64)  # client 1 has an empty batch
    a = IMPLS["cython"].softmax_local_step(params, X, y, idx, offsets, 0.1, 3)
    b = IMPLS["python"].softmax_local_step(params, X, y, idx, offsets, 0.1, 3)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)
    assert np.array_equal(a[1], params[1])


def test_read_only_inputs(rng):
    c = rng.random((2, 3))
    v = rng.normal(size=(3, 4))
    c.setflags(write=False)
    v.setflags(write=False)
    kernels.combine(c, v)


def test_env_var_forces_fallback():
    out = subprocess.run([sys.executable, "-c", "import hhfl.kernels as k; print(k.BACKEND)"],
                         env={**os.environ, "HHFL_PURE_PYTHON": "1"}, capture_output=True, text=True,
                         check=True)
    assert out.stdout.strip() == "python"
