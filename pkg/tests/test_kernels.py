import os
import subprocess
import sys

import numpy as np
import pytest

from hetradar import _kernels as K

needs_numba = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba unavailable")


def test_scatter_max_matches_python(rng):
    idx = rng.integers(0, 50, 400)
    val = rng.uniform(0.5, 9, 400)
    want = [0.0] * 50
    for i, v in zip(idx, val):
        want[i] = max(want[i], v)
    np.testing.assert_array_equal(K.scatter_max_numpy(idx, val, 50), want)
    np.testing.assert_array_equal(K._scatter_max_loop(idx, val, 50), want)


@pytest.mark.parametrize("stride,dil", [((1, 1), 1), ((2, 2), 1), ((2, 1), 3)])
def test_conv2d_numpy_matches_loop(rng, stride, dil):
    x = rng.standard_normal((2, 3, 9, 10))
    w = rng.standard_normal((4, 3, 3, 3))
    a = K.conv2d_numpy(x, w, *stride, dil)
    b = K._conv2d_loop(x, w, *stride, dil)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_tridiag_against_dense(rng):
    n = 12
    lo, up = rng.uniform(-1, 0, n - 1), rng.uniform(-1, 0, n - 1)
    dg = 3 + rng.random(n)
    rhs = rng.standard_normal(n)
    dense = np.diag(dg) + np.diag(lo, -1) + np.diag(up, 1)
    want = np.linalg.solve(dense, rhs)
    np.testing.assert_allclose(K.tridiag_solve_numpy(lo, dg, up, rhs), want, rtol=1e-12)
    np.testing.assert_allclose(K._tridiag_loop(lo, dg, up, rhs), want, rtol=1e-10)


def _kernel_cases(rng):
    idx = rng.integers(0, 300, 1000)
    yield "scatter_max", (idx, rng.uniform(1, 9, 1000), 300)
    yield "conv2d", (rng.standard_normal((2, 4, 12, 8)), rng.standard_normal((5, 4, 3, 3)), 2, 2, 1)
    logits = rng.standard_normal((20, 7))
    yield "log_sinkhorn", (logits, np.log(np.full(20, 1 / 20)), np.log(np.full(7, 1 / 7)), 100, 1e-9)
    d = rng.standard_normal((60, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    samples = np.stack([rng.choice(60, 3, replace=False) for _ in range(30)])
    samples[0] = [0, 0, 1]  # singular minimal set
    yield "ransac_score", (d, -d @ np.array([3.0, 0.5, 0.1]), samples, 0.25)
    n = 30
    yield "tridiag_solve", (np.full(n - 1, -0.3), np.full(n, 2.0), np.full(n - 1, -0.4),
                            rng.standard_normal(n))


def _close(a, b):
    if isinstance(a, tuple):
        for x, y in zip(a, b):
            _close(x, y)
    else:
        np.testing.assert_allclose(np.asarray(a, float), np.asarray(b, float), rtol=1e-9,
                                   atol=1e-10)


@needs_numba
def test_numba_matches_numpy(rng):
    for name, args in _kernel_cases(rng):
        _close(getattr(K, name + "_numba")(*args), getattr(K, name + "_numpy")(*args))


def test_backend_name():
    assert K.backend() in ("numba", "numpy")
    assert K.backend() == ("numba" if K.USE_NUMBA else "numpy")


def test_disable_env_gives_same_descriptor(tmp_path):
    code = ("import numpy as np, sys\n"
            "from hetradar import _kernels as K\n"
            "from hetradar.pipeline import Describer\n"
            "d = Describer.random(2, channels=(4, 8, 8, 8, 16), high_channels=8)\n"
            "img = np.where(np.random.default_rng(1).random((128, 64)) < 0.1, 70.0, 0.0)\n"
            "np.save(sys.argv[1], d.describe_images(img))\n"
            "print(K.backend())\n")
    outs = {}
    for flag in ("1", "0"):
        env = dict(os.environ, HETRADAR_DISABLE_NUMBA=flag)
        path = tmp_path / f"d{flag}.npy"
        res = subprocess.run([sys.executable, "-c", code, str(path)], env=env,
                             capture_output=True, text=True, check=True)
        outs[flag] = (res.stdout.strip(), np.load(path))
    assert outs["1"][0] == "numpy"
    if K.HAVE_NUMBA:
        assert outs["0"][0] == "numba"
    np.testing.assert_allclose(outs["1"][1], outs["0"][1], rtol=1e-9, atol=1e-12)
