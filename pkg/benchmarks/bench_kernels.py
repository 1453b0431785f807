"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run:  python3 benchmarks/bench_kernels.py [--repeat N]
Each row checks that both variants agree before timing them.
"""

import argparse
import time

import numpy as np

from hetradar import _kernels as K


def _time(fn, repeat):
    fn()  # warm-up (JIT compile on first call)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    # polar projection: ~2000 points into a 384 x 192 raster
    idx = rng.integers(0, 384 * 192, 2000)
    val = rng.uniform(1, 120, 2000)
    yield "scatter_max 2k pts", (idx, val, 384 * 192)

    # first backbone block on a batch of 16 views
    x = rng.standard_normal((16, 1, 384, 192))
    w = rng.standard_normal((8, 1, 3, 3))
    yield "conv2d 16x1x384x192", (x, w, 2, 2, 1)
    x = rng.standard_normal((16, 64, 24, 12))
    w = rng.standard_normal((128, 64, 3, 3))
    yield "conv2d 16x64x24x12", (x, w, 2, 2, 1)

    # mid-level Sinkhorn: 72 locations, 64 clusters + 2 bins
    logits = rng.standard_normal((72, 66))
    la = np.log(np.full(72, 1 / 72))
    lb = np.log(np.full(66, 1 / 66))
    yield "log_sinkhorn 72x66", (logits, la, lb, 100, 1e-6)

    # 100 RANSAC hypotheses over 300 points
    d = rng.standard_normal((300, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    dop = -d @ np.array([5.0, 0.3, 0.0])
    samples = np.stack([rng.choice(300, 3, replace=False) for _ in range(100)])
    yield "ransac_score 300x100", (d, dop, samples, 0.25)

    # calibration normal equations for 1000 frames
    n = 1000
    yield "tridiag_solve n=1000", (np.full(n - 1, -0.2), np.full(n, 1.5), np.full(n - 1, -0.2),
                                   rng.standard_normal(n))


def _agree(a, b):
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float),
                       rtol=1e-6, atol=1e-6)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        print("numba unavailable (or disabled); only the numpy kernels can run")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<24}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}  agree")
    for label, call in cases(rng):
        name = label.split()[0]
        np_fn = getattr(K, name + "_numpy")
        nb_fn = getattr(K, name + "_numba")
        t_np = _time(lambda: np_fn(*call), args.repeat)
        if nb_fn is None:
            print(f"{label:<24}{t_np * 1e3:>11.3f}{'-':>11}{'-':>9}  -")
            continue
        ok = _agree(np_fn(*call), nb_fn(*call))
        t_nb = _time(lambda: nb_fn(*call), args.repeat)
        print(f"{label:<24}{t_np * 1e3:>11.3f}{t_nb * 1e3:>11.3f}{t_np / t_nb:>8.1f}x  {ok}")


if __name__ == "__main__":
    main()
