"""Hot numeric kernels.

Every kernel exists twice: a numba ``@njit`` loop version and a pure-numpy
version. The public name binds to the numba one unless numba is missing or
``HETRADAR_DISABLE_NUMBA`` is set to a non-empty value other than ``0``.
Both variants stay importable as ``<name>_numba`` / ``<name>_numpy`` so tests
and ``benchmarks/bench_kernels.py`` can compare them directly.
"""

import os

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import logsumexp

_flag = os.environ.get("HETRADAR_DISABLE_NUMBA", "")
try:
    if _flag not in ("", "0"):
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA


# ---------------------------------------------------------------------------
# scatter-max (polar projection collisions)


def scatter_max_numpy(flat_idx, values, size):
    out = np.zeros(size, dtype=np.float64)
    np.maximum.at(out, flat_idx, values)
    return out


def _scatter_max_loop(flat_idx, values, size):
    out = np.zeros(size, dtype=np.float64)
    for i in range(flat_idx.shape[0]):
        j = flat_idx[i]
        if values[i] > out[j]:
            out[j] = values[i]
    return out


# ---------------------------------------------------------------------------
# 2D convolution: zero padding along rows (range), circular along columns
# (azimuth). Row stride ``sh``, column stride ``sw``, column dilation ``dw``.


def _conv_out_shape(h, w, kh, kw, sh, sw):
    return (h + sh - 1) // sh, (w + sw - 1) // sw


def conv2d_numpy(x, weight, sh, sw, dw=1):
    """im2col + matmul. ``x`` is (B, Cin, H, W), ``weight`` (Cout, Cin, kh, kw)."""
    b, cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    ho, wo = _conv_out_shape(h, w, kh, kw, sh, sw)
    ph = kh // 2
    xp = np.zeros((b, cin, h + 2 * ph, w), dtype=x.dtype)
    xp[:, :, ph:ph + h] = x
    rows = sh * np.arange(ho)
    cols_base = sw * np.arange(wo)
    patches = np.empty((b, cin, kh, kw, ho, wo), dtype=x.dtype)
    for di in range(kh):
        r = rows + di
        for dj in range(kw):
            c = (cols_base + dw * (dj - kw // 2)) % w
            patches[:, :, di, dj] = xp[:, :, r][:, :, :, c]
    patches = patches.reshape(b, cin * kh * kw, ho * wo)
    wmat = weight.reshape(cout, cin * kh * kw).astype(x.dtype, copy=False)
    out = np.matmul(wmat, patches)
    return out.reshape(b, cout, ho, wo)


def _conv2d_loop(x, weight, sh, sw, dw):
    b, cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    ho = (h + sh - 1) // sh
    wo = (w + sw - 1) // sw
    ph = kh // 2
    pw = kw // 2
    out = np.zeros((b, cout, ho, wo), dtype=x.dtype)
    for n in range(b):
        for i in range(ho):
            for di in range(kh):
                r = sh * i + di - ph
                if r < 0 or r >= h:
                    continue
                for j in range(wo):
                    for dj in range(kw):
                        c = (sw * j + dw * (dj - pw)) % w
                        for ci in range(cin):
                            v = x[n, ci, r, c]
                            if v == 0.0:
                                continue
                            for co in range(cout):
                                out[n, co, i, j] += weight[co, ci, di, dj] * v
    return out


# ---------------------------------------------------------------------------
# log-domain Sinkhorn


def log_sinkhorn_numpy(logits, log_a, log_b, max_iters, tol):
    """Returns (log_plan, iterations, row_marginal_l1_error)."""
    n, m = logits.shape
    f = np.zeros(n)
    g = np.zeros(m)
    a = np.exp(log_a)
    err = np.inf
    it = 0
    while it < max_iters:
        it += 1
        f = log_a - logsumexp(logits + g[None, :], axis=1)
        g = log_b - logsumexp(logits + f[:, None], axis=0)
        rows = np.exp(logsumexp(logits + f[:, None] + g[None, :], axis=1))
        err = np.abs(rows - a).sum()
        if err < tol:
            break
    return logits + f[:, None] + g[None, :], it, err


def _log_sinkhorn_loop(logits, log_a, log_b, max_iters, tol):
    n, m = logits.shape
    f = np.zeros(n)
    g = np.zeros(m)
    err = np.inf
    it = 0
    while it < max_iters:
        it += 1
        for i in range(n):
            mx = -np.inf
            for j in range(m):
                v = logits[i, j] + g[j]
                if v > mx:
                    mx = v
            s = 0.0
            for j in range(m):
                s += np.exp(logits[i, j] + g[j] - mx)
            f[i] = log_a[i] - (mx + np.log(s))
        for j in range(m):
            mx = -np.inf
            for i in range(n):
                v = logits[i, j] + f[i]
                if v > mx:
                    mx = v
            s = 0.0
            for i in range(n):
                s += np.exp(logits[i, j] + f[i] - mx)
            g[j] = log_b[j] - (mx + np.log(s))
        err = 0.0
        for i in range(n):
            s = 0.0
            for j in range(m):
                s += np.exp(logits[i, j] + f[i] + g[j])
            err += abs(s - np.exp(log_a[i]))
        if err < tol:
            break
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = logits[i, j] + f[i] + g[j]
    return out, it, err


# ---------------------------------------------------------------------------
# RANSAC hypothesis scoring for Doppler ego-velocity


def ransac_score_numpy(dirs, doppler, samples, threshold):
    """Score 3-point hypotheses. Returns (velocities (S,3), inlier counts (S,)).

    Singular minimal sets get count -1.
    """
    a = dirs[samples]  # (S, 3, 3)
    rhs = -doppler[samples]  # (S, 3)
    det = np.linalg.det(a)
    ok = np.abs(det) > 1e-9
    vel = np.zeros((samples.shape[0], 3))
    if ok.any():
        vel[ok] = np.linalg.solve(a[ok], rhs[ok][..., None])[..., 0]
    resid = np.abs(doppler[None, :] + vel @ dirs.T)
    counts = (resid < threshold).sum(axis=1)
    counts[~ok] = -1
    return vel, counts


def _ransac_score_loop(dirs, doppler, samples, threshold):
    s_count = samples.shape[0]
    n = dirs.shape[0]
    vel = np.zeros((s_count, 3))
    counts = np.empty(s_count, dtype=np.int64)
    for s in range(s_count):
        a = np.empty((3, 3))
        rhs = np.empty(3)
        for r in range(3):
            k = samples[s, r]
            for c in range(3):
                a[r, c] = dirs[k, c]
            rhs[r] = -doppler[k]
        det = np.linalg.det(a)
        if abs(det) <= 1e-9:
            counts[s] = -1
            continue
        v = np.linalg.solve(a, rhs)
        vel[s] = v
        cnt = 0
        for i in range(n):
            res = doppler[i] + dirs[i, 0] * v[0] + dirs[i, 1] * v[1] + dirs[i, 2] * v[2]
            if abs(res) < threshold:
                cnt += 1
        counts[s] = cnt
    return vel, counts


# ---------------------------------------------------------------------------
# tridiagonal solve


def tridiag_solve_numpy(lower, diag, upper, rhs):
    n = diag.shape[0]
    if n == 1:
        return rhs / diag
    ab = np.zeros((3, n))
    ab[0, 1:] = upper
    ab[1] = diag
    ab[2, :-1] = lower
    return solve_banded((1, 1), ab, rhs)


def _tridiag_loop(lower, diag, upper, rhs):
    """Thomas algorithm; ``lower[i]`` couples rows i+1 and i."""
    n = diag.shape[0]
    c = np.empty(n)
    d = np.empty(n)
    c[0] = upper[0] / diag[0] if n > 1 else 0.0
    d[0] = rhs[0] / diag[0]
    for i in range(1, n):
        den = diag[i] - lower[i - 1] * c[i - 1]
        c[i] = upper[i] / den if i < n - 1 else 0.0
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / den
    x = np.empty(n)
    x[n - 1] = d[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x


if HAVE_NUMBA:
    scatter_max_numba = njit(cache=True)(_scatter_max_loop)
    _conv_jit = njit(cache=True, fastmath=False)(_conv2d_loop)
    log_sinkhorn_numba = njit(cache=True)(_log_sinkhorn_loop)
    ransac_score_numba = njit(cache=True)(_ransac_score_loop)
    tridiag_solve_numba = njit(cache=True)(_tridiag_loop)

    def conv2d_numba(x, weight, sh, sw, dw=1):
        return _conv_jit(np.ascontiguousarray(x), np.ascontiguousarray(weight.astype(x.dtype)),
                         sh, sw, dw)
else:
    scatter_max_numba = conv2d_numba = log_sinkhorn_numba = None
    ransac_score_numba = tridiag_solve_numba = None


def _pick(name):
    nb = globals()[name + "_numba"]
    return nb if (USE_NUMBA and nb is not None) else globals()[name + "_numpy"]


scatter_max = _pick("scatter_max")
log_sinkhorn = _pick("log_sinkhorn")
ransac_score = _pick("ransac_score")
tridiag_solve = _pick("tridiag_solve")
# im2col + BLAS beats the loop nest on every size we run; the loop is kept
# for the benchmark and cross-checks.
conv2d = conv2d_numpy


def backend():
    return "numba" if USE_NUMBA else "numpy"
