"""Spinning-radar synchronisation: full-circle resampling, multi-view
windows, and the cross-sensor RCS offset.

Full-circle images have ``3W`` columns spanning 360 degrees. Column ``c`` is
centred on bearing ``phi/2 - (c + 0.5) * 2*pi / (3W)`` (counter-clockwise
from the forward axis), so columns ``[0, W)`` coincide with the 4D radar's
field of view when the two sensors are yaw-aligned.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import huber

from . import _kernels
from .errors import ConfigError, ConvergenceError, DataError, ShapeError
from .scan_model import PolarGrid, PolarImage


@dataclass(frozen=True)
class CalibrationConfig:
    delta_huber: float = 2.0
    lambda_smooth: float = 0.1
    max_iterations: int = 500
    tolerance: float = 1e-10

    def __post_init__(self):
        if not self.delta_huber > 0:
            raise ConfigError("delta_huber must be positive")
        if not self.lambda_smooth >= 0:
            raise ConfigError("lambda_smooth must be non-negative")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")


@dataclass
class CalibrationResult:
    per_frame_k: np.ndarray
    c_corr: float
    final_loss: float
    iterations_used: int
    loss_history: list = field(default_factory=list)

    def to_dict(self):
        return {"per_frame_k": [float(k) for k in self.per_frame_k], "c_corr": self.c_corr,
                "final_loss": self.final_loss, "iterations_used": self.iterations_used}


@dataclass(frozen=True, eq=False)
class MultiViewSet:
    views: np.ndarray  # (n_v, H, W)
    delta: int
    grid: PolarGrid
    source_timestamp: float = 0.0

    @property
    def n_views(self):
        return self.views.shape[0]

    def image(self, j):
        return PolarImage(self.grid, self.views[j], self.source_timestamp)

    def images(self):
        return [self.image(j) for j in range(self.n_views)]


def _snap(u, eps=1e-9):
    r = np.round(u)
    return np.where(np.abs(u - r) < eps, r, u)


def bilinear_resample(values, out_shape, row_coords=None, col_shift=0.0, circular_cols=True):
    """Resample a matrix with half-pixel-centre bilinear interpolation.

    ``row_coords`` overrides the fractional source row of each output row
    (entries that are NaN produce zero rows); rows are clamped at the edges.
    Columns wrap when ``circular_cols`` and are clamped otherwise;
    ``col_shift`` is added to every fractional source column.
    """
    src = np.asarray(values, dtype=np.float64)
    n_r, n_a = src.shape
    h, w = out_shape
    if row_coords is None:
        row_coords = (np.arange(h) + 0.5) * n_r / h - 0.5
    v = _snap(np.asarray(row_coords, dtype=np.float64))
    valid_rows = np.isfinite(v)
    v = np.clip(np.where(valid_rows, v, 0.0), 0.0, n_r - 1)
    r0 = np.floor(v).astype(np.int64)
    r1 = np.minimum(r0 + 1, n_r - 1)
    fr = v - r0

    u = _snap((np.arange(w) + 0.5) * n_a / w - 0.5 + col_shift)
    if circular_cols:
        u = np.mod(u, n_a)
        c0 = np.floor(u).astype(np.int64) % n_a
        c1 = (c0 + 1) % n_a
    else:
        u = np.clip(u, 0.0, n_a - 1)
        c0 = np.floor(u).astype(np.int64)
        c1 = np.minimum(c0 + 1, n_a - 1)
    fc = u - np.floor(u)

    top = src[r0][:, c0] * (1 - fc) + src[r0][:, c1] * fc
    bot = src[r1][:, c0] * (1 - fc) + src[r1][:, c1] * fc
    out = top * (1 - fr)[:, None] + bot * fr[:, None]
    out[~valid_rows] = 0.0
    return out


def rescale_spinning(scan, grid, azimuth_origin=None):
    """Resample a spinning sweep onto the H x 3W full-circle raster.

    ``azimuth_origin`` is the bearing (rad, CCW from forward) of the leading
    edge of the scan's first azimuth bin; bins advance clockwise. ``None``
    means the scan already starts at ``+phi/2`` like the output raster.
    Range bins are matched physically through ``range_resolution``; rows
    beyond the sensor's coverage are zero.
    """
    if abs(3 * grid.phi - 2 * math.pi) > 1e-9:
        raise ConfigError("full-circle rescale needs phi = 120 degrees (3W columns = 360)")
    n_r, n_a = scan.shape
    rho = (np.arange(grid.H) + 0.5) * grid.bin_range
    rows = rho / scan.range_resolution - 0.5
    rows = np.where(rho <= n_r * scan.range_resolution, rows, np.nan)
    shift = 0.0
    if azimuth_origin is not None:
        shift = (azimuth_origin - grid.phi / 2) * n_a / (2 * math.pi)
    out = bilinear_resample(scan.power, (grid.H, 3 * grid.W), row_coords=rows, col_shift=shift)
    return np.maximum(out, 0.0)


def generate_multiview(full, delta, grid=None, timestamp=0.0):
    """Cut ``3W / delta`` circular windows of width W at stride ``delta``."""
    full = np.asarray(full, dtype=np.float64)
    h, total = full.shape
    if total % 3:
        raise ShapeError("full-circle image width must be 3W")
    w = total // 3
    if delta <= 0 or total % delta:
        raise ConfigError(f"delta={delta} must divide the full-circle width {total}")
    if grid is None:
        grid = PolarGrid(h, w, 150.0, 2 * math.pi / 3)
    elif (grid.H, grid.W) != (h, w):
        raise ShapeError("grid does not match full-circle image")
    n_v = total // delta
    cols = (delta * np.arange(n_v)[:, None] + np.arange(w)[None, :]) % total
    views = np.transpose(full[:, cols], (1, 0, 2))
    return MultiViewSet(np.ascontiguousarray(views), int(delta), grid, timestamp)


def apply_rcs_correction(view, c_corr):
    """Shift every return by ``c_corr``; no-return pixels stay zero."""
    if not math.isfinite(c_corr):
        raise ConfigError("c_corr must be finite")
    if isinstance(view, PolarImage):
        return PolarImage(view.grid, apply_rcs_correction(view.pixels, c_corr), view.timestamp)
    if isinstance(view, MultiViewSet):
        return MultiViewSet(apply_rcs_correction(view.views, c_corr), view.delta, view.grid,
                            view.source_timestamp)
    arr = np.asarray(view, dtype=np.float64)
    return np.where(arr != 0, np.maximum(arr + c_corr, 0.0), 0.0)


def huber_loss(r, delta):
    return huber(delta, r)


def _pixels(x):
    return x.pixels if isinstance(x, PolarImage) else np.asarray(x, dtype=np.float64)


def pair_residuals(pairs):
    """Per-frame residual vectors ``I_4D - M`` over the shared valid pixels."""
    res = []
    for i, (fourd, spin) in enumerate(pairs):
        a, b = _pixels(fourd), _pixels(spin)
        if a.shape != b.shape:
            raise ShapeError(f"frame {i}: image shapes {a.shape} and {b.shape} differ")
        valid = (a != 0) & (b != 0)
        if not valid.any():
            raise DataError(f"frame {i}: no pixel is valid in both images")
        res.append((a - b)[valid])
    return res


def calibration_objective(k, residuals, cfg):
    data = sum(huber_loss(r - ki, cfg.delta_huber).mean() for r, ki in zip(residuals, k))
    smooth = cfg.lambda_smooth * float(np.sum(np.diff(k) ** 2))
    return float(data + smooth)


def calibrate_rcs(pairs, cfg=CalibrationConfig()):
    """Jointly fit per-frame offsets under mean Huber loss plus a first-
    difference smoothness penalty, by IRLS with a tridiagonal solve per step.
    """
    residuals = pair_residuals(pairs)
    n = len(residuals)
    if n == 0:
        raise DataError("no calibration pairs")
    sizes = np.array([r.size for r in residuals], dtype=np.float64)
    frame = np.repeat(np.arange(n), sizes.astype(np.int64))
    r_all = np.concatenate(residuals)
    delta, lam = cfg.delta_huber, cfg.lambda_smooth

    k = np.array([np.median(r) for r in residuals])
    history = [calibration_objective(k, residuals, cfg)]
    lower = np.full(max(n - 1, 0), -2 * lam)
    deg = np.full(n, 2.0)
    if n > 1:
        deg[0] = deg[-1] = 1.0
    else:
        deg[0] = 0.0
    for it in range(1, cfg.max_iterations + 1):
        e = np.abs(r_all - k[frame])
        w = np.where(e <= delta, 1.0, delta / np.maximum(e, delta))
        a = np.bincount(frame, weights=w, minlength=n) / sizes
        b = np.bincount(frame, weights=w * r_all, minlength=n) / sizes
        diag = a + 2 * lam * deg
        k_new = _kernels.tridiag_solve(lower, diag, lower, b)
        change = float(np.abs(k_new - k).sum())
        k = k_new
        history.append(calibration_objective(k, residuals, cfg))
        if change < cfg.tolerance:
            return CalibrationResult(k, float(k.mean()), history[-1], it, history)
    raise ConvergenceError(f"IRLS did not converge in {cfg.max_iterations} iterations",
                           last=CalibrationResult(k, float(k.mean()), history[-1],
                                                  cfg.max_iterations, history))


def synchronize_spinning(scan, grid, delta, c_corr=0.0, azimuth_origin=None):
    """rescale -> multi-view -> RCS correction in one call."""
    full = rescale_spinning(scan, grid, azimuth_origin)
    views = generate_multiview(full, delta, grid, scan.timestamp)
    return apply_rcs_correction(views, c_corr) if c_corr else views


def save_views(views, path):
    g = views.grid
    np.savez(path, views=views.views, delta=views.delta, timestamp=views.source_timestamp,
             grid=np.array([g.H, g.W, g.rho_max, g.phi]))


def load_views(path):
    with np.load(path) as z:
        g = z["grid"]
        grid = PolarGrid(int(g[0]), int(g[1]), float(g[2]), float(g[3]))
        return MultiViewSet(z["views"], int(z["delta"]), grid, float(z["timestamp"]))
