"""4D radar preprocessing: Doppler ego-velocity, point removal, polar
projection and temporal max-pooling."""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (ConfigError, DegenerateGeometryError, InsufficientDataError,
                     ShapeError)
from .scan_model import PolarImage

DEFAULT_RCS_OFFSET = 60.0


@dataclass(frozen=True)
class EgoVelocity:
    vx: float
    vy: float
    vz: float
    inlier_count: int
    inlier_ratio: float

    @property
    def vector(self):
        return np.array([self.vx, self.vy, self.vz])


@dataclass(frozen=True)
class RemovalConfig:
    z_min: float = -2.0
    z_max: float = 10.0
    rcs_min: float = -20.0
    rcs_max: float = 40.0
    doppler_residual_threshold: float = 0.25
    ransac_iterations: int = 100
    ground_z_threshold: float = 0.3
    # None -> fit as the 5th percentile of static-point heights per scan
    ground_level: float | None = None
    ground_percentile: float = 5.0

    def __post_init__(self):
        if not self.z_min < self.z_max:
            raise ConfigError("z_min must be below z_max")
        if not self.rcs_min < self.rcs_max:
            raise ConfigError("rcs_min must be below rcs_max")
        if self.doppler_residual_threshold <= 0 or self.ground_z_threshold <= 0:
            raise ConfigError("thresholds must be positive")
        if self.ransac_iterations < 1:
            raise ConfigError("ransac_iterations must be >= 1")


@dataclass(frozen=True)
class AggregationConfig:
    K: int = 5

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be >= 1")


def _unit_directions(xyz):
    return xyz / np.linalg.norm(xyz, axis=1, keepdims=True)


def doppler_residuals(scan, ego):
    """|doppler_i + v . d_i| for every point."""
    d = _unit_directions(scan.xyz)
    return np.abs(scan.doppler + d @ ego.vector)


def estimate_ego_velocity(scan, cfg=RemovalConfig(), seed=0):
    """3-point RANSAC on the Doppler model ``doppler_i = -v . d_i`` followed
    by a least-squares refit on the winning consensus set."""
    n = len(scan)
    if n < 3:
        raise InsufficientDataError(f"need at least 3 points, got {n}")
    dirs = _unit_directions(scan.xyz)
    dop = np.ascontiguousarray(scan.doppler)
    rng = np.random.default_rng(seed)
    samples = np.empty((cfg.ransac_iterations, 3), dtype=np.int64)
    for i in range(cfg.ransac_iterations):
        samples[i] = rng.choice(n, size=3, replace=False)
    vel, counts = _kernels.ransac_score(dirs, dop, samples, cfg.doppler_residual_threshold)
    best = int(np.argmax(counts))
    if counts[best] < 3:
        raise DegenerateGeometryError("no non-degenerate minimal set found")
    inl = np.abs(dop + dirs @ vel[best]) < cfg.doppler_residual_threshold
    a = dirs[inl]
    if np.linalg.matrix_rank(a) < 3:
        raise DegenerateGeometryError("inlier directions span fewer than 3 dimensions")
    v, *_ = np.linalg.lstsq(a, -dop[inl], rcond=None)
    # one consensus refresh with the refined model
    inl2 = np.abs(dop + dirs @ v) < cfg.doppler_residual_threshold
    if inl2.sum() >= inl.sum() and np.linalg.matrix_rank(dirs[inl2]) == 3:
        inl = inl2
        v, *_ = np.linalg.lstsq(dirs[inl], -dop[inl], rcond=None)
    count = int(inl.sum())
    return EgoVelocity(float(v[0]), float(v[1]), float(v[2]), count, count / n)


def fit_ground_level(scan, static_mask, cfg):
    if cfg.ground_level is not None:
        return cfg.ground_level
    z = scan.xyz[static_mask, 2]
    if z.size == 0:
        return -math.inf
    return float(np.percentile(z, cfg.ground_percentile))


def remove_unreliable(scan, ego, cfg=RemovalConfig()):
    """Keep static, in-band points above the ground layer.

    Idempotent when ``cfg.ground_level`` is fixed; a per-scan fitted ground
    level moves up once the lowest points are gone.
    """
    if len(scan) == 0:
        return scan
    static = doppler_residuals(scan, ego) < cfg.doppler_residual_threshold
    z = scan.xyz[:, 2]
    rcs = scan.rcs
    ground = fit_ground_level(scan, static, cfg)
    keep = (static
            & (z >= cfg.z_min) & (z <= cfg.z_max)
            & (z > ground + cfg.ground_z_threshold)
            & (rcs >= cfg.rcs_min) & (rcs <= cfg.rcs_max))
    if keep.all():
        return scan
    return scan.subset(keep)


def polar_bins(x, y, grid):
    """Integer (range, azimuth) bins; out-of-grid points get -1."""
    rho = np.hypot(x, y)
    r = np.floor(rho * grid.H / grid.rho_max).astype(np.int64)
    theta = np.floor((1.0 - 2.0 * np.arctan2(y, x) / grid.phi) * grid.W / 2.0).astype(np.int64)
    valid = (r >= 0) & (r < grid.H) & (theta >= 0) & (theta < grid.W)
    r[~valid] = -1
    theta[~valid] = -1
    return r, theta


def project_polar(scan, grid, c=DEFAULT_RCS_OFFSET):
    """Rasterise a refined scan into an RCS polar image (value 2*rcs + c,
    strongest return wins, non-positive encodings dropped)."""
    if len(scan) == 0:
        return PolarImage(grid, np.zeros((grid.H, grid.W)), scan.timestamp)
    pts = scan.points
    r, theta = polar_bins(pts[:, 0], pts[:, 1], grid)
    val = 2.0 * pts[:, 4] + c
    ok = (r >= 0) & (val > 0)
    flat = r[ok] * grid.W + theta[ok]
    img = _kernels.scatter_max(np.ascontiguousarray(flat), np.ascontiguousarray(val[ok]),
                               grid.H * grid.W)
    return PolarImage(grid, img.reshape(grid.H, grid.W), scan.timestamp)


def project_cartesian(scan, grid, c=DEFAULT_RCS_OFFSET):
    """Ablation: Cartesian BEV on an H x W raster centred on the sensor.

    Rows run along +x (forward) from -rho_max..rho_max, columns along +y.
    """
    img = np.zeros((grid.H, grid.W))
    if len(scan):
        pts = scan.points
        cartesian_scatter(img, pts[:, 0], pts[:, 1], 2.0 * pts[:, 4] + c, grid.rho_max)
    return PolarImage(grid, img, scan.timestamp)


def cartesian_scatter(img, x, y, val, extent):
    h, w = img.shape
    row = np.floor((extent - x) * h / (2 * extent)).astype(np.int64)
    col = np.floor((extent - y) * w / (2 * extent)).astype(np.int64)
    ok = (row >= 0) & (row < h) & (col >= 0) & (col < w) & (val > 0)
    flat = row[ok] * w + col[ok]
    out = _kernels.scatter_max(np.ascontiguousarray(flat), np.ascontiguousarray(val[ok]), h * w)
    np.maximum(img, out.reshape(h, w), out=img)
    return img


def aggregate_temporal(images):
    """Element-wise max over consecutive frames; keeps the last timestamp."""
    images = list(images)
    if not images:
        raise ShapeError("cannot aggregate an empty image sequence")
    grid = images[0].grid
    for im in images[1:]:
        if im.grid != grid:
            raise ShapeError("images do not share one polar grid")
    out = np.maximum.reduce([im.pixels for im in images])
    return PolarImage(grid, out, images[-1].timestamp)


def aggregate_sequence(images, cfg=AggregationConfig()):
    """Sliding max-pool: output t pools frames max(0, t-K+1)..t."""
    images = list(images)
    return [aggregate_temporal(images[max(0, t - cfg.K + 1):t + 1]) for t in range(len(images))]


def refine_scan(scan, cfg=RemovalConfig(), seed=0):
    ego = estimate_ego_velocity(scan, cfg, seed)
    return remove_unreliable(scan, ego, cfg), ego
