"""End-to-end glue: scans -> synchronized images -> descriptors.

The stage toggles mirror the ablation axes: temporal scan aggregation,
polar (vs Cartesian) projection, RCS correction and the adaptive margin.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import backbone as bb
from . import holmes as hm
from .preprocess import (RemovalConfig, aggregate_temporal,
                         cartesian_scatter, project_cartesian, project_polar, refine_scan)
from .scan_model import PolarImage
from .sync import MultiViewSet, apply_rcs_correction, generate_multiview, rescale_spinning
from .weights_io import load_container, save_container


@dataclass(frozen=True)
class Toggles:
    scan_aggregation: bool = True
    polar_projection: bool = True
    rcs_correction: bool = True
    adaptive_margin: bool = True


def fourd_image(frames, grid, removal=RemovalConfig(), toggles=Toggles(), c=60.0, seed=0):
    """Refine and project the last K frames, max-pooled when aggregation is on."""
    frames = list(frames) if toggles.scan_aggregation else list(frames)[-1:]
    images = []
    for i, scan in enumerate(frames):
        refined, _ = refine_scan(scan, removal, seed + i)
        proj = project_polar if toggles.polar_projection else project_cartesian
        images.append(proj(refined, grid, c))
    return aggregate_temporal(images)


def spinning_cartesian(scan, grid):
    """Ablation: paint each spinning cell centre into the Cartesian raster."""
    n_r, n_a = scan.shape
    rho = (np.arange(n_r) + 0.5) * scan.range_resolution
    bearing = -(np.arange(n_a) + 0.5) * 2 * math.pi / n_a
    rr, bb_ = np.meshgrid(rho, bearing, indexing="ij")
    p = scan.power.astype(np.float64)
    m = p > 0
    img = np.zeros((grid.H, grid.W))
    cartesian_scatter(img, (rr * np.cos(bb_))[m], (rr * np.sin(bb_))[m], p[m], grid.rho_max)
    return img


def spinning_views(scan, grid, delta, c_corr=0.0, toggles=Toggles(), azimuth_origin=0.0):
    """Multi-view RCS polar images (or the single Cartesian ablation view)."""
    if not toggles.polar_projection:
        img = spinning_cartesian(scan, grid)
        if toggles.rcs_correction and c_corr:
            img = apply_rcs_correction(img, c_corr)
        return MultiViewSet(img[None], 3 * grid.W, grid, scan.timestamp)
    full = rescale_spinning(scan, grid, azimuth_origin)
    views = generate_multiview(full, delta, grid, scan.timestamp)
    if toggles.rcs_correction and c_corr:
        views = apply_rcs_correction(views, c_corr)
    return views


@dataclass(frozen=True, eq=False)
class Describer:
    weights: bb.BackboneWeights
    params: hm.HolmesParams
    cfg: hm.HolmesConfig = hm.HolmesConfig()

    @classmethod
    def random(cls, seed=0, cfg=hm.HolmesConfig(), channels=(8, 16, 32, 64, 128),
               high_channels=128):
        w = bb.init_backbone(seed, channels, high_channels if cfg.multi_scale else None)
        p = hm.init_holmes(seed + 1, w.channels, w.high_channels, cfg)
        return cls(w, p, cfg)

    @property
    def dim(self):
        return self.cfg.dim

    def describe_features(self, mid, high):
        return hm.describe(mid, high, self.params, self.cfg)

    def describe_images(self, images, batch=16):
        """(B, H, W) stack -> (B, dim) descriptors."""
        if isinstance(images, PolarImage):
            images = images.pixels[None]
        elif isinstance(images, MultiViewSet):
            images = images.views
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 2:
            images = images[None]
        out = np.empty((images.shape[0], self.dim))
        for s in range(0, images.shape[0], batch):
            mid, high = bb.extract_batch(images[s:s + batch], self.weights)
            for i in range(mid.shape[0]):
                hi = bb.FeatureMap(high[i]) if high is not None else None
                out[s + i] = self.describe_features(bb.FeatureMap(mid[i]), hi).values
        return out

    def describe_full_circle(self, full):
        """Rotation-invariant scan descriptor from a full-circle image.

        Features are extracted densely along azimuth with circular padding,
        which equals pooling the feature locations of every multi-view
        window (each column is covered equally often), so any integer column
        shift of ``full`` leaves the descriptor unchanged.
        """
        mid, high = bb.extract_dense(np.asarray(full, dtype=np.float64), self.weights)
        return self.describe_features(mid, high).values

    def save(self, path):
        bmeta, tensors = bb.backbone_tensors(self.weights)
        hmeta, htensors = hm.holmes_tensors(self.params, self.cfg)
        tensors.update(htensors)
        save_container(path, {"backbone": bmeta, "holmes": hmeta}, tensors)

    @classmethod
    def load(cls, path, cfg=None):
        meta, tensors = load_container(path)
        w = bb.backbone_from_tensors(meta["backbone"], tensors)
        p = hm.holmes_from_tensors(meta["holmes"], tensors)
        if cfg is None:
            h = meta["holmes"]
            cfg = hm.HolmesConfig(mid=hm.LevelConfig(**h["mid"]), high=hm.LevelConfig(**h["high"]),
                                  gem_p=h["gem_p"], multi_scale=h["multi_scale"],
                                  range_encoding=h.get("range_encoding", 0))
        return cls(w, p, cfg)
