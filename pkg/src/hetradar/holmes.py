"""Hierarchical optimal-transport aggregation of feature maps into a
multi-scale global descriptor.

Per level: each location's feature vector is extended with a fixed
sinusoidal encoding of its range row (constant along azimuth, so column
shifts still commute with everything), a 1x1 projection gives cluster
features, a 1x1 score layer plus
a dustbin and a ghostbin column give the transport scores, entropic
Sinkhorn (temperature from the feature statistics) assigns locations to
clusters, and the cluster sums are concatenated with a GeM + MLP global
vector before a final linear map and L2 normalisation.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .backbone import FeatureMap
from .errors import ConfigError, ConvergenceError, NumericalError, ShapeError


@dataclass(frozen=True)
class LevelConfig:
    clusters: int  # m
    cluster_dim: int  # l
    global_dim: int  # s
    out_dim: int  # d

    def __post_init__(self):
        if min(self.clusters, self.cluster_dim, self.global_dim, self.out_dim) <= 0:
            raise ConfigError("all HOLMES dimensions must be positive")


@dataclass(frozen=True)
class HolmesConfig:
    mid: LevelConfig = LevelConfig(64, 256, 256, 256)
    high: LevelConfig = LevelConfig(16, 64, 64, 64)
    sinkhorn_max_iters: int = 100
    sinkhorn_tolerance: float = 1e-6
    epsilon_reg: float = 1e-6
    gem_p: float = 3.0
    multi_scale: bool = True
    # None -> adaptive temperature from feature statistics
    fixed_reg: float | None = None
    # sin/cos pairs of the range-row encoding appended per location; 0 disables
    range_encoding: int = 16

    def __post_init__(self):
        if self.range_encoding < 0:
            raise ConfigError("range_encoding must be non-negative")

    @property
    def dim(self):
        return self.mid.out_dim + (self.high.out_dim if self.multi_scale else 0)


@dataclass(frozen=True, eq=False)
class LevelParams:
    proj_w: np.ndarray  # (l, C)
    proj_b: np.ndarray  # (l,)
    score_w: np.ndarray  # (m, C)
    score_b: np.ndarray  # (m,)
    dustbin: float
    ghost_w: np.ndarray  # (C,)
    ghost_b: float
    mlp1_w: np.ndarray  # (s, C)
    mlp1_b: np.ndarray
    mlp2_w: np.ndarray  # (s, s)
    mlp2_b: np.ndarray
    out_w: np.ndarray  # (d, m*l + s)

    @property
    def in_channels(self):
        return self.score_w.shape[1]

    _TENSORS = ("proj_w", "proj_b", "score_w", "score_b", "ghost_w", "mlp1_w", "mlp1_b",
                "mlp2_w", "mlp2_b", "out_w")

    def tensors(self, prefix):
        out = {f"{prefix}.{k}": getattr(self, k) for k in self._TENSORS}
        out[f"{prefix}.dustbin"] = np.array([self.dustbin])
        out[f"{prefix}.ghost_b"] = np.array([self.ghost_b])
        return out

    @classmethod
    def from_tensors(cls, tensors, prefix):
        kw = {k: np.asarray(tensors[f"{prefix}.{k}"], dtype=np.float64) for k in cls._TENSORS}
        kw["dustbin"] = float(tensors[f"{prefix}.dustbin"][0])
        kw["ghost_b"] = float(tensors[f"{prefix}.ghost_b"][0])
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class HolmesParams:
    mid: LevelParams
    high: LevelParams | None = None


@dataclass(frozen=True, eq=False)
class AssignmentMatrices:
    scores: np.ndarray  # S, n x m
    augmented: np.ndarray  # S-bar, n x (m + 2)
    transport: np.ndarray  # R, n x m
    plan: np.ndarray  # full converged plan, n x (m + 2)
    iterations: int
    marginal_error: float


@dataclass(frozen=True, eq=False)
class Descriptor:
    values: np.ndarray
    level_sizes: tuple = field(default=())

    def __len__(self):
        return self.values.shape[0]

    def level(self, i):
        start = sum(self.level_sizes[:i])
        return self.values[start:start + self.level_sizes[i]]


def init_level(rng, in_channels, cfg, extra=0):
    """``extra`` encoding channels feed the score and ghostbin layers only."""
    m, l, s, d = cfg.clusters, cfg.cluster_dim, cfg.global_dim, cfg.out_dim
    c = in_channels + extra
    return LevelParams(
        proj_w=rng.standard_normal((l, in_channels)) / math.sqrt(in_channels),
        proj_b=np.zeros(l),
        # wider than unit gain so random scores are not flattened by the temperature
        score_w=rng.standard_normal((m, c)) * 3.0 / math.sqrt(c),
        score_b=rng.standard_normal(m) * 0.1,
        dustbin=1.0,
        ghost_w=rng.standard_normal(c) / math.sqrt(c),
        ghost_b=0.0,
        mlp1_w=rng.standard_normal((s, in_channels)) * math.sqrt(2.0 / in_channels),
        mlp1_b=np.zeros(s),
        mlp2_w=rng.standard_normal((s, s)) / math.sqrt(s),
        mlp2_b=np.zeros(s),
        out_w=rng.standard_normal((d, m * l + s)) / math.sqrt(m * l + s),
    )


def init_holmes(seed, mid_channels, high_channels=None, cfg=HolmesConfig()):
    rng = np.random.default_rng(seed)
    extra = 2 * cfg.range_encoding
    mid = init_level(rng, mid_channels, cfg.mid, extra)
    high = (init_level(rng, high_channels, cfg.high, extra)
            if (cfg.multi_scale and high_channels) else None)
    return HolmesParams(mid, high)


def adaptive_regularization(x, epsilon=1e-6):
    """Entropic temperature 1 + 2 tanh(var / (2 (mean + eps)))."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0 or not np.isfinite(x).all():
        raise NumericalError("adaptive regularisation needs finite, non-empty input")
    mu = x.mean()
    den = 2.0 * (mu + epsilon)
    if den == 0:
        raise NumericalError("mean + epsilon is zero")
    var = np.mean((x - mu) ** 2)
    return float(1.0 + 2.0 * math.tanh(var / den))


def sinkhorn_assign(scores, reg, row_marginals=None, col_marginals=None, *, dustbin=0.0,
                    ghostbin=0.0, max_iters=100, tol=1e-6):
    """Entropic OT between locations and clusters + dustbin + ghostbin.

    ``dustbin`` is one score shared by every row; ``ghostbin`` is a per-row
    score (scalar or length-n). Marginals default to uniform.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2:
        raise ShapeError("scores must be a matrix")
    if not reg > 0:
        raise ConfigError("reg must be positive")
    n, m = s.shape
    ghost = np.broadcast_to(np.asarray(ghostbin, dtype=np.float64), (n,))
    aug = np.empty((n, m + 2))
    aug[:, :m] = s
    aug[:, m] = dustbin
    aug[:, m + 1] = ghost
    a = np.full(n, 1.0 / n) if row_marginals is None else np.asarray(row_marginals, dtype=np.float64)
    b = np.full(m + 2, 1.0 / (m + 2)) if col_marginals is None else np.asarray(col_marginals, dtype=np.float64)
    if a.shape != (n,) or b.shape != (m + 2,):
        raise ShapeError("marginal lengths must be n and m + 2")
    if (a <= 0).any() or (b <= 0).any() or not math.isclose(a.sum(), b.sum(), rel_tol=1e-9):
        raise ConfigError("marginals must be positive with equal totals")
    log_plan, iters, err = _kernels.log_sinkhorn(np.ascontiguousarray(aug / reg), np.log(a),
                                                 np.log(b), int(max_iters), float(tol))
    plan = np.exp(log_plan)
    if not err < tol:
        raise ConvergenceError(f"Sinkhorn marginal error {err:.3g} after {iters} iterations",
                               last=plan, error=err)
    return AssignmentMatrices(s, aug, plan[:, :m], plan, iters, float(err))


def transport_entropy(plan):
    p = plan[plan > 0]
    return float(-(p * np.log(p)).sum())


def gem(features, p=3.0):
    """Generalised mean of |x| over locations; ``features`` is (n, C)."""
    return np.mean(np.abs(features) ** p, axis=0) ** (1.0 / p)


def _flatten(features):
    data = features.data if isinstance(features, FeatureMap) else np.asarray(features)
    if data.ndim != 3:
        raise ShapeError(f"feature map must be (C, H, W), got {data.shape}")
    c = data.shape[0]
    return data.reshape(c, -1).T.astype(np.float64)  # (n, C)


def range_encoding(rows, cols, n_freq):
    """(rows * cols, 2 n_freq) sin/cos of the row centre, in flatten order.

    A stride-32 stack sees only a few rows around each location, so without
    this the pooled descriptor cannot tell near returns from far ones.
    """
    if n_freq == 0:
        return np.zeros((rows * cols, 0))
    t = (np.arange(rows) + 0.5) / rows
    arg = math.pi * np.outer(t, np.arange(1, n_freq + 1))
    enc = np.concatenate([np.sin(arg), np.cos(arg)], axis=1)
    return np.repeat(enc, cols, axis=0)


def level_assignments(features, params, cfg, level_cfg):
    """Returns (backbone features (n, C), augmented features, assignments)."""
    f = _flatten(features)
    extra = 2 * cfg.range_encoding
    if f.shape[1] + extra != params.in_channels:
        raise ShapeError(f"feature map has {f.shape[1]} channels (+{extra} encoding), "
                         f"params expect {params.in_channels}")
    shape = features.data.shape if isinstance(features, FeatureMap) else np.shape(features)
    fa = np.concatenate([f, range_encoding(shape[1], shape[2], cfg.range_encoding)], axis=1)
    reg = cfg.fixed_reg if cfg.fixed_reg is not None else adaptive_regularization(f, cfg.epsilon_reg)
    scores = fa @ params.score_w.T + params.score_b
    ghost = fa @ params.ghost_w + params.ghost_b
    return f, fa, sinkhorn_assign(scores, reg, dustbin=params.dustbin, ghostbin=ghost,
                              max_iters=cfg.sinkhorn_max_iters, tol=cfg.sinkhorn_tolerance)


def cluster_aggregate(transport, features):
    """V[k, j] = sum_i R[i, k] * F[i, j]."""
    return np.asarray(transport).T @ np.asarray(features)


def _l2_rows(x, eps=1e-12):
    return x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), eps)


def aggregate_level(features, params, cfg=HolmesConfig(), level_cfg=None):
    """One level's L2-normalised descriptor (length d).

    Cluster features are the 1x1 projection of the local features, centred
    on their mean over all locations; without that the pooled sums of
    non-negative activations share one dominant direction for every scene.
    Each cluster row of V and the global vector are L2-normalised before
    the final projection.
    """
    f, fa, assign = level_assignments(features, params, cfg, level_cfg)
    cluster_feats = f @ params.proj_w.T + params.proj_b  # (n, l)
    cluster_feats -= cluster_feats.mean(axis=0)
    v = _l2_rows(cluster_aggregate(assign.transport, cluster_feats))  # (m, l)
    g0 = gem(f, cfg.gem_p)
    hidden = np.maximum(params.mlp1_w @ g0 + params.mlp1_b, 0.0)
    glob = _l2_rows(params.mlp2_w @ hidden + params.mlp2_b)
    g = np.concatenate([v.ravel(), glob])
    if g.shape[0] != params.out_w.shape[1]:
        raise ShapeError("projection matrix does not match m*l + s")
    out = params.out_w @ g
    norm = np.linalg.norm(out)
    if not norm > 0 or not np.isfinite(norm):
        raise NumericalError("descriptor has zero or non-finite norm")
    return out / norm


def describe(mid, high, params, cfg=HolmesConfig()):
    d_mid = aggregate_level(mid, params.mid, cfg, cfg.mid)
    if not cfg.multi_scale:
        return Descriptor(d_mid, (d_mid.shape[0],))
    if high is None or params.high is None:
        raise ShapeError("multi-scale mode needs high-level features and parameters")
    d_high = aggregate_level(high, params.high, cfg, cfg.high)
    return Descriptor(np.concatenate([d_mid, d_high]), (d_mid.shape[0], d_high.shape[0]))


def holmes_tensors(params, cfg, prefix="holmes"):
    meta = {"mid": vars(cfg.mid), "high": vars(cfg.high), "gem_p": cfg.gem_p,
            "range_encoding": cfg.range_encoding, "multi_scale": params.high is not None}
    tensors = params.mid.tensors(f"{prefix}.mid")
    if params.high is not None:
        tensors.update(params.high.tensors(f"{prefix}.high"))
    return meta, tensors


def holmes_from_tensors(meta, tensors, prefix="holmes"):
    mid = LevelParams.from_tensors(tensors, f"{prefix}.mid")
    high = LevelParams.from_tensors(tensors, f"{prefix}.high") if meta.get("multi_scale") else None
    return HolmesParams(mid, high)
