"""View similarity by circular cross-correlation, FOV-aware tuple mining and
the similarity-margin triplet loss."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, InsufficientDataError, ShapeError
from .scan_model import PolarImage
from .sync import MultiViewSet


@dataclass(frozen=True)
class SimilarityConfig:
    mode: str = "azimuth_only"
    zero_norm_epsilon: float = 1e-12

    def __post_init__(self):
        if self.mode not in ("full_2d", "azimuth_only"):
            raise ConfigError(f"unknown similarity mode {self.mode!r}")
        if not self.zero_norm_epsilon > 0:
            raise ConfigError("zero_norm_epsilon must be positive")


@dataclass(frozen=True)
class MiningConfig:
    negative_radius: float = 25.0
    positive_time_window: float = 0.5
    negatives_per_query: int = 5
    positives_per_query: int = 1

    def __post_init__(self):
        if not self.negative_radius > 0:
            raise ConfigError("negative_radius must be positive")
        if self.negatives_per_query < 1 or self.positives_per_query < 1:
            raise ConfigError("need at least one positive and one negative per query")


@dataclass
class TripletBatch:
    query: np.ndarray
    positive: np.ndarray
    negatives: np.ndarray  # (N, D)
    sim_pos: float
    sim_neg: np.ndarray  # (N,)
    gamma: float = 1.0


@dataclass
class MinedTuple:
    query: int
    positive: int
    positive_view: int
    positive_similarity: float
    negatives: list
    negative_views: list = field(default_factory=list)
    negative_similarities: list = field(default_factory=list)

    def to_dict(self):
        return {"query": self.query, "positive": self.positive, "positive_view": self.positive_view,
                "positive_similarity": self.positive_similarity, "negatives": self.negatives,
                "negative_views": self.negative_views,
                "negative_similarities": self.negative_similarities}


def _pixels(x):
    return x.pixels if isinstance(x, PolarImage) else np.asarray(x, dtype=np.float64)


def fft_similarity(a, b, cfg=SimilarityConfig()):
    """max over circular shifts of <a shifted, b> / (|a| |b|), via FFT."""
    a, b = _pixels(a), _pixels(b)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= cfg.zero_norm_epsilon or nb <= cfg.zero_norm_epsilon:
        raise DataError("zero-energy image")
    if cfg.mode == "full_2d":
        corr = np.fft.irfft2(np.fft.rfft2(a) * np.conj(np.fft.rfft2(b)), s=a.shape)
    else:
        w = a.shape[1]
        spec = np.fft.rfft(a, axis=1) * np.conj(np.fft.rfft(b, axis=1))
        corr = np.fft.irfft(spec.sum(axis=0), n=w)
    return float(corr.max() / (na * nb))


def select_best_view(query, views, cfg=SimilarityConfig()):
    """Index and similarity of the most similar view; ties go to the lowest index."""
    stack = views.views if isinstance(views, MultiViewSet) else [_pixels(v) for v in views]
    if len(stack) == 0:
        raise DataError("no views to choose from")
    sims = np.array([fft_similarity(query, v, cfg) for v in stack])
    j = int(np.argmax(sims))
    return j, float(sims[j])


def mine_tuples(queries, database, cfg=MiningConfig(), sim_cfg=SimilarityConfig(), seed=0):
    """FOV-aware mining.

    ``queries``: list of (ManifestEntry, PolarImage).
    ``database``: list of (ManifestEntry, MultiViewSet).
    Returns (tuples, skipped) where ``skipped`` lists query indices that had
    no database scan inside the positive time window.
    """
    if not database:
        raise DataError("empty database")
    db_ts = np.array([e.timestamp for e, _ in database])
    db_xy = np.array([(e.x, e.y) for e, _ in database])
    tuples, skipped = [], []
    for qi, (qe, qimg) in enumerate(queries):
        dt = np.abs(db_ts - qe.timestamp)
        pi = int(np.argmin(dt))
        if dt[pi] > cfg.positive_time_window:
            skipped.append({"query": qi, "reason": "no database scan within the time window"})
            continue
        pv, psim = select_best_view(qimg, database[pi][1], sim_cfg)
        dist = np.hypot(db_xy[:, 0] - qe.x, db_xy[:, 1] - qe.y)
        cand = np.flatnonzero(dist > cfg.negative_radius)
        if cand.size < cfg.negatives_per_query:
            raise InsufficientDataError(
                f"query {qi}: only {cand.size} negatives beyond {cfg.negative_radius} m")
        rng = np.random.default_rng([seed, qi])
        neg = sorted(int(i) for i in rng.choice(cand, cfg.negatives_per_query, replace=False))
        nviews, nsims = [], []
        for ni in neg:
            v, s = select_best_view(qimg, database[ni][1], sim_cfg)
            nviews.append(v)
            nsims.append(s)
        tuples.append(MinedTuple(qi, pi, pv, psim, neg, nviews, nsims))
    return tuples, skipped


def adaptive_margin(sim_pos, sim_neg, gamma=1.0):
    return gamma * (sim_pos - sim_neg)


def triplet_loss(batch, adaptive=True, fixed_margin=0.1):
    """Hinge on d(q,p) - min_n d(q,n) + margin, margin from view similarity.

    Returns (loss, grads) with grads = {"query", "positive", "negatives"}.
    The hardest negative is the one closest to the query (lowest index on
    ties); the margin uses that negative's similarity.
    """
    q = np.asarray(batch.query, dtype=np.float64)
    p = np.asarray(batch.positive, dtype=np.float64)
    negs = np.atleast_2d(np.asarray(batch.negatives, dtype=np.float64))
    if q.size == 0 or p.shape != q.shape or negs.shape[1] != q.shape[0]:
        raise ShapeError("descriptors must be non-empty and of equal length")
    if not (np.isfinite(q).all() and np.isfinite(p).all() and np.isfinite(negs).all()):
        raise DataError("non-finite descriptor")
    dqp_vec = q - p
    dqp = float(np.linalg.norm(dqp_vec))
    dqn_all = np.linalg.norm(q[None, :] - negs, axis=1)
    hard = int(np.argmin(dqn_all))
    dqn = float(dqn_all[hard])
    if adaptive:
        margin = adaptive_margin(batch.sim_pos, float(np.asarray(batch.sim_neg)[hard]), batch.gamma)
    else:
        margin = fixed_margin
    value = dqp - dqn + margin
    grads = {"query": np.zeros_like(q), "positive": np.zeros_like(p),
             "negatives": np.zeros_like(negs)}
    if value <= 0:
        return 0.0, grads
    u_p = dqp_vec / dqp if dqp > 0 else np.zeros_like(q)
    diff_n = q - negs[hard]
    u_n = diff_n / dqn if dqn > 0 else np.zeros_like(q)
    grads["query"] = u_p - u_n
    grads["positive"] = -u_p
    grads["negatives"][hard] = u_n
    return float(value), grads


def loss_from_distances(d_pos, d_negs, margin):
    """Scalar form used by hand checks: max(d_pos - min(d_negs) + margin, 0)."""
    return max(d_pos - min(d_negs) + margin, 0.0)
