"""Descriptor database, exact L2 retrieval and place-recognition metrics."""

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, LengthMismatchError, ShapeError, UndefinedMetricError

SHDB_MAGIC = b"SHDB"
_HEADER = struct.Struct("<4sII")
PR_PROTOCOL = ("top-1 retrieval with L2 distance <= threshold is a prediction; TP if it lies "
               "within truth_radius of the query, else FP; queries with a true neighbour and no "
               "prediction are FN; precision is 1.0 when nothing is predicted")


@dataclass(frozen=True, eq=False)
class DescriptorDB:
    descriptors: np.ndarray  # (n, dim) float32
    timestamps: np.ndarray
    poses: np.ndarray  # (n, 3) x, y, yaw

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.descriptors, dtype=np.float32))
        ts = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        ps = np.asarray(self.poses, dtype=np.float64).reshape(-1, 3)
        if not (d.shape[0] == ts.shape[0] == ps.shape[0]):
            raise ShapeError("descriptor, timestamp and pose counts differ")
        if not np.isfinite(d).all():
            raise DataError("non-finite descriptor")
        object.__setattr__(self, "descriptors", d)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "poses", ps)

    def __len__(self):
        return self.descriptors.shape[0]

    @property
    def dim(self):
        return self.descriptors.shape[1]

    @property
    def ids(self):
        return np.arange(len(self))

    @classmethod
    def from_entries(cls, entries):
        """``entries``: iterable of (timestamp, (x, y, yaw), descriptor values)."""
        entries = list(entries)
        if not entries:
            raise DataError("no descriptors")
        return cls(np.stack([np.asarray(e[2]) for e in entries]),
                   np.array([e[0] for e in entries]), np.array([e[1] for e in entries]))

    def __eq__(self, other):
        return (isinstance(other, DescriptorDB)
                and np.array_equal(self.descriptors, other.descriptors)
                and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.poses, other.poses))


def save_db(db, path):
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(SHDB_MAGIC, db.dim, len(db)))
        for i in range(len(db)):
            fh.write(struct.pack("<4d", db.timestamps[i], *db.poses[i]))
            fh.write(np.ascontiguousarray(db.descriptors[i], dtype="<f4").tobytes())


def load_db(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise LengthMismatchError("file shorter than SHDB header")
    magic, dim, count = _HEADER.unpack_from(data, 0)
    if magic != SHDB_MAGIC:
        raise DataError("bad magic, expected SHDB")
    rec = np.dtype([("t", "<f8"), ("pose", "<f8", (3,)), ("d", "<f4", (dim,))])
    if len(data) - _HEADER.size != rec.itemsize * count:
        raise LengthMismatchError(f"payload does not hold {count} records of dim {dim}")
    arr = np.frombuffer(data, dtype=rec, offset=_HEADER.size, count=count)
    return DescriptorDB(arr["d"].reshape(count, dim).copy(), arr["t"].copy(), arr["pose"].copy())


def _distances(db, query):
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != db.dim:
        raise ShapeError(f"query dim {q.shape[0]} != db dim {db.dim}")
    diff = db.descriptors.astype(np.float64) - q[None, :]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def retrieve(db, query, k):
    """Exact top-k by L2 distance, ties broken by ascending id."""
    if len(db) == 0:
        raise DataError("empty database")
    if not 1 <= k <= len(db):
        raise ValueError(f"k={k} outside 1..{len(db)}")
    dist = _distances(db, query)
    order = np.lexsort((db.ids, dist))[:k]
    return [(int(i), float(dist[i])) for i in order]


def _knn_all(db, queries, k):
    """Top-k ids and distances for every query, (n_q, k)."""
    order = np.empty((len(queries), k), dtype=np.int64)
    dists = np.empty((len(queries), k))
    for i, q in enumerate(queries.descriptors):
        dist = _distances(db, q)
        o = np.lexsort((db.ids, dist))[:k]
        order[i], dists[i] = o, dist[o]
    return order, dists


def truth_matrix(db, queries, truth_radius):
    """Boolean (n_q, n_db): db entry lies within ``truth_radius`` of the query."""
    dx = queries.poses[:, None, 0] - db.poses[None, :, 0]
    dy = queries.poses[:, None, 1] - db.poses[None, :, 1]
    return np.hypot(dx, dy) <= truth_radius


def resolve_k(k, db_size):
    """Integer K, or ``"1%"``-style strings meaning ceil(db_size * pct / 100)."""
    if isinstance(k, str):
        k = k.strip()
        if k.endswith("%"):
            return max(1, math.ceil(db_size * float(k[:-1]) / 100.0))
        k = int(k)
    return int(k)


def recall_at_k(db, queries, k, truth_radius=5.0):
    if not truth_radius > 0:
        raise ValueError("truth_radius must be positive")
    if len(db) == 0:
        raise DataError("empty database")
    k = min(resolve_k(k, len(db)), len(db))
    truth = truth_matrix(db, queries, truth_radius)
    has_gt = truth.any(axis=1)
    gt = int(has_gt.sum())
    if gt == 0:
        raise UndefinedMetricError("no query has a database entry within the truth radius")
    order, _ = _knn_all(db, queries, k)
    hit = np.take_along_axis(truth, order, 1).any(axis=1) & has_gt
    return int(hit.sum()) / gt


def average_recall(recalls):
    """Mean over sequences; ``recalls`` is a list of {K: R@K} dicts."""
    recalls = list(recalls)
    if not recalls:
        raise ValueError("average_recall needs at least one sequence")
    keys = recalls[0].keys()
    return {k: float(np.mean([r[k] for r in recalls])) for k in keys}


@dataclass
class PRPoint:
    threshold: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    degenerate: bool = False


def pr_curve(db, queries, truth_radius, thresholds):
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if thresholds.size > 1 and (np.diff(thresholds) < 0).any():
        raise ValueError("thresholds must be sorted ascending")
    truth = truth_matrix(db, queries, truth_radius)
    has_gt = truth.any(axis=1)
    order, dist = _knn_all(db, queries, 1)
    top1_ok = truth[np.arange(len(queries)), order[:, 0]]
    d1 = dist[:, 0]
    points = []
    for tau in thresholds:
        pred = d1 <= tau
        tp = int((pred & top1_ok).sum())
        fp = int((pred & ~top1_ok).sum())
        fn = int((~pred & has_gt).sum())
        degenerate = tp + fp == 0
        precision = 1.0 if degenerate else tp / (tp + fp)
        recall = tp / (tp + fn) if tp + fn else 0.0
        points.append(PRPoint(float(tau), precision, recall, tp, fp, fn, degenerate))
    return points


@dataclass
class EvalReport:
    recall_at_k: dict
    truth_radius: float
    pr_points: list = field(default_factory=list)
    ar_at_k: dict = field(default_factory=dict)
    recall_curve: dict = field(default_factory=dict)
    protocol: str = PR_PROTOCOL

    def to_dict(self):
        return {"protocol": self.protocol, "truth_radius": self.truth_radius,
                "recall_at_k": {str(k): v for k, v in self.recall_at_k.items()},
                "ar_at_k": {str(k): v for k, v in self.ar_at_k.items()},
                "recall_curve": {str(k): v for k, v in self.recall_curve.items()},
                "pr_points": [vars(p) for p in self.pr_points]}

    def write(self, json_path, csv_path=None):
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=2))
        if csv_path is not None:
            with Path(csv_path).open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["kind", "x", "y", "threshold"])
                for p in self.pr_points:
                    w.writerow(["pr", p.recall, p.precision, p.threshold])
                for k, v in self.recall_curve.items():
                    w.writerow(["recall_at_n", k, v, ""])


def evaluate(db, queries, ks=(1, 5, 10, "1%"), truth_radius=5.0, thresholds=None, curve_max=25):
    recalls = {str(k): recall_at_k(db, queries, k, truth_radius) for k in ks}
    n_max = min(curve_max, len(db))
    curve = {n: recall_at_k(db, queries, n, truth_radius) for n in range(1, n_max + 1)}
    if thresholds is None:
        _, d = _knn_all(db, queries, 1)
        thresholds = np.unique(np.concatenate([[0.0], np.quantile(d[:, 0], np.linspace(0, 1, 51))]))
    pr = pr_curve(db, queries, truth_radius, thresholds)
    return EvalReport(recalls, truth_radius, pr, dict(recalls), curve)
