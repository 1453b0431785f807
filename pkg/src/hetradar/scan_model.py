"""Radar scan types and on-disk formats.

Formats (all little-endian):

* 4D CSV: header ``x,y,z,doppler,rcs``, one point per line.
* 4D binary: ``R4DS``, u32 N, N records of 5 float64.
* Spinning binary: ``RSPN``, u32 N_r, u32 N_a, f64 range resolution, then
  N_r*N_a float32 in range-major order.
* Manifest: JSON lines ``{path, timestamp, x, y, yaw, sensor}``.
"""

import csv
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LengthMismatchError, ScanParseError, ScanValidationError

FOURD_COLUMNS = ("x", "y", "z", "doppler", "rcs")
FOURD_MAGIC = b"R4DS"
SPIN_MAGIC = b"RSPN"
SENSOR_KINDS = ("fourd", "spinning", "image", "views")


def _frozen(arr):
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class RadarPoint:
    x: float
    y: float
    z: float
    doppler: float
    rcs: float

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.doppler, self.rcs)
        if not all(math.isfinite(v) for v in vals):
            raise ScanValidationError(f"non-finite radar point {vals}")
        if self.x == 0 and self.y == 0 and self.z == 0:
            raise ScanValidationError("radar point at zero range")


@dataclass(frozen=True, eq=False)
class FourDScan:
    """One 4D radar frame. ``points`` is an (N, 5) array in column order
    ``x, y, z, doppler, rcs``."""

    timestamp: float
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 5)
        if pts.ndim != 2 or pts.shape[1] != 5:
            raise ScanValidationError(f"points must be (N, 5), got {pts.shape}")
        if not np.isfinite(pts).all():
            bad = int(np.argwhere(~np.isfinite(pts))[0, 0])
            raise ScanValidationError(f"non-finite value in point {bad}")
        if not math.isfinite(self.timestamp):
            raise ScanValidationError("non-finite timestamp")
        rng = np.linalg.norm(pts[:, :3], axis=1)
        if (rng <= 0).any():
            raise ScanValidationError(f"zero-range point at index {int(np.argmin(rng))}")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self):
        return self.points.shape[0]

    def __getitem__(self, i):
        return RadarPoint(*(float(v) for v in self.points[i]))

    @property
    def xyz(self):
        return self.points[:, :3]

    @property
    def doppler(self):
        return self.points[:, 3]

    @property
    def rcs(self):
        return self.points[:, 4]

    @classmethod
    def from_points(cls, timestamp, points):
        arr = [(p.x, p.y, p.z, p.doppler, p.rcs) for p in points]
        return cls(timestamp, np.array(arr, dtype=np.float64).reshape(-1, 5))

    def subset(self, mask):
        return FourDScan(self.timestamp, self.points[mask])

    def __eq__(self, other):
        if not isinstance(other, FourDScan):
            return NotImplemented
        return self.timestamp == other.timestamp and np.array_equal(self.points, other.points)


@dataclass(frozen=True, eq=False)
class SpinningScan:
    """Dense polar power sweep, ``power`` is (N_r, N_a) float32 in half-dB."""

    timestamp: float
    power: np.ndarray
    range_resolution: float

    def __post_init__(self):
        p = np.asarray(self.power, dtype=np.float32)
        if p.ndim != 2 or p.shape[0] == 0 or p.shape[1] == 0:
            raise ScanValidationError(f"power must be a non-empty matrix, got {p.shape}")
        if not np.isfinite(p).all():
            raise ScanValidationError("non-finite power value")
        if (p < 0).any():
            raise ScanValidationError("negative power value")
        if not (math.isfinite(self.range_resolution) and self.range_resolution > 0):
            raise ScanValidationError("range_resolution must be positive")
        object.__setattr__(self, "power", _frozen(p))

    @property
    def shape(self):
        return self.power.shape

    def __eq__(self, other):
        if not isinstance(other, SpinningScan):
            return NotImplemented
        return (self.timestamp == other.timestamp
                and self.range_resolution == other.range_resolution
                and np.array_equal(self.power, other.power))


@dataclass(frozen=True)
class PolarGrid:
    H: int = 384
    W: int = 192
    rho_max: float = 150.0
    phi: float = 2 * math.pi / 3

    def __post_init__(self):
        if self.H <= 0 or self.W <= 0:
            raise ScanValidationError("grid dimensions must be positive")
        if not self.rho_max > 0:
            raise ScanValidationError("rho_max must be positive")
        if not 0 < self.phi <= 2 * math.pi + 1e-12:
            raise ScanValidationError("phi must lie in (0, 2*pi]")

    @property
    def bin_azimuth(self):
        return self.phi / self.W

    @property
    def bin_range(self):
        return self.rho_max / self.H


@dataclass(frozen=True, eq=False)
class PolarImage:
    grid: PolarGrid
    pixels: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.shape != (self.grid.H, self.grid.W):
            raise ScanValidationError(
                f"pixels shape {px.shape} does not match grid {(self.grid.H, self.grid.W)}")
        if not np.isfinite(px).all() or (px < 0).any():
            raise ScanValidationError("pixels must be finite and non-negative")
        object.__setattr__(self, "pixels", _frozen(px))

    def __eq__(self, other):
        if not isinstance(other, PolarImage):
            return NotImplemented
        return (self.grid == other.grid and self.timestamp == other.timestamp
                and np.array_equal(self.pixels, other.pixels))


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    timestamp: float
    x: float
    y: float
    yaw: float
    sensor: str = "fourd"

    def __post_init__(self):
        for name in ("timestamp", "x", "y", "yaw"):
            if not math.isfinite(getattr(self, name)):
                raise ScanValidationError(f"manifest {name} must be finite")

    @property
    def pose(self):
        return (self.x, self.y, self.yaw)


@dataclass
class SequenceManifest:
    entries: list = field(default_factory=list)
    root: Path = Path(".")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def resolve(self, entry):
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def poses(self):
        return np.array([e.pose for e in self.entries], dtype=np.float64).reshape(-1, 3)

    def timestamps(self):
        return np.array([e.timestamp for e in self.entries], dtype=np.float64)


# ---------------------------------------------------------------------------
# 4D scans


def _parse_float(tok, line):
    try:
        return float(tok)
    except ValueError:
        raise ScanParseError(f"cannot parse {tok!r} as a number", line) from None


def load_fourd_scan(path, format="csv", timestamp=0.0):
    path = Path(path)
    if format == "csv":
        return _load_fourd_csv(path, timestamp)
    if format == "binary":
        return _load_fourd_binary(path, timestamp)
    raise ValueError(f"unknown 4D scan format {format!r}")


def _load_fourd_csv(path, timestamp):
    text = path.read_text()
    reader = csv.reader(io.StringIO(text))
    rows = []
    header_seen = False
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if not header_seen:
            if tuple(c.strip() for c in row) != FOURD_COLUMNS:
                raise ScanParseError(f"expected header {','.join(FOURD_COLUMNS)}", lineno)
            header_seen = True
            continue
        if len(row) != 5:
            raise ScanParseError(f"expected 5 columns, got {len(row)}", lineno)
        vals = [_parse_float(c.strip(), lineno) for c in row]
        if not all(math.isfinite(v) for v in vals):
            raise ScanValidationError(f"line {lineno}: non-finite value")
        rows.append(vals)
    if not header_seen:
        raise ScanParseError("missing header", 1)
    return FourDScan(timestamp, np.array(rows, dtype=np.float64).reshape(-1, 5))


def _load_fourd_binary(path, timestamp):
    data = path.read_bytes()
    if len(data) < 8 or data[:4] != FOURD_MAGIC:
        raise ScanParseError("bad magic, expected R4DS")
    (n,) = struct.unpack_from("<I", data, 4)
    expected = 8 + n * 5 * 8
    if len(data) != expected:
        raise LengthMismatchError(f"expected {expected} bytes for {n} points, got {len(data)}")
    pts = np.frombuffer(data, dtype="<f8", offset=8).reshape(n, 5)
    return FourDScan(timestamp, pts.astype(np.float64))


def save_fourd_scan(scan, path, format="csv"):
    path = Path(path)
    if format == "csv":
        with path.open("w", newline="") as fh:
            fh.write(",".join(FOURD_COLUMNS) + "\n")
            for row in scan.points:
                # repr round-trips float64 exactly
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    elif format == "binary":
        with path.open("wb") as fh:
            fh.write(FOURD_MAGIC)
            fh.write(struct.pack("<I", len(scan)))
            fh.write(np.ascontiguousarray(scan.points, dtype="<f8").tobytes())
    else:
        raise ValueError(f"unknown 4D scan format {format!r}")


# ---------------------------------------------------------------------------
# spinning scans

_SPIN_HEADER = struct.Struct("<4sIId")


def load_spinning_scan(path, timestamp=0.0):
    data = Path(path).read_bytes()
    if len(data) < _SPIN_HEADER.size:
        raise LengthMismatchError("file shorter than RSPN header")
    magic, n_r, n_a, res = _SPIN_HEADER.unpack_from(data, 0)
    if magic != SPIN_MAGIC:
        raise ScanParseError("bad magic, expected RSPN")
    if n_r == 0 or n_a == 0:
        raise ScanValidationError("N_r and N_a must be positive")
    payload = len(data) - _SPIN_HEADER.size
    if payload != n_r * n_a * 4:
        raise LengthMismatchError(
            f"header declares {n_r}x{n_a} values, payload holds {payload / 4:g}")
    power = np.frombuffer(data, dtype="<f4", offset=_SPIN_HEADER.size).reshape(n_r, n_a)
    return SpinningScan(timestamp, power.astype(np.float32), res)


def save_spinning_scan(scan, path):
    n_r, n_a = scan.shape
    with Path(path).open("wb") as fh:
        fh.write(_SPIN_HEADER.pack(SPIN_MAGIC, n_r, n_a, float(scan.range_resolution)))
        fh.write(np.ascontiguousarray(scan.power, dtype="<f4").tobytes())


# ---------------------------------------------------------------------------
# polar images / view stacks (numpy containers)


def save_polar_image(image, path):
    g = image.grid
    np.savez(path, pixels=image.pixels, timestamp=image.timestamp,
             grid=np.array([g.H, g.W, g.rho_max, g.phi]))


def load_polar_image(path):
    with np.load(path) as z:
        g = z["grid"]
        grid = PolarGrid(int(g[0]), int(g[1]), float(g[2]), float(g[3]))
        return PolarImage(grid, z["pixels"], float(z["timestamp"]))


# ---------------------------------------------------------------------------
# manifests


def load_manifest(path, check_files=True):
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            entry = ManifestEntry(str(rec["path"]), float(rec["timestamp"]), float(rec["x"]),
                                  float(rec["y"]), float(rec["yaw"]), str(rec.get("sensor", "fourd")))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ScanValidationError):
                raise ScanValidationError(f"line {lineno}: {exc}") from None
            raise ScanParseError(f"bad manifest record: {exc}", lineno) from None
        entries.append(entry)
    manifest = SequenceManifest(entries, path.parent)
    if check_files:
        for e in entries:
            if not manifest.resolve(e).exists():
                raise ScanValidationError(f"manifest references missing file {e.path}")
    return manifest


def save_manifest(manifest, path):
    with Path(path).open("w") as fh:
        for e in manifest.entries:
            fh.write(json.dumps({"path": e.path, "timestamp": e.timestamp, "x": e.x, "y": e.y,
                                 "yaw": e.yaw, "sensor": e.sensor}) + "\n")
