"""Synthetic worlds and the two radar sensor models.

A world is a cloud of static point targets (x, y, z, rcs dBsm) scattered
around a trajectory of places. The 4D model emits sparse, noisy detections
in a forward field of view with Doppler from the ego-motion, plus ground
returns, moving targets and clutter. The spinning model paints a dense
360 degree power matrix in half-dB steps, offset from the 4D encoding by a
known constant so RCS calibration has ground truth.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scan_model import (FourDScan, ManifestEntry, SequenceManifest, SpinningScan,
                         save_fourd_scan, save_manifest, save_spinning_scan)

SENSOR_HEIGHT = 1.5


@dataclass(frozen=True)
class FourDModel:
    fov: float = 2 * math.pi / 3
    max_range: float = 148.0
    p_detect: float = 0.7
    range_noise: float = 0.05
    azimuth_noise: float = 0.001
    rcs_noise: float = 1.0
    doppler_noise: float = 0.0
    ground_points: int = 40
    moving_targets: int = 3
    clutter_points: int = 10


@dataclass(frozen=True)
class SpinningModel:
    n_range: int = 384
    n_azimuth: int = 576
    range_resolution: float = 150.0 / 384
    offset_half_db: float = 6.0  # 4D encoding minus spinning encoding
    rcs_noise: float = 1.0
    spread: float = 6.0  # half-dB drop on the neighbouring azimuth bins
    c: float = 60.0


@dataclass
class World:
    targets: np.ndarray  # (T, 4) x, y, z, rcs
    places: np.ndarray  # (P, 3) x, y, heading

    def near(self, x, y, radius):
        t = self.targets
        m = (np.abs(t[:, 0] - x) <= radius) & (np.abs(t[:, 1] - y) <= radius)
        return t[m]


def make_world(n_places=20, seed=0, spacing=20.0, density=0.01, margin=170.0):
    """Random meandering trajectory with clustered targets around it."""
    rng = np.random.default_rng(seed)
    heading = 0.0
    pos = np.zeros(2)
    places = []
    for _ in range(n_places):
        places.append((pos[0], pos[1], heading))
        heading += rng.normal(0.0, 0.15)
        pos = pos + spacing * np.array([math.cos(heading), math.sin(heading)])
    places = np.array(places)
    lo = places[:, :2].min(0) - margin
    hi = places[:, :2].max(0) + margin
    area = float(np.prod(hi - lo))
    n_clusters = rng.poisson(density * area)
    centres = rng.uniform(lo, hi, size=(n_clusters, 2))
    sizes = rng.integers(1, 8, size=n_clusters)
    base_rcs = rng.uniform(-5.0, 30.0, size=n_clusters)
    idx = np.repeat(np.arange(n_clusters), sizes)
    xy = centres[idx] + rng.normal(0.0, 1.5, size=(idx.size, 2))
    z = rng.uniform(-0.8, 4.0, size=idx.size)
    rcs = base_rcs[idx] + rng.normal(0.0, 3.0, size=idx.size)
    targets = np.column_stack([xy, z, rcs])
    return World(targets, places)


def _to_sensor(world, pose, radius):
    x, y, yaw = pose
    t = world.near(x, y, radius)
    dx, dy = t[:, 0] - x, t[:, 1] - y
    c, s = math.cos(yaw), math.sin(yaw)
    return np.column_stack([c * dx + s * dy, -s * dx + c * dy, t[:, 2] - SENSOR_HEIGHT, t[:, 3]])


def render_fourd(world, pose, velocity, rng, model=FourDModel(), timestamp=0.0):
    """One 4D frame. ``velocity`` is the sensor-frame ego velocity (3,)."""
    local = _to_sensor(world, pose, model.max_range + 5)
    rng_xy = np.hypot(local[:, 0], local[:, 1])
    az = np.arctan2(local[:, 1], local[:, 0])
    vis = (rng_xy < model.max_range) & (rng_xy > 1.0) & (np.abs(az) < model.fov / 2 - 1e-3)
    local = local[vis]
    local = local[rng.random(local.shape[0]) < model.p_detect]
    r = np.hypot(local[:, 0], local[:, 1]) + rng.normal(0, model.range_noise, local.shape[0])
    a = np.arctan2(local[:, 1], local[:, 0]) + rng.normal(0, model.azimuth_noise, local.shape[0])
    pts = np.column_stack([r * np.cos(a), r * np.sin(a), local[:, 2]])
    rcs = local[:, 3] + rng.normal(0, model.rcs_noise, local.shape[0])

    # ground returns close to the sensor
    g_r = rng.uniform(3.0, 30.0, model.ground_points)
    g_a = rng.uniform(-model.fov / 2, model.fov / 2, model.ground_points)
    ground = np.column_stack([g_r * np.cos(g_a), g_r * np.sin(g_a),
                              -SENSOR_HEIGHT + rng.normal(0, 0.05, model.ground_points)])
    g_rcs = rng.uniform(-15.0, 0.0, model.ground_points)

    # moving targets: valid geometry, wrong Doppler
    m_r = rng.uniform(5.0, 80.0, model.moving_targets)
    m_a = rng.uniform(-model.fov / 2, model.fov / 2, model.moving_targets)
    moving = np.column_stack([m_r * np.cos(m_a), m_r * np.sin(m_a),
                              rng.uniform(-1.0, 0.5, model.moving_targets)])
    m_rcs = rng.uniform(5.0, 20.0, model.moving_targets)

    # multipath / clutter: random geometry, random Doppler
    c_r = rng.uniform(5.0, 140.0, model.clutter_points)
    c_a = rng.uniform(-model.fov / 2, model.fov / 2, model.clutter_points)
    clutter = np.column_stack([c_r * np.cos(c_a), c_r * np.sin(c_a),
                               rng.uniform(-1.0, 6.0, model.clutter_points)])
    c_rcs = rng.uniform(-10.0, 10.0, model.clutter_points)

    xyz = np.vstack([pts, ground, moving, clutter])
    d = xyz / np.linalg.norm(xyz, axis=1, keepdims=True)
    dop = -(d @ np.asarray(velocity, dtype=np.float64))
    n_s = pts.shape[0] + ground.shape[0]
    dop[n_s:n_s + model.moving_targets] += rng.choice([-1, 1], model.moving_targets) * \
        rng.uniform(3.0, 10.0, model.moving_targets)
    dop[n_s + model.moving_targets:] += rng.uniform(-8.0, 8.0, model.clutter_points)
    if model.doppler_noise:
        dop += rng.normal(0, model.doppler_noise, dop.shape[0])
    rcs_all = np.concatenate([rcs, g_rcs, m_rcs, c_rcs])
    return FourDScan(timestamp, np.column_stack([xyz, dop, rcs_all]))


def render_spinning(world, pose, rng, model=SpinningModel(), timestamp=0.0, azimuth_origin=0.0):
    """Dense 360-degree power matrix; bin j spans clockwise from
    ``azimuth_origin - j * 2pi / n_azimuth``."""
    max_r = model.n_range * model.range_resolution
    local = _to_sensor(world, pose, max_r + 5)
    r = np.hypot(local[:, 0], local[:, 1])
    vis = (r < max_r) & (r > 1.0)
    local, r = local[vis], r[vis]
    bearing = np.arctan2(local[:, 1], local[:, 0])
    binw = 2 * math.pi / model.n_azimuth
    col = np.floor(np.mod(azimuth_origin - bearing, 2 * math.pi) / binw).astype(np.int64) % model.n_azimuth
    row = np.floor(r / model.range_resolution).astype(np.int64)
    val = 2 * (local[:, 3] + rng.normal(0, model.rcs_noise, local.shape[0])) + model.c \
        - model.offset_half_db
    val = np.round(val)
    power = np.zeros((model.n_range, model.n_azimuth))
    for dc, drop in ((0, 0.0), (-1, model.spread), (1, model.spread)):
        v = val - drop
        ok = v > 0
        np.maximum.at(power, (row[ok], (col[ok] + dc) % model.n_azimuth), v[ok])
    return SpinningScan(timestamp, power.astype(np.float32), model.range_resolution)


def ego_velocity_scan(rng, n_points=200, velocity=(1.0, 0.0, 0.0), outlier_fraction=0.3,
                      outlier_offset=5.0, noise=0.0):
    """Static scene seen from a moving sensor; a fraction of Doppler values is
    perturbed by ``outlier_offset``. Returns (scan, outlier mask)."""
    r = rng.uniform(5.0, 100.0, n_points)
    az = rng.uniform(-math.pi / 3, math.pi / 3, n_points)
    el = rng.uniform(-0.25, 0.25, n_points)
    xyz = np.column_stack([r * np.cos(el) * np.cos(az), r * np.cos(el) * np.sin(az), r * np.sin(el)])
    d = xyz / r[:, None]
    dop = -(d @ np.asarray(velocity, dtype=np.float64))
    if noise:
        dop += rng.normal(0, noise, n_points)
    n_out = int(round(outlier_fraction * n_points))
    out = np.zeros(n_points, dtype=bool)
    out[rng.choice(n_points, n_out, replace=False)] = True
    dop[out] += outlier_offset
    rcs = rng.uniform(-5.0, 25.0, n_points)
    return FourDScan(0.0, np.column_stack([xyz, dop, rcs])), out


@dataclass
class PlaceSample:
    place: int
    fourd_frames: list  # FourDScan, oldest first
    fourd_pose: tuple
    fourd_velocity: np.ndarray
    spinning: SpinningScan
    spinning_pose: tuple


@dataclass
class SyntheticDataset:
    world: World
    samples: list = field(default_factory=list)
    fourd_model: FourDModel = FourDModel()
    spin_model: SpinningModel = SpinningModel()


def render_places(world, seed=0, k_frames=5, dt=0.1, speed=5.0, yaw_jitter=0.0, pos_jitter=0.0,
                  fourd_model=FourDModel(), spin_model=SpinningModel(), yaw_step=None):
    """Render every place through both sensors.

    The 4D sensor takes ``k_frames`` frames driving into the place. The
    spinning scan is taken at the place with its heading perturbed by up to
    ``yaw_jitter`` rad (uniform; rounded to multiples of ``yaw_step`` when
    given) and its position by up to ``pos_jitter`` m, mimicking a second
    traversal.
    """
    rng = np.random.default_rng(seed)
    ds = SyntheticDataset(world, [], fourd_model, spin_model)
    for p, (x, y, h) in enumerate(world.places):
        t_end = 10.0 * p
        frames = []
        vel = np.array([speed, 0.0, 0.0])
        for k in range(k_frames):
            back = (k_frames - 1 - k) * speed * dt
            pose = (x - back * math.cos(h), y - back * math.sin(h), h)
            frames.append(render_fourd(world, pose, vel, rng, fourd_model,
                                       timestamp=t_end - (k_frames - 1 - k) * dt))
        dyaw = rng.uniform(-yaw_jitter, yaw_jitter) if yaw_jitter else 0.0
        if yaw_step:
            dyaw = round(dyaw / yaw_step) * yaw_step
        ang = rng.uniform(0, 2 * math.pi)
        rad = pos_jitter * math.sqrt(rng.uniform()) if pos_jitter else 0.0
        spose = (x + rad * math.cos(ang), y + rad * math.sin(ang), h + dyaw)
        spin = render_spinning(world, spose, rng, spin_model, timestamp=t_end)
        ds.samples.append(PlaceSample(p, frames, (x, y, h), vel, spin, spose))
    return ds


def write_dataset(ds, out_dir):
    """Write scans, manifests and ground truth; returns the manifest paths."""
    out = Path(out_dir)
    (out / "fourd").mkdir(parents=True, exist_ok=True)
    (out / "spinning").mkdir(parents=True, exist_ok=True)
    fourd_entries, spin_entries, truth = [], [], []
    for s in ds.samples:
        for k, scan in enumerate(s.fourd_frames):
            rel = f"fourd/place{s.place:04d}_frame{k}.csv"
            save_fourd_scan(scan, out / rel)
            # poses of earlier frames lie behind the place along the heading
            back = (len(s.fourd_frames) - 1 - k) * float(s.fourd_velocity[0]) * 0.1
            x, y, h = s.fourd_pose
            fourd_entries.append(ManifestEntry(rel, scan.timestamp, x - back * math.cos(h),
                                               y - back * math.sin(h), h, "fourd"))
        rel = f"spinning/place{s.place:04d}.rspn"
        save_spinning_scan(s.spinning, out / rel)
        spin_entries.append(ManifestEntry(rel, s.spinning.timestamp, *s.spinning_pose, "spinning"))
        truth.append({"place": s.place, "fourd_pose": list(s.fourd_pose),
                      "spinning_pose": list(s.spinning_pose),
                      "velocity": [float(v) for v in s.fourd_velocity]})
    save_manifest(SequenceManifest(fourd_entries, out), out / "fourd_manifest.jsonl")
    save_manifest(SequenceManifest(spin_entries, out), out / "spinning_manifest.jsonl")
    (out / "truth.json").write_text(json.dumps(
        {"rcs_offset_half_db": ds.spin_model.offset_half_db, "places": truth}, indent=1))
    return out / "fourd_manifest.jsonl", out / "spinning_manifest.jsonl"
