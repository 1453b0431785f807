"""Command-line front end.

Each subcommand reads immutable input files, writes its artifacts and a run
manifest (config hash, seed, library versions, status). Exit codes: 0 ok,
2 configuration error, 3 data error, 4 numerical failure.
"""

import argparse
import json
import logging
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__
from . import retrieval_eval as ev
from .config import config_hash, dump_config, load_config
from .errors import ConfigError, DataError, HetRadarError, NumericalError
from .mining_loss import TripletBatch, mine_tuples, select_best_view, triplet_loss
from .pipeline import Describer, fourd_image, spinning_views
from .scan_model import (ManifestEntry, SequenceManifest, load_fourd_scan, load_manifest,
                         load_polar_image, load_spinning_scan, save_manifest, save_polar_image)
from .sync import apply_rcs_correction, calibrate_rcs, load_views, save_views
from .synth import make_world, render_places, write_dataset

log = logging.getLogger("hetradar")
WORKERS_ENV = "HETRADAR_WORKERS"


def worker_count():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV}={raw!r} is not an integer") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return n


def _pmap(fn, items):
    items = list(items)
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _versions():
    out = {"hetradar": __version__, "python": platform.python_version()}
    for pkg in ("numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


class Run:
    """Tracks artifacts of one command; marks them incomplete on failure."""

    def __init__(self, command, cfg, manifest_path):
        self.command = command
        self.cfg = cfg
        self.manifest_path = Path(manifest_path)
        self.artifacts = []
        self.extra = {}

    def add(self, path):
        self.artifacts.append(Path(path))
        return Path(path)

    def _write(self, status, error=None):
        base = self.manifest_path.parent
        doc = {"command": self.command, "status": status, "seed": self.cfg.seed,
               "config_hash": config_hash(self.cfg), "versions": _versions(),
               "artifacts": [os.path.relpath(p, base) for p in self.artifacts]}
        doc.update(self.extra)
        if error is not None:
            doc["error"] = error
        self.manifest_path.parent.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None:
            self._write("complete")
            return False
        for p in self.artifacts:
            if p.exists():
                Path(str(p) + ".incomplete").write_text(f"{exc_type.__name__}: {exc}\n")
        self._write("incomplete", {"type": exc_type.__name__, "message": str(exc)})
        return False


def _out_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _sidecar(path):
    return Path(str(path) + ".run.json")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg):
    out = _out_dir(args.out)
    with Run("synth", cfg, out / "run_manifest.json") as run:
        world = make_world(args.scenes, seed=args.seed, spacing=args.spacing)
        ds = render_places(world, seed=args.seed + 1, k_frames=cfg.preprocess.K,
                           yaw_jitter=np.radians(args.yaw_jitter), pos_jitter=args.pos_jitter)
        fm, sm = write_dataset(ds, out)
        for p in sorted(out.rglob("*")):
            if p.is_file() and p.name != "run_manifest.json":
                run.add(p)
        run.extra["manifests"] = {"fourd": fm.name, "spinning": sm.name}
        print(f"wrote {len(ds.samples)} places to {out}")


def _fourd_windows(entries, k, max_gap):
    """Index windows of up to ``k`` trailing frames inside gap-free segments.

    A window is emitted when it is full or when its last frame ends a segment,
    so short segments still yield one image.
    """
    windows, start = [], 0
    for i, e in enumerate(entries):
        if i > 0 and e.timestamp - entries[i - 1].timestamp > max_gap:
            start = i
        seg_end = i + 1 == len(entries) or entries[i + 1].timestamp - e.timestamp > max_gap
        lo = max(start, i - k + 1)
        if i - lo + 1 == k or seg_end:
            windows.append(list(range(lo, i + 1)))
    return windows


def cmd_preprocess(args, cfg):
    manifest = load_manifest(args.manifest)
    out = _out_dir(args.out)
    k = args.k if args.k is not None else cfg.preprocess.K
    pre = cfg.preprocess
    c_corr = _read_calib(args.calib) if args.calib else 0.0
    fourd = [e for e in manifest if e.sensor == "fourd"]
    spin = [e for e in manifest if e.sensor == "spinning"]
    if not fourd and not spin:
        raise DataError("manifest holds no fourd or spinning scans")
    with Run("preprocess", cfg, out / "run_manifest.json") as run:
        (out / "images").mkdir(exist_ok=True)
        (out / "views").mkdir(exist_ok=True)

        def do_fourd(window):
            scans = [load_fourd_scan(manifest.resolve(fourd[j]), "csv", fourd[j].timestamp)
                     for j in window]
            last = fourd[window[-1]]
            img = fourd_image(scans, cfg.grid, pre.removal, cfg.toggles, pre.rcs_offset,
                              seed=cfg.seed + 7919 * window[-1])
            rel = f"images/{Path(last.path).stem}.npz"
            save_polar_image(img, out / rel)
            return ManifestEntry(rel, last.timestamp, last.x, last.y, last.yaw, "image")

        def do_spin(e):
            scan = load_spinning_scan(manifest.resolve(e), e.timestamp)
            views = spinning_views(scan, cfg.grid, cfg.sync.delta, c_corr, cfg.toggles)
            rel = f"views/{Path(e.path).stem}.npz"
            save_views(views, out / rel)
            return ManifestEntry(rel, e.timestamp, e.x, e.y, e.yaw, "views")

        entries = _pmap(do_fourd, _fourd_windows(fourd, k, pre.max_gap)) + _pmap(do_spin, spin)
        for e in entries:
            run.add(out / e.path)
        save_manifest(SequenceManifest(entries, out), run.add(out / "manifest.jsonl"))
        print(f"wrote {len(entries)} entries to {out / 'manifest.jsonl'}")


def _read_calib(path):
    try:
        doc = json.loads(Path(path).read_text())
        return float(doc["c_corr"])
    except (OSError, KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read c_corr from {path}: {exc}") from None


def _load_entry(manifest, e):
    path = manifest.resolve(e)
    if e.sensor == "image":
        return load_polar_image(path)
    if e.sensor == "views":
        return load_views(path)
    raise DataError(f"entry {e.path} has sensor {e.sensor!r}; run preprocess first")


def _pairs_from_list(path):
    base = Path(path).parent
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"line {lineno}: expected '<4D image> <spinning views>'")
        a, b = (p if Path(p).is_absolute() else base / p for p in parts)
        pairs.append((load_polar_image(a), load_views(b)))
    return pairs


def _pairs_from_manifests(qpath, dpath, window):
    qm, dm = load_manifest(qpath), load_manifest(dpath)
    d_ts = dm.timestamps()
    pairs = []
    for e in qm:
        if e.sensor != "image":
            continue
        j = int(np.argmin(np.abs(d_ts - e.timestamp)))
        if abs(d_ts[j] - e.timestamp) <= window and dm[j].sensor == "views":
            pairs.append((_load_entry(qm, e), _load_entry(dm, dm[j])))
    return pairs


def cmd_calibrate(args, cfg):
    cal = replace(cfg.sync.calibration,
                  **{k: v for k, v in (("delta_huber", args.delta_huber),
                                       ("lambda_smooth", args.lambda_)) if v is not None})
    cfg = replace(cfg, sync=replace(cfg.sync, calibration=cal))
    if args.pairs:
        pairs = _pairs_from_list(args.pairs)
    elif args.queries and args.database:
        pairs = _pairs_from_manifests(args.queries, args.database,
                                      cfg.mining.mining.positive_time_window)
    else:
        raise ConfigError("calibrate needs --pairs, or --queries with --database")
    if not pairs:
        raise DataError("no calibration pairs")
    with Run("calibrate", cfg, _sidecar(args.out)) as run:
        chosen, images = [], []
        for img, views in pairs:
            j, sim = select_best_view(img, views, cfg.mining.similarity)
            chosen.append({"view": j, "similarity": sim})
            images.append((img.pixels, views.views[j]))
        result = calibrate_rcs(images, cal)
        doc = result.to_dict()
        doc["selected_views"] = chosen
        run.add(args.out).write_text(json.dumps(doc, indent=2) + "\n")
        print(f"c_corr = {result.c_corr:.6f} ({result.iterations_used} IRLS iterations)")


def _describer(cfg, weights):
    path = weights or cfg.backbone.weights
    if path:
        return Describer.load(path, cfg.holmes)
    return Describer.random(cfg.seed, cfg.holmes, cfg.backbone.channels, cfg.backbone.high_channels)


def cmd_init_weights(args, cfg):
    with Run("init-weights", cfg, _sidecar(args.out)) as run:
        d = _describer(cfg, None)
        d.save(run.add(args.out))
        print(f"wrote seeded weights (seed {cfg.seed}, dim {d.dim}) to {args.out}")


def cmd_describe(args, cfg):
    manifest = load_manifest(args.manifest)
    d = _describer(cfg, args.weights)
    c_corr = _read_calib(args.calib) if args.calib and cfg.toggles.rcs_correction else 0.0
    with Run("describe", cfg, _sidecar(args.out)) as run:
        def do(item):
            i, e = item
            obj = _load_entry(manifest, e)
            if e.sensor == "views" and c_corr:
                obj = apply_rcs_correction(obj, c_corr)
            return i, e, d.describe_images(obj)

        rows, index = [], []
        for i, e, desc in _pmap(do, enumerate(manifest)):
            for v, vec in enumerate(desc):
                index.append({"row": len(rows), "entry": i, "view": v})
                rows.append((e.timestamp, e.pose, vec))
        if not rows:
            raise DataError("manifest is empty")
        ev.save_db(ev.DescriptorDB.from_entries(rows), run.add(args.out))
        idx = run.add(Path(str(args.out) + ".index.jsonl"))
        idx.write_text("".join(json.dumps(r) + "\n" for r in index))
        print(f"wrote {len(rows)} descriptors of dim {d.dim} to {args.out}")


def cmd_mine(args, cfg):
    mcfg = cfg.mining.mining
    mcfg = replace(mcfg, **{k: v for k, v in (("negative_radius", args.radius),
                                               ("negatives_per_query", args.negatives))
                            if v is not None})
    seed = args.seed if args.seed is not None else cfg.seed
    qm, dm = load_manifest(args.queries), load_manifest(args.database)
    if any(e.sensor != "image" for e in qm) or any(e.sensor != "views" for e in dm):
        raise DataError("mine needs a query manifest of images and a database manifest of views")
    queries = [(e, _load_entry(qm, e)) for e in qm]
    database = [(e, _load_entry(dm, e)) for e in dm]
    with Run("mine", cfg, _sidecar(args.out)) as run:
        tuples, skipped = mine_tuples(queries, database, mcfg, cfg.mining.similarity, seed)
        run.add(args.out).write_text("".join(json.dumps(t.to_dict()) + "\n" for t in tuples))
        run.extra["skipped"] = skipped
        print(f"mined {len(tuples)} tuples, skipped {len(skipped)} queries")


def _index(db_path):
    path = Path(str(db_path) + ".index.jsonl")
    if not path.exists():
        raise DataError(f"{path} not found; databases for loss-eval come from `describe`")
    return {(r["entry"], r["view"]): r["row"]
            for r in map(json.loads, path.read_text().splitlines())}


def cmd_loss_eval(args, cfg):
    qdb, ddb = ev.load_db(args.queries), ev.load_db(args.database)
    qidx, didx = _index(args.queries), _index(args.database)
    adaptive = cfg.toggles.adaptive_margin
    fixed = args.fixed_margin if args.fixed_margin is not None else cfg.mining.fixed_margin
    tuples = [json.loads(line) for line in Path(args.tuples).read_text().splitlines() if line]
    with Run("loss-eval", cfg, _sidecar(args.out)) as run:
        per = []
        for t in tuples:
            try:
                q = qdb.descriptors[qidx[(t["query"], 0)]]
                p = ddb.descriptors[didx[(t["positive"], t["positive_view"])]]
                negs = np.stack([ddb.descriptors[didx[(n, v)]]
                                 for n, v in zip(t["negatives"], t["negative_views"])])
            except KeyError as exc:
                raise DataError(f"tuple references a missing descriptor {exc}") from None
            batch = TripletBatch(q, p, negs, t["positive_similarity"],
                                 np.array(t["negative_similarities"]), cfg.mining.gamma)
            loss, _ = triplet_loss(batch, adaptive, fixed)
            per.append({"query": t["query"], "loss": loss})
        losses = np.array([r["loss"] for r in per])
        doc = {"adaptive_margin": adaptive, "tuples": len(per),
               "mean_loss": float(losses.mean()) if per else 0.0,
               "active_fraction": float((losses > 0).mean()) if per else 0.0, "per_tuple": per}
        run.add(args.out).write_text(json.dumps(doc, indent=2) + "\n")
        print(f"mean loss {doc['mean_loss']:.6f} over {len(per)} tuples")


def cmd_evaluate(args, cfg):
    db, queries = ev.load_db(args.db), ev.load_db(args.queries)
    radius = args.radius if args.radius is not None else cfg.eval.truth_radius
    ks = [k.strip() for k in args.k.split(",")] if args.k else list(cfg.eval.ks)
    for k in ks:
        try:
            ev.resolve_k(k, len(db))
        except ValueError:
            raise ConfigError(f"bad K value {k!r}") from None
    with Run("evaluate", cfg, _sidecar(args.out)) as run:
        report = ev.evaluate(db, queries, ks, radius, curve_max=cfg.eval.curve_max)
        csv_path = args.csv or str(Path(args.out).with_suffix(".csv"))
        report.write(run.add(args.out), run.add(csv_path))
        print(" ".join(f"R@{k}={v:.4f}" for k, v in report.recall_at_k.items()))


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="hetradar", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON config file (missing keys take defaults)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--print-config", action="store_true",
                   help="print the effective config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("synth", help="render a deterministic synthetic paired dataset")
    s.add_argument("--scenes", type=int, default=20)
    s.add_argument("--seed", type=int, default=7, dest="synth_seed")
    s.add_argument("--out", required=True)
    s.add_argument("--spacing", type=float, default=20.0, help="metres between places")
    s.add_argument("--yaw-jitter", type=float, default=0.0,
                   help="max spinning heading offset in degrees")
    s.add_argument("--pos-jitter", type=float, default=0.0, help="max spinning position offset (m)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="scans -> polar images / multi-view sets")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int, help="frames max-pooled per 4D image")
    s.add_argument("--calib", help="calibration JSON; applies c_corr to spinning views")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("calibrate", help="fit the cross-sensor RCS offset")
    s.add_argument("--pairs", help="text file of '<4D image.npz> <views.npz>' lines")
    s.add_argument("--queries", help="preprocessed 4D manifest (pairs by timestamp)")
    s.add_argument("--database", help="preprocessed spinning manifest")
    s.add_argument("--delta-huber", type=float)
    s.add_argument("--lambda", type=float, dest="lambda_")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("init-weights", help="write seeded random weights (SHBW)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_init_weights)

    s = sub.add_parser("describe", help="preprocessed manifest -> descriptor db (SHDB)")
    s.add_argument("--manifest", required=True)
    s.add_argument("--weights", help="SHBW weights; default: seeded random weights")
    s.add_argument("--calib", help="calibration JSON applied to spinning views")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_describe)

    s = sub.add_parser("mine", help="FOV-aware training tuples")
    s.add_argument("--queries", required=True)
    s.add_argument("--database", required=True)
    s.add_argument("--radius", type=float)
    s.add_argument("--negatives", type=int)
    s.add_argument("--seed", type=int, dest="mine_seed")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mine)

    s = sub.add_parser("loss-eval", help="triplet loss of mined tuples under a descriptor db")
    s.add_argument("--tuples", required=True)
    s.add_argument("--queries", required=True, help="query SHDB from describe")
    s.add_argument("--database", required=True, help="database SHDB from describe")
    s.add_argument("--fixed-margin", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_loss_eval)

    s = sub.add_parser("evaluate", help="Recall@K and PR points")
    s.add_argument("--db", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--radius", type=float)
    s.add_argument("--k", help="comma list, e.g. 1,5,10,1%%")
    s.add_argument("--out", required=True)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_evaluate)
    return p


def _exit_code(exc):
    if isinstance(exc, HetRadarError):
        return exc.exit_code
    if isinstance(exc, (OSError, json.JSONDecodeError)):
        return DataError.exit_code
    if isinstance(exc, ArithmeticError):
        return NumericalError.exit_code
    return 1


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.print_config:
            print(dump_config(cfg))
            return 0
        if args.command is None:
            parser.print_help()
            return ConfigError.exit_code
        # subcommand-local seeds (synth --seed, mine --seed) stay separate
        if getattr(args, "synth_seed", None) is not None:
            args.seed = args.synth_seed
        if hasattr(args, "mine_seed"):
            args.seed = args.mine_seed
        args.func(args, cfg)
        return 0
    except (HetRadarError, OSError, json.JSONDecodeError, ArithmeticError) as exc:
        code = _exit_code(exc)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}),
              file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
