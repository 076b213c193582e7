"""Command-line entry point: ``polarosm <command> ...``.

Exit codes are 0 on success, 1 on runtime failure and 2 on usage or
configuration errors. Failures print one line starting with ``ERROR:``.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments, missing inputs or invalid configuration (exit 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- shared helpers ------------------------------------------------------------


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    return p


def _require_dir(path) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"no such directory: {p}")
    return p


def _latlon(text: str) -> tuple[float, float]:
    try:
        lat, lon = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lat,lon but got {text!r}") from None
    return lat, lon


def read_poses(path) -> tuple[list[str], np.ndarray]:
    """Pose file: one ``id east north yaw`` line per scan; ``#`` comments."""
    ids, rows = [], []
    for lineno, line in enumerate(_require_file(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise UsageError(f"{path}:{lineno}: expected 'id east north yaw'")
        try:
            rows.append([float(v) for v in parts[1:]])
        except ValueError:
            raise UsageError(f"{path}:{lineno}: non-numeric pose") from None
        ids.append(parts[0])
    return ids, np.array(rows, dtype=np.float64).reshape(-1, 3)


def write_poses(path, ids, poses) -> None:
    Path(path).write_text("".join(f"{i} {e!r} {n!r} {y!r}\n" for i, (e, n, y) in
                                  zip(ids, np.asarray(poses, dtype=np.float64).tolist())))


def load_labeled_scan(path, labels=None, raw_labels: bool = False):
    from .scan import attach_labels, load_scan

    path = _require_file(path)
    label_path = Path(labels) if labels else path.with_suffix(".label")
    points = load_scan(path)
    if not label_path.is_file():
        raise UsageError(f"no label file for {path} (looked for {label_path})")
    return attach_labels(points, label_path, remap=raw_labels)


def scan_ids(directory) -> dict[str, Path]:
    return {p.stem: p for p in sorted(_require_dir(directory).glob("*.bin"))}


def load_configs(path):
    """Split a ``key = value`` file into model and training configurations."""
    from .model import ModelConfig
    from .train import parse_train_config

    model_keys = {f.name: f.type for f in fields(ModelConfig)}
    model_kw, train_lines = {}, []
    for lineno, line in enumerate(_require_file(path).read_text().splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        sep = "=" if "=" in body else ":"
        key = body.split(sep, 1)[0].strip() if sep in body else ""
        if key in model_keys:
            raw = body.split(sep, 1)[1].strip()
            try:
                model_kw[key] = _model_value(key, model_keys[key], raw)
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: {exc}") from None
            train_lines.append("")
        else:
            train_lines.append(line)
    try:
        train = parse_train_config("\n".join(train_lines))
        model = ModelConfig(**model_kw)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    return model, train


def _model_value(key, kind, raw):
    if key == "widths":
        return tuple(int(v) for v in raw.replace("(", "").replace(")", "").split(",") if v.strip())
    if kind in ("bool", bool):
        low = raw.lower()
        if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ValueError(f"not a boolean: {raw!r}")
        return low in ("1", "true", "yes", "on")
    if kind in ("int", int):
        return int(raw)
    return float(raw)


def _manifest(tiles_dir):
    from .osm.database import MANIFEST_NAME, read_manifest

    tiles_dir = _require_dir(tiles_dir)
    if not (tiles_dir / MANIFEST_NAME).is_file():
        raise UsageError(f"{tiles_dir} has no {MANIFEST_NAME}")
    return tiles_dir, read_manifest(tiles_dir)


def _rank_rows(result, names):
    rows = []
    for r, (tid, sim, (e, n)) in enumerate(zip(result.tile_ids, result.similarities, result.tile_positions), 1):
        rows.append([r, int(tid), names[int(tid)] if names else "", f"{sim:.6f}", f"{e:.3f}", f"{n:.3f}"])
    return rows


# -- commands ------------------------------------------------------------------


def cmd_tiles_build(args) -> int:
    from .osm.database import sample_tile_database, write_database
    from .osm.parser import parse_osm
    from .osm.raster import TileRasterizer

    osm = _require_file(args.osm)
    entities = parse_osm(str(osm))
    poses, ids = None, None
    if args.mode == "trajectory":
        if not args.poses:
            raise UsageError("trajectory mode needs --poses")
        ids, poses = read_poses(args.poses)
        poses = poses[:, :2]
    if args.interval <= 0:
        raise UsageError("--interval must be positive")
    if args.tile_px < 1 or args.resolution <= 0:
        raise UsageError("--tile-px and --resolution must be positive")
    raster = TileRasterizer(entities, args.origin, args.tile_px, args.resolution)
    db = sample_tile_database(args.mode, entities, args.origin, poses=poses, interval=args.interval, ids=ids,
                              rasterizer=raster)
    manifest = write_database(db, args.out)
    print(f"{len(db)} tiles -> {manifest}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .model import DescriptorModel
    from .osm.raster import OsmTile
    from .train import PairDataset, Trainer

    model_config, train_config = load_configs(args.config) if args.config else _default_configs()
    if args.seed is not None:
        train_config = replace(train_config, seed=args.seed)
    scans = scan_ids(args.scans)
    tiles_dir, records = _manifest(args.tiles)
    tiles = {r.tile_id: r for r in records}
    missing_tiles = sorted(set(scans) - set(tiles))
    missing_scans = sorted(set(tiles) - set(scans))
    if missing_tiles or missing_scans:
        parts = []
        if missing_tiles:
            parts.append("scans without tiles: " + ",".join(missing_tiles))
        if missing_scans:
            parts.append("tiles without scans: " + ",".join(missing_scans))
        raise UsageError("unmatched ids; " + "; ".join(parts))
    ids = sorted(scans)
    if len(ids) < 2:
        raise UsageError("training needs at least two paired scans")
    data = [load_labeled_scan(scans[i], raw_labels=args.raw_labels) for i in ids]
    values = []
    for i in ids:
        tile = OsmTile.load(tiles_dir / tiles[i].filename)
        if tile.values.shape[0] != model_config.tile_px or tile.resolution != np.float32(model_config.tile_resolution):
            raise UsageError(f"tile {i} is {tile.values.shape[0]} px at {tile.resolution} m; the model expects "
                             f"{model_config.tile_px} px at {model_config.tile_resolution} m")
        values.append(tile.values)
    model = DescriptorModel(model_config, seed=train_config.seed)
    trainer = Trainer(model, PairDataset(data, values, model_config, ids=ids), train_config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    loss_csv = Path(args.loss_csv) if args.loss_csv else out.with_suffix(".loss.csv")
    trace = trainer.fit(log_path=loss_csv)
    model.save(out)
    if trace:
        print(f"trained {train_config.epochs} epochs on {len(ids)} pairs; final loss {trace[-1][2]:.6f}")
    print(f"checkpoint -> {out}; loss trace -> {loss_csv}")
    return EXIT_OK


def _default_configs():
    from .experiment import SYNTH_MODEL, SYNTH_TRAIN

    return SYNTH_MODEL, SYNTH_TRAIN


def cmd_index(args) -> int:
    from .model import DescriptorModel
    from .osm.raster import OsmTile
    from .retrieval import build_index

    model = DescriptorModel.load(_require_file(args.checkpoint))
    tiles_dir, records = _manifest(args.tiles)
    tiles = (OsmTile.load(tiles_dir / r.filename).values for r in records)
    positions = np.array([[r.east, r.north] for r in records], dtype=np.float64).reshape(-1, 2)
    index = build_index(tiles, model, positions, batch_size=args.batch_size)
    index.save(args.out)
    print(f"{len(index)} descriptors -> {args.out}")
    return EXIT_OK


def _names(tiles_dir):
    if not tiles_dir:
        return None
    _, records = _manifest(tiles_dir)
    return [r.tile_id for r in records]


def _query(model, index, scan, top, query_id=-1, position=None):
    from .retrieval import query_topk

    d = model.scan_descriptor(scan)
    return query_topk(index, d, min(top, len(index)), query_id=query_id, position=position)


def cmd_query(args) -> int:
    from .model import DescriptorModel
    from .retrieval import DescriptorIndex

    model = DescriptorModel.load(_require_file(args.checkpoint))
    index = DescriptorIndex.load(_require_file(args.index))
    scan = load_labeled_scan(args.scan, args.labels, args.raw_labels)
    names = _names(args.tiles)
    if names is not None and len(names) != len(index):
        raise UsageError(f"manifest lists {len(names)} tiles but the index holds {len(index)}")
    result = _query(model, index, scan, args.top)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["rank", "index", "tile", "similarity", "east", "north"])
    w.writerows(_rank_rows(result, names))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .model import DescriptorModel
    from .retrieval import DescriptorIndex, evaluation_report, random_baseline

    model = DescriptorModel.load(_require_file(args.checkpoint))
    index = DescriptorIndex.load(_require_file(args.index))
    ids, poses = read_poses(args.poses)
    scans = scan_ids(args.scans)
    unknown = [i for i in ids if i not in scans]
    if unknown:
        raise UsageError("poses without scans: " + ",".join(unknown))
    results = [_query(model, index, load_labeled_scan(scans[i], raw_labels=args.raw_labels), args.top,
                      query_id=k, position=pose[:2]) for k, (i, pose) in enumerate(zip(ids, poses))]
    n_max = min(args.top, len(index))
    baseline = {f"R@{k:g}m top-1": random_baseline(index.positions, poses[:, :2], k, 1) for k in (1.0, 5.0, 10.0)}
    for n in (5, 10):
        if n <= n_max:
            baseline[f"R@5m top-{n}"] = random_baseline(index.positions, poses[:, :2], 5.0, n)
    text = evaluation_report(results, n_max=n_max, baseline=baseline)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_masks(args) -> int:
    from .model import ModelConfig
    from .osm.raster import OsmTile
    from .scan import range_filter
    from .visibility import lidar_visibility_mask, tile_visibility_mask, write_mask_pgm

    if bool(args.scan) == bool(args.tile):
        raise UsageError("give exactly one of --scan or --tile")
    config = ModelConfig(rings=args.rings, sectors=args.sectors, max_range=args.max_range)
    if args.scan:
        scan = range_filter(load_labeled_scan(args.scan, args.labels, args.raw_labels),
                            config.min_range, config.max_range)
        mask = lidar_visibility_mask(scan, config.grid, args.empty_sector_visible)
    else:
        tile = OsmTile.load(_require_file(args.tile))
        mask = tile_visibility_mask(tile.values, tile.resolution, config.grid)
    write_mask_pgm(args.out, mask)
    print(f"{mask.shape[0]}x{mask.shape[1]} mask, {int(mask.sum())} visible cells -> {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .osm.parser import write_osm
    from .scan import save_labels, save_scan
    from .synth import SYNTH_ORIGIN, WorldParams, generate_world, road_poses, simulate_scan, world_to_entities

    params = WorldParams(size=args.size)
    world = generate_world(args.seed, params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "world.txt").write_text(world.dump())
    buf = io.StringIO()
    write_osm(world_to_entities(world), buf)
    (out / "world.osm").write_text(buf.getvalue())
    (out / "origin.txt").write_text(f"{SYNTH_ORIGIN[0]!r},{SYNTH_ORIGIN[1]!r}\n")
    for split, n, offset in (("train", args.poses, 1), ("query", args.queries, 2)):
        if n == 0:
            continue
        poses = road_poses(world, n, seed=args.seed + offset)
        scan_dir = out / split
        scan_dir.mkdir(exist_ok=True)
        ids = [f"{k:06d}" for k in range(n)]
        for k, (sid, pose) in enumerate(zip(ids, poses)):
            scan = simulate_scan(world, pose, noise=args.noise, ground_step=args.ground_step or None,
                                 seed=offset * 100_000 + k).scan
            save_scan(scan_dir / f"{sid}.bin", scan.points)
            save_labels(scan_dir / f"{sid}.label", scan.labels)
        write_poses(out / f"{split}_poses.txt", ids, poses)
    print(f"world seed {args.seed}: {len(world.buildings)} buildings, {len(world.roads)} roads, "
          f"{args.poses} train and {args.queries} query scans -> {out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .retrieval import parse_report

    rows = parse_report(_require_file(args.report).read_text())
    if not rows:
        raise UsageError(f"{args.report} holds no recall rows")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    by_k: dict[float, list[tuple[int, float]]] = {}
    for k, n, r in rows:
        by_k.setdefault(k, []).append((n, r))
    for k, points in sorted(by_k.items()):
        path = out / f"recall_{k:g}m.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "recall"])
            w.writerows(sorted(points))
        print(path)
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polarosm", description="LiDAR scan to OpenStreetMap place recognition.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    tiles = sub.add_parser("tiles", help="tile database tools")
    tiles_sub = tiles.add_subparsers(dest="tiles_command", required=True, parser_class=_Parser)
    build = tiles_sub.add_parser("build", help="rasterize OSM tiles and write a manifest")
    build.add_argument("--osm", required=True, help="OSM XML file")
    build.add_argument("--origin", required=True, type=_latlon, help="projection origin as lat,lon")
    build.add_argument("--mode", required=True, choices=("trajectory", "highway"))
    build.add_argument("--interval", type=float, default=1.0, help="highway sampling interval in meters")
    build.add_argument("--poses", help="pose file (trajectory mode)")
    build.add_argument("--tile-px", type=int, default=200, help="tile side in pixels")
    build.add_argument("--resolution", type=float, default=0.5, help="meters per pixel")
    build.add_argument("--out", required=True, help="output directory")
    build.set_defaults(func=cmd_tiles_build)

    scan_opts = _Parser(add_help=False)
    scan_opts.add_argument("--raw-labels", action="store_true",
                           help="labels hold raw SemanticKITTI ids that need remapping")

    train = sub.add_parser("train", parents=[scan_opts], help="train the descriptor model")
    train.add_argument("--scans", required=True, help="directory of <id>.bin/<id>.label scans")
    train.add_argument("--tiles", required=True, help="tile directory with a manifest; tile ids match scan ids")
    train.add_argument("--config", help="key = value file with model and training settings")
    train.add_argument("--seed", type=int, help="overrides the seed in the config")
    train.add_argument("--out", required=True, help="checkpoint path")
    train.add_argument("--loss-csv", help="loss trace path (default: <out>.loss.csv)")
    train.set_defaults(func=cmd_train)

    index = sub.add_parser("index", help="encode tiles into a descriptor database")
    index.add_argument("--tiles", required=True)
    index.add_argument("--checkpoint", required=True)
    index.add_argument("--out", required=True)
    index.add_argument("--batch-size", type=int, default=32)
    index.set_defaults(func=cmd_index)

    query = sub.add_parser("query", parents=[scan_opts], help="print the top-N tiles for one scan")
    query.add_argument("--index", required=True)
    query.add_argument("--checkpoint", required=True)
    query.add_argument("--scan", required=True, help="velodyne .bin file")
    query.add_argument("--labels", help="label file (default: next to the scan)")
    query.add_argument("--tiles", help="tile directory, to print tile ids")
    query.add_argument("--top", type=int, default=5)
    query.set_defaults(func=cmd_query)

    ev = sub.add_parser("eval", parents=[scan_opts], help="recall report for a set of query scans")
    ev.add_argument("--index", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--scans", required=True)
    ev.add_argument("--poses", required=True, help="ground-truth pose file for the query scans")
    ev.add_argument("--top", type=int, default=25)
    ev.add_argument("--out", help="also write the report here")
    ev.set_defaults(func=cmd_eval)

    masks = sub.add_parser("masks", parents=[scan_opts], help="dump a visibility mask as PGM")
    masks.add_argument("--scan")
    masks.add_argument("--labels")
    masks.add_argument("--tile")
    masks.add_argument("--rings", type=int, default=480)
    masks.add_argument("--sectors", type=int, default=360)
    masks.add_argument("--max-range", type=float, default=50.0)
    masks.add_argument("--empty-sector-visible", action="store_true")
    masks.add_argument("--out", required=True)
    masks.set_defaults(func=cmd_masks)

    synth = sub.add_parser("synth", help="materialize a seeded synthetic town")
    synth.add_argument("--seed", type=int, required=True)
    synth.add_argument("--out", required=True)
    synth.add_argument("--size", type=float, default=200.0, help="side of the square world in meters")
    synth.add_argument("--poses", type=int, default=200, help="training scans")
    synth.add_argument("--queries", type=int, default=50, help="held-out query scans")
    synth.add_argument("--noise", type=float, default=0.02, help="range noise sigma in meters")
    synth.add_argument("--ground-step", type=float, default=2.0, help="ground return spacing in meters, 0 for none")
    synth.set_defaults(func=cmd_synth)

    plot = sub.add_parser("plot", help="split an eval report into per-curve CSVs")
    plot.add_argument("--report", required=True)
    plot.add_argument("--out", required=True)
    plot.set_defaults(func=cmd_plot)
    return parser


def _set_threads():
    raw = os.environ.get("OPAL_THREADS")
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"OPAL_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"OPAL_THREADS must be a positive integer, got {raw!r}")
    import torch

    torch.set_num_threads(n)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _set_threads()
        return args.func(args)
    except UsageError as exc:
        code, message = EXIT_USAGE, str(exc)
    except (FileNotFoundError, IsADirectoryError) as exc:
        code, message = EXIT_USAGE, f"{exc.strerror}: {exc.filename}"
    except ValueError as exc:
        code, message = EXIT_USAGE, str(exc)
    except Exception as exc:  # noqa: BLE001 - every failure maps to one error line
        code, message = EXIT_RUNTIME, f"{type(exc).__name__}: {exc}"
    print("ERROR: " + " ".join(message.split()), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
