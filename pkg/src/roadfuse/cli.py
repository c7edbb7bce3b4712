"""``roadfuse`` command line: simulate, detect, smooth, match, fuse, evaluate, or all of it.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import camera as cam_io
from . import pointcloud as pc
from .association import pair_tracks, track_ids, write_pairs
from .config import PRESETS, ConfigError, RunConfig, dump_config, load_config
from .evaluation import write_plot_data, write_report
from .frames import Trajectory, read_trajectories, write_trajectories
from .pipeline import (
    METHOD_OF_SOURCE,
    detect_frames,
    detection_positions,
    evaluate_tracks,
    fuse_tracks,
    localize_camera,
    smooth_all,
    synthesize_clouds,
)
from .scenario import generate_ground_truth, render_camera, render_lidar_detections

log = logging.getLogger("roadfuse")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
VEHICLE_COLUMNS = ("vehicle_id", "kind", "lane", "arrival", "speed", "length", "width", "height")


class DataError(RuntimeError):
    """Unreadable or inconsistent input data (exit code 3)."""


# --- input sniffing -----------------------------------------------------------

def _header(path: Path) -> list[str]:
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        row = next(csv.reader(fh), None)
    return [c.strip() for c in row] if row else []


def load_camera_tracks(path: str | Path, cfg: RunConfig) -> list[Trajectory]:
    """Camera tracks from pixel detections (localized here) or from a trajectory CSV."""
    path = Path(path)
    cols = _header(path)
    if not cols:
        return []
    if {"u", "v"} <= set(cols):
        return localize_camera(cfg.scenario.camera, cam_io.read_detections(path))
    if "source" in cols:
        return read_trajectories(path)
    raise DataError(f"{path}: neither a pixel-detection nor a trajectory CSV (columns {cols})")


def load_lidar_tracks(path: str | Path, cfg: RunConfig) -> list[Trajectory]:
    """LiDAR tracks from a detection CSV (tracked here when ids are missing) or a trajectory CSV."""
    path = Path(path)
    cols = _header(path)
    if not cols:
        return []
    if {"cx", "cy"} <= set(cols):
        frames = pc.read_detection_frames(path)
        if any(tid is None for _, objs in frames for tid, _ in objs):
            return track_ids([(t, [p for _, p in objs]) for t, objs in frames], cfg.association, source="lidar")
        per: dict[int, tuple[list, list]] = {}
        for t, objs in frames:
            for tid, p in objs:
                ts, ps = per.setdefault(tid, ([], []))
                ts.append(t)
                ps.append(p.as_array())
        return [Trajectory.from_arrays(tid, "lidar", *per[tid]) for tid in sorted(per)]
    if "source" in cols:
        return read_trajectories(path)
    raise DataError(f"{path}: neither a detection nor a trajectory CSV (columns {cols})")


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None
    return out


def write_vehicles(path: Path, truth) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VEHICLE_COLUMNS)
        for g in truth:
            w.writerow([g.vehicle_id, g.kind, g.lane, f"{g.arrival:.6f}", f"{g.speed:.6f}", g.length, g.width, g.height])


# --- commands -------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, write_clouds: bool = True) -> dict:
    """Ground truth, camera pixels and LiDAR frames (PLY + manifest, or centroid detections)."""
    out = _out(cfg)
    scen = cfg.scenario_seeded
    truth = generate_ground_truth(scen)
    write_trajectories(out / "truth.csv", [g.trajectory for g in truth])
    write_vehicles(out / "vehicles.csv", truth)
    pixels = render_camera(truth, scen)
    cam_io.write_detections(out / "camera_detections.csv", pixels)
    result = {"truth": truth, "pixels": pixels, "clouds": None, "lidar_frames": None}
    if cfg.pipeline.lidar_source == "centroid":
        frames = render_lidar_detections(truth, scen)
        result["lidar_frames"] = [(t, [(None, p) for _, p in objs]) for t, objs in frames]
        _write_centroids(out / "lidar_detections.csv", result["lidar_frames"])
    elif write_clouds:
        cloud_dir = out / "clouds"
        entries = []
        for k, cloud in enumerate(synthesize_clouds(truth, scen)):
            name = f"frame_{k:06d}.ply"
            pc.write_ply(cloud_dir / name, cloud)
            entries.append((cloud.t, name))
        pc.write_manifest(cloud_dir / "manifest.json", entries)
    log.info("simulated %d vehicles, %d camera detections", len(truth), len(pixels))
    return result


def _write_centroids(path: Path, frames) -> None:
    """Centroid-level detections in the detection CSV schema (box size unknown, left empty)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(pc.DETECTION_COLUMNS)
        for t, objs in frames:
            for _, p in objs:
                w.writerow([f"{t:.6f}", "", f"{p.x:.4f}", f"{p.y:.4f}", f"{p.z:.4f}", "", "", "", ""])


def cmd_lidar_detect(cfg: RunConfig, manifest: str | Path | None = None) -> list:
    out = _out(cfg)
    manifest = Path(manifest) if manifest else out / "clouds" / "manifest.json"
    if not manifest.exists():
        raise DataError(f"manifest not found: {manifest}")
    entries = pc.read_manifest(manifest)
    for _, f in entries:
        if not f.exists():
            raise DataError(f"point-cloud file not found: {f}")

    def clouds():
        for t, f in entries:
            try:
                cloud = pc.read_cloud(f, t)
            except (ValueError, KeyError) as exc:
                raise DataError(f"{f}: {exc}") from None
            yield cloud

    frames = detect_frames(clouds(), cfg.lidar_params, cfg.seed)
    pc.write_detections(out / "lidar_detections.csv", frames)
    log.info("detected objects in %d frames", len(frames))
    return frames


def cmd_smooth(cfg: RunConfig, path: str | Path, sensor: str) -> list[Trajectory]:
    out = _out(cfg)
    tracks = load_camera_tracks(path, cfg) if sensor == "camera" else load_lidar_tracks(path, cfg)
    smoothed = smooth_all(tracks, cfg.filter, sensor)
    write_trajectories(out / f"smoothed_{sensor}.csv", smoothed)
    return smoothed


def cmd_match(cfg: RunConfig, camera: str | Path, lidar: str | Path):
    out = _out(cfg)
    pairs = pair_tracks(load_camera_tracks(camera, cfg), load_lidar_tracks(lidar, cfg), cfg.association)
    write_pairs(out / "pairs.csv", pairs)
    return pairs


def _fuse_and_write(cfg: RunConfig, out: Path, cam_tracks, lid_tracks):
    result = fuse_tracks(cam_tracks, lid_tracks, cfg.filter, cfg.association)
    write_trajectories(out / "camera_tracks.csv", result.camera)
    write_trajectories(out / "lidar_tracks.csv", result.lidar)
    write_trajectories(out / "fused.csv", result.fused)
    write_trajectories(out / "average.csv", result.average)
    write_pairs(out / "pairs.csv", result.pairs)
    log.info("fused %d tracks from %d pairs", len(result.fused), len(result.pairs))
    return result


def cmd_fuse(cfg: RunConfig, camera: str | Path, lidar: str | Path):
    out = _out(cfg)
    return _fuse_and_write(cfg, out, load_camera_tracks(camera, cfg), load_lidar_tracks(lidar, cfg))


def _write_evaluation(cfg: RunConfig, out: Path, truth_tracks, methods):
    ev = cfg.evaluation
    report, _ = evaluate_tracks(truth_tracks, methods, ev.segment, cfg.association.gate, ev.assign)
    write_report(out / "report.csv", report)
    ids = report.vehicle_ids if ev.plot_vehicles is None else [v for v in ev.plot_vehicles if v in report.vehicle_ids]
    for vid in ids:
        write_plot_data(out / "plots" / f"vehicle_{vid:04d}.csv", report, vid)
    log.info("report: %d rows for %d vehicles", len(report.rows), len(report.vehicle_ids))
    return report


def cmd_evaluate(cfg: RunConfig, truth: str | Path, estimates: Sequence[str | Path]):
    out = _out(cfg)
    truth_tracks = read_trajectories(_checked(truth))
    methods: dict[str, list[Trajectory]] = {}
    for path in estimates:
        for trk in read_trajectories(_checked(path)):
            method = METHOD_OF_SOURCE.get(trk.source)
            if method is None:
                raise DataError(f"{path}: source {trk.source!r} is not an estimate method")
            methods.setdefault(method, []).append(trk)
    return _write_evaluation(cfg, out, truth_tracks, methods)


def _checked(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    return path


def cmd_pipeline(cfg: RunConfig):
    """simulate, then lidar-detect, fuse and evaluate, all under ``cfg.out``."""
    out = _out(cfg)
    dump_config(out / "config.json", cfg)
    sim = cmd_simulate(cfg, write_clouds=cfg.pipeline.write_clouds)
    if cfg.pipeline.lidar_source == "centroid":
        lidar_frames = sim["lidar_frames"]
    elif cfg.pipeline.write_clouds:
        lidar_frames = detection_positions(cmd_lidar_detect(cfg))
    else:
        frames = detect_frames(synthesize_clouds(sim["truth"], cfg.scenario_seeded), cfg.lidar_params, cfg.seed)
        pc.write_detections(out / "lidar_detections.csv", frames)
        lidar_frames = detection_positions(frames)
    lid_tracks = track_ids([(t, [p for _, p in objs]) for t, objs in lidar_frames], cfg.association, source="lidar")
    cam_tracks = localize_camera(cfg.scenario.camera, sim["pixels"])
    result = _fuse_and_write(cfg, out, cam_tracks, lid_tracks)
    methods = {"camera": result.camera, "lidar": result.lidar, "kf_fused": result.fused, "average": result.average}
    return _write_evaluation(cfg, out, [g.trajectory for g in sim["truth"]], methods)


# --- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="top-level seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted config override, repeatable")
    common.add_argument("--preset", help=f"named preset; join several with '+' ({', '.join(PRESETS)})")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="roadfuse", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate truth, camera pixels and LiDAR frames")
    s = sub.add_parser("lidar-detect", parents=[common], help="detect objects in point-cloud frames")
    s.add_argument("manifest", nargs="?", help="frame manifest (default: OUT/clouds/manifest.json)")
    s = sub.add_parser("smooth", parents=[common], help="per-sensor Kalman smoothing")
    s.add_argument("input")
    s.add_argument("--sensor", choices=("camera", "lidar"), required=True)
    s = sub.add_parser("match", parents=[common], help="pair camera and LiDAR tracks")
    s.add_argument("camera")
    s.add_argument("lidar")
    s = sub.add_parser("fuse", parents=[common], help="pair and fuse camera and LiDAR tracks")
    s.add_argument("camera")
    s.add_argument("lidar")
    s = sub.add_parser("evaluate", parents=[common], help="cumulative errors against ground truth")
    s.add_argument("--truth", required=True)
    s.add_argument("estimates", nargs="+", help="trajectory CSVs (method taken from the source column)")
    sub.add_parser("pipeline", parents=[common], help="simulate, detect, fuse and evaluate in one run")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config, args.set, args.preset, args.seed, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "lidar-detect":
            cmd_lidar_detect(cfg, args.manifest)
        elif args.command == "smooth":
            cmd_smooth(cfg, args.input, args.sensor)
        elif args.command == "match":
            cmd_match(cfg, args.camera, args.lidar)
        elif args.command == "fuse":
            cmd_fuse(cfg, args.camera, args.lidar)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.truth, args.estimates)
        elif args.command == "pipeline":
            cmd_pipeline(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
