"""Glue between stages: localization, tracking, pairing, fusion and scoring."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

from .association import AssociationConfig, TrackPair, pair_tracks, track_ids
from .camera import CameraModel, PixelDetection, localize_detections
from .evaluation import ErrorReport, assign_to_truth, average_baseline, compare_methods
from .frames import Trajectory, WorldPoint
from .kalman import FilterConfig, run_fusion, smooth_trajectory
from .pointcloud import Detection, LidarParams, NoPlaneError, PointCloud, detect_objects
from .scenario import (
    GroundTruth,
    ScenarioConfig,
    frame_times,
    generate_ground_truth,
    lidar_detections_as_tracks,
    render_camera,
    render_lidar_cloud,
    render_lidar_detections,
)

log = logging.getLogger(__name__)

LIDAR_ONLY_ID_OFFSET = 100_000
METHOD_OF_SOURCE = {"camera": "camera", "lidar": "lidar", "fused": "kf_fused", "kf_fused": "kf_fused", "average": "average"}


@dataclass
class FusionResult:
    pairs: list[TrackPair]
    fused: list[Trajectory]
    average: list[Trajectory]
    camera: list[Trajectory]
    lidar: list[Trajectory]


def localize_camera(cam: CameraModel, detections: Sequence[PixelDetection]) -> list[Trajectory]:
    return list(localize_detections(cam, detections).values())


def synthesize_clouds(truth: Sequence[GroundTruth], scenario: ScenarioConfig) -> Iterator[PointCloud]:
    for t in frame_times(scenario.duration, scenario.frame_rate_lidar):
        yield render_lidar_cloud(truth, scenario, float(t))


def detect_frames(clouds: Iterable[PointCloud], params: LidarParams, seed: int = 0) -> list[tuple[float, list[Detection]]]:
    """Run the detector on every frame; a frame without a ground plane yields no detections."""
    out = []
    for cloud in clouds:
        try:
            dets = detect_objects(cloud, params, seed)
        except NoPlaneError as exc:
            log.warning("frame t=%.3f: %s; no detections", cloud.t, exc)
            dets = []
        out.append((cloud.t, dets))
    return out


def detection_positions(frames: Sequence[tuple[float, Sequence[Detection]]]) -> list[tuple[float, list[tuple[None, WorldPoint]]]]:
    return [(t, [(None, d.center) for d in dets]) for t, dets in frames]


def track_lidar(frames, assoc: AssociationConfig = AssociationConfig()) -> list[Trajectory]:
    """Give anonymous per-frame LiDAR detections stable IDs."""
    anon = [(t, [p for _, p in objs]) for t, objs in frames]
    return track_ids(anon, assoc, source="lidar")


def fuse_tracks(
    camera_tracks: Sequence[Trajectory],
    lidar_tracks: Sequence[Trajectory],
    filter_cfg: FilterConfig = FilterConfig(),
    assoc: AssociationConfig = AssociationConfig(),
) -> FusionResult:
    """Pair camera and LiDAR tracks, then fuse each pair; unpaired tracks run single-sensor.

    Fused tracks keep the camera track id; LiDAR-only tracks are offset by
    ``LIDAR_ONLY_ID_OFFSET`` so the two id spaces cannot collide.
    """
    pairs = pair_tracks(camera_tracks, lidar_tracks, assoc)
    cam_by = {t.track_id: t for t in camera_tracks}
    lid_by = {t.track_id: t for t in lidar_tracks}
    fused, average = [], []
    used_l = set()
    paired_c = {p.camera_track_id: p.lidar_track_id for p in pairs}
    for cid in sorted(cam_by):
        lid = lid_by.get(paired_c[cid]) if cid in paired_c else None
        if lid is not None:
            used_l.add(lid.track_id)
        fused.append(run_fusion(cam_by[cid], lid, filter_cfg, track_id=cid))
        if lid is not None:
            average.append(average_baseline(cam_by[cid], lid, track_id=cid))
        else:
            average.append(cam_by[cid].with_source("average"))
    for lid_id in sorted(lid_by):
        if lid_id in used_l:
            continue
        tid = LIDAR_ONLY_ID_OFFSET + lid_id
        fused.append(run_fusion(None, lid_by[lid_id], filter_cfg, track_id=tid))
        average.append(lid_by[lid_id].with_source("average", tid))
    return FusionResult(pairs, fused, average, list(camera_tracks), list(lidar_tracks))


@dataclass
class Study:
    """Everything produced by one centroid-level scenario run."""

    truth: list[GroundTruth]
    result: FusionResult
    report: ErrorReport
    estimates: dict[str, dict[int, Trajectory]] = field(default_factory=dict)

    @property
    def truth_tracks(self) -> dict[int, Trajectory]:
        return {g.vehicle_id: g.trajectory for g in self.truth}


def evaluate_tracks(
    truth_tracks: Sequence[Trajectory],
    methods: Mapping[str, Sequence[Trajectory]],
    segment: tuple[float, float] | None,
    gate: float = 3.0,
    assign: str = "spatial",
    vehicles=None,
) -> tuple[ErrorReport, dict[str, dict[int, Trajectory]]]:
    """Score each method's tracks against truth.

    With ``assign="spatial"`` estimates are attributed to the truth vehicle
    they follow most often; with ``assign="id"`` their track ids are taken
    as vehicle ids, and ids unknown to the truth are reported as such.
    """
    if assign == "id":
        estimates = {m: {trk.track_id: trk for trk in tracks} for m, tracks in methods.items()}
    else:
        estimates = {m: assign_to_truth(tracks, truth_tracks, gate) for m, tracks in methods.items()}
    truth = {trk.track_id: trk for trk in truth_tracks}
    if vehicles is None and assign == "id":
        vehicles = sorted(set(truth).union(*(e.keys() for e in estimates.values())))
    return compare_methods(estimates, truth, segment, vehicles), estimates


def score(
    truth: Sequence[GroundTruth],
    result: FusionResult,
    segment: tuple[float, float] | None,
    vehicles=None,
    gate: float = 3.0,
) -> tuple[ErrorReport, dict[str, dict[int, Trajectory]]]:
    methods = {"camera": result.camera, "lidar": result.lidar, "kf_fused": result.fused, "average": result.average}
    return evaluate_tracks([g.trajectory for g in truth], methods, segment, gate, vehicles=vehicles)


def run_study(
    scenario: ScenarioConfig,
    filter_cfg: FilterConfig = FilterConfig(),
    assoc: AssociationConfig = AssociationConfig(),
    segment: tuple[float, float] | None = None,
    use_true_lidar_ids: bool = False,
) -> Study:
    """Simulate camera pixels and centroid-level LiDAR, then localize, track, fuse and score."""
    truth = generate_ground_truth(scenario)
    cam_tracks = localize_camera(scenario.camera, render_camera(truth, scenario))
    frames = render_lidar_detections(truth, scenario)
    lid_tracks = lidar_detections_as_tracks(frames) if use_true_lidar_ids else track_lidar(frames, assoc)
    result = fuse_tracks(cam_tracks, lid_tracks, filter_cfg, assoc)
    report, estimates = score(truth, result, segment, gate=assoc.gate)
    return Study(truth, result, report, estimates)


def smooth_all(tracks: Sequence[Trajectory], cfg: FilterConfig, sensor: str) -> list[Trajectory]:
    return [smooth_trajectory(t, cfg, sensor) for t in tracks if len(t)]
