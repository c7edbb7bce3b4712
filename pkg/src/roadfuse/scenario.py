"""Seeded synthetic work-zone traffic and sensor data.

A two-lane road narrows to one lane: vehicles in the closing lane merge with
a cubic lateral profile between ``merge_start`` and ``merge_end``. Camera
detections come from the real projection model; LiDAR either comes as
surface-sampled point clouds or, for large studies, as noisy centroids.

All randomness is drawn from generators keyed by (seed, stream, index), so
any frame can be rendered independently and in any order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .camera import CameraModel, PixelDetection, project_to_pixel
from .frames import Trajectory, WorldPoint
from .pointcloud import ROI, PointCloud

STREAM_TRUTH = 0
STREAM_CAMERA = 1
STREAM_CLOUD = 2
STREAM_LIDAR_FAST = 3

CAR_DIMS = (4.6, 1.8, 1.5)
TRUCK_DIMS = (12.0, 2.5, 3.5)


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream), int(index)])


@dataclass(frozen=True)
class CameraNoise:
    pixel_jitter: float = 0.5  # px, std per axis
    pixel_bias_u: float = 0.0
    pixel_bias_v: float = 0.0
    lon_bias: float = 0.0  # m, applied to the ground contact point before projection
    lat_bias: float = 1.5
    lon_drift: float = 0.0  # m/s since the vehicle entered the scene
    dropout: float = 0.05
    max_range: float = 200.0


@dataclass(frozen=True)
class LidarNoise:
    range_noise: float = 0.02  # m, along the beam (point clouds)
    ground_z_noise: float = 0.02
    position_noise: float = 0.1  # m, per axis (centroid fast path)
    lon_bias: float = 0.0
    lat_bias: float = 0.0
    lon_drift: float = 0.0
    dropout: float = 0.05


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    duration: float = 300.0
    frame_rate_camera: float = 10.0
    frame_rate_lidar: float = 20.0
    truth_rate: float = 20.0
    lane_width: float = 3.6
    road_start: float = 650.0
    road_end: float = 1000.0
    merge_start: float = 850.0
    merge_end: float = 950.0
    vehicle_count: int = 100
    headway_min: float = 2.0
    headway_mean: float = 2.3
    speed_mean: float = 20.0
    speed_std: float = 0.5
    truck_fraction: float = 0.1
    closing_lane_fraction: float = 0.5
    camera: CameraModel = field(default_factory=lambda: CameraModel(position=WorldPoint(700.0, -6.0, 6.0)))
    lidar_position: WorldPoint = field(default_factory=lambda: WorldPoint(700.0, -6.0, 6.0))
    lidar_yaw: float = 0.0
    lidar_vfov: tuple[float, float] = (-30.0, 11.0)
    lidar_range: float = 200.0
    lidar_roi: ROI = field(default_factory=lambda: ROI(705.0, 900.0, -10.0, 12.0, -2.0, 8.0))
    points_per_m2: float = 10.0
    ground_points_per_m2: float = 1.0
    road_half_width: float = 6.0  # m either side of the road centre line for the bright road surface
    camera_noise: CameraNoise = field(default_factory=CameraNoise)
    lidar_noise: LidarNoise = field(default_factory=LidarNoise)

    def __post_init__(self):
        if not (self.frame_rate_camera > 0 and self.frame_rate_lidar > 0 and self.truth_rate > 0):
            raise ValueError("frame rates must be positive")
        if not self.merge_start < self.merge_end:
            raise ValueError("merge_start must be before merge_end")
        if self.duration < 0 or self.vehicle_count < 0:
            raise ValueError("duration and vehicle_count must be non-negative")
        for p in (self.camera_noise.dropout, self.lidar_noise.dropout):
            if not 0.0 <= p <= 1.0:
                raise ValueError("dropout must lie in [0, 1]")
        object.__setattr__(self, "lidar_vfov", tuple(self.lidar_vfov))
        object.__setattr__(self, "lidar_roi", ROI.from_value(self.lidar_roi))

    @property
    def closing_lane_y(self) -> float:
        return self.lane_width


def frame_times(duration: float, rate: float) -> np.ndarray:
    """Frame stamps k / rate on [0, duration], endpoint included."""
    n = int(math.floor(duration * rate + 1e-9)) + 1
    return np.arange(n) / rate


@dataclass(frozen=True)
class GroundTruth:
    vehicle_id: int
    arrival: float
    speed: float
    lane: int  # 0 surviving lane, 1 closing lane
    length: float
    width: float
    height: float
    kind: str
    t_end: float
    trajectory: Trajectory
    road_start: float
    lane_y: float
    merge_start: float
    merge_end: float

    def present(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (t >= self.arrival - 1e-9) & (t <= self.t_end + 1e-9)

    def x_at(self, t):
        return self.road_start + self.speed * (np.asarray(t, dtype=float) - self.arrival)

    def y_at(self, t):
        x = self.x_at(t)
        if self.lane == 0:
            return np.zeros_like(x)
        s = np.clip((x - self.merge_start) / (self.merge_end - self.merge_start), 0.0, 1.0)
        return self.lane_y * (1.0 - (3 * s**2 - 2 * s**3))

    def lateral_speed_at(self, t):
        x = self.x_at(t)
        if self.lane == 0:
            return np.zeros_like(x)
        span = self.merge_end - self.merge_start
        s = np.clip((x - self.merge_start) / span, 0.0, 1.0)
        return -self.lane_y * (6 * s - 6 * s**2) / span * self.speed

    def heading_at(self, t):
        return np.degrees(np.arctan2(self.lateral_speed_at(t), self.speed))

    def lane_at(self, t):
        x = self.x_at(t)
        return np.where((self.lane == 1) & (x < self.merge_end), 1, 0)

    def position_at(self, t: float) -> WorldPoint:
        return WorldPoint(float(self.x_at(t)), float(self.y_at(t)), 0.0)


def generate_ground_truth(cfg: ScenarioConfig) -> list[GroundTruth]:
    """Arrivals, speeds, lanes and vehicle classes for the scenario.

    Arrival gaps are ``headway_min`` plus an exponential excess; a gap is
    widened when the follower is faster than its leader so that the time
    headway stays above ``headway_min`` all the way to ``road_end``.
    """
    if not cfg.merge_end > cfg.merge_start:
        raise ValueError("merge_end must exceed merge_start")
    rng = _rng(cfg.seed, STREAM_TRUTH, 0)
    lo = max(cfg.speed_mean - 4 * cfg.speed_std, 0.1)
    hi = cfg.speed_mean + 4 * cfg.speed_std
    road_len = cfg.road_end - cfg.road_start
    span = cfg.merge_end - cfg.merge_start
    if 1.5 * cfg.lane_width * hi / span > 3.0:
        raise ValueError("merge zone too short: lateral speed would exceed 3 m/s")
    excess_mean = max(cfg.headway_mean - cfg.headway_min, 0.0)

    vehicles: list[GroundTruth] = []
    t_prev, v_prev = None, None
    for k in range(cfg.vehicle_count):
        speed = float(np.clip(rng.normal(cfg.speed_mean, cfg.speed_std), lo, hi))
        gap_draw = float(rng.exponential(excess_mean)) if excess_mean > 0 else 0.0
        lane = int(rng.random() < cfg.closing_lane_fraction)
        truck = bool(rng.random() < cfg.truck_fraction)
        if t_prev is None:
            arrival = 0.0
        else:
            catch_up = max(0.0, road_len * (1.0 / v_prev - 1.0 / speed))
            arrival = t_prev + cfg.headway_min + catch_up + gap_draw
        if arrival > cfg.duration:
            break
        t_end = min(cfg.duration, arrival + road_len / speed)
        length, width, height = TRUCK_DIMS if truck else CAR_DIMS
        ts = np.arange(math.ceil(arrival * cfg.truth_rate - 1e-9), math.floor(t_end * cfg.truth_rate + 1e-9) + 1) / cfg.truth_rate
        gt = GroundTruth(
            vehicle_id=k + 1,
            arrival=arrival,
            speed=speed,
            lane=lane,
            length=length,
            width=width,
            height=height,
            kind="truck" if truck else "car",
            t_end=t_end,
            trajectory=Trajectory(k + 1, "ground-truth"),
            road_start=cfg.road_start,
            lane_y=cfg.closing_lane_y,
            merge_start=cfg.merge_start,
            merge_end=cfg.merge_end,
        )
        xyz = np.column_stack([gt.x_at(ts), gt.y_at(ts), np.zeros(len(ts))])
        object.__setattr__(gt, "trajectory", Trajectory.from_arrays(k + 1, "ground-truth", ts, xyz))
        vehicles.append(gt)
        t_prev, v_prev = arrival, speed
    return vehicles


def _visible(truth: Sequence[GroundTruth], t: float) -> list[GroundTruth]:
    t = float(t)
    return [g for g in truth if g.arrival - 1e-9 <= t <= g.t_end + 1e-9]


def render_camera(truth: Sequence[GroundTruth], cfg: ScenarioConfig) -> list[PixelDetection]:
    """Pixel detections of each vehicle's ground contact point, one per visible vehicle per frame."""
    cam, nz = cfg.camera, cfg.camera_noise
    out: list[PixelDetection] = []
    for k, t in enumerate(frame_times(cfg.duration, cfg.frame_rate_camera)):
        rng = _rng(cfg.seed, STREAM_CAMERA, k)
        for g in _visible(truth, t):
            ju, jv, drop = rng.normal(0.0, 1.0), rng.normal(0.0, 1.0), rng.random()
            x = float(g.x_at(t)) + nz.lon_bias + nz.lon_drift * (t - g.arrival)
            y = float(g.y_at(t)) + nz.lat_bias
            if math.hypot(x - cam.position.x, y - cam.position.y) > nz.max_range:
                continue
            px = project_to_pixel(cam, WorldPoint(x, y, 0.0), float(t), g.vehicle_id)
            if px is None or drop < nz.dropout:
                continue
            u = px.u + nz.pixel_bias_u + nz.pixel_jitter * ju
            v = px.v + nz.pixel_bias_v + nz.pixel_jitter * jv
            if not (0.0 <= u <= cam.width_px and 0.0 <= v <= cam.height_px):
                continue
            out.append(PixelDetection(u, v, float(t), g.vehicle_id, 1.0))
    return out


def _lidar_sees(cfg: ScenarioConfig, x: float, y: float, z: float) -> bool:
    s = cfg.lidar_position
    d = math.hypot(x - s.x, y - s.y)
    if d > cfg.lidar_range:
        return False
    el = math.degrees(math.atan2(z - s.z, d))
    roi = cfg.lidar_roi
    in_roi = roi is None or (roi.x_min <= x <= roi.x_max and roi.y_min <= y <= roi.y_max)
    return cfg.lidar_vfov[0] <= el <= cfg.lidar_vfov[1] and in_roi


def render_lidar_detections(truth: Sequence[GroundTruth], cfg: ScenarioConfig) -> list[tuple[float, list[tuple[int, WorldPoint]]]]:
    """Centroid-level LiDAR stream: truth centre plus white noise, drifting longitudinal bias and dropout.

    Each entry is ``(t, [(vehicle_id, centroid), ...])``; the ids are the true
    vehicle ids and are meant for scoring only.
    """
    nz = cfg.lidar_noise
    frames = []
    for k, t in enumerate(frame_times(cfg.duration, cfg.frame_rate_lidar)):
        rng = _rng(cfg.seed, STREAM_LIDAR_FAST, k)
        objs = []
        for g in _visible(truth, t):
            ex, ey, drop = rng.normal(0.0, 1.0), rng.normal(0.0, 1.0), rng.random()
            gx, gy = float(g.x_at(t)), float(g.y_at(t))
            if not _lidar_sees(cfg, gx, gy, g.height / 2) or drop < nz.dropout:
                continue
            x = gx + nz.lon_bias + nz.lon_drift * (t - g.arrival) + nz.position_noise * ex
            y = gy + nz.lat_bias + nz.position_noise * ey
            objs.append((g.vehicle_id, WorldPoint(x, y, g.height / 2)))
        frames.append((float(t), objs))
    return frames


def lidar_detections_as_tracks(frames) -> list[Trajectory]:
    """Group a centroid stream by true vehicle id (for scoring and studies that skip tracking)."""
    per: dict[int, tuple[list, list]] = {}
    for t, objs in frames:
        for vid, p in objs:
            ts, ps = per.setdefault(vid, ([], []))
            ts.append(t)
            ps.append([p.x, p.y, p.z])
    return [Trajectory.from_arrays(vid, "lidar", per[vid][0], per[vid][1]) for vid in sorted(per)]


# --- point-cloud synthesis ----------------------------------------------------

def _box_axes(g: GroundTruth, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Centre and rotation (columns: forward, left, up) of the vehicle box."""
    yaw = math.radians(float(g.heading_at(t)))
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    centre = np.array([float(g.x_at(t)), float(g.y_at(t)), g.height / 2])
    return centre, rot


def _box_faces(centre: np.ndarray, rot: np.ndarray, dims: tuple[float, float, float]):
    """(face centre, outward normal, axis u * half, axis v * half) for the five non-bottom faces."""
    half = np.asarray(dims) / 2
    fwd, left, up = rot[:, 0], rot[:, 1], rot[:, 2]
    return [
        (centre + fwd * half[0], fwd, left * half[1], up * half[2]),
        (centre - fwd * half[0], -fwd, left * half[1], up * half[2]),
        (centre + left * half[1], left, fwd * half[0], up * half[2]),
        (centre - left * half[1], -left, fwd * half[0], up * half[2]),
        (centre + up * half[2], up, fwd * half[0], left * half[1]),
    ]


def _blocked(sensor: np.ndarray, pts: np.ndarray, centre: np.ndarray, rot: np.ndarray, dims, eps: float = 1e-6) -> np.ndarray:
    """True where the segment sensor->point passes through the box before reaching the point."""
    half = np.asarray(dims) / 2
    o = (sensor - centre) @ rot
    d = (pts - sensor) @ rot
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    tmin = np.minimum(t1, t2).max(axis=1)
    tmax = np.maximum(t1, t2).min(axis=1)
    # a zero direction component outside the slab means no hit
    parallel_miss = np.any((d == 0) & (np.abs(o) > half), axis=1)
    return (tmin <= tmax) & (tmax > 0) & (tmin < 1.0 - eps) & ~parallel_miss


def render_lidar_cloud(truth: Sequence[GroundTruth], cfg: ScenarioConfig, frame_t: float) -> PointCloud:
    """Surface-sampled LiDAR frame in world coordinates.

    Sensor-facing faces of every vehicle in range are sampled at
    ``points_per_m2``; ground points cover the LiDAR ROI. Points whose beam
    passes through another vehicle box are dropped.
    """
    nz = cfg.lidar_noise
    k = int(round(frame_t * cfg.frame_rate_lidar))
    rng = _rng(cfg.seed, STREAM_CLOUD, k)
    s = cfg.lidar_position.as_array()
    boxes = []
    for g in _visible(truth, frame_t):
        centre, rot = _box_axes(g, frame_t)
        if math.hypot(centre[0] - s[0], centre[1] - s[1]) <= cfg.lidar_range + g.length:
            boxes.append((g, centre, rot, (g.length, g.width, g.height)))

    chunks, owners, inten = [], [], []
    for bi, (g, centre, rot, dims) in enumerate(boxes):
        for fc, n, au, av in _box_faces(centre, rot, dims):
            if (s - fc) @ n <= 0:
                continue
            area = 4 * np.linalg.norm(au) * np.linalg.norm(av)
            m = int(round(area * cfg.points_per_m2))
            if m == 0:
                continue
            ab = rng.uniform(-1.0, 1.0, size=(m, 2))
            pts = fc + ab[:, :1] * au + ab[:, 1:] * av
            chunks.append(pts)
            owners.append(np.full(m, bi))
            inten.append(rng.uniform(30.0, 200.0, size=m))

    roi = cfg.lidar_roi
    gx0, gx1 = (roi.x_min, roi.x_max) if roi else (s[0] - cfg.lidar_range, s[0] + cfg.lidar_range)
    gy0, gy1 = (roi.y_min, roi.y_max) if roi else (s[1] - cfg.lidar_range, s[1] + cfg.lidar_range)
    m_ground = int(round((gx1 - gx0) * (gy1 - gy0) * cfg.ground_points_per_m2))
    g_xy = np.column_stack([rng.uniform(gx0, gx1, m_ground), rng.uniform(gy0, gy1, m_ground)])
    g_z = rng.normal(0.0, 1.0, m_ground) * nz.ground_z_noise
    on_road = np.abs(g_xy[:, 1] - cfg.lane_width / 2) <= cfg.road_half_width
    g_int = np.where(on_road, rng.uniform(20.0, 60.0, m_ground), rng.uniform(1.0, 4.0, m_ground))
    chunks.append(np.column_stack([g_xy, g_z]))
    owners.append(np.full(m_ground, -1))
    inten.append(g_int)

    pts = np.concatenate(chunks) if chunks else np.zeros((0, 3))
    own = np.concatenate(owners) if owners else np.zeros(0, dtype=int)
    val = np.concatenate(inten) if inten else np.zeros(0)
    if len(pts) and nz.range_noise > 0:
        ray = pts - s
        rn = np.linalg.norm(ray, axis=1, keepdims=True)
        noise = rng.normal(0.0, nz.range_noise, size=(len(pts), 1))
        pts = pts + ray / np.where(rn > 0, rn, 1.0) * noise

    ray = pts - s
    dist = np.linalg.norm(ray[:, :2], axis=1)
    el = np.degrees(np.arctan2(ray[:, 2], dist))
    keep = (np.linalg.norm(ray, axis=1) <= cfg.lidar_range) & (el >= cfg.lidar_vfov[0]) & (el <= cfg.lidar_vfov[1])
    az = np.arctan2(ray[:, 1], ray[:, 0])
    rng2d = dist
    for bi, (g, centre, rot, dims) in enumerate(boxes):
        corners = centre + (np.array([[a, b, c] for a in (-1, 1) for b in (-1, 1) for c in (-1, 1)]) * np.asarray(dims) / 2) @ rot.T
        rel = corners - s
        c_az = np.arctan2(rel[:, 1], rel[:, 0])
        c_rng = np.hypot(rel[:, 0], rel[:, 1])
        # only beams inside the box's azimuth sector and reaching past its near side can be blocked
        cand = keep & (own != bi) & (az >= c_az.min() - 1e-9) & (az <= c_az.max() + 1e-9) & (rng2d >= c_rng.min() - 1e-9)
        if np.any(cand):
            idx = np.flatnonzero(cand)
            keep[idx[_blocked(s, pts[idx], centre, rot, dims)]] = False
    return PointCloud(pts[keep], val[keep], float(frame_t), "world")
