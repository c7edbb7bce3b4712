"""Roadside camera localization on a flat road.

Pixels map to angles per image axis with the field-of-view tangent law,
and angles map to the road plane z = 0 by intersecting the viewing ray.
``project_to_pixel`` is the exact inverse and is used both to synthesize
camera detections and as a round-trip oracle.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .frames import Trajectory, TrajectorySample, WorldPoint

DETECTION_COLUMNS = ("t", "track_id", "u", "v", "conf")


class NoGroundIntersection(ValueError):
    """The viewing ray does not reach the road plane."""


@dataclass(frozen=True)
class CameraModel:
    width_px: int = 1200
    height_px: int = 1200
    fov_h: float = 90.0
    fov_v: float | None = None  # derived from fov_h and the aspect ratio when None
    tilt: float = 10.0  # pitch below horizontal, degrees
    yaw: float = 0.0  # optical axis heading about +z, degrees
    position: WorldPoint = field(default_factory=lambda: WorldPoint(0.0, 0.0, 6.0))

    def __post_init__(self):
        if self.width_px < 1 or self.height_px < 1:
            raise ValueError("image dimensions must be >= 1 px")
        if not 0.0 < self.fov_h < 180.0:
            raise ValueError("fov_h must be in (0, 180) degrees")
        if not 0.0 < self.vfov < 180.0:
            raise ValueError("fov_v must be in (0, 180) degrees")
        if not -90.0 < self.tilt < 90.0:
            raise ValueError("tilt must be in (-90, 90) degrees")
        if not self.position.z > 0:
            raise ValueError("camera mount height must be positive")

    @property
    def vfov(self) -> float:
        """Vertical field of view in degrees, explicit or from the aspect ratio."""
        if self.fov_v is not None:
            return self.fov_v
        half = math.atan(math.tan(math.radians(self.fov_h) / 2) * self.height_px / self.width_px)
        return math.degrees(2 * half)

    @property
    def height(self) -> float:
        return self.position.z


@dataclass(frozen=True)
class PixelDetection:
    u: float
    v: float
    t: float = 0.0
    track_id: int = 0
    conf: float = 1.0


@dataclass(frozen=True)
class AngularCoordinate:
    """World-frame viewing direction: azimuth about +z from +x, elevation above horizontal."""

    az: float
    el: float


def _axis_angle(p: float, size: int, fov: float) -> float:
    # tangent law: pixel 0 -> +fov/2, pixel `size` -> -fov/2
    return math.degrees(math.atan((size - 2.0 * p) / size * math.tan(math.radians(fov) / 2)))


def _axis_pixel(angle: float, size: int, fov: float) -> float:
    return size * (1.0 - math.tan(math.radians(angle)) / math.tan(math.radians(fov) / 2)) / 2.0


def pixel_to_angle(cam: CameraModel, det: PixelDetection) -> AngularCoordinate:
    if not (0.0 <= det.u <= cam.width_px and 0.0 <= det.v <= cam.height_px):
        raise ValueError(f"detection ({det.u}, {det.v}) outside the {cam.width_px}x{cam.height_px} image")
    az = _axis_angle(det.u, cam.width_px, cam.fov_h) + cam.yaw
    el = _axis_angle(det.v, cam.height_px, cam.vfov) - cam.tilt
    return AngularCoordinate(az, el)


def angle_to_ground(cam: CameraModel, ang: AngularCoordinate) -> WorldPoint:
    depression = -ang.el
    if not depression > 0.0:
        raise NoGroundIntersection(f"ray at elevation {ang.el:.3f} deg does not hit the ground")
    if depression >= 90.0:
        return WorldPoint(cam.position.x, cam.position.y, 0.0)
    ground_range = cam.height / math.tan(math.radians(depression))
    az = math.radians(ang.az)
    return WorldPoint(
        cam.position.x + ground_range * math.cos(az),
        cam.position.y + ground_range * math.sin(az),
        0.0,
    )


def _wrap180(a: float) -> float:
    return (a + 180.0) % 360.0 - 180.0


def project_to_pixel(cam: CameraModel, p: WorldPoint, t: float = 0.0, track_id: int = 0) -> PixelDetection | None:
    """Pixel at which the ground point ``p`` is imaged, or None outside the frustum."""
    dx = p.x - cam.position.x
    dy = p.y - cam.position.y
    rng = math.hypot(dx, dy)
    rel_el = -math.degrees(math.atan2(cam.height - p.z, rng)) + cam.tilt
    rel_az = _wrap180(math.degrees(math.atan2(dy, dx)) - cam.yaw) if rng > 0 else 0.0
    if abs(rel_az) >= 90.0 or abs(rel_el) >= 90.0:
        return None
    u = _axis_pixel(rel_az, cam.width_px, cam.fov_h)
    v = _axis_pixel(rel_el, cam.height_px, cam.vfov)
    tol = 1e-9  # px; rounding on border pixels must not push them out of frame
    if not (-tol <= u <= cam.width_px + tol and -tol <= v <= cam.height_px + tol):
        return None
    u = min(max(u, 0.0), float(cam.width_px))
    v = min(max(v, 0.0), float(cam.height_px))
    return PixelDetection(u, v, t, track_id)


def bbox_ground_anchor(x_min: float, y_min: float, x_max: float, y_max: float) -> tuple[float, float]:
    """Bottom-centre of an image box, the pixel treated as the ground contact."""
    return (x_min + x_max) / 2.0, max(y_min, y_max)


def localize_detections(cam: CameraModel, detections: Iterable[PixelDetection], source: str = "camera") -> dict[int, Trajectory]:
    per_track: dict[int, list[TrajectorySample]] = {}
    for det in detections:
        try:
            p = angle_to_ground(cam, pixel_to_angle(cam, det))
        except NoGroundIntersection:
            continue
        per_track.setdefault(det.track_id, []).append(TrajectorySample(det.t, det.track_id, p, source))
    return {tid: Trajectory(tid, source, tuple(per_track[tid])) for tid in sorted(per_track)}


def write_detections(path: str | Path, detections: Iterable[PixelDetection]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETECTION_COLUMNS)
        for d in detections:
            w.writerow([f"{d.t:.6f}", d.track_id, f"{d.u:.6f}", f"{d.v:.6f}", f"{d.conf:.3f}"])


def read_detections(path: str | Path) -> list[PixelDetection]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(DETECTION_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing detection columns {sorted(missing)}")
        return [
            PixelDetection(float(r["u"]), float(r["v"]), float(r["t"]), int(r["track_id"]), float(r["conf"]))
            for r in reader
        ]
