"""World-frame points, timestamped trajectories and time alignment.

World frame: x is longitudinal (direction of travel), y is lateral, z is up
with the road surface at z = 0. Units are meters and seconds throughout.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

SOURCES = ("camera", "lidar", "radar-camera", "gps", "fused", "ground-truth", "average")

TRAJECTORY_COLUMNS = ("t", "track_id", "source", "x", "y", "z")


@dataclass(frozen=True)
class WorldPoint:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError(f"non-finite coordinate in {self!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @classmethod
    def from_array(cls, a) -> "WorldPoint":
        a = np.asarray(a, dtype=float)
        z = float(a[2]) if a.shape[0] > 2 else 0.0
        return cls(float(a[0]), float(a[1]), z)

    def distance_xy(self, other: "WorldPoint") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    track_id: int
    position: WorldPoint
    source: str

    def __post_init__(self):
        if not math.isfinite(self.t):
            raise ValueError("sample time must be finite")


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered samples of one object as seen by one source."""

    track_id: int
    source: str
    samples: tuple[TrajectorySample, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        prev = -math.inf
        for s in self.samples:
            if s.track_id != self.track_id or s.source != self.source:
                raise ValueError("all samples must share the trajectory's track_id and source")
            if not s.t > prev:
                raise ValueError(f"sample times must be strictly increasing (t={s.t} after {prev})")
            prev = s.t

    @classmethod
    def from_arrays(cls, track_id: int, source: str, t, xyz) -> "Trajectory":
        t = np.asarray(t, dtype=float)
        xyz = np.asarray(xyz, dtype=float)
        if xyz.ndim == 2 and xyz.shape[1] == 2:
            xyz = np.column_stack([xyz, np.zeros(len(xyz))])
        samples = tuple(
            TrajectorySample(float(ti), track_id, WorldPoint(float(p[0]), float(p[1]), float(p[2])), source)
            for ti, p in zip(t, xyz)
        )
        return cls(track_id, source, samples)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[TrajectorySample]:
        return iter(self.samples)

    @cached_property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples], dtype=float)

    @cached_property
    def xyz(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, 3))
        return np.array([[s.position.x, s.position.y, s.position.z] for s in self.samples])

    def with_source(self, source: str, track_id: int | None = None) -> "Trajectory":
        tid = self.track_id if track_id is None else track_id
        return Trajectory.from_arrays(tid, source, self.times, self.xyz)


def interpolate_at(traj: Trajectory, t: float, window: float = 0.0) -> WorldPoint | None:
    """Linearly interpolate ``traj`` at time ``t``.

    Returns None when ``t`` lies outside the sample span by more than
    ``window`` seconds. Inside the window the end segment is extrapolated.
    """
    n = len(traj.samples)
    if n == 0:
        return None
    times = traj.times
    if t < times[0] - window or t > times[-1] + window:
        return None
    if n == 1:
        return traj.samples[0].position
    i = bisect_left(times, t)
    if i < n and times[i] == t:
        return traj.samples[i].position
    # bracketing segment, clamped to the first/last segment for extrapolation
    i = min(max(i, 1), n - 1)
    t0, t1 = times[i - 1], times[i]
    p0, p1 = traj.xyz[i - 1], traj.xyz[i]
    w = (t - t0) / (t1 - t0)
    return WorldPoint.from_array(p0 + w * (p1 - p0))


def interpolate_many(traj: Trajectory, ts, window: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`interpolate_at`. Returns (xyz, valid_mask)."""
    ts = np.asarray(ts, dtype=float)
    out = np.full((len(ts), 3), np.nan)
    n = len(traj.samples)
    if n == 0 or len(ts) == 0:
        return out, np.zeros(len(ts), dtype=bool)
    times, xyz = traj.times, traj.xyz
    valid = (ts >= times[0] - window) & (ts <= times[-1] + window)
    if n == 1:
        out[valid] = xyz[0]
        return out, valid
    i = np.clip(np.searchsorted(times, ts), 1, n - 1)
    t0, t1 = times[i - 1], times[i]
    w = ((ts - t0) / (t1 - t0))[:, None]
    out = xyz[i - 1] + w * (xyz[i] - xyz[i - 1])
    exact = np.searchsorted(times, ts)
    hit = (exact < n) & (times[np.minimum(exact, n - 1)] == ts)
    out[hit] = xyz[exact[hit]]
    out[~valid] = np.nan
    return out, valid


def align_pairs(a: Trajectory, b: Trajectory, tolerance: float) -> list[tuple[float, WorldPoint, WorldPoint]]:
    """Pair every sample of ``a`` with ``b`` interpolated at the same time.

    ``b`` may be extrapolated by at most ``tolerance`` seconds beyond its span;
    samples of ``a`` with no such value are skipped.
    """
    if not a.samples or not b.samples:
        return []
    pts, ok = interpolate_many(b, a.times, window=tolerance)
    return [
        (s.t, s.position, WorldPoint.from_array(p))
        for s, p, good in zip(a.samples, pts, ok)
        if good
    ]


def group_samples(samples: Iterable[TrajectorySample]) -> list[Trajectory]:
    """Group loose samples into trajectories keyed by (source, track_id), sorted by key."""
    buckets: dict[tuple[str, int], list[TrajectorySample]] = {}
    for s in samples:
        buckets.setdefault((s.source, s.track_id), []).append(s)
    out = []
    for (source, tid) in sorted(buckets):
        ss = sorted(buckets[(source, tid)], key=lambda s: s.t)
        out.append(Trajectory(tid, source, tuple(ss)))
    return out


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def write_trajectories(path: str | Path, trajectories: Iterable[Trajectory]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for traj in trajectories:
            for s in traj.samples:
                p = s.position
                w.writerow([_fmt(s.t), s.track_id, s.source, _fmt(p.x), _fmt(p.y), _fmt(p.z)])


def read_trajectories(path: str | Path) -> list[Trajectory]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRAJECTORY_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing trajectory columns {sorted(missing)}")
        samples = [
            TrajectorySample(
                float(row["t"]),
                int(row["track_id"]),
                WorldPoint(float(row["x"]), float(row["y"]), float(row["z"])),
                row["source"],
            )
            for row in reader
        ]
    return group_samples(samples)
