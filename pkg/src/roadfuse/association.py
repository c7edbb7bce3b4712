"""Nearest-distance association between sensors and frame-to-frame track IDs."""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

from .frames import Trajectory, TrajectorySample, WorldPoint, interpolate_many

PAIR_COLUMNS = ("camera_track_id", "lidar_track_id", "frames_matched", "mean_distance")


@dataclass(frozen=True)
class AssociationConfig:
    gate: float = 3.0
    id_gate: float = 2.5
    coast_frames: int = 5

    def __post_init__(self):
        if not (self.gate > 0 and self.id_gate > 0 and self.coast_frames >= 0):
            raise ValueError("gates must be positive and coast_frames non-negative")


@dataclass(frozen=True)
class MatchPair:
    t: float
    camera_track_id: Hashable
    lidar_track_id: Hashable
    distance: float


@dataclass(frozen=True)
class TrackPair:
    camera_track_id: int
    lidar_track_id: int
    frames_matched: int
    mean_distance: float


def _xy(p) -> tuple[float, float]:
    if isinstance(p, WorldPoint):
        return p.x, p.y
    return float(p[0]), float(p[1])


def greedy_match(a_xy: np.ndarray, b_xy: np.ndarray, gate: float, a_keys=None, b_keys=None) -> list[tuple[int, int, float]]:
    """Greedy globally-nearest one-to-one matching on Euclidean distance.

    Returns (i, j, distance) index triples. Equal distances resolve by the
    (a_key, b_key) order, defaulting to the indices.
    """
    a_xy = np.asarray(a_xy, dtype=float).reshape(-1, 2)
    b_xy = np.asarray(b_xy, dtype=float).reshape(-1, 2)
    if len(a_xy) == 0 or len(b_xy) == 0:
        return []
    a_keys = list(range(len(a_xy))) if a_keys is None else list(a_keys)
    b_keys = list(range(len(b_xy))) if b_keys is None else list(b_keys)
    d = np.hypot(a_xy[:, None, 0] - b_xy[None, :, 0], a_xy[:, None, 1] - b_xy[None, :, 1])
    ii, jj = np.nonzero(d <= gate)
    cand = sorted(zip(d[ii, jj].tolist(), [a_keys[i] for i in ii], [b_keys[j] for j in jj], ii.tolist(), jj.tolist()))
    used_a, used_b, out = set(), set(), []
    for dist, _, _, i, j in cand:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        out.append((i, j, dist))
    return out


def match_frame(camera_objs, lidar_objs, gate: float, t: float = 0.0) -> list[MatchPair]:
    """Pair camera and LiDAR objects observed at one frame time.

    Objects are ``(id, position)`` tuples, position a WorldPoint or (x, y).
    """
    cam_ids = [o[0] for o in camera_objs]
    lid_ids = [o[0] for o in lidar_objs]
    cam_xy = np.array([_xy(o[1]) for o in camera_objs]).reshape(-1, 2)
    lid_xy = np.array([_xy(o[1]) for o in lidar_objs]).reshape(-1, 2)
    return [
        MatchPair(t, cam_ids[i], lid_ids[j], d)
        for i, j, d in greedy_match(cam_xy, lid_xy, gate, cam_ids, lid_ids)
    ]


def _as_point(p) -> WorldPoint:
    if isinstance(p, WorldPoint):
        return p
    return WorldPoint(*(float(v) for v in p))


# a track needs this many hits before it takes priority over newer tracks
CONFIRM_HITS = 3
# weight of the newest frame difference in the track velocity estimate
VELOCITY_GAIN = 0.5


@dataclass
class _Track:
    tid: int
    pos: np.ndarray
    t: float
    vel: np.ndarray
    missed: int = 0
    hits: int = 1

    def predict(self, t: float) -> np.ndarray:
        return self.pos + self.vel * (t - self.t)

    def hit(self, z: np.ndarray, t: float) -> None:
        dt = t - self.t
        if self.hits == 1:
            self.vel = (z - self.pos) / dt
        else:
            self.vel = self.vel + VELOCITY_GAIN * (z - self.predict(t)) / dt
        self.pos, self.t, self.missed = z.copy(), t, 0
        self.hits += 1


def track_ids(frames: Sequence[tuple[float, Sequence]], config: AssociationConfig = AssociationConfig(), source: str = "lidar") -> list[Trajectory]:
    """Assign stable IDs to anonymous per-frame detections.

    ``frames`` is a time-ordered sequence of ``(t, positions)``. Open tracks
    are predicted forward at their smoothed velocity and matched greedily
    within ``id_gate``, confirmed tracks (``CONFIRM_HITS`` or more hits)
    first, so a one-frame fragment cannot steal an established track's
    detection. Unmatched detections open new tracks, and tracks missing for
    more than ``coast_frames`` consecutive frames are closed.
    """
    next_id = 0
    active: list[_Track] = []
    samples: dict[int, list[TrajectorySample]] = defaultdict(list)
    last_t = -math.inf
    for t, positions in frames:
        if t <= last_t:
            raise ValueError("frames must be strictly time-ordered")
        last_t = t
        det = np.array([_xy(p) for p in positions], dtype=float).reshape(-1, 2)
        hit_tracks, hit_dets = set(), set()
        for confirmed in (True, False):
            ti = [i for i, trk in enumerate(active) if (trk.hits >= CONFIRM_HITS) == confirmed]
            dj = [j for j in range(len(det)) if j not in hit_dets]
            if not ti or not dj:
                continue
            pred = np.array([active[i].predict(t) for i in ti])
            for a, b, _ in greedy_match(pred, det[dj], config.id_gate, [active[i].tid for i in ti], dj):
                i, j = ti[a], dj[b]
                active[i].hit(det[j], t)
                hit_tracks.add(i)
                hit_dets.add(j)
                samples[active[i].tid].append(TrajectorySample(t, active[i].tid, _as_point(positions[j]), source))
        survivors = []
        for i, trk in enumerate(active):
            if i not in hit_tracks:
                trk.missed += 1
                if trk.missed > config.coast_frames:
                    continue
            survivors.append(trk)
        active = survivors
        for j in range(len(det)):
            if j not in hit_dets:
                active.append(_Track(next_id, det[j].copy(), t, np.zeros(2)))
                samples[next_id].append(TrajectorySample(t, next_id, _as_point(positions[j]), source))
                next_id += 1
    return [Trajectory(tid, source, tuple(samples[tid])) for tid in sorted(samples)]


def pair_tracks(
    camera_tracks: Sequence[Trajectory],
    lidar_tracks: Sequence[Trajectory],
    config: AssociationConfig = AssociationConfig(),
    tolerance: float = 0.05,
) -> list[TrackPair]:
    """Pair tracks that are each other's most frequent per-frame match partner.

    Frames are the camera sample times; LiDAR positions are interpolated at
    those times when the LiDAR track covers them (within ``tolerance``).
    """
    if not camera_tracks or not lidar_tracks:
        return []
    frame_times = np.unique(np.concatenate([trk.times for trk in camera_tracks if len(trk)] or [np.zeros(0)]))
    cam_pos = [interpolate_many(trk, frame_times, 0.0) for trk in camera_tracks]
    lid_pos = [interpolate_many(trk, frame_times, tolerance) for trk in lidar_tracks]
    cam_at = {}
    for trk, (pos, ok) in zip(camera_tracks, cam_pos):
        exact = np.isin(frame_times, trk.times)
        cam_at[trk.track_id] = (pos, ok & exact)
    counts: Counter = Counter()
    dist_sum: dict = defaultdict(float)
    for k, t in enumerate(frame_times):
        c_objs = [(trk.track_id, cam_at[trk.track_id][0][k]) for trk in camera_tracks if cam_at[trk.track_id][1][k]]
        l_objs = [(trk.track_id, pos[k]) for trk, (pos, ok) in zip(lidar_tracks, lid_pos) if ok[k]]
        for m in match_frame(c_objs, l_objs, config.gate, float(t)):
            counts[(m.camera_track_id, m.lidar_track_id)] += 1
            dist_sum[(m.camera_track_id, m.lidar_track_id)] += m.distance

    def best(role: int):
        out: dict = {}
        for key, n in counts.items():
            me, other = key[role], key[1 - role]
            cur = out.get(me)
            if cur is None or n > cur[0] or (n == cur[0] and other < cur[1]):
                out[me] = (n, other)
        return out

    cam_best, lid_best = best(0), best(1)
    pairs = []
    for cid, (n, lid) in sorted(cam_best.items()):
        if lid_best.get(lid, (0, None))[1] == cid:
            pairs.append(TrackPair(cid, lid, n, dist_sum[(cid, lid)] / n))
    return pairs


def write_pairs(path: str | Path, pairs: Sequence[TrackPair]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PAIR_COLUMNS)
        for p in pairs:
            w.writerow([p.camera_track_id, p.lidar_track_id, p.frames_matched, f"{p.mean_distance:.6f}"])


def read_pairs(path: str | Path) -> list[TrackPair]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            TrackPair(int(r["camera_track_id"]), int(r["lidar_track_id"]), int(r["frames_matched"]), float(r["mean_distance"]))
            for r in csv.DictReader(fh)
        ]
