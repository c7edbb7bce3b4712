"""Error profiles against ground truth, cumulative absolute errors and method comparison."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .association import AssociationConfig, pair_tracks
from .frames import Trajectory, interpolate_many

METHODS = ("camera", "lidar", "kf_fused", "average")
REPORT_COLUMNS = (
    "vehicle_id", "method", "cum_abs_lon", "cum_abs_lat", "mae_lon", "mae_lat", "n_samples",
    "winner_lon", "winner_lat", "warnings",
)
PLOT_COLUMNS = ("gt_x", "err_lon_camera", "err_lon_lidar", "err_lon_kf", "err_lon_avg")
PLOT_METHOD_COLUMN = {"camera": "err_lon_camera", "lidar": "err_lon_lidar", "kf_fused": "err_lon_kf", "average": "err_lon_avg"}


class ErrorSample(NamedTuple):
    t: float
    gt_x: float
    err_lon: float
    err_lat: float


class CumulativeError(NamedTuple):
    lon: float
    lat: float
    n: int
    empty: bool

    @property
    def mae_lon(self) -> float:
        return self.lon / self.n if self.n else 0.0

    @property
    def mae_lat(self) -> float:
        return self.lat / self.n if self.n else 0.0


def average_baseline(camera_track: Trajectory, lidar_track: Trajectory, track_id: int | None = None) -> Trajectory:
    """Unweighted mean of the two sources on the union of their sample times.

    Where only one source covers a time, its value passes through.
    """
    tid = camera_track.track_id if track_id is None else track_id
    times = np.union1d(camera_track.times, lidar_track.times)
    if len(times) == 0:
        return Trajectory(tid, "average")
    a, a_ok = interpolate_many(camera_track, times)
    b, b_ok = interpolate_many(lidar_track, times)
    out = np.where(a_ok[:, None] & b_ok[:, None], (a + b) / 2.0, np.where(a_ok[:, None], a, b))
    keep = a_ok | b_ok
    return Trajectory.from_arrays(tid, "average", times[keep], out[keep])


def error_profile(estimate: Trajectory, truth: Trajectory, segment: tuple[float, float] | None = None) -> list[ErrorSample]:
    """Signed errors (estimate minus truth) at the estimate's own sample times."""
    if not len(estimate) or not len(truth):
        return []
    gt, ok = interpolate_many(truth, estimate.times)
    est = estimate.xyz
    out = []
    for k in np.flatnonzero(ok):
        gx = float(gt[k, 0])
        if segment is not None and not (segment[0] <= gx <= segment[1]):
            continue
        out.append(ErrorSample(float(estimate.times[k]), gx, float(est[k, 0] - gt[k, 0]), float(est[k, 1] - gt[k, 1])))
    return out


def cumulative_abs_error(profile: Sequence[ErrorSample]) -> CumulativeError:
    if not profile:
        return CumulativeError(0.0, 0.0, 0, True)
    lon = float(sum(abs(s.err_lon) for s in profile))
    lat = float(sum(abs(s.err_lat) for s in profile))
    return CumulativeError(lon, lat, len(profile), False)


def assign_to_truth(
    estimates: Sequence[Trajectory], truth: Sequence[Trajectory], gate: float = 3.0
) -> dict[int, Trajectory]:
    """Map each truth vehicle id to the estimate track it most consistently matches."""
    pairs = pair_tracks(list(truth), list(estimates), AssociationConfig(gate=gate), tolerance=0.0)
    by_id = {trk.track_id: trk for trk in estimates}
    return {p.camera_track_id: by_id[p.lidar_track_id] for p in pairs}


@dataclass(frozen=True)
class ReportRow:
    vehicle_id: int
    method: str
    cum_abs_lon: float
    cum_abs_lat: float
    mae_lon: float
    mae_lat: float
    n_samples: int
    warnings: str = ""


@dataclass
class ErrorReport:
    rows: list[ReportRow] = field(default_factory=list)
    profiles: dict[tuple[int, str], list[ErrorSample]] = field(default_factory=dict)

    def get(self, vehicle_id: int, method: str) -> ReportRow:
        for r in self.rows:
            if r.vehicle_id == vehicle_id and r.method == method:
                return r
        raise KeyError((vehicle_id, method))

    @property
    def vehicle_ids(self) -> list[int]:
        return sorted({r.vehicle_id for r in self.rows})

    def winner(self, vehicle_id: int, axis: str) -> str:
        """Method with the lowest cumulative error among those with samples ("" if none)."""
        cands = [r for r in self.rows if r.vehicle_id == vehicle_id and r.n_samples > 0]
        if not cands:
            return ""
        key = (lambda r: (r.cum_abs_lon, METHODS.index(r.method))) if axis == "lon" else (lambda r: (r.cum_abs_lat, METHODS.index(r.method)))
        return min(cands, key=key).method


def compare_methods(
    estimates: Mapping[str, Mapping[int, Trajectory]],
    truth: Mapping[int, Trajectory],
    segment: tuple[float, float] | None = None,
    vehicles: Iterable[int] | None = None,
) -> ErrorReport:
    """Cumulative errors per (vehicle, method).

    ``estimates`` maps method name to {vehicle_id: trajectory}. A vehicle with
    no trajectory (or no samples in the segment) for a method still gets a
    row, flagged in ``warnings``.
    """
    report = ErrorReport()
    ids = sorted(truth) if vehicles is None else sorted(vehicles)
    methods = [m for m in METHODS if m in estimates] + sorted(m for m in estimates if m not in METHODS)
    for vid in ids:
        for method in methods:
            traj = estimates[method].get(vid)
            warn = ""
            if vid not in truth:
                prof, warn = [], "no ground truth"
            elif traj is None:
                prof, warn = [], "missing estimate"
            else:
                prof = error_profile(traj, truth[vid], segment)
                if not prof:
                    warn = "no samples in segment"
            ce = cumulative_abs_error(prof)
            report.rows.append(ReportRow(vid, method, ce.lon, ce.lat, ce.mae_lon, ce.mae_lat, ce.n, warn))
            report.profiles[(vid, method)] = prof
    return report


def write_report(path: str | Path, report: ErrorReport) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    winners = {vid: (report.winner(vid, "lon"), report.winner(vid, "lat")) for vid in report.vehicle_ids}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in report.rows:
            wl, wt = winners[r.vehicle_id]
            w.writerow([
                r.vehicle_id, r.method, f"{r.cum_abs_lon:.4f}", f"{r.cum_abs_lat:.4f}",
                f"{r.mae_lon:.4f}", f"{r.mae_lat:.4f}", r.n_samples, wl, wt, r.warnings,
            ])


def read_report(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_plot_data(path: str | Path, report: ErrorReport, vehicle_id: int) -> None:
    """Longitudinal error versus ground-truth position, one row per method sample."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for method, col in PLOT_METHOD_COLUMN.items():
        for s in report.profiles.get((vehicle_id, method), []):
            rows.append((s.gt_x, col, s.err_lon))
    rows.sort()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for gx, col, err in rows:
            w.writerow([f"{gx:.4f}"] + [f"{err:.4f}" if c == col else "" for c in PLOT_COLUMNS[1:]])
