"""Constant-velocity Kalman filter for single-sensor smoothing and two-sensor late fusion.

State is ``[x, y, vx, vy]``; sensors observe position only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .frames import Trajectory, TrajectorySample, WorldPoint

H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
I4 = np.eye(4)


class FilterDivergence(RuntimeError):
    """Innovation covariance is singular."""


@dataclass(frozen=True)
class ProcessModel:
    sigma_a: float = 2.0

    def __post_init__(self):
        if self.sigma_a < 0:
            raise ValueError("sigma_a must be non-negative")


@dataclass(frozen=True)
class MeasurementModel:
    sensor: str
    R: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float).reshape(2, 2)
        if not np.allclose(R, R.T, atol=1e-12):
            raise ValueError("R must be symmetric")
        object.__setattr__(self, "R", R)


@dataclass(frozen=True)
class Measurement:
    z: np.ndarray
    t: float
    sensor: str = ""

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).reshape(2)
        if not np.all(np.isfinite(z)) or not math.isfinite(self.t):
            raise ValueError("measurement must be finite")
        object.__setattr__(self, "z", z)


@dataclass(frozen=True)
class FilterState:
    x: np.ndarray
    P: np.ndarray
    t: float

    @property
    def position(self) -> np.ndarray:
        return self.x[:2]


@dataclass(frozen=True)
class Innovation:
    y: np.ndarray
    S: np.ndarray

    @property
    def nis(self) -> float:
        """Normalised innovation squared."""
        return float(self.y @ np.linalg.solve(self.S, self.y))


@dataclass(frozen=True)
class InitPolicy:
    """Initial covariance: measurement R on position, ``velocity_var`` on velocity."""

    velocity_var: float = 25.0


@dataclass(frozen=True)
class FilterConfig:
    sigma_a: float = 2.0
    R_camera: tuple[float, ...] = (4.0, 0.0, 0.0, 1.0)
    R_lidar: tuple[float, ...] = (0.25, 0.0, 0.0, 0.25)
    velocity_var: float = 25.0
    frame_tolerance: float = 0.025
    output_rate: float | None = None  # Hz; inferred from the denser input when None
    smooth_inputs: bool = False

    def __post_init__(self):
        for name in ("R_camera", "R_lidar"):
            r = tuple(float(v) for v in np.ravel(getattr(self, name)))
            if len(r) != 4:
                raise ValueError(f"{name} must hold the 4 entries of a 2x2 covariance")
            object.__setattr__(self, name, r)

    @property
    def process(self) -> ProcessModel:
        return ProcessModel(self.sigma_a)

    @property
    def camera(self) -> MeasurementModel:
        return MeasurementModel("camera", np.reshape(self.R_camera, (2, 2)))

    @property
    def lidar(self) -> MeasurementModel:
        return MeasurementModel("lidar", np.reshape(self.R_lidar, (2, 2)))

    @property
    def init(self) -> InitPolicy:
        return InitPolicy(self.velocity_var)


def make_F_Q(dt: float, pm: ProcessModel) -> tuple[np.ndarray, np.ndarray]:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    F = np.array([
        [1.0, 0.0, dt, 0.0],
        [0.0, 1.0, 0.0, dt],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
    a, b, c = dt**4 / 4.0, dt**3 / 2.0, dt**2
    Q = pm.sigma_a**2 * np.array([
        [a, 0.0, b, 0.0],
        [0.0, a, 0.0, b],
        [b, 0.0, c, 0.0],
        [0.0, b, 0.0, c],
    ])
    return F, Q


def _sym(P: np.ndarray) -> np.ndarray:
    return (P + P.T) / 2.0


def initial_state(m: Measurement, mm: MeasurementModel, init: InitPolicy = InitPolicy()) -> FilterState:
    x = np.array([m.z[0], m.z[1], 0.0, 0.0])
    P = np.diag([mm.R[0, 0], mm.R[1, 1], init.velocity_var, init.velocity_var])
    return FilterState(x, P, m.t)


def predict(state: FilterState, dt: float, pm: ProcessModel) -> FilterState:
    F, Q = make_F_Q(dt, pm)
    x = F @ state.x
    P = _sym(F @ state.P @ F.T + Q)
    return FilterState(x, P, state.t + dt)


def update(state: FilterState, m: Measurement, mm: MeasurementModel) -> tuple[FilterState, Innovation]:
    x_p, P_p = state.x, state.P
    y = m.z - H @ x_p
    S = H @ P_p @ H.T + mm.R
    try:
        # K = P H^T S^-1, computed via a solve on the symmetric S
        K = np.linalg.solve(S, H @ P_p).T
    except np.linalg.LinAlgError as exc:
        raise FilterDivergence("innovation covariance is singular") from exc
    if not np.all(np.isfinite(K)):
        raise FilterDivergence("non-finite Kalman gain")
    x = x_p + K @ y
    IKH = I4 - K @ H
    P = _sym(IKH @ P_p @ IKH.T + K @ mm.R @ K.T)  # Joseph form
    return FilterState(x, P, state.t), Innovation(y, S)


def fuse_step(
    state: FilterState,
    camera_meas: Measurement | None,
    lidar_meas: Measurement | None,
    dt: float,
    pm: ProcessModel,
    mm_cam: MeasurementModel,
    mm_lidar: MeasurementModel,
) -> FilterState:
    """Predict to the frame, then update with camera first and LiDAR second."""
    s = predict(state, dt, pm) if dt > 0 else state
    if camera_meas is not None:
        s, _ = update(s, camera_meas, mm_cam)
    if lidar_meas is not None:
        s, _ = update(s, lidar_meas, mm_lidar)
    return s


def _trajectory_from_states(track_id: int, source: str, states: Sequence[FilterState]) -> Trajectory:
    samples = tuple(
        TrajectorySample(s.t, track_id, WorldPoint(float(s.x[0]), float(s.x[1]), 0.0), source) for s in states
    )
    return Trajectory(track_id, source, samples)


def filter_states(
    measurements: Sequence[Measurement],
    pm: ProcessModel,
    mm: MeasurementModel,
    init: InitPolicy = InitPolicy(),
) -> list[FilterState]:
    if not measurements:
        return []
    state = initial_state(measurements[0], mm, init)
    states = [state]
    for m in measurements[1:]:
        dt = m.t - state.t
        if not dt > 0:
            raise ValueError("measurements must be strictly time-ordered")
        state, _ = update(predict(state, dt, pm), m, mm)
        states.append(state)
    return states


def smooth_track(
    measurements: Sequence[Measurement],
    pm: ProcessModel,
    mm: MeasurementModel,
    init: InitPolicy = InitPolicy(),
    track_id: int = 0,
    source: str | None = None,
) -> Trajectory:
    src = source if source is not None else (mm.sensor or "camera")
    return _trajectory_from_states(track_id, src, filter_states(measurements, pm, mm, init))


def measurements_from(traj: Trajectory) -> list[Measurement]:
    return [Measurement(np.array([s.position.x, s.position.y]), s.t, s.source) for s in traj.samples]


def smooth_trajectory(traj: Trajectory, cfg: FilterConfig, sensor: str) -> Trajectory:
    mm = cfg.lidar if sensor == "lidar" else cfg.camera
    return smooth_track(measurements_from(traj), cfg.process, mm, cfg.init, traj.track_id, traj.source)


def _median_period(times: np.ndarray) -> float | None:
    if len(times) < 2:
        return None
    return float(np.median(np.diff(times)))


def build_frames(
    cam_times: np.ndarray, lidar_times: np.ndarray, tolerance: float, period: float | None
) -> list[tuple[float, int | None, int | None]]:
    """Unified frame axis: (t, camera index, lidar index).

    Measurement stamps closer than ``tolerance`` share one frame. When
    ``period`` is given, frames are also placed on a regular grid so gaps in
    both streams are bridged by coasting.
    """
    events = [(float(t), 0, i) for i, t in enumerate(cam_times)]
    events += [(float(t), 1, i) for i, t in enumerate(lidar_times)]
    events.sort()
    frames: list[list] = []
    for t, kind, idx in events:
        if frames and t - frames[-1][0] <= tolerance and frames[-1][1 + kind] is None:
            frames[-1][1 + kind] = idx
            continue
        f = [t, None, None]
        f[1 + kind] = idx
        frames.append(f)
    if period and frames:
        filled: list[list] = []
        for f in frames:
            if filled:
                prev = filled[-1][0]
                n_missing = int(math.floor((f[0] - prev - tolerance) / period))
                for k in range(1, n_missing + 1):
                    filled.append([prev + k * period, None, None])
            filled.append(f)
        frames = filled
    return [tuple(f) for f in frames]


def run_fusion(
    camera_track: Trajectory | None,
    lidar_track: Trajectory | None,
    cfg: FilterConfig = FilterConfig(),
    track_id: int | None = None,
) -> Trajectory:
    """Fuse one object's camera and LiDAR streams into a single trajectory.

    Either stream may be missing or empty; the filter then runs on the other
    one alone and coasts across frames with no measurement.
    """
    cam = camera_track if camera_track is not None else Trajectory(0, "camera")
    lid = lidar_track if lidar_track is not None else Trajectory(0, "lidar")
    tid = track_id if track_id is not None else (cam.track_id if len(cam) else lid.track_id)
    if not len(cam) and not len(lid):
        return Trajectory(tid, "fused")
    if cfg.smooth_inputs:
        if len(cam):
            cam = smooth_trajectory(cam, cfg, "camera")
        if len(lid):
            lid = smooth_trajectory(lid, cfg, "lidar")

    period = None
    if cfg.output_rate:
        period = 1.0 / cfg.output_rate
    else:
        cands = [p for p in (_median_period(cam.times), _median_period(lid.times)) if p]
        period = min(cands) if cands else None

    cam_xy, lid_xy = cam.xyz[:, :2], lid.xyz[:, :2]
    pm, mm_c, mm_l = cfg.process, cfg.camera, cfg.lidar
    states: list[FilterState] = []
    state: FilterState | None = None
    for t, ci, li in build_frames(cam.times, lid.times, cfg.frame_tolerance, period):
        cm = Measurement(cam_xy[ci], t, "camera") if ci is not None else None
        lm = Measurement(lid_xy[li], t, "lidar") if li is not None else None
        if state is None:
            if cm is None and lm is None:
                continue
            if cm is not None:
                state = initial_state(cm, mm_c, cfg.init)
                if lm is not None:
                    state, _ = update(state, lm, mm_l)
            else:
                state = initial_state(lm, mm_l, cfg.init)
        else:
            state = fuse_step(state, cm, lm, t - state.t, pm, mm_c, mm_l)
            state = replace(state, t=t)
        states.append(state)
    return _trajectory_from_states(tid, "fused", states)
