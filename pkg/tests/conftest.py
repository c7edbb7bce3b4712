import dataclasses
import sys

import numpy as np
import pytest

from roadfuse.frames import Trajectory
from roadfuse.scenario import CAR_DIMS, CameraNoise, GroundTruth, LidarNoise, ScenarioConfig


def brute_dbscan(xyz, eps, min_pts):
    """O(n^2) DBSCAN reference.

    Clusters grow by breadth-first search over core points only; a border
    point then joins the cluster of its nearest core neighbour (lowest index
    on ties), so the labelling is independent of point order.
    """
    xyz = np.asarray(xyz, dtype=float)
    n = len(xyz)
    labels = np.full(n, -1)
    if n == 0:
        return labels
    d = np.sqrt(((xyz[:, None, :] - xyz[None, :, :]) ** 2).sum(axis=2))
    nbr = d <= eps
    core = nbr.sum(axis=1) >= min_pts
    cid = 0
    for i in range(n):
        if not core[i] or labels[i] >= 0:
            continue
        labels[i] = cid
        queue = [i]
        while queue:
            p = queue.pop()
            for q in np.flatnonzero(nbr[p] & core):
                if labels[q] < 0:
                    labels[q] = cid
                    queue.append(q)
        cid += 1
    for i in np.flatnonzero(~core):
        cands = [j for j in np.flatnonzero(nbr[i] & core)]
        if cands:
            best = min(cands, key=lambda j: (d[i, j], j))
            labels[i] = labels[best]
    return labels


def same_partition(a, b) -> bool:
    """Label arrays describe the same clusters and the same noise set, up to renaming."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or not np.array_equal(a < 0, b < 0):
        return False
    fwd, back = {}, {}
    for x, y in zip(a[a >= 0].tolist(), b[b >= 0].tolist()):
        if fwd.setdefault(x, y) != y or back.setdefault(y, x) != x:
            return False
    return True


def make_vehicle(vid, x0, lane=0, speed=0.0, dims=CAR_DIMS, cfg: ScenarioConfig | None = None, t_end=1000.0):
    """A ground-truth vehicle at ``x0`` at t=0, outside the merge unless placed there."""
    cfg = cfg or ScenarioConfig()
    return GroundTruth(
        vehicle_id=vid, arrival=0.0, speed=speed, lane=lane,
        length=dims[0], width=dims[1], height=dims[2], kind="car",
        t_end=t_end, trajectory=Trajectory(vid, "ground-truth"),
        road_start=x0, lane_y=cfg.closing_lane_y,
        merge_start=cfg.merge_start, merge_end=cfg.merge_end,
    )


def clean_scenario(**kw) -> ScenarioConfig:
    """Noise-free sensors (ground z noise kept at 2 cm so the ground looks real)."""
    cam = CameraNoise(pixel_jitter=0.0, lat_bias=0.0, dropout=0.0)
    lid = LidarNoise(range_noise=0.0, ground_z_noise=0.02, position_noise=0.0, dropout=0.0)
    return dataclasses.replace(ScenarioConfig(camera_noise=cam, lidar_noise=lid), **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
