"""Bottom-up LiDAR object detection.

Stages: ROI crop, intensity filter, voxel downsampling, RANSAC ground fit,
height-above-ground filter, statistical outlier removal, DBSCAN,
centroid-linkage agglomerative merge, and PCA-oriented box fitting.
Clouds are held as numpy arrays; every stage returns a new cloud.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .frames import WorldPoint


class NoPlaneError(ValueError):
    """Ground plane cannot be fitted (fewer than 3 points or collinear input)."""


class DegenerateBoxError(ValueError):
    pass


class SmallCloudWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LidarPoint:
    x: float
    y: float
    z: float
    intensity: float = 0.0


@dataclass(eq=False)
class PointCloud:
    xyz: np.ndarray
    intensity: np.ndarray | None = None
    t: float = 0.0
    frame: str = "world"

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        if self.intensity is None:
            self.intensity = np.zeros(len(self.xyz))
        self.intensity = np.asarray(self.intensity, dtype=float).reshape(-1)
        if len(self.intensity) != len(self.xyz):
            raise ValueError("intensity length does not match point count")

    def __len__(self) -> int:
        return len(self.xyz)

    @classmethod
    def from_points(cls, points: Sequence[LidarPoint], t: float = 0.0, frame: str = "world") -> "PointCloud":
        xyz = np.array([[p.x, p.y, p.z] for p in points], dtype=float).reshape(-1, 3)
        inten = np.array([p.intensity for p in points], dtype=float)
        return cls(xyz, inten, t, frame)

    def points(self) -> list[LidarPoint]:
        return [LidarPoint(*map(float, p), float(i)) for p, i in zip(self.xyz, self.intensity)]

    def subset(self, mask_or_idx) -> "PointCloud":
        return PointCloud(self.xyz[mask_or_idx], self.intensity[mask_or_idx], self.t, self.frame)


@dataclass(frozen=True)
class ROI:
    """Closed axis-aligned region."""

    x_min: float = -math.inf
    x_max: float = math.inf
    y_min: float = -math.inf
    y_max: float = math.inf
    z_min: float = -math.inf
    z_max: float = math.inf

    @classmethod
    def from_value(cls, value) -> "ROI | None":
        if value is None or isinstance(value, ROI):
            return value
        if isinstance(value, dict):
            return cls(**value)
        return cls(*value)

    def contains(self, xyz: np.ndarray) -> np.ndarray:
        p = np.asarray(xyz, dtype=float).reshape(-1, 3)
        return (
            (p[:, 0] >= self.x_min) & (p[:, 0] <= self.x_max)
            & (p[:, 1] >= self.y_min) & (p[:, 1] <= self.y_max)
            & (p[:, 2] >= self.z_min) & (p[:, 2] <= self.z_max)
        )


@dataclass(frozen=True)
class GroundPlane:
    normal: np.ndarray
    offset: float
    inlier_count: int

    def signed_distance(self, xyz: np.ndarray) -> np.ndarray:
        return np.asarray(xyz) @ self.normal - self.offset

    def tilt_deg(self) -> float:
        return math.degrees(math.acos(min(1.0, abs(float(self.normal[2])))))


@dataclass(frozen=True)
class Cluster:
    indices: np.ndarray
    centroid: WorldPoint

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class BoundingBox3D:
    center: WorldPoint
    length: float
    width: float
    height: float
    yaw: float  # degrees, in [-90, 90)

    def contains(self, xyz: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
        c, s = math.cos(math.radians(self.yaw)), math.sin(math.radians(self.yaw))
        d = xyz - self.center.as_array()
        lon = d[:, 0] * c + d[:, 1] * s
        lat = -d[:, 0] * s + d[:, 1] * c
        return (
            (np.abs(lon) <= self.length / 2 + tol)
            & (np.abs(lat) <= self.width / 2 + tol)
            & (np.abs(d[:, 2]) <= self.height / 2 + tol)
        )


class Detection(NamedTuple):
    box: BoundingBox3D
    centroid: WorldPoint  # mean of the cluster points
    n_points: int

    @property
    def center(self) -> WorldPoint:
        """Object position reported downstream.

        The box centre rather than the point mean: only sensor-facing
        surfaces return points, which pulls the mean toward the sensor.
        """
        return self.box.center


@dataclass(frozen=True)
class LidarParams:
    roi: ROI | None = None
    intensity_min: float = 5.0
    voxel_size: float = 0.15
    ransac_threshold: float = 0.2
    ransac_iters: int = 200
    height_range: tuple[float, float] = (0.2, 4.0)
    outlier_k: int = 8
    outlier_alpha: float = 2.0
    dbscan_eps: float = 0.8
    dbscan_min_pts: int = 8
    agglom_merge_dist: float = 1.5
    min_cluster_size: int = 10
    truncation_margin: float = 1.0  # m; clusters this close to an ROI side are cut off by it and dropped (outlier removal thins the cut edge)

    def __post_init__(self):
        object.__setattr__(self, "roi", ROI.from_value(self.roi))
        object.__setattr__(self, "height_range", tuple(self.height_range))
        if not self.height_range[0] < self.height_range[1]:
            raise ValueError("height_range must satisfy z_min < z_max")
        positive = ("voxel_size", "ransac_threshold", "ransac_iters", "outlier_k", "dbscan_eps", "dbscan_min_pts", "agglom_merge_dist")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.intensity_min < 0 or self.outlier_alpha < 0 or self.min_cluster_size < 1 or self.truncation_margin < 0:
            raise ValueError("invalid LiDAR parameters")


def crop_roi(cloud: PointCloud, roi: ROI | None) -> PointCloud:
    if roi is None:
        return cloud
    return cloud.subset(roi.contains(cloud.xyz))


def filter_intensity(cloud: PointCloud, intensity_min: float) -> PointCloud:
    return cloud.subset(cloud.intensity >= intensity_min)


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """Replace the points of each occupied voxel by their centroid.

    Voxels form a regular grid anchored at the origin. Output is ordered by
    voxel key, so it does not depend on input order.
    """
    if not voxel_size > 0:
        raise ValueError("voxel_size must be positive")
    if len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.xyz / voxel_size).astype(np.int64)
    keys -= keys.min(axis=0)
    span = keys.max(axis=0) + 1
    # row-major scalar key preserves lexicographic voxel order
    flat = (keys[:, 0] * span[1] + keys[:, 1]) * span[2] + keys[:, 2]
    _, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
    n = len(counts)
    sums = np.column_stack([np.bincount(inverse, weights=cloud.xyz[:, k], minlength=n) for k in range(3)])
    inten = np.bincount(inverse, weights=cloud.intensity, minlength=n)
    return PointCloud(sums / counts[:, None], inten / counts, cloud.t, cloud.frame)


def _plane_lstsq(xyz: np.ndarray) -> tuple[np.ndarray, float]:
    c = xyz.mean(axis=0)
    _, _, vt = np.linalg.svd(xyz - c, full_matrices=False)
    n = vt[-1]
    n = _canonical(n)
    return n, float(n @ c)


def _canonical(n: np.ndarray) -> np.ndarray:
    n = n / np.linalg.norm(n)
    for k in (2, 0, 1):
        if n[k] != 0:
            return n if n[k] > 0 else -n
    return n


def ransac_ground(
    cloud: PointCloud, ransac_threshold: float = 0.2, ransac_iters: int = 200, seed: int = 0
) -> tuple[GroundPlane, PointCloud]:
    """Fit the dominant plane by RANSAC, refined by least squares on its inliers.

    Returns the plane and the cloud of non-ground (outlier) points.
    """
    xyz = cloud.xyz
    n_pts = len(xyz)
    if n_pts < 3:
        raise NoPlaneError(f"need at least 3 points, got {n_pts}")
    centered = xyz - xyz.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1.0):
        raise NoPlaneError("points are collinear")

    rng = np.random.default_rng(seed)
    # three distinct indices per hypothesis
    idx = rng.integers(0, n_pts, size=(ransac_iters, 3))
    dup = (idx[:, 0] == idx[:, 1]) | (idx[:, 0] == idx[:, 2]) | (idx[:, 1] == idx[:, 2])
    while np.any(dup):
        idx[dup] = rng.integers(0, n_pts, size=(int(dup.sum()), 3))
        dup = (idx[:, 0] == idx[:, 1]) | (idx[:, 0] == idx[:, 2]) | (idx[:, 1] == idx[:, 2])
    a, b, c = xyz[idx[:, 0]], xyz[idx[:, 1]], xyz[idx[:, 2]]
    normals = np.cross(b - a, c - a)
    norms = np.linalg.norm(normals, axis=1)
    good = norms > 1e-12
    if not np.any(good):
        raise NoPlaneError("all RANSAC samples were degenerate")
    normals[good] /= norms[good, None]
    offsets = np.einsum("ij,ij->i", normals, a)
    best_count, best = -1, None
    chunk = max(1, 2_000_000 // max(n_pts, 1))
    for start in range(0, ransac_iters, chunk):
        sl = slice(start, start + chunk)
        # hypotheses along rows keeps the reductions contiguous
        dist = normals[sl] @ xyz.T
        dist -= offsets[sl, None]
        np.abs(dist, out=dist)
        counts = np.where(good[sl], np.count_nonzero(dist <= ransac_threshold, axis=1), -1)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count, best = int(counts[k]), start + k
    inliers = np.abs(xyz @ normals[best] - offsets[best]) <= ransac_threshold
    normal, offset = _plane_lstsq(xyz[inliers])
    plane = GroundPlane(normal, offset, int(inliers.sum()))
    return plane, cloud.subset(~inliers)


def filter_height(cloud: PointCloud, plane: GroundPlane, height_range: tuple[float, float]) -> PointCloud:
    if len(cloud) == 0:
        return cloud
    h = plane.signed_distance(cloud.xyz)
    return cloud.subset((h >= height_range[0]) & (h <= height_range[1]))


def remove_outliers(cloud: PointCloud, outlier_k: int = 8, outlier_alpha: float = 2.0) -> PointCloud:
    """Drop points whose mean k-NN distance exceeds mean + alpha * std over the cloud."""
    if outlier_k < 1:
        raise ValueError("outlier_k must be >= 1")
    if len(cloud) <= outlier_k:
        warnings.warn(
            f"cloud of {len(cloud)} points is too small for k={outlier_k}; returned unchanged",
            SmallCloudWarning,
            stacklevel=2,
        )
        return cloud
    tree = cKDTree(cloud.xyz)
    d, _ = tree.query(cloud.xyz, k=outlier_k + 1)
    mean_d = d[:, 1:].mean(axis=1)
    mu, sd = mean_d.mean(), mean_d.std()
    # slack absorbs rounding when every point has the same neighbour distance
    limit = mu + outlier_alpha * sd + 1e-9 * max(mu, 1.0)
    return cloud.subset(mean_d <= limit)


def _centroid(xyz: np.ndarray) -> WorldPoint:
    return WorldPoint.from_array(xyz.mean(axis=0))


def _labels_from_pairs(n: int, pairs: np.ndarray, dist: np.ndarray, min_pts: int) -> np.ndarray:
    """DBSCAN labelling from the list of eps-neighbour pairs (i < j) and their distances.

    Core points have at least ``min_pts`` points (self included) within eps.
    Clusters are the connected components of the core-core graph; a border
    point joins the cluster of its nearest core neighbour (lowest index on
    ties), which makes the result independent of input order.
    """
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    i, j = pairs[:, 0], pairs[:, 1]
    degree = 1 + np.bincount(i, minlength=n) + np.bincount(j, minlength=n)
    core = degree >= min_pts
    both = core[i] & core[j]
    graph = coo_matrix((np.ones(int(both.sum())), (i[both], j[both])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    core_idx = np.flatnonzero(core)
    # relabel components in order of their lowest core index
    uniq, first = np.unique(comp[core_idx], return_index=True)
    order = np.argsort(core_idx[first])
    remap = np.empty(len(uniq), dtype=np.int64)
    remap[order] = np.arange(len(uniq))
    labels[core_idx] = remap[np.searchsorted(uniq, comp[core_idx])]
    # border candidates: (border point, core neighbour, distance)
    b1 = ~core[i] & core[j]
    b2 = core[i] & ~core[j]
    border = np.concatenate([i[b1], j[b2]])
    cores = np.concatenate([j[b1], i[b2]])
    d = np.concatenate([dist[b1], dist[b2]])
    if len(border):
        o = np.lexsort((cores, d, border))
        border, cores = border[o], cores[o]
        firsts = np.r_[True, border[1:] != border[:-1]]
        labels[border[firsts]] = labels[cores[firsts]]
    return labels


def dbscan_labels(xyz: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN labels (-1 for noise); see :func:`_labels_from_pairs` for the border rule."""
    if not eps > 0 or min_pts < 1:
        raise ValueError("dbscan needs eps > 0 and min_pts >= 1")
    xyz = np.asarray(xyz, dtype=float)
    if len(xyz) == 0:
        return np.zeros(0, dtype=np.int64)
    pairs = cKDTree(xyz).query_pairs(eps, output_type="ndarray").astype(np.int64).reshape(-1, 2)
    dist = np.linalg.norm(xyz[pairs[:, 0]] - xyz[pairs[:, 1]], axis=1)
    return _labels_from_pairs(len(xyz), pairs, dist, min_pts)


def dbscan(cloud: PointCloud, dbscan_eps: float = 0.8, dbscan_min_pts: int = 8) -> tuple[list[Cluster], np.ndarray]:
    labels = dbscan_labels(cloud.xyz, dbscan_eps, dbscan_min_pts)
    clusters = []
    for lab in range(int(labels.max()) + 1 if len(labels) else 0):
        idx = np.flatnonzero(labels == lab)
        clusters.append(Cluster(idx, _centroid(cloud.xyz[idx])))
    return clusters, np.flatnonzero(labels < 0)


def agglomerative_merge(clusters: Sequence[Cluster], agglom_merge_dist: float = 1.5) -> list[Cluster]:
    """Merge the closest pair of clusters by centroid distance until none is below the threshold."""
    members = [np.asarray(c.indices) for c in clusters]
    cents = [c.centroid.as_array() for c in clusters]
    while len(cents) > 1:
        C = np.array(cents)
        d = np.linalg.norm(C[:, None, :] - C[None, :, :], axis=2)
        d[np.tril_indices(len(C))] = np.inf
        # argmin scans row-major, so ties resolve to the lowest (i, j)
        flat = int(np.argmin(d))
        i, j = divmod(flat, len(C))
        if not d[i, j] < agglom_merge_dist:
            break
        ni, nj = len(members[i]), len(members[j])
        cents[i] = (cents[i] * ni + cents[j] * nj) / (ni + nj)
        members[i] = np.sort(np.concatenate([members[i], members[j]]))
        del cents[j], members[j]
    return [Cluster(m, WorldPoint.from_array(c)) for m, c in zip(members, cents)]


def _norm_yaw(deg: float) -> float:
    return (deg + 90.0) % 180.0 - 90.0


def fit_box(points: np.ndarray) -> BoundingBox3D:
    """Oriented box: yaw from the principal axis of the xy covariance, tight extents in that frame."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateBoxError(f"need at least 3 points to fit a box, got {len(pts)}")
    xy = pts[:, :2]
    cov = np.cov(xy - xy.mean(axis=0), rowvar=False, bias=True)
    w, v = np.linalg.eigh(cov)
    major = v[:, int(np.argmax(w))]
    yaw = math.atan2(major[1], major[0])
    c, s = math.cos(yaw), math.sin(yaw)
    lon = xy[:, 0] * c + xy[:, 1] * s
    lat = -xy[:, 0] * s + xy[:, 1] * c
    lo_min, lo_max, la_min, la_max = lon.min(), lon.max(), lat.min(), lat.max()
    length, width = lo_max - lo_min, la_max - la_min
    mid_lon, mid_lat = (lo_min + lo_max) / 2, (la_min + la_max) / 2
    cx, cy = mid_lon * c - mid_lat * s, mid_lon * s + mid_lat * c
    yaw_deg = math.degrees(yaw)
    if width > length:
        length, width = width, length
        yaw_deg += 90.0
    z_min, z_max = pts[:, 2].min(), pts[:, 2].max()
    center = WorldPoint(float(cx), float(cy), float((z_min + z_max) / 2))
    return BoundingBox3D(center, float(length), float(width), float(z_max - z_min), _norm_yaw(yaw_deg))


def _truncated(xyz: np.ndarray, roi: ROI | None, margin: float) -> bool:
    """True when the points reach within ``margin`` of a finite x/y side of the ROI."""
    if roi is None or margin <= 0:
        return False
    lo, hi = xyz[:, :2].min(axis=0), xyz[:, :2].max(axis=0)
    return bool(
        lo[0] <= roi.x_min + margin or hi[0] >= roi.x_max - margin
        or lo[1] <= roi.y_min + margin or hi[1] >= roi.y_max - margin
    )


def detect_objects(cloud: PointCloud, params: LidarParams = LidarParams(), seed: int = 0) -> list[Detection]:
    """Full detection chain for one frame.

    Objects cut by the ROI boundary would get boxes (and centres) covering
    only their inside part, so clusters within ``truncation_margin`` of an
    ROI side are dropped.
    """
    c = crop_roi(cloud, params.roi)
    c = filter_intensity(c, params.intensity_min)
    c = voxel_downsample(c, params.voxel_size)
    plane, above = ransac_ground(c, params.ransac_threshold, params.ransac_iters, seed)
    c = filter_height(above, plane, params.height_range)
    if len(c) > params.outlier_k:
        c = remove_outliers(c, params.outlier_k, params.outlier_alpha)
    clusters, _ = dbscan(c, params.dbscan_eps, params.dbscan_min_pts)
    clusters = agglomerative_merge(clusters, params.agglom_merge_dist)
    out = []
    for cl in clusters:
        if len(cl) < max(params.min_cluster_size, 3):
            continue
        pts = c.xyz[cl.indices]
        if _truncated(pts, params.roi, params.truncation_margin):
            continue
        out.append(Detection(fit_box(pts), cl.centroid, len(cl)))
    out.sort(key=lambda d: (d.center.x, d.center.y))
    return out


# --- file formats -----------------------------------------------------------

DETECTION_COLUMNS = ("t", "track_id", "cx", "cy", "cz", "length", "width", "height", "yaw")


def write_ply(path: str | Path, cloud: PointCloud) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = (
        "ply\nformat ascii 1.0\n"
        f"comment t {cloud.t:.6f}\n"
        f"element vertex {len(cloud)}\n"
        "property float x\nproperty float y\nproperty float z\nproperty float intensity\n"
        "end_header\n"
    )
    data = np.column_stack([cloud.xyz, cloud.intensity])
    body = ("%.4f %.4f %.4f %.2f\n" * len(data)) % tuple(data.ravel().tolist())
    path.write_text(header + body, encoding="utf-8")


def read_ply(path: str | Path, t: float = 0.0) -> PointCloud:
    text = Path(path).read_text(encoding="utf-8")
    head, sep, body = text.partition("end_header\n")
    if not sep or not head.startswith("ply"):
        raise ValueError(f"{path}: not an ASCII PLY file")
    props, n = [], None
    for line in head.splitlines():
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts[:1] == ["property"]:
            props.append(parts[-1])
        elif parts[:2] == ["format", "binary_little_endian"] or parts[:2] == ["format", "binary_big_endian"]:
            raise ValueError(f"{path}: only ASCII PLY is supported")
    if n is None or not {"x", "y", "z"} <= set(props):
        raise ValueError(f"{path}: PLY header lacks vertex x/y/z")
    vals = np.array(body.split(), dtype=float) if n else np.zeros(0)
    vals = vals.reshape(n, len(props)) if n else np.zeros((0, len(props)))
    col = {name: k for k, name in enumerate(props)}
    xyz = vals[:, [col["x"], col["y"], col["z"]]]
    inten = vals[:, col["intensity"]] if "intensity" in col else np.zeros(n)
    return PointCloud(xyz, inten, t)


def read_cloud_csv(path: str | Path, t: float = 0.0) -> PointCloud:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    xyz = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows]).reshape(-1, 3)
    inten = np.array([float(r.get("intensity") or 0.0) for r in rows])
    return PointCloud(xyz, inten, t)


def read_cloud(path: str | Path, t: float = 0.0) -> PointCloud:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_cloud_csv(path, t)
    return read_ply(path, t)


def read_manifest(path: str | Path) -> list[tuple[float, Path]]:
    """Frame list ``[{"t": ..., "file": ...}]``; relative files resolve against the manifest's directory."""
    path = Path(path)
    entries = json.loads(path.read_text(encoding="utf-8"))
    out = []
    for e in entries:
        f = Path(e["file"])
        out.append((float(e["t"]), f if f.is_absolute() else path.parent / f))
    return out


def write_manifest(path: str | Path, entries: Sequence[tuple[float, str]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = [{"t": round(t, 6), "file": f} for t, f in entries]
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def write_detections(path: str | Path, frames: Sequence[tuple[float, Sequence[Detection]]], track_ids=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETECTION_COLUMNS)
        for k, (t, dets) in enumerate(frames):
            for m, d in enumerate(dets):
                tid = "" if track_ids is None else track_ids[k][m]
                b = d.box
                w.writerow([f"{t:.6f}", tid] + [f"{v:.4f}" for v in (
                    b.center.x, b.center.y, b.center.z, b.length, b.width, b.height, b.yaw)])


def read_detection_frames(path: str | Path) -> list[tuple[float, list[tuple[int | None, WorldPoint]]]]:
    """Per-frame (track_id or None, centroid) lists from a detections CSV."""
    frames: dict[float, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            t = float(r["t"])
            tid = int(r["track_id"]) if r.get("track_id") not in (None, "") else None
            frames.setdefault(t, []).append((tid, WorldPoint(float(r["cx"]), float(r["cy"]), float(r["cz"]))))
    return sorted(frames.items())
