"""Run configuration: one JSON document, named presets and dotted ``--set`` overrides.

Layering, lowest to highest precedence: built-in defaults, preset, config
file, ``--set`` overrides, then the ``--seed`` / ``--out`` flags.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .association import AssociationConfig
from .kalman import FilterConfig
from .pointcloud import ROI, LidarParams
from .scenario import ScenarioConfig


class ConfigError(ValueError):
    """Invalid configuration (exit code 2)."""


@dataclass(frozen=True)
class EvaluationConfig:
    segment: tuple[float, float] | None = (818.0, 833.0)
    assign: str = "spatial"  # "spatial": match estimates to truth by position; "id": trust track ids
    plot_vehicles: tuple[int, ...] | None = None  # None writes plot data for every vehicle

    def __post_init__(self):
        if self.segment is not None:
            seg = tuple(float(v) for v in self.segment)
            if len(seg) != 2 or not seg[0] <= seg[1]:
                raise ValueError("segment must be [x_min, x_max] with x_min <= x_max")
            object.__setattr__(self, "segment", seg)
        if self.assign not in ("spatial", "id"):
            raise ValueError("assign must be 'spatial' or 'id'")
        if self.plot_vehicles is not None:
            object.__setattr__(self, "plot_vehicles", tuple(int(v) for v in self.plot_vehicles))


@dataclass(frozen=True)
class PipelineConfig:
    lidar_source: str = "cloud"  # "cloud": synthesize and detect point clouds; "centroid": fast path
    write_clouds: bool = False  # the pipeline keeps clouds in memory unless asked to write them

    def __post_init__(self):
        if self.lidar_source not in ("cloud", "centroid"):
            raise ValueError("lidar_source must be 'cloud' or 'centroid'")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "out"
    preset: str | None = None
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    lidar: LidarParams = field(default_factory=LidarParams)
    filter: FilterConfig = field(default_factory=FilterConfig)
    association: AssociationConfig = field(default_factory=AssociationConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    @property
    def scenario_seeded(self) -> ScenarioConfig:
        return dataclasses.replace(self.scenario, seed=self.seed)

    @property
    def lidar_params(self) -> LidarParams:
        """Detection parameters; the ROI falls back to the scenario's."""
        if self.lidar.roi is None and self.scenario.lidar_roi is not None:
            return dataclasses.replace(self.lidar, roi=self.scenario.lidar_roi)
        return self.lidar


_REDUCED_ROI = [705.0, 900.0, -4.0, 8.0, -2.0, 8.0]

PRESETS: dict[str, dict[str, Any]] = {
    "default": {},
    # all sensor noise, bias and dropout off
    "clean": {
        "scenario.camera_noise": {"pixel_jitter": 0.0, "lat_bias": 0.0, "dropout": 0.0},
        "scenario.lidar_noise": {"range_noise": 0.0, "ground_z_noise": 0.0, "position_noise": 0.0, "dropout": 0.0},
    },
    # opposing longitudinal biases: camera error grows negative with range, LiDAR drifts positive
    "case1": {
        "scenario.vehicle_count": 10,
        "scenario.duration": 60.0,
        "scenario.camera_noise.pixel_bias_v": 0.75,
        "scenario.lidar_noise.lon_drift": 0.3,
        "filter.R_lidar": [6.0, 0.0, 0.0, 0.25],
        "pipeline.lidar_source": "centroid",
    },
    # camera at 10 Hz, LiDAR at 1 Hz, 20 % dropout on both, shared 100 m coverage
    "asymmetric": {
        "scenario.vehicle_count": 10,
        "scenario.duration": 60.0,
        "scenario.frame_rate_lidar": 1.0,
        "scenario.lidar_range": 100.0,
        "scenario.camera_noise": {"lat_bias": 0.0, "dropout": 0.2, "max_range": 100.0},
        "scenario.lidar_noise": {"dropout": 0.2, "position_noise": 0.2},
        "filter": {"sigma_a": 0.5, "R_camera": [1.0, 0.0, 0.0, 0.25], "velocity_var": 400.0},
        "evaluation.segment": None,
        "pipeline.lidar_source": "centroid",
    },
    # point-cloud synthesis at reduced density so the 100-vehicle run stays fast
    "reduced-density": {
        "scenario.points_per_m2": 6.0,
        "scenario.ground_points_per_m2": 0.3,
        "scenario.lidar_roi": _REDUCED_ROI,
        "lidar.dbscan_min_pts": 6,
    },
}


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_scalar(path: str, default, value):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
    elif _is_number(default):
        if not _is_number(value) or not math.isfinite(value):
            raise ConfigError(f"{path}: expected a finite number, got {value!r}")
        if isinstance(default, int) and not float(value).is_integer():
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        if isinstance(default, int):
            value = int(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
    elif isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
    return value


def _build(default, data: Mapping[str, Any], path: str):
    """Return ``default`` with the fields in ``data`` replaced, recursing into nested dataclasses."""
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path or 'config'}: expected an object, got {data!r}")
    names = {f.name for f in dataclasses.fields(default) if f.init}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"unknown config key {where!r}")
        cur = getattr(default, key)
        if dataclasses.is_dataclass(cur) and isinstance(value, Mapping):
            kwargs[key] = _build(cur, value, where)
        elif isinstance(cur, ROI) or (cur is None and key == "roi"):
            try:
                kwargs[key] = ROI.from_value(value)
            except TypeError as exc:
                raise ConfigError(f"{where}: {exc}") from None
        elif dataclasses.is_dataclass(cur) and isinstance(value, (list, tuple)):
            try:
                kwargs[key] = type(cur)(*value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{where}: {exc}") from None
        elif cur is None or value is None:
            kwargs[key] = value
        else:
            kwargs[key] = _check_scalar(where, cur, value)
    try:
        return dataclasses.replace(default, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def set_dotted(doc: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    if not all(keys):
        raise ConfigError(f"malformed key {dotted!r}")
    node = doc
    for k in keys[:-1]:
        nxt = node.setdefault(k, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"{dotted}: {k!r} is not a section")
        node = nxt
    last = keys[-1]
    if isinstance(value, dict) and isinstance(node.get(last), dict):
        node[last].update(copy.deepcopy(value))
    else:
        node[last] = copy.deepcopy(value)


def parse_assignment(text: str) -> tuple[str, Any]:
    """``key.path=value``; the value is read as JSON when it parses, otherwise as a string."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"--set expects key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _apply_preset(doc: dict, name: str) -> None:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    for dotted, value in PRESETS[name].items():
        set_dotted(doc, dotted, value)


def from_dict(data: Mapping[str, Any]) -> RunConfig:
    scen = data.get("scenario")
    if isinstance(scen, Mapping) and "seed" in scen:
        raise ConfigError("scenario.seed is not configurable; use the top-level seed")
    return _build(RunConfig(), data, "")


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | tuple[str, ...] = (),
    preset: str | None = None,
    seed: int | None = None,
    out: str | None = None,
) -> RunConfig:
    """Assemble a RunConfig from presets, an optional JSON file and CLI overrides."""
    user: dict = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
    sets = [parse_assignment(s) for s in overrides]
    for key, value in sets:
        set_dotted(user, key, value)
    name = preset if preset is not None else user.get("preset")
    doc: dict = {}
    for part in name.split("+") if name else ():
        _apply_preset(doc, part)
    for key, value in user.items():
        set_dotted(doc, key, value)
    if name is not None:
        doc["preset"] = name
    if seed is not None:
        doc["seed"] = seed
    if out is not None:
        doc["out"] = str(out)
    return from_dict(doc)


def to_dict(cfg: RunConfig) -> dict:
    def plain(v):
        if dataclasses.is_dataclass(v):
            return {f.name: plain(getattr(v, f.name)) for f in dataclasses.fields(v) if f.init}
        if isinstance(v, (list, tuple)):
            return [plain(x) for x in v]
        return v

    doc = plain(cfg)
    doc["scenario"].pop("seed")  # carried by the top-level seed
    return doc


def dump_config(path: str | Path, cfg: RunConfig) -> None:
    """Write the resolved configuration; the output directory is omitted so runs compare byte for byte."""
    doc = to_dict(cfg)
    doc.pop("out")
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
