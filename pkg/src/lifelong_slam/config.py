"""Pipeline configuration and its `key = value` file format.

Nested fields use dotted keys (optimizer.max_iterations, lidar.beams,
glm_window.linear_extent, ...). Booleans accept true/false/1/0; '#' starts
a comment. Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

from .errors import ContractError
from .matcher import SearchWindow
from .optimizer import OptimizerConfig
from .simulator import LidarSpec, OdometryNoise


@dataclass
class PipelineConfig:
    scans_per_submap: int = 40
    grid_resolution: float = 0.05
    overlap_threshold: float = 0.7
    fresh_cover_count: int = 1
    min_match_score: float = 0.5
    optimize_every_k_sparsifications: int = 5
    protect_session0: bool = False
    freeze_map: bool = False  # control mode: no trimming, no persisted updates
    glm_node_stride: int = 1
    glm_max_targets: int = 4
    p_unknown: float = 0.2
    llo_min_refine_score: float = 0.35
    intra_sigma_xy: float = 0.05
    intra_sigma_theta: float = 0.02
    odom_sigma_floor_xy: float = 0.01
    odom_sigma_floor_theta: float = 0.005
    odom_translation_frac: float = 0.02
    odom_rotation_rad_per_meter: float = 0.01
    final_optimize: bool = True
    llo_window: SearchWindow = field(
        default_factory=lambda: SearchWindow(linear_extent=0.3, angular_extent=0.15)
    )
    glm_window: SearchWindow = field(
        default_factory=lambda: SearchWindow(linear_extent=0.5, angular_extent=0.35)
    )
    coarse_window: SearchWindow = field(
        default_factory=lambda: SearchWindow(linear_extent=1.0, angular_extent=0.5)
    )
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    lidar: LidarSpec = field(default_factory=LidarSpec)

    def validate(self) -> None:
        for name in (
            "scans_per_submap",
            "fresh_cover_count",
            "optimize_every_k_sparsifications",
            "glm_node_stride",
            "glm_max_targets",
        ):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        for name in ("overlap_threshold", "min_match_score"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ContractError(f"{name} must be in (0, 1]")
        self.optimizer.validate()

    def odometry_noise(self) -> OdometryNoise:
        return OdometryNoise(self.odom_translation_frac, self.odom_rotation_rad_per_meter)


_WINDOW_FIELDS = ("linear_extent", "angular_extent", "linear_step", "angular_step")
_BOOLS = {"true": True, "1": True, "false": False, "0": False}


def _coerce(value: str, typ):
    if typ is bool:
        lowered = value.lower()
        if lowered not in _BOOLS:
            raise ContractError(f"expected a boolean, got '{value}'")
        return _BOOLS[lowered]
    return typ(value)


def load_config(path: str) -> PipelineConfig:
    config = PipelineConfig()
    simple = {f.name: f.type for f in fields(PipelineConfig)}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ContractError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            try:
                if "." in key:
                    group, name = key.split(".", 1)
                    if group == "optimizer" and name in ("max_iterations",):
                        config.optimizer.max_iterations = int(value)
                    elif group == "optimizer" and name in ("convergence_tolerance", "damping"):
                        setattr(config.optimizer, name, float(value))
                    elif group == "lidar" and name == "fov_deg":
                        config.lidar.fov = math.radians(float(value))
                    elif group == "lidar" and name == "beams":
                        config.lidar.beams = int(value)
                    elif group == "lidar" and name in ("max_range", "range_sigma"):
                        setattr(config.lidar, name, float(value))
                    elif group in ("llo_window", "glm_window", "coarse_window") and name in _WINDOW_FIELDS:
                        setattr(getattr(config, group), name, float(value))
                    else:
                        raise ContractError(f"unknown key '{key}'")
                elif key in simple and key not in (
                    "llo_window",
                    "glm_window",
                    "coarse_window",
                    "optimizer",
                    "lidar",
                ):
                    current = getattr(config, key)
                    setattr(config, key, _coerce(value, type(current)))
                else:
                    raise ContractError(f"unknown key '{key}'")
            except ValueError as exc:
                raise ContractError(f"{path}:{lineno}: {exc}") from exc
    config.validate()
    return config


def save_config(config: PipelineConfig, path: str) -> None:
    with open(path, "w") as fh:
        for f in fields(PipelineConfig):
            value = getattr(config, f.name)
            if isinstance(value, (int, float, bool)) and not isinstance(value, SearchWindow):
                fh.write(f"{f.name} = {value}\n")
        for group in ("llo_window", "glm_window", "coarse_window"):
            window = getattr(config, group)
            fh.write(f"{group}.linear_extent = {window.linear_extent}\n")
            fh.write(f"{group}.angular_extent = {window.angular_extent}\n")
            if window.linear_step is not None:
                fh.write(f"{group}.linear_step = {window.linear_step}\n")
            if window.angular_step is not None:
                fh.write(f"{group}.angular_step = {window.angular_step}\n")
        fh.write(f"optimizer.max_iterations = {config.optimizer.max_iterations}\n")
        fh.write(f"optimizer.convergence_tolerance = {config.optimizer.convergence_tolerance}\n")
        fh.write(f"optimizer.damping = {config.optimizer.damping}\n")
        fh.write(f"lidar.fov_deg = {math.degrees(config.lidar.fov)}\n")
        fh.write(f"lidar.beams = {config.lidar.beams}\n")
        fh.write(f"lidar.max_range = {config.lidar.max_range}\n")
        fh.write(f"lidar.range_sigma = {config.lidar.range_sigma}\n")
