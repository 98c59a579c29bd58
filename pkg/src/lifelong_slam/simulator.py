"""Changing-world simulator: line-segment worlds, LiDAR raycasting and
noisy odometry.

Worlds are static segments plus dynamic objects with per-session presence
schedules, so the environment can be changed between sessions in a
controlled, seeded way. Scans are exact ray-segment intersections with
optional Gaussian range noise; odometry deltas are perturbed with noise
proportional to the step length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError
from .geometry import Pose2, between, compose
from .logio import GROUND_TRUTH, LASER, ODOMETRY, SensorRecord
from .mapping import Scan


@dataclass
class LidarSpec:
    fov: float = math.radians(270.0)
    beams: int = 811
    max_range: float = 25.0
    range_sigma: float = 0.01

    def bearings(self) -> np.ndarray:
        return np.linspace(-0.5 * self.fov, 0.5 * self.fov, self.beams)


@dataclass
class OdometryNoise:
    translation_frac: float = 0.02  # sigma as fraction of step translation
    rotation_rad_per_meter: float = 0.01


@dataclass
class DynamicObject:
    segments: np.ndarray  # (S, 4) rows x1 y1 x2 y2
    presence: list[bool]  # one flag per session


@dataclass
class WorldModel:
    static_segments: np.ndarray
    dynamic_objects: list[DynamicObject]
    bounds: tuple[float, float, float, float]
    rng_seed: int

    def segments_for_session(self, session: int) -> np.ndarray:
        parts = [self.static_segments.reshape(-1, 4)]
        for obj in self.dynamic_objects:
            if session >= len(obj.presence):
                raise ContractError(f"no presence schedule for session {session}")
            if obj.presence[session]:
                parts.append(obj.segments.reshape(-1, 4))
        return np.concatenate(parts) if parts else np.empty((0, 4))


@dataclass
class WorldSpec:
    bounds: tuple[float, float, float, float] = (0.0, 0.0, 16.0, 12.0)
    n_dynamic: int = 12
    object_size: float = 0.6
    change_fraction: float = 0.5
    sessions: int = 2
    extra_static: np.ndarray = field(default_factory=lambda: np.empty((0, 4)))
    keep_clear: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    keep_clear_margin: float = 1.0


def _box_segments(cx: float, cy: float, half: float) -> np.ndarray:
    x0, x1, y0, y1 = cx - half, cx + half, cy - half, cy + half
    return np.array(
        [[x0, y0, x1, y0], [x1, y0, x1, y1], [x1, y1, x0, y1], [x0, y1, x0, y0]]
    )


def _rect_segments(x0, y0, x1, y1) -> np.ndarray:
    return np.array(
        [[x0, y0, x1, y0], [x1, y0, x1, y1], [x1, y1, x0, y1], [x0, y1, x0, y0]]
    )


def _distance_to_polyline(point: np.ndarray, polyline: np.ndarray) -> float:
    if len(polyline) == 0:
        return math.inf
    if len(polyline) == 1:
        return float(np.linalg.norm(point - polyline[0]))
    best = math.inf
    for a, b in zip(polyline[:-1], polyline[1:]):
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom == 0 else float(np.clip((point - a) @ ab / denom, 0.0, 1.0))
        best = min(best, float(np.linalg.norm(a + t * ab - point)))
    return best


def generate_world(spec: WorldSpec, seed: int) -> WorldModel:
    """Deterministic world for (spec, seed); `change_fraction` of the
    dynamic objects toggle presence between consecutive sessions."""
    if spec.n_dynamic < 0 or spec.sessions < 1:
        raise ContractError("counts must be non-negative and sessions >= 1")
    if not 0.0 <= spec.change_fraction <= 1.0:
        raise ContractError("change_fraction must be within [0, 1]")
    x0, y0, x1, y1 = spec.bounds
    margin = spec.object_size
    if x1 - x0 <= 2 * margin + spec.object_size or y1 - y0 <= 2 * margin + spec.object_size:
        raise ContractError("objects do not fit inside the world bounds")

    rng = np.random.default_rng(seed)
    objects: list[DynamicObject] = []
    half = 0.5 * spec.object_size
    for _ in range(spec.n_dynamic):
        placed = False
        for _attempt in range(1000):
            cx = rng.uniform(x0 + margin + half, x1 - margin - half)
            cy = rng.uniform(y0 + margin + half, y1 - margin - half)
            if (
                _distance_to_polyline(np.array([cx, cy]), spec.keep_clear)
                < spec.keep_clear_margin + half
            ):
                continue
            objects.append(
                DynamicObject(_box_segments(cx, cy, half), [True] * spec.sessions)
            )
            placed = True
            break
        if not placed:
            raise ContractError("could not place dynamic objects (spec infeasible)")

    n_toggle = int(round(spec.change_fraction * spec.n_dynamic))
    for session in range(1, spec.sessions):
        if spec.n_dynamic == 0 or n_toggle == 0:
            continue
        chosen = rng.choice(spec.n_dynamic, size=n_toggle, replace=False)
        for i in range(spec.n_dynamic):
            prev = objects[i].presence[session - 1]
            objects[i].presence[session] = (not prev) if i in set(chosen.tolist()) else prev

    static = np.concatenate([_rect_segments(x0, y0, x1, y1), spec.extra_static.reshape(-1, 4)])
    return WorldModel(static, objects, spec.bounds, seed)


def simulate_scan(
    world: WorldModel,
    session: int,
    pose: Pose2,
    lidar: LidarSpec,
    rng: np.random.Generator | None = None,
) -> Scan:
    """Exact ray-segment raycast from `pose`; beams without a hit return
    max_range and are flagged. Gaussian range noise is added when an rng is
    supplied and range_sigma > 0."""
    x0, y0, x1, y1 = world.bounds
    if not (x0 <= pose.x <= x1 and y0 <= pose.y <= y1):
        raise ContractError("scan pose outside world bounds")
    segs = world.segments_for_session(session)
    local = lidar.bearings()
    world_angles = pose.theta + local
    dirs = np.stack([np.cos(world_angles), np.sin(world_angles)], axis=1)

    ranges = np.full(lidar.beams, lidar.max_range, dtype=np.float64)
    if len(segs):
        p1 = segs[:, 0:2]
        e = segs[:, 2:4] - p1
        rel = p1 - np.array([pose.x, pose.y])
        denom = dirs[:, 0:1] * e[:, 1] - dirs[:, 1:2] * e[:, 0]  # (B, S)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (rel[:, 0] * e[:, 1] - rel[:, 1] * e[:, 0]) / denom
            u = (dirs[:, 0:1] * rel[:, 1][None, :] - dirs[:, 1:2] * rel[:, 0][None, :])
            u = -u / denom
        valid = (np.abs(denom) > 1e-12) & (t > 1e-9) & (u >= 0.0) & (u <= 1.0)
        t = np.where(valid, t, np.inf)
        ranges = np.minimum(lidar.max_range, t.min(axis=1))

    hit = ranges < lidar.max_range * (1.0 - 1e-9)
    if rng is not None and lidar.range_sigma > 0:
        noise = rng.normal(0.0, lidar.range_sigma, size=lidar.beams)
        ranges = np.where(hit, np.clip(ranges + noise, 1e-3, lidar.max_range), ranges)
    points = ranges[:, None] * np.stack([np.cos(local), np.sin(local)], axis=1)
    return Scan(points, timestamp=0.0, max_range=lidar.max_range, hit_mask=hit)


def scan_from_ranges(ranges: np.ndarray, lidar: LidarSpec, timestamp: float) -> Scan:
    """Rebuild a Scan from logged ranges using the lidar geometry."""
    ranges = np.asarray(ranges, dtype=np.float64)
    local = np.linspace(-0.5 * lidar.fov, 0.5 * lidar.fov, len(ranges))
    points = ranges[:, None] * np.stack([np.cos(local), np.sin(local)], axis=1)
    hit = ranges < lidar.max_range * (1.0 - 1e-9)
    scan = Scan(points, timestamp=timestamp, max_range=lidar.max_range, hit_mask=hit)
    return scan


def simulate_odometry(
    true_delta: Pose2, noise: OdometryNoise, rng: np.random.Generator
) -> Pose2:
    """Perturb a relative motion with zero-mean Gaussian noise proportional
    to the step translation."""
    d = math.hypot(true_delta.x, true_delta.y)
    sigma_t = noise.translation_frac * d
    sigma_r = noise.rotation_rad_per_meter * d
    if sigma_t == 0.0 and sigma_r == 0.0:
        return true_delta
    nx, ny, nth = rng.normal(0.0, 1.0, size=3)
    return Pose2(
        true_delta.x + sigma_t * nx,
        true_delta.y + sigma_t * ny,
        true_delta.theta + sigma_r * nth,
    )


# ---------------------------------------------------------------------------
# routes and scenarios


def densify_route(waypoints: np.ndarray, step: float, max_turn: float = 0.2) -> list[Pose2]:
    """Sample poses along a waypoint polyline with headings along travel,
    inserting in-place rotation steps at corners."""
    poses: list[Pose2] = []
    pts = np.asarray(waypoints, dtype=np.float64)
    heading = None
    for a, b in zip(pts[:-1], pts[1:]):
        seg = b - a
        length = float(np.linalg.norm(seg))
        if length < 1e-9:
            continue
        target = math.atan2(seg[1], seg[0])
        if heading is None:
            heading = target
        # rotate in place toward the new heading
        while abs(math.atan2(math.sin(target - heading), math.cos(target - heading))) > max_turn:
            diff = math.atan2(math.sin(target - heading), math.cos(target - heading))
            heading += math.copysign(max_turn, diff)
            poses.append(Pose2(a[0], a[1], heading))
        heading = target
        n = max(1, int(math.ceil(length / step)))
        for k in range(n):
            p = a + seg * (k / n)
            poses.append(Pose2(p[0], p[1], heading))
    poses.append(Pose2(pts[-1][0], pts[-1][1], heading if heading is not None else 0.0))
    return poses


def rectangle_route(x0, y0, x1, y1, laps: int = 1) -> np.ndarray:
    loop = [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]
    pts = [[x0, y0]]
    for _ in range(laps):
        pts.extend(loop[1:])
    return np.array(pts)


@dataclass
class ScenarioConfig:
    """Everything needed to synthesize per-session sensor logs."""

    name: str = "square"
    sessions: int = 2
    seed: int = 7
    change_fraction: float = 0.5
    n_dynamic: int = 12
    bounds: tuple[float, float, float, float] = (0.0, 0.0, 16.0, 12.0)
    object_size: float = 0.6
    route_margin: float = 2.8
    route_step: float = 0.2
    laps: int = 1
    lidar: LidarSpec = field(default_factory=LidarSpec)
    odom_noise: OdometryNoise = field(default_factory=OdometryNoise)


@dataclass
class Scenario:
    world: WorldModel
    route: list[Pose2]
    lidar: LidarSpec
    odom_noise: OdometryNoise
    seed: int


def build_scenario(config: ScenarioConfig) -> Scenario:
    x0, y0, x1, y1 = config.bounds
    m = config.route_margin
    waypoints = rectangle_route(x0 + m, y0 + m, x1 - m, y1 - m, laps=config.laps)
    route = densify_route(waypoints, config.route_step)
    spec = WorldSpec(
        bounds=config.bounds,
        n_dynamic=config.n_dynamic,
        object_size=config.object_size,
        change_fraction=config.change_fraction,
        sessions=config.sessions,
        keep_clear=waypoints,
        keep_clear_margin=0.8,
    )
    world = generate_world(spec, config.seed)
    return Scenario(world, route, config.lidar, config.odom_noise, config.seed)


def session_records(scenario: Scenario, session: int) -> list[SensorRecord]:
    """Synthesize one session's time-ordered sensor records.

    Per step: ODOM (noisy delta from the previous pose), TRUTH, LASER.
    The first step has no ODOM record. Deterministic in (scenario, session).
    """
    rng = np.random.default_rng((scenario.seed, session, 0xC0FFEE))
    records: list[SensorRecord] = []
    dt = 0.1
    prev: Pose2 | None = None
    for k, pose in enumerate(scenario.route):
        ts = k * dt
        if prev is not None:
            delta = between(prev, pose)
            noisy = simulate_odometry(delta, scenario.odom_noise, rng)
            records.append(SensorRecord(ts, ODOMETRY, noisy))
        records.append(SensorRecord(ts, GROUND_TRUTH, pose))
        scan = simulate_scan(scenario.world, session, pose, scenario.lidar, rng)
        ranges = np.linalg.norm(scan.points, axis=1)
        ranges[~scan.hit_mask] = scenario.lidar.max_range
        records.append(SensorRecord(ts, LASER, ranges))
        prev = pose
    return records


# ---------------------------------------------------------------------------
# scenario config file (documented key = value format)

_SCENARIO_KEYS = {
    "name": str,
    "sessions": int,
    "seed": int,
    "change_fraction": float,
    "n_dynamic": int,
    "object_size": float,
    "route_margin": float,
    "route_step": float,
    "laps": int,
}


def parse_scenario_config(path: str) -> ScenarioConfig:
    config = ScenarioConfig()
    lidar = LidarSpec()
    noise = OdometryNoise()
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ContractError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in _SCENARIO_KEYS:
                setattr(config, key, _SCENARIO_KEYS[key](value))
            elif key == "bounds":
                config.bounds = tuple(float(v) for v in value.split())  # type: ignore[assignment]
            elif key == "lidar.fov_deg":
                lidar = replace(lidar, fov=math.radians(float(value)))
            elif key == "lidar.beams":
                lidar = replace(lidar, beams=int(value))
            elif key == "lidar.max_range":
                lidar = replace(lidar, max_range=float(value))
            elif key == "lidar.range_sigma":
                lidar = replace(lidar, range_sigma=float(value))
            elif key == "odom.translation_frac":
                noise = replace(noise, translation_frac=float(value))
            elif key == "odom.rotation_rad_per_meter":
                noise = replace(noise, rotation_rad_per_meter=float(value))
            else:
                raise ContractError(f"{path}:{lineno}: unknown key '{key}'")
    config.lidar = lidar
    config.odom_noise = noise
    return config
