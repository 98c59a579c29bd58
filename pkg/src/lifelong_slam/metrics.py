"""Evaluation metrics: map diffing (MCR), initialization rate (CRI),
mileage rate of correct localization (MRCL) and average matching score
(AMS), plus graph-complexity series.

Map diffs classify cells that are decided (occupied or free) in both maps:
occupied in both -> unchanged (blue), occupied then free -> removed
(green), free then occupied -> added (red); cells unknown in either map
are skipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, UndefinedMetricError
from .grid import FREE_THRESHOLD, OCCUPIED_THRESHOLD, OccupancyGrid

COLOR_UNCHANGED = (40, 70, 255)
COLOR_REMOVED = (120, 230, 120)
COLOR_ADDED = (235, 40, 40)
COLOR_BACKGROUND = (255, 255, 255)

DEFAULT_TRANSLATION_TOLERANCE = 0.3
DEFAULT_HEADING_TOLERANCE = math.radians(10.0)


@dataclass
class MapDiff:
    unchanged_count: int
    removed_count: int
    added_count: int
    image: np.ndarray  # (H, W, 3) uint8, same orientation as the grids
    resolution: float
    origin_xy: tuple[float, float]


@dataclass
class EvaluationRecord:
    """Per-sequence evaluation data."""

    initialization_success: bool
    correct_mileage: float = 0.0
    total_mileage: float = 0.0
    match_scores: list[float] | None = None


def _state_grid(grid: OccupancyGrid) -> np.ndarray:
    """0 = unknown, 1 = free, 2 = occupied."""
    p = grid.probability_array()
    state = np.zeros(p.shape, dtype=np.uint8)
    with np.errstate(invalid="ignore"):
        state[p <= FREE_THRESHOLD] = 1
        state[p >= OCCUPIED_THRESHOLD] = 2
    return state


def diff_maps(old: OccupancyGrid, new: OccupancyGrid) -> MapDiff:
    """Cell-wise comparison of two aligned occupancy grids."""
    if abs(old.resolution - new.resolution) > 1e-12:
        raise ContractError("resolution mismatch between maps")
    res = old.resolution
    for g in (old, new):
        if abs(g.origin.theta) > 1e-9:
            raise ContractError("diff requires axis-aligned grids")
    off_old = (old.origin.x / res, old.origin.y / res)
    off_new = (new.origin.x / res, new.origin.y / res)
    for v in (*off_old, *off_new):
        if abs(v - round(v)) > 1e-6:
            raise ContractError("grid origins are not cell-aligned")

    ox0, oy0 = int(round(off_old[0])), int(round(off_old[1]))
    nx0, ny0 = int(round(off_new[0])), int(round(off_new[1]))
    min_x = min(ox0, nx0)
    min_y = min(oy0, ny0)
    width = max(ox0 + old.width, nx0 + new.width) - min_x
    height = max(oy0 + old.height, ny0 + new.height) - min_y

    state_old = np.zeros((height, width), dtype=np.uint8)
    state_new = np.zeros((height, width), dtype=np.uint8)
    state_old[oy0 - min_y : oy0 - min_y + old.height, ox0 - min_x : ox0 - min_x + old.width] = _state_grid(old)
    state_new[ny0 - min_y : ny0 - min_y + new.height, nx0 - min_x : nx0 - min_x + new.width] = _state_grid(new)

    unchanged = (state_old == 2) & (state_new == 2)
    removed = (state_old == 2) & (state_new == 1)
    added = (state_old == 1) & (state_new == 2)

    image = np.full((height, width, 3), COLOR_BACKGROUND, dtype=np.uint8)
    image[unchanged] = COLOR_UNCHANGED
    image[removed] = COLOR_REMOVED
    image[added] = COLOR_ADDED
    return MapDiff(
        int(unchanged.sum()),
        int(removed.sum()),
        int(added.sum()),
        image,
        res,
        (min_x * res, min_y * res),
    )


def mcr(diff: MapDiff) -> float:
    """Map change rate in percent: 0.5(m_r+m_g) / (0.5(m_r+m_g) + m_b)."""
    changed = diff.added_count + diff.removed_count
    if changed + diff.unchanged_count == 0:
        raise UndefinedMetricError("diff contains no decided cells")
    return 100.0 * (0.5 * changed) / (0.5 * changed + diff.unchanged_count)


def cri(records: Sequence[EvaluationRecord]) -> float:
    """Fraction of sequences with successful initialization."""
    if not records:
        raise ContractError("CRI needs at least one sequence")
    return sum(1.0 for r in records if r.initialization_success) / len(records)


def ams(scores: Sequence[float]) -> float:
    """Mean matching score over all attempts (accepted or rejected)."""
    if len(scores) == 0:
        raise UndefinedMetricError("no matching attempts")
    return float(np.mean(scores))


def _interpolate_truth(truth: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """Linear xy and shortest-arc angle interpolation of (M, 4) truth rows."""
    t = truth[:, 0]
    x = np.interp(ts, t, truth[:, 1])
    y = np.interp(ts, t, truth[:, 2])
    th = truth[:, 3]
    unwrapped = np.unwrap(th)
    theta = np.interp(ts, t, unwrapped)
    return np.stack([x, y, np.arctan2(np.sin(theta), np.cos(theta))], axis=1)


def mrcl(
    trajectory: np.ndarray,
    ground_truth: np.ndarray,
    translation_tolerance: float = DEFAULT_TRANSLATION_TOLERANCE,
    heading_tolerance: float = DEFAULT_HEADING_TOLERANCE,
) -> float:
    """Mileage fraction of the trajectory that stays within tolerance of the
    interpolated ground truth. Rows of both arrays are (t, x, y, theta)."""
    traj = np.asarray(trajectory, dtype=np.float64).reshape(-1, 4)
    truth = np.asarray(ground_truth, dtype=np.float64).reshape(-1, 4)
    if len(traj) < 2 or len(truth) < 1:
        raise ContractError("need at least two trajectory samples and ground truth")
    t0, t1 = truth[0, 0] - 0.1, truth[-1, 0] + 0.1
    inside = (traj[:, 0] >= t0) & (traj[:, 0] <= t1)
    traj = traj[inside]
    if len(traj) < 2:
        raise ContractError("no temporal overlap between trajectory and ground truth")

    ref = _interpolate_truth(truth, traj[:, 0])
    terr = np.linalg.norm(traj[:, 1:3] - ref[:, 0:2], axis=1)
    aerr = np.abs(np.arctan2(np.sin(traj[:, 3] - ref[:, 2]), np.cos(traj[:, 3] - ref[:, 2])))
    correct = (terr < translation_tolerance) & (aerr < heading_tolerance)

    seg = np.linalg.norm(np.diff(traj[:, 1:3], axis=0), axis=1)
    total = float(seg.sum())
    if total == 0.0:
        raise UndefinedMetricError("trajectory has zero mileage")
    good = float(seg[correct[:-1] & correct[1:]].sum())
    return good / total


@dataclass
class ComplexitySeries:
    rows: list[tuple[int, int, int, int]]  # (event, nodes, submaps, constraints)

    def tail_ratio(self, window: int = 5) -> tuple[float, float, float]:
        """max/min of each count over the trailing window (1.0 = flat)."""
        if not self.rows:
            raise ContractError("empty complexity series")
        tail = self.rows[-window:]
        out = []
        for col in (1, 2, 3):
            values = [r[col] for r in tail]
            lo = max(min(values), 1)
            out.append(max(values) / lo)
        return tuple(out)  # type: ignore[return-value]

    def write_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("event,nodes,submaps,constraints\n")
            for row in self.rows:
                fh.write(",".join(str(v) for v in row) + "\n")


def complexity_series(snapshots: Iterable[Sequence[int]]) -> ComplexitySeries:
    """Normalize snapshots into an ordered (event, nodes, submaps,
    constraints) series; rows without an event index are numbered."""
    rows = []
    for i, snap in enumerate(snapshots):
        snap = tuple(int(v) for v in snap)
        if len(snap) == 3:
            snap = (i, *snap)
        elif len(snap) != 4:
            raise ContractError("snapshots must be (nodes, submaps, constraints) or (event, ...)")
        rows.append(snap)
    if not rows:
        raise ContractError("at least one snapshot required")
    return ComplexitySeries(rows)


# ---------------------------------------------------------------------------
# small file helpers shared by the CLI and the pipeline outputs


def write_trajectory(path: str, rows: np.ndarray) -> None:
    """One `timestamp x y theta` line per sample."""
    with open(path, "w") as fh:
        for t, x, y, th in np.asarray(rows, dtype=np.float64).reshape(-1, 4):
            fh.write(f"{float(t)!r} {float(x)!r} {float(y)!r} {float(th)!r}\n")


def read_trajectory(path: str) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([float(v) for v in line.split()])
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def write_ppm(image: np.ndarray, path: str) -> None:
    """Binary P6 color image (used for diff maps)."""
    img = np.asarray(image, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P6\n")
        fh.write(f"{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(np.flipud(img).tobytes())
