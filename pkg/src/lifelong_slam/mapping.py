"""Submap construction, local LiDAR odometry and the trimming criterion.

A submap is an occupancy grid built from a fixed number of scans. Local
odometry (LLO) tracks the robot by refining odometry predictions against
the active submap and keeps two submaps alive at a time, switching at the
half-full point so every scan lands in at most two grids. Finished submaps
are registered in a coverage index; a finished submap whose known cells are
substantially re-observed by fresher submaps is selected for trimming.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import matcher
from .errors import ContractError, LifecycleError
from .geometry import Pose2, apply_pose, between, compose
from .grid import OccupancyGrid
from .pose_graph import NodeId, SubmapId

logger = logging.getLogger(__name__)

_KEY_OFFSET = 1 << 20  # world cell indices must stay within +-2^20 cells


@dataclass
class Scan:
    """A 2D LiDAR scan: endpoints in the sensor frame plus a hit mask
    (False marks beams that reached max_range without return)."""

    points: np.ndarray
    timestamp: float
    max_range: float
    hit_mask: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if self.hit_mask is None:
            self.hit_mask = np.ones(len(self.points), dtype=bool)
        else:
            self.hit_mask = np.asarray(self.hit_mask, dtype=bool).reshape(-1)
        if len(self.points):
            norms = np.linalg.norm(self.points, axis=1)
            if norms.max() > self.max_range * (1.0 + 1e-9):
                raise ContractError("scan points beyond max_range")

    def hit_points(self) -> np.ndarray:
        return self.points[self.hit_mask]


class SubmapState(enum.Enum):
    ACTIVE = "ACTIVE"
    FINISHED = "FINISHED"
    TRIMMED = "TRIMMED"


@dataclass
class Submap:
    id: SubmapId
    pose: Pose2
    grid: OccupancyGrid
    node_ids: list[NodeId] = field(default_factory=list)
    scan_count: int = 0
    state: SubmapState = SubmapState.ACTIVE
    trimmable: bool = True
    finish_seq: int = -1


def finish_submap(submap: Submap, force: bool = False) -> None:
    """Transition ACTIVE -> FINISHED. `force` allows finishing an under-full
    submap at session close so it can be matched and trimmed later."""
    if submap.state is not SubmapState.ACTIVE:
        raise LifecycleError(f"cannot finish submap in state {submap.state.name}")
    if submap.scan_count == 0 and force:
        raise LifecycleError("cannot finish an empty submap")
    submap.state = SubmapState.FINISHED


def mark_trimmed(submap: Submap) -> None:
    if submap.state is not SubmapState.FINISHED:
        raise LifecycleError(f"cannot trim submap in state {submap.state.name}")
    submap.state = SubmapState.TRIMMED


def insert_scan(
    submap: Submap,
    scan: Scan,
    node_pose_in_submap: Pose2,
    scans_per_submap: int | None = None,
) -> None:
    """Ray-cast a scan into an active submap's grid.

    Cells along each beam get a miss update and hit endpoints a hit update
    (one update per cell per scan). When `scans_per_submap` is given and
    reached, the submap transitions to FINISHED.
    """
    if submap.state is not SubmapState.ACTIVE:
        raise LifecycleError(f"cannot insert into submap in state {submap.state.name}")
    grid = submap.grid
    if len(scan.points):
        pts = apply_pose(node_pose_in_submap, scan.points)
        sensor = np.array([node_pose_in_submap.x, node_pose_in_submap.y])
        ranges = np.linalg.norm(scan.points, axis=1)
        valid = ranges > grid.resolution * 0.25
        pts, rng, hits = pts[valid], ranges[valid], scan.hit_mask[valid]
        if len(pts):
            step = grid.resolution * 0.5
            dirs = (pts - sensor) / rng[:, None]
            n_max = int(math.ceil(rng.max() / step))
            t = np.arange(n_max) * step
            mask = t[None, :] < rng[:, None]
            samples = sensor + dirs[:, None, :] * t[None, :, None]
            miss_pts = samples[mask]
            mix, miy = grid.cell_indices(miss_pts)
            hix, hiy = grid.cell_indices(pts[hits])
            mkey = (mix + _KEY_OFFSET) * (1 << 21) + (miy + _KEY_OFFSET)
            hkey = np.unique((hix + _KEY_OFFSET) * (1 << 21) + (hiy + _KEY_OFFSET))
            mkey = np.setdiff1d(np.unique(mkey), hkey, assume_unique=True)
            grid.apply_updates(
                mkey // (1 << 21) - _KEY_OFFSET,
                mkey % (1 << 21) - _KEY_OFFSET,
                hkey // (1 << 21) - _KEY_OFFSET,
                hkey % (1 << 21) - _KEY_OFFSET,
            )
    submap.scan_count += 1
    if scans_per_submap is not None and submap.scan_count >= scans_per_submap:
        finish_submap(submap)


# ---------------------------------------------------------------------------
# local LiDAR odometry


@dataclass
class LloConfig:
    scans_per_submap: int = 40
    grid_resolution: float = 0.05
    window: matcher.SearchWindow = field(
        default_factory=lambda: matcher.SearchWindow(linear_extent=0.3, angular_extent=0.15)
    )
    min_refine_score: float = 0.35
    p_unknown: float = matcher.DEFAULT_P_UNKNOWN


@dataclass
class LloStep:
    pose: Pose2
    insertions: list[tuple[SubmapId, Pose2]]  # (submap, node pose in submap frame)
    membership: SubmapId
    created: list[Submap]
    finished: list[Submap]
    used_fallback: bool


class LocalOdometry:
    """Builds a succession of locally consistent submaps for one session."""

    def __init__(self, session: int, config: LloConfig, start_pose: Pose2,
                 first_submap_index: int = 0):
        self.session = session
        self.config = config
        self.pose = start_pose
        self.active: list[Submap] = []
        self._next_index = first_submap_index

    def _new_submap(self, pose: Pose2) -> Submap:
        submap = Submap(
            id=SubmapId(self.session, self._next_index),
            pose=pose,
            grid=OccupancyGrid(self.config.grid_resolution),
        )
        self._next_index += 1
        return submap

    def step(self, scan: Scan, odom_delta: Pose2) -> LloStep:
        predicted = compose(self.pose, odom_delta)
        refined = predicted
        fallback = False
        if self.active and self.active[0].scan_count > 0:
            anchor = self.active[0]
            guess = between(anchor.pose, predicted)
            pose_in_submap, score = matcher.search(
                scan, anchor.grid, guess, self.config.window, self.config.p_unknown
            )
            if score >= self.config.min_refine_score:
                refined = compose(anchor.pose, pose_in_submap)
            else:
                fallback = True
                logger.debug(
                    "LLO refinement score %.3f below floor, using odometry prediction",
                    score,
                )
        self.pose = refined

        created: list[Submap] = []
        if not self.active:
            submap = self._new_submap(refined)
            self.active.append(submap)
            created.append(submap)
        elif len(self.active) == 1 and self.active[0].scan_count >= self.config.scans_per_submap // 2:
            submap = self._new_submap(refined)
            self.active.append(submap)
            created.append(submap)

        membership = self.active[0].id
        insertions = []
        for submap in list(self.active):
            rel = between(submap.pose, refined)
            insert_scan(submap, scan, rel, self.config.scans_per_submap)
            insertions.append((submap.id, rel))
        finished = [s for s in self.active if s.state is SubmapState.FINISHED]
        self.active = [s for s in self.active if s.state is SubmapState.ACTIVE]
        return LloStep(refined, insertions, membership, created, finished, fallback)

    def end_session(self) -> list[Submap]:
        """Force-finish the remaining active submaps (session close)."""
        finished = []
        for submap in self.active:
            if submap.scan_count > 0:
                finish_submap(submap, force=True)
                finished.append(submap)
        self.active = []
        return finished


# ---------------------------------------------------------------------------
# coverage index and trimming


class CoverageIndex:
    """Tracks which world cells each finished submap observes.

    Cells are compared on a world-aligned lattice at the submap resolution;
    recency is the order in which submaps were registered (finish order).
    """

    def __init__(self, resolution: float):
        self.resolution = float(resolution)
        self._cells: dict[SubmapId, np.ndarray] = {}
        self._seq: dict[SubmapId, int] = {}
        self._pose: dict[SubmapId, Pose2] = {}
        self._next_seq = 0

    def _world_cells(self, submap: Submap) -> np.ndarray:
        ix, iy = submap.grid.known_cells()
        if len(ix) == 0:
            return np.empty(0, dtype=np.int64)
        centers = submap.grid.cell_centers(ix, iy)
        world = apply_pose(submap.pose, centers)
        wx = np.floor(world[:, 0] / self.resolution).astype(np.int64)
        wy = np.floor(world[:, 1] / self.resolution).astype(np.int64)
        return np.unique((wx + _KEY_OFFSET) * (1 << 21) + (wy + _KEY_OFFSET))

    def add(self, submap: Submap) -> None:
        if submap.state is not SubmapState.FINISHED:
            raise LifecycleError("only finished submaps enter the coverage index")
        if submap.finish_seq < 0:
            submap.finish_seq = self._next_seq
        self._next_seq = max(self._next_seq, submap.finish_seq + 1)
        self._seq[submap.id] = submap.finish_seq
        self._pose[submap.id] = submap.pose
        self._cells[submap.id] = self._world_cells(submap)

    def remove(self, submap_id: SubmapId) -> None:
        self._cells.pop(submap_id, None)
        self._seq.pop(submap_id, None)
        self._pose.pop(submap_id, None)

    def refresh(self, submaps: Iterable[Submap]) -> None:
        """Recompute cached cells for submaps whose pose moved (after
        optimization)."""
        for submap in submaps:
            if submap.id in self._cells and self._pose[submap.id] != submap.pose:
                self._pose[submap.id] = submap.pose
                self._cells[submap.id] = self._world_cells(submap)

    def overlap_ratio(self, submap: Submap, fresh_cover_count: int = 1) -> float:
        """Fraction of the submap's known cells seen by at least
        `fresh_cover_count` more recently finished submaps."""
        if submap.id not in self._cells:
            raise ContractError(f"submap {submap.id} is not in the coverage index")
        if self._pose[submap.id] != submap.pose:
            self._pose[submap.id] = submap.pose
            self._cells[submap.id] = self._world_cells(submap)
        cells = self._cells[submap.id]
        if cells.size == 0:
            return 0.0
        seq = self._seq[submap.id]
        counts = np.zeros(cells.size, dtype=np.int64)
        for other_id, other_cells in self._cells.items():
            if self._seq[other_id] <= seq or other_cells.size == 0:
                continue
            pos = np.searchsorted(other_cells, cells)
            pos_clipped = np.minimum(pos, other_cells.size - 1)
            counts += (pos < other_cells.size) & (other_cells[pos_clipped] == cells)
        return float(np.mean(counts >= fresh_cover_count))

    def cell_map(self) -> dict[int, list[SubmapId]]:
        """Forward map cell -> submap ids in recency order (test hook)."""
        out: dict[int, list[SubmapId]] = {}
        for sid in sorted(self._cells, key=lambda s: self._seq[s]):
            for key in self._cells[sid]:
                out.setdefault(int(key), []).append(sid)
        return out


def select_trim_candidates(
    graph,
    coverage: CoverageIndex,
    threshold: float,
    fresh_cover_count: int = 1,
) -> list[SubmapId]:
    """Finished, trimmable submaps whose overlap ratio reaches the
    threshold, oldest first. Active submaps are never returned."""
    out = []
    for submap in graph.submaps.values():
        if submap.state is not SubmapState.FINISHED or not submap.trimmable:
            continue
        if coverage.overlap_ratio(submap, fresh_cover_count) >= threshold:
            out.append(submap.id)
    out.sort(key=lambda s: (s.session, s.index))
    return out


# ---------------------------------------------------------------------------
# global map rendering


def render_global_map(submaps: Sequence[Submap], resolution: float | None = None) -> OccupancyGrid:
    """Resample all non-trimmed submaps into one axis-aligned world grid.

    Newer submaps (by id) overwrite older ones in conflicting known cells.
    The grid origin is snapped to a multiple of the resolution so maps of
    the same world are cell-aligned.
    """
    live = sorted(
        (s for s in submaps if s.state is not SubmapState.TRIMMED),
        key=lambda s: (s.id.session, s.id.index),
    )
    live = [s for s in live if s.grid.known_cell_count > 0]
    if resolution is None:
        resolution = live[0].grid.resolution if live else 0.05
    out = OccupancyGrid(resolution)
    if not live:
        return out
    for s in live:
        if abs(s.grid.resolution - resolution) > 1e-12:
            raise ContractError("all submaps must share the render resolution")

    worlds = []
    for s in live:
        ix, iy = s.grid.known_cells()
        worlds.append(apply_pose(s.pose, s.grid.cell_centers(ix, iy)))
    all_pts = np.concatenate(worlds)
    min_x = math.floor(all_pts[:, 0].min() / resolution) * resolution
    min_y = math.floor(all_pts[:, 1].min() / resolution) * resolution
    out.origin = Pose2(min_x, min_y, 0.0)
    gx = np.floor((all_pts[:, 0] - min_x) / resolution).astype(np.int64)
    gy = np.floor((all_pts[:, 1] - min_y) / resolution).astype(np.int64)
    out.log_odds = np.zeros((int(gy.max()) + 1, int(gx.max()) + 1))
    out.known = np.zeros_like(out.log_odds, dtype=bool)

    offset = 0
    for s, world in zip(live, worlds):
        n = len(world)
        ix, iy = s.grid.known_cells()
        cgx, cgy = gx[offset : offset + n], gy[offset : offset + n]
        out.log_odds[cgy, cgx] = s.grid.log_odds[iy, ix]
        out.known[cgy, cgx] = True
        offset += n
    return out
