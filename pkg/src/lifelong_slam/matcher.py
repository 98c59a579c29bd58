"""Global LiDAR matching: scan-to-grid scoring and correlative search.

The score of a pose is the mean occupancy probability of the grid at the
transformed scan endpoints (unknown cells contribute `p_unknown`). A match
is an exhaustive search over a discretized window around an initial guess,
keeping the score semantics of the branch-and-bound matcher it stands in
for, and is accepted when the best score reaches `min_score` (0.5 by
default). Ties break toward the smallest displacement, then the smallest
rotation, so results are deterministic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import ContractError, LifecycleError, NotInitializedError
from .geometry import Pose2, between, rot2
from .grid import OccupancyGrid
from .pose_graph import SubmapId

if TYPE_CHECKING:
    from .mapping import Scan, Submap

logger = logging.getLogger(__name__)

DEFAULT_MIN_SCORE = 0.5
DEFAULT_P_UNKNOWN = 0.2


@dataclass
class SearchWindow:
    """Half-extents and steps of the correlative search grid.

    Steps default to the grid resolution (linear) and to the angle that
    moves the farthest scan point by one cell (angular).
    """

    linear_extent: float = 0.5
    angular_extent: float = 0.35
    linear_step: float | None = None
    angular_step: float | None = None

    def resolve(self, grid: OccupancyGrid, scan: "Scan") -> tuple[float, float]:
        if self.linear_extent < 0 or self.angular_extent < 0:
            raise ContractError("search window extents must be >= 0")
        lin = self.linear_step if self.linear_step is not None else grid.resolution
        ang = self.angular_step
        if ang is None:
            pts = scan.hit_points()
            dmax = float(np.max(np.linalg.norm(pts, axis=1))) if len(pts) else 0.0
            if dmax > grid.resolution:
                ang = math.acos(1.0 - grid.resolution**2 / (2.0 * dmax**2))
            else:
                ang = max(self.angular_extent, 0.01)
        if lin <= 0 or ang <= 0:
            raise ContractError("search window steps must be > 0")
        return lin, ang


@dataclass
class MatchResult:
    relative_pose: Pose2  # pose of the scan (node) in the submap frame
    score: float
    accepted: bool


def score(
    scan: "Scan",
    grid: OccupancyGrid,
    pose: Pose2,
    p_unknown: float = DEFAULT_P_UNKNOWN,
) -> float:
    """Mean endpoint occupancy probability of the scan placed at `pose`."""
    pts = scan.hit_points()
    if len(pts) == 0:
        logger.debug("scoring an empty scan: score 0")
        return 0.0
    world = pts @ rot2(pose.theta).T + np.array([pose.x, pose.y])
    return float(np.mean(grid.probabilities_at(world, p_unknown)))


def _offsets(extent: float, step: float) -> np.ndarray:
    k = int(math.floor(extent / step + 1e-9))
    return np.arange(-k, k + 1, dtype=np.float64) * step


def search(
    scan: "Scan",
    grid: OccupancyGrid,
    initial_guess: Pose2,
    window: SearchWindow | None = None,
    p_unknown: float = DEFAULT_P_UNKNOWN,
) -> tuple[Pose2, float]:
    """Exhaustive correlative search; returns the best pose and its score.

    The candidate set always contains the initial guess, so the returned
    score is never below the score of the guess.
    """
    window = window or SearchWindow()
    lin_step, ang_step = window.resolve(grid, scan)
    pts = scan.hit_points()
    if len(pts) == 0:
        logger.debug("matching an empty scan: returning the initial guess")
        return initial_guess, 0.0

    lin = _offsets(window.linear_extent, lin_step)
    ang = _offsets(window.angular_extent, ang_step)
    dxy = np.stack(np.meshgrid(lin, lin, indexing="ij"), axis=-1).reshape(-1, 2)
    # preference order for ties: small displacement, then small |rotation|
    t_order = np.lexsort((dxy[:, 1], dxy[:, 0], np.einsum("ij,ij->i", dxy, dxy)))
    dxy = dxy[t_order]
    a_order = np.lexsort((ang, np.abs(ang)))
    ang = ang[a_order]

    base = np.array([initial_guess.x, initial_guess.y])
    best_score = -1.0
    best_pose = initial_guess
    for dth in ang:
        theta = initial_guess.theta + dth
        rotated = pts @ rot2(theta).T
        candidates = rotated[None, :, :] + (base + dxy)[:, None, :]
        probs = grid.probabilities_at(candidates.reshape(-1, 2), p_unknown)
        scores = probs.reshape(len(dxy), len(pts)).mean(axis=1)
        k = int(np.argmax(scores))
        if scores[k] > best_score:
            best_score = float(scores[k])
            best_pose = Pose2(base[0] + dxy[k, 0], base[1] + dxy[k, 1], theta)
    return best_pose, best_score


def match(
    scan: "Scan",
    submap: "Submap",
    initial_guess: Pose2,
    window: SearchWindow | None = None,
    min_score: float = DEFAULT_MIN_SCORE,
    p_unknown: float = DEFAULT_P_UNKNOWN,
) -> MatchResult:
    """Match a scan against a finished submap around `initial_guess`
    (the guess is the node pose in the submap frame)."""
    from .mapping import SubmapState

    if submap.state is not SubmapState.FINISHED:
        raise LifecycleError(
            f"global matching needs a FINISHED submap, {submap.id} is {submap.state.name}"
        )
    pose, best = search(scan, submap.grid, initial_guess, window, p_unknown)
    return MatchResult(pose, best, best >= min_score)


def match_information(score_value: float, lin_step: float, ang_step: float) -> np.ndarray:
    """Diagonal constraint information for an accepted match.

    Standard deviations shrink as the score grows: sigma_t = step/score,
    sigma_theta = angular step/score.
    """
    if score_value <= 0:
        raise ContractError("match information requires a positive score")
    st = lin_step / score_value
    sa = ang_step / score_value
    return np.diag([1.0 / st**2, 1.0 / st**2, 1.0 / sa**2])


def _submap_bbox(submap: "Submap") -> tuple[float, float, float, float]:
    grid = submap.grid
    w = grid.width * grid.resolution
    h = grid.height * grid.resolution
    corners_local = np.array([[0.0, 0.0], [w, 0.0], [0.0, h], [w, h]])
    from .geometry import apply_pose, compose

    corners = apply_pose(compose(submap.pose, grid.origin), corners_local)
    return (
        float(corners[:, 0].min()),
        float(corners[:, 0].max()),
        float(corners[:, 1].min()),
        float(corners[:, 1].max()),
    )


def candidate_submaps(
    submaps: Iterable["Submap"], estimate: Pose2, inflation: float
) -> list["Submap"]:
    """Finished submaps whose inflated bounding box contains the estimate."""
    from .mapping import SubmapState

    out = []
    for submap in submaps:
        if submap.state is not SubmapState.FINISHED:
            continue
        x0, x1, y0, y1 = _submap_bbox(submap)
        if (
            x0 - inflation <= estimate.x <= x1 + inflation
            and y0 - inflation <= estimate.y <= y1 + inflation
        ):
            out.append(submap)
    out.sort(key=lambda s: (s.id.session, s.id.index))
    return out


def global_localize(
    scan: "Scan",
    submaps: Sequence["Submap"],
    initial_estimate: Pose2,
    coarse_window: SearchWindow | None = None,
    min_score: float = DEFAULT_MIN_SCORE,
    p_unknown: float = DEFAULT_P_UNKNOWN,
) -> tuple[MatchResult, SubmapId]:
    """Match a scan against the stored map near an initial pose estimate.

    Returns the best-scoring result over the candidate submaps; the caller
    decides on `accepted`. Raises NotInitializedError when there is no
    finished submap at all.
    """
    from .mapping import SubmapState

    coarse_window = coarse_window or SearchWindow(linear_extent=1.0, angular_extent=0.5)
    finished = [s for s in submaps if s.state is SubmapState.FINISHED]
    if not finished:
        raise NotInitializedError("no finished submaps to localize against")
    candidates = candidate_submaps(finished, initial_estimate, coarse_window.linear_extent)
    if not candidates:
        # estimate is off the stored map: fall back to the nearest submap
        candidates = [
            min(
                finished,
                key=lambda s: (
                    (s.pose.x - initial_estimate.x) ** 2
                    + (s.pose.y - initial_estimate.y) ** 2,
                    s.id.session,
                    s.id.index,
                ),
            )
        ]
    best: MatchResult | None = None
    best_id: SubmapId | None = None
    for submap in candidates:
        guess = between(submap.pose, initial_estimate)
        result = match(scan, submap, guess, coarse_window, min_score, p_unknown)
        if best is None or result.score > best.score:
            best = result
            best_id = submap.id
    assert best is not None and best_id is not None
    return best, best_id
