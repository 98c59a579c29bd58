"""Occupancy probability grids with lazy growth, plus PGM import/export.

Cells are indexed as cells[iy, ix]; cell (ix, iy) covers the square
[ix*res, (ix+1)*res) x [iy*res, (iy+1)*res) in the grid origin frame.
Updates are log-odds additions clamped to [P_MIN, P_MAX]; unknown cells are
tracked with an explicit mask and excluded from matching scores.

The PGM export is a binary P5 graymap with maxval 255: 255 = free,
0 = occupied, 128 = unknown (thresholds: occupied when p >= 0.65, free when
p <= 0.30). Image row 0 is the highest y row. A sidecar text file
`<name>.meta` records resolution and origin.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .errors import ContractError
from .geometry import Pose2, apply_pose, rot2

P_MIN = 0.12
P_MAX = 0.97
P_HIT = 0.55
P_MISS = 0.49

OCCUPIED_THRESHOLD = 0.65
FREE_THRESHOLD = 0.30


def log_odds(p: float) -> float:
    return math.log(p / (1.0 - p))

L_MIN = log_odds(P_MIN)
L_MAX = log_odds(P_MAX)
L_HIT = log_odds(P_HIT)
L_MISS = log_odds(P_MISS)


def prob_from_log_odds(l: np.ndarray) -> np.ndarray:
    return 1.0 - 1.0 / (1.0 + np.exp(l))


class OccupancyGrid:
    """Dynamically growing 2D occupancy grid."""

    def __init__(self, resolution: float = 0.05, origin: Pose2 | None = None):
        if resolution <= 0:
            raise ContractError("resolution must be positive")
        self.resolution = float(resolution)
        self.origin = origin if origin is not None else Pose2.identity()
        self.log_odds = np.zeros((0, 0), dtype=np.float64)
        self.known = np.zeros((0, 0), dtype=bool)

    @property
    def height(self) -> int:
        return self.log_odds.shape[0]

    @property
    def width(self) -> int:
        return self.log_odds.shape[1]

    @property
    def known_cell_count(self) -> int:
        return int(self.known.sum())

    # -- coordinate transforms ------------------------------------------------

    def to_grid_frame(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        delta = pts - np.array([self.origin.x, self.origin.y])
        return delta @ rot2(self.origin.theta)  # R^T applied to rows

    def cell_indices(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cell (ix, iy) containing each point (frame of the grid's parent)."""
        local = self.to_grid_frame(points)
        ix = np.floor(local[:, 0] / self.resolution).astype(np.int64)
        iy = np.floor(local[:, 1] / self.resolution).astype(np.int64)
        return ix, iy

    def cell_centers(self, ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
        local = np.stack(
            [(ix + 0.5) * self.resolution, (iy + 0.5) * self.resolution], axis=1
        )
        return apply_pose(self.origin, local)

    def known_cells(self) -> tuple[np.ndarray, np.ndarray]:
        iy, ix = np.nonzero(self.known)
        return ix, iy

    # -- growth ----------------------------------------------------------------

    def _grow_to(self, ix: np.ndarray, iy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Expand storage to contain the cells; returns shifted indices."""
        if ix.size == 0:
            return ix, iy
        min_x, max_x = int(ix.min()), int(ix.max())
        min_y, max_y = int(iy.min()), int(iy.max())
        shift_x = -min_x if min_x < 0 else 0
        shift_y = -min_y if min_y < 0 else 0
        new_w = max(self.width + shift_x, max_x + shift_x + 1)
        new_h = max(self.height + shift_y, max_y + shift_y + 1)
        if shift_x or shift_y or new_w > self.width or new_h > self.height:
            lo = np.zeros((new_h, new_w), dtype=np.float64)
            kn = np.zeros((new_h, new_w), dtype=bool)
            lo[shift_y : shift_y + self.height, shift_x : shift_x + self.width] = self.log_odds
            kn[shift_y : shift_y + self.height, shift_x : shift_x + self.width] = self.known
            self.log_odds = lo
            self.known = kn
            if shift_x or shift_y:
                corner = apply_pose(
                    self.origin,
                    np.array([[-shift_x * self.resolution, -shift_y * self.resolution]]),
                )[0]
                self.origin = Pose2(corner[0], corner[1], self.origin.theta)
        return ix + shift_x, iy + shift_y

    # -- updates ---------------------------------------------------------------

    def apply_updates(self, miss_ix, miss_iy, hit_ix, hit_iy) -> None:
        """One scan's worth of log-odds updates (each cell at most once)."""
        all_ix = np.concatenate([miss_ix, hit_ix])
        all_iy = np.concatenate([miss_iy, hit_iy])
        all_ix, all_iy = self._grow_to(all_ix, all_iy)
        n_miss = len(miss_ix)
        mix, miy = all_ix[:n_miss], all_iy[:n_miss]
        hix, hiy = all_ix[n_miss:], all_iy[n_miss:]
        self.log_odds[miy, mix] = np.clip(self.log_odds[miy, mix] + L_MISS, L_MIN, L_MAX)
        self.known[miy, mix] = True
        self.log_odds[hiy, hix] = np.clip(self.log_odds[hiy, hix] + L_HIT, L_MIN, L_MAX)
        self.known[hiy, hix] = True

    # -- queries ---------------------------------------------------------------

    def probabilities_at(self, points: np.ndarray, unknown_value: float) -> np.ndarray:
        """Occupancy probability at each point; unknown/outside cells get
        `unknown_value`."""
        ix, iy = self.cell_indices(points)
        out = np.full(ix.shape, unknown_value, dtype=np.float64)
        inside = (ix >= 0) & (ix < self.width) & (iy >= 0) & (iy < self.height)
        if np.any(inside):
            sel_ix, sel_iy = ix[inside], iy[inside]
            vals = np.where(
                self.known[sel_iy, sel_ix],
                prob_from_log_odds(self.log_odds[sel_iy, sel_ix]),
                unknown_value,
            )
            out[inside] = vals
        return out

    def probability_array(self) -> np.ndarray:
        """(H, W) probabilities with NaN marking unknown cells."""
        p = prob_from_log_odds(self.log_odds)
        p[~self.known] = np.nan
        return p


# ---------------------------------------------------------------------------
# PGM I/O


def write_pgm(grid: OccupancyGrid, path: str) -> None:
    p = grid.probability_array()
    img = np.full(p.shape, 128, dtype=np.uint8)
    with np.errstate(invalid="ignore"):
        img[p >= OCCUPIED_THRESHOLD] = 0
        img[p <= FREE_THRESHOLD] = 255
    img = np.flipud(img)
    with open(path, "wb") as fh:
        fh.write(b"P5\n")
        fh.write(f"{grid.width} {grid.height}\n255\n".encode())
        fh.write(img.tobytes())
    with open(path + ".meta", "w") as fh:
        fh.write(f"resolution {grid.resolution!r}\n")
        fh.write(f"origin_x {grid.origin.x!r}\n")
        fh.write(f"origin_y {grid.origin.y!r}\n")
        fh.write(f"origin_theta {grid.origin.theta!r}\n")


def read_pgm(path: str) -> OccupancyGrid:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ContractError(f"{path}: expected binary PGM (P5)")
        line = fh.readline()
        while line.startswith(b"#"):
            line = fh.readline()
        width, height = (int(t) for t in line.split())
        maxval = int(fh.readline())
        if maxval != 255:
            raise ContractError(f"{path}: expected maxval 255")
        data = np.frombuffer(fh.read(width * height), dtype=np.uint8)
    img = np.flipud(data.reshape(height, width)).copy()

    meta = {}
    meta_path = path + ".meta"
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            for raw in fh:
                parts = raw.split()
                if len(parts) == 2:
                    meta[parts[0]] = float(parts[1])
    grid = OccupancyGrid(
        resolution=meta.get("resolution", 0.05),
        origin=Pose2(
            meta.get("origin_x", 0.0),
            meta.get("origin_y", 0.0),
            meta.get("origin_theta", 0.0),
        ),
    )
    grid.log_odds = np.zeros((height, width), dtype=np.float64)
    grid.known = np.zeros((height, width), dtype=bool)
    occupied = img <= 100
    free = img >= 200
    grid.log_odds[occupied] = L_MAX
    grid.log_odds[free] = L_MIN
    grid.known = occupied | free
    return grid
