"""Pose-graph serialization.

`graph.txt` is a versioned line-oriented text format, one record per line:

    # lifelong-slam graph v1
    SESSIONS <session_counter>
    SUBMAP <s> <i> <x> <y> <theta> <STATE> <trimmable> <scan_count> <finish_seq>
    NODE <s> <i> <x> <y> <theta> <timestamp> <submap_s> <submap_i>
    CONSTRAINT <KIND> <from_s> <from_i> <to_s> <to_i> <zx> <zy> <ztheta> <i00> <i01> <i02> <i11> <i12> <i22>
    PRIOR <NODE|SUBMAP> <s> <i> <x> <y> <theta> <i00> <i01> <i02> <i11> <i12> <i22>

Nodes carry `-1 -1` when they have no submap membership. Floats use repr
so save/load roundtrips are exact. A checkpoint directory holds `graph.txt`
plus `arrays.npz` with each submap's grid (log-odds, known mask, origin,
resolution) and each node's scan.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import LogParseError
from .geometry import Pose2
from .grid import OccupancyGrid
from .mapping import Scan, Submap, SubmapState
from .pose_graph import (
    Constraint,
    ConstraintKind,
    Node,
    NodeId,
    PoseGraph,
    Prior,
    SubmapId,
)

GRAPH_HEADER = "# lifelong-slam graph v1"


def _info_to_fields(info: np.ndarray) -> str:
    m = np.asarray(info)
    vals = (m[0, 0], m[0, 1], m[0, 2], m[1, 1], m[1, 2], m[2, 2])
    return " ".join(repr(float(v)) for v in vals)


def _info_from_fields(fields: list[str]) -> np.ndarray:
    a, b, c, d, e, f = (float(v) for v in fields)
    return np.array([[a, b, c], [b, d, e], [c, e, f]])


def save_graph(graph: PoseGraph, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(GRAPH_HEADER + "\n")
        fh.write(f"SESSIONS {graph.session_counter}\n")
        for sid in sorted(graph.submaps):
            s = graph.submaps[sid]
            fh.write(
                f"SUBMAP {sid.session} {sid.index} {s.pose.x!r} {s.pose.y!r} "
                f"{s.pose.theta!r} {s.state.name} {int(s.trimmable)} {s.scan_count} "
                f"{s.finish_seq}\n"
            )
        for nid in sorted(graph.nodes):
            n = graph.nodes[nid]
            ms, mi = (-1, -1) if n.submap_id is None else (n.submap_id.session, n.submap_id.index)
            fh.write(
                f"NODE {nid.session} {nid.index} {n.pose.x!r} {n.pose.y!r} "
                f"{n.pose.theta!r} {n.timestamp!r} {ms} {mi}\n"
            )
        for cid in sorted(graph.constraints):
            c = graph.constraints[cid]
            fh.write(
                f"CONSTRAINT {c.kind.value} {c.from_id.session} {c.from_id.index} "
                f"{c.to_id.session} {c.to_id.index} {c.z.x!r} {c.z.y!r} {c.z.theta!r} "
                f"{_info_to_fields(c.info)}\n"
            )
        for p in graph.priors:
            tag = "NODE" if isinstance(p.target, NodeId) else "SUBMAP"
            fh.write(
                f"PRIOR {tag} {p.target.session} {p.target.index} {p.pose.x!r} "
                f"{p.pose.y!r} {p.pose.theta!r} {_info_to_fields(p.info)}\n"
            )


def load_graph(
    path: str,
    grids: dict[SubmapId, OccupancyGrid] | None = None,
    scans: dict[NodeId, Scan] | None = None,
) -> PoseGraph:
    graph = PoseGraph()
    grids = grids or {}
    scans = scans or {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            try:
                if tag == "SESSIONS":
                    graph.session_counter = int(parts[1])
                elif tag == "SUBMAP":
                    sid = SubmapId(int(parts[1]), int(parts[2]))
                    pose = Pose2(float(parts[3]), float(parts[4]), float(parts[5]))
                    submap = Submap(
                        id=sid,
                        pose=pose,
                        grid=grids.get(sid, OccupancyGrid()),
                        scan_count=int(parts[8]),
                        state=SubmapState[parts[6]],
                        trimmable=bool(int(parts[7])),
                        finish_seq=int(parts[9]),
                    )
                    graph.add_submap(submap)
                elif tag == "NODE":
                    nid = NodeId(int(parts[1]), int(parts[2]))
                    pose = Pose2(float(parts[3]), float(parts[4]), float(parts[5]))
                    ms, mi = int(parts[7]), int(parts[8])
                    submap_id = None if ms < 0 else SubmapId(ms, mi)
                    graph.add_node(
                        Node(nid, pose, scans.get(nid), float(parts[6]), submap_id)
                    )
                elif tag == "CONSTRAINT":
                    kind = ConstraintKind(parts[1])
                    fs, fi, ts_, ti = (int(v) for v in parts[2:6])
                    from_id = (
                        NodeId(fs, fi)
                        if kind is not ConstraintKind.SUBMAP_TO_SUBMAP
                        else SubmapId(fs, fi)
                    )
                    to_id = (
                        SubmapId(ts_, ti)
                        if kind in (ConstraintKind.NODE_TO_SUBMAP, ConstraintKind.SUBMAP_TO_SUBMAP)
                        else NodeId(ts_, ti)
                    )
                    z = Pose2(float(parts[6]), float(parts[7]), float(parts[8]))
                    graph.add_constraint(
                        Constraint(kind, from_id, to_id, z, _info_from_fields(parts[9:15]))
                    )
                elif tag == "PRIOR":
                    cls = NodeId if parts[1] == "NODE" else SubmapId
                    target = cls(int(parts[2]), int(parts[3]))
                    pose = Pose2(float(parts[4]), float(parts[5]), float(parts[6]))
                    graph.add_prior(Prior(target, pose, _info_from_fields(parts[7:13])))
                else:
                    raise ValueError(f"unknown record tag '{tag}'")
            except (ValueError, IndexError) as exc:
                raise LogParseError(str(exc), lineno) from exc
    return graph


# ---------------------------------------------------------------------------
# checkpoints (graph + grids + scans)


def save_checkpoint(graph: PoseGraph, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    save_graph(graph, os.path.join(directory, "graph.txt"))
    arrays: dict[str, np.ndarray] = {}
    for sid, submap in graph.submaps.items():
        key = f"grid_{sid.session}_{sid.index}"
        arrays[key + "_logodds"] = submap.grid.log_odds
        arrays[key + "_known"] = submap.grid.known
        arrays[key + "_meta"] = np.array(
            [
                submap.grid.resolution,
                submap.grid.origin.x,
                submap.grid.origin.y,
                submap.grid.origin.theta,
            ]
        )
    for nid, node in graph.nodes.items():
        if node.scan is None:
            continue
        key = f"scan_{nid.session}_{nid.index}"
        arrays[key + "_points"] = node.scan.points
        arrays[key + "_hits"] = node.scan.hit_mask
        arrays[key + "_meta"] = np.array([node.scan.timestamp, node.scan.max_range])
    np.savez_compressed(os.path.join(directory, "arrays.npz"), **arrays)


def load_checkpoint(directory: str) -> PoseGraph:
    grids: dict[SubmapId, OccupancyGrid] = {}
    scans: dict[NodeId, Scan] = {}
    npz_path = os.path.join(directory, "arrays.npz")
    if os.path.exists(npz_path):
        with np.load(npz_path) as data:
            keys = set(data.files)
            for key in keys:
                if key.startswith("grid_") and key.endswith("_meta"):
                    _, s, i, _ = key.split("_")
                    meta = data[key]
                    grid = OccupancyGrid(float(meta[0]), Pose2(meta[1], meta[2], meta[3]))
                    grid.log_odds = data[f"grid_{s}_{i}_logodds"].copy()
                    grid.known = data[f"grid_{s}_{i}_known"].copy()
                    grids[SubmapId(int(s), int(i))] = grid
                elif key.startswith("scan_") and key.endswith("_meta"):
                    _, s, i, _ = key.split("_")
                    meta = data[key]
                    scans[NodeId(int(s), int(i))] = Scan(
                        data[f"scan_{s}_{i}_points"].copy(),
                        timestamp=float(meta[0]),
                        max_range=float(meta[1]),
                        hit_mask=data[f"scan_{s}_{i}_hits"].copy(),
                    )
    return load_graph(os.path.join(directory, "graph.txt"), grids, scans)
