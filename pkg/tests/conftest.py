"""Shared test helpers: random poses, SPD information matrices, and
synthetic multi-session loop graphs built directly (no simulator)."""

from __future__ import annotations

import math

import numpy as np
import pytest

from lifelong_slam.geometry import Pose2, between, compose
from lifelong_slam.grid import OccupancyGrid
from lifelong_slam.mapping import Submap, SubmapState
from lifelong_slam.pose_graph import (
    Constraint,
    ConstraintKind,
    Node,
    NodeId,
    PoseGraph,
    Prior,
    SubmapId,
)


def random_pose(rng, scale=3.0, angle=math.pi):
    return Pose2(
        rng.uniform(-scale, scale),
        rng.uniform(-scale, scale),
        rng.uniform(-angle, angle),
    )


def random_information(rng, dim=3, scale=5.0):
    a = rng.normal(size=(dim, dim))
    m = a @ a.T + np.eye(dim)
    return m * scale / dim


def perturbed(pose, rng, sigma_t=0.02, sigma_r=0.01):
    return Pose2(
        pose.x + rng.normal(0, sigma_t),
        pose.y + rng.normal(0, sigma_t),
        pose.theta + rng.normal(0, sigma_r),
    )


def rectangle_truth_poses(width=8.0, height=5.0, step=0.4, laps=1):
    """Ground-truth poses around a rectangle, heading along travel."""
    corners = [(0.0, 0.0), (width, 0.0), (width, height), (0.0, height)]
    poses = []
    for _ in range(laps):
        for i in range(4):
            a = np.array(corners[i])
            b = np.array(corners[(i + 1) % 4])
            seg = b - a
            heading = math.atan2(seg[1], seg[0])
            n = int(np.linalg.norm(seg) / step)
            for k in range(n):
                p = a + seg * (k / n)
                poses.append(Pose2(p[0], p[1], heading))
    return poses


def build_loop_graph(
    rng,
    sessions=1,
    laps_per_session=1,
    nodes_per_submap=10,
    step=0.4,
    odom_sigma=0.01,
    closure_radius=1.5,
    closure_stride=3,
    perturb_initial=True,
):
    """Multi-session rectangle-loop pose graph with known ground truth.

    Constraints: odometry chain, intra node-to-submap links, and
    node-to-submap closures against earlier sessions' submaps. Returns
    (graph, truth) where truth maps variable id -> ground-truth pose.
    """
    graph = PoseGraph()
    truth = {}
    odom_info = np.diag([1e4, 1e4, 4e4])
    intra_info = np.diag([2500.0, 2500.0, 1e4])
    closure_info = np.diag([400.0, 400.0, 1600.0])

    for session in range(sessions):
        graph.start_session()
        route = rectangle_truth_poses(step=step, laps=laps_per_session)
        prev = None
        submap = None
        for i, pose in enumerate(route):
            if i % nodes_per_submap == 0:
                submap = Submap(
                    id=SubmapId(session, i // nodes_per_submap),
                    pose=pose,
                    grid=OccupancyGrid(),
                    state=SubmapState.FINISHED,
                )
                graph.add_submap(submap)
                truth[submap.id] = pose
            nid = NodeId(session, i)
            graph.add_node(Node(nid, pose, None, float(i), submap.id))
            truth[nid] = pose

            z_intra = between(truth[submap.id], pose)
            graph.add_constraint(
                Constraint(ConstraintKind.NODE_TO_SUBMAP, nid, submap.id, z_intra, intra_info)
            )
            if prev is not None:
                z = perturbed(between(truth[prev], pose), rng, odom_sigma, odom_sigma)
                graph.add_constraint(
                    Constraint(ConstraintKind.ODOMETRY, nid, prev, z, odom_info)
                )
            if i % closure_stride == 0:
                for sid, spose in list(truth.items()):
                    if not isinstance(sid, SubmapId) or sid.session >= session:
                        continue
                    if (spose.x - pose.x) ** 2 + (spose.y - pose.y) ** 2 > closure_radius**2:
                        continue
                    z = perturbed(between(spose, pose), rng, odom_sigma, odom_sigma)
                    graph.add_constraint(
                        Constraint(ConstraintKind.NODE_TO_SUBMAP, nid, sid, z, closure_info),
                        replace=True,
                    )
            prev = nid

    anchor_node = NodeId(0, 0)
    anchor_map = SubmapId(0, 0)
    graph.add_prior(Prior(anchor_node, truth[anchor_node], 1e4 * np.eye(3)))
    graph.add_prior(Prior(anchor_map, truth[anchor_map], 1e4 * np.eye(3)))

    if perturb_initial:
        drift = Pose2.identity()
        for session in range(sessions):
            ids = sorted(
                (n for n in graph.nodes if n.session == session), key=lambda n: n.index
            )
            drift = Pose2.identity()
            for nid in ids:
                drift = Pose2(
                    drift.x + rng.normal(0, 0.01),
                    drift.y + rng.normal(0, 0.01),
                    drift.theta + rng.normal(0, 0.004),
                )
                graph.set_pose(nid, compose(truth[nid], drift))
            for sid in (s for s in graph.submaps if s.session == session):
                graph.set_pose(sid, compose(truth[sid], drift))
    return graph, truth


@pytest.fixture
def rng():
    return np.random.default_rng(0xA11CE)
