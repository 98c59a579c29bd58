"""Multi-session orchestration: session-0 mapping, localization sessions
with LLO + GLM, and per-finished-submap map updating (trim, sparsify,
scheduled optimization).

Fresh submaps always enter the graph; stale submaps are trimmed when their
overlap ratio passes the threshold and are then sparsified away. Graph
optimization runs every k-th sparsification and once at session end. Global
matching (GLM) targets finished submaps of earlier sessions only -- the
stored map -- while the local matcher (LLO) keeps the within-session
estimate consistent.
"""

from __future__ import annotations

import copy
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import matcher
from .config import PipelineConfig
from .errors import ContractError, LifelongSlamError
from .geometry import Pose2, between, compose
from .graph_io import save_checkpoint
from .logio import GROUND_TRUTH, LASER, ODOMETRY, SensorRecord
from .mapping import (
    CoverageIndex,
    LloConfig,
    LocalOdometry,
    SubmapState,
    mark_trimmed,
    render_global_map,
    select_trim_candidates,
)
from .metrics import ams, write_trajectory
from .optimizer import optimize
from .pose_graph import (
    Constraint,
    ConstraintKind,
    Node,
    NodeId,
    PoseGraph,
    Prior,
    SubmapId,
)
from .simulator import Scenario, scan_from_ranges, session_records
from .sparsifier import sparsify_submap
from .grid import write_pgm

logger = logging.getLogger(__name__)

ANCHOR_INFO = 1e4  # prior weight on the session-0 anchors


@dataclass
class SessionResult:
    session: int
    trajectory: np.ndarray  # rows (timestamp, x, y, theta)
    initialization_success: bool
    initialization_score: float | None
    match_scores: list[float]
    complexity: list[tuple[int, int, int, int]]
    checkpoint: str | None = None


@dataclass
class UpdateState:
    """Counters shared by all map-update events of a run."""

    sparsifications: int = 0
    events: int = 0
    snapshots: list[tuple[int, int, int, int]] = field(default_factory=list)


def map_update_event(
    graph: PoseGraph,
    coverage: CoverageIndex,
    fresh_submap,
    config: PipelineConfig,
    state: UpdateState,
    debug_dir: str | None = None,
) -> dict:
    """Register a freshly finished submap, trim and sparsify stale submaps,
    and run the scheduled optimization. All-or-nothing: on error the graph
    and coverage index are restored and the error re-raised."""
    backup = copy.deepcopy((graph.__dict__, coverage.__dict__))
    try:
        coverage.add(fresh_submap)
        trimmed: list[SubmapId] = []
        optimized = 0
        if not config.freeze_map:
            candidates = select_trim_candidates(
                graph, coverage, config.overlap_threshold, config.fresh_cover_count
            )
            for sid in candidates:
                mark_trimmed(graph.submaps[sid])
                sparsify_submap(graph, sid, debug_dir)
                coverage.remove(sid)
                trimmed.append(sid)
                state.sparsifications += 1
                if state.sparsifications % config.optimize_every_k_sparsifications == 0:
                    optimize(graph, config.optimizer)
                    coverage.refresh(graph.submaps.values())
                    optimized += 1
        state.events += 1
        report = graph.complexity_report()
        snapshot = (state.events, *report.as_tuple())
        state.snapshots.append(snapshot)
        return {"trimmed": trimmed, "optimizations": optimized, "snapshot": snapshot}
    except LifelongSlamError:
        graph_dict, coverage_dict = backup
        graph.__dict__.clear()
        graph.__dict__.update(graph_dict)
        coverage.__dict__.clear()
        coverage.__dict__.update(coverage_dict)
        raise


def _odometry_info(config: PipelineConfig, delta: Pose2) -> np.ndarray:
    d = float(np.hypot(delta.x, delta.y))
    st = max(config.odom_sigma_floor_xy, config.odom_translation_frac * d)
    sr = max(config.odom_sigma_floor_theta, config.odom_rotation_rad_per_meter * d)
    return np.diag([1.0 / st**2, 1.0 / st**2, 1.0 / sr**2])


def _intra_info(config: PipelineConfig) -> np.ndarray:
    return np.diag(
        [
            1.0 / config.intra_sigma_xy**2,
            1.0 / config.intra_sigma_xy**2,
            1.0 / config.intra_sigma_theta**2,
        ]
    )


def _glm_targets(graph: PoseGraph, session: int, pose: Pose2, config: PipelineConfig):
    """Finished submaps of earlier sessions near the pose, nearest first."""
    stored = [
        s
        for s in graph.submaps.values()
        if s.state is SubmapState.FINISHED and s.id.session < session
    ]
    near = matcher.candidate_submaps(stored, pose, config.glm_window.linear_extent)
    near.sort(key=lambda s: ((s.pose.x - pose.x) ** 2 + (s.pose.y - pose.y) ** 2, s.id))
    return near[: config.glm_max_targets]


def _run_session(
    graph: PoseGraph,
    coverage: CoverageIndex,
    records: list[SensorRecord],
    config: PipelineConfig,
    session: int,
    start_pose: Pose2,
    state: UpdateState,
    is_mapping: bool,
    debug_dir: str | None = None,
) -> SessionResult:
    llo = LocalOdometry(
        session,
        LloConfig(
            scans_per_submap=config.scans_per_submap,
            grid_resolution=config.grid_resolution,
            window=config.llo_window,
            min_refine_score=config.llo_min_refine_score,
            p_unknown=config.p_unknown,
        ),
        start_pose,
    )
    pending = Pose2.identity()
    node_index = 0
    prev_node: NodeId | None = None
    scores: list[float] = []
    trajectory: dict[int, list[float]] = {}
    snapshots_before = len(state.snapshots)

    for rec in records:
        if rec.kind == ODOMETRY:
            pending = compose(pending, rec.payload)
            continue
        if rec.kind != LASER:
            continue
        scan = scan_from_ranges(rec.payload, config.lidar, rec.timestamp)
        odom_delta = pending
        pending = Pose2.identity()
        step = llo.step(scan, odom_delta)

        for submap in step.created:
            if session == 0 and config.protect_session0:
                submap.trimmable = False
            graph.add_submap(submap)
        nid = NodeId(session, node_index)
        node_index += 1
        graph.add_node(Node(nid, step.pose, scan, rec.timestamp, step.membership))
        trajectory[nid.index] = [rec.timestamp, step.pose.x, step.pose.y, step.pose.theta]

        if is_mapping and nid.index == 0:
            graph.add_prior(Prior(nid, step.pose, ANCHOR_INFO * np.eye(3)))
            graph.add_prior(Prior(step.membership, graph.submaps[step.membership].pose,
                                  ANCHOR_INFO * np.eye(3)))

        for sid, rel in step.insertions:
            graph.add_constraint(
                Constraint(ConstraintKind.NODE_TO_SUBMAP, nid, sid, rel, _intra_info(config)),
                replace=True,
            )
        if prev_node is not None:
            graph.add_constraint(
                Constraint(
                    ConstraintKind.ODOMETRY,
                    nid,
                    prev_node,
                    odom_delta,
                    _odometry_info(config, odom_delta),
                )
            )
        prev_node = nid

        if (nid.index % config.glm_node_stride) == 0:
            for target in _glm_targets(graph, session, step.pose, config):
                guess = between(target.pose, step.pose)
                result = matcher.match(
                    scan, target, guess, config.glm_window,
                    config.min_match_score, config.p_unknown,
                )
                scores.append(result.score)
                if result.accepted:
                    lin_step, ang_step = config.glm_window.resolve(target.grid, scan)
                    graph.add_constraint(
                        Constraint(
                            ConstraintKind.NODE_TO_SUBMAP,
                            nid,
                            target.id,
                            result.relative_pose,
                            matcher.match_information(result.score, lin_step, ang_step),
                        ),
                        replace=True,
                    )

        for finished in step.finished:
            map_update_event(graph, coverage, finished, config, state, debug_dir)

    if node_index == 0:
        raise ContractError("sensor stream contains no laser scans")

    for finished in llo.end_session():
        map_update_event(graph, coverage, finished, config, state, debug_dir)

    if config.final_optimize:
        optimize(graph, config.optimizer)
        coverage.refresh(graph.submaps.values())

    for idx, row in trajectory.items():
        nid = NodeId(session, idx)
        if nid in graph.nodes:
            pose = graph.nodes[nid].pose
            row[1], row[2], row[3] = pose.x, pose.y, pose.theta
    traj = np.array([trajectory[i] for i in sorted(trajectory)], dtype=np.float64)

    return SessionResult(
        session=session,
        trajectory=traj,
        initialization_success=True,
        initialization_score=None,
        match_scores=scores,
        complexity=state.snapshots[snapshots_before:],
    )


def run_mapping_session(
    records: list[SensorRecord],
    config: PipelineConfig,
    state: UpdateState | None = None,
    debug_dir: str | None = None,
) -> tuple[PoseGraph, CoverageIndex, SessionResult]:
    """Session 0: build the initial map from an empty graph."""
    config.validate()
    records = list(records)
    if not any(r.kind == LASER for r in records):
        raise ContractError("sensor stream contains no laser scans")
    graph = PoseGraph()
    coverage = CoverageIndex(config.grid_resolution)
    session = graph.start_session()
    start = next((r.payload for r in records if r.kind == GROUND_TRUTH), Pose2.identity())
    state = state or UpdateState()
    result = _run_session(
        graph, coverage, records, config, session, start, state, is_mapping=True,
        debug_dir=debug_dir,
    )
    return graph, coverage, result


def _odometry_only_trajectory(records: list[SensorRecord], start: Pose2) -> np.ndarray:
    rows = []
    pose = start
    pending = Pose2.identity()
    for rec in records:
        if rec.kind == ODOMETRY:
            pending = compose(pending, rec.payload)
        elif rec.kind == LASER:
            pose = compose(pose, pending)
            pending = Pose2.identity()
            rows.append([rec.timestamp, pose.x, pose.y, pose.theta])
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def run_localization_session(
    records: list[SensorRecord],
    graph: PoseGraph,
    coverage: CoverageIndex,
    config: PipelineConfig,
    state: UpdateState | None = None,
    debug_dir: str | None = None,
) -> SessionResult:
    """One localization session against the stored map, updating it in
    place. A failed initialization degrades to an odometry-only trajectory
    and leaves the map untouched."""
    config.validate()
    records = list(records)
    state = state or UpdateState()
    session = graph.start_session()

    estimate = next((r.payload for r in records if r.kind == GROUND_TRUTH), None)
    first_scan_record = next((r for r in records if r.kind == LASER), None)
    if estimate is None or first_scan_record is None:
        raise ContractError("localization needs an initial estimate and laser data")
    init_scan = scan_from_ranges(first_scan_record.payload, config.lidar,
                                 first_scan_record.timestamp)
    stored = [s for s in graph.submaps.values() if s.id.session < session]
    result, submap_id = matcher.global_localize(
        init_scan, stored, estimate, config.coarse_window,
        config.min_match_score, config.p_unknown,
    )
    if not result.accepted:
        logger.warning(
            "session %d initialization failed (score %.3f); odometry-only mode",
            session, result.score,
        )
        return SessionResult(
            session=session,
            trajectory=_odometry_only_trajectory(records, estimate),
            initialization_success=False,
            initialization_score=result.score,
            match_scores=[],
            complexity=[],
        )

    start = compose(graph.submaps[submap_id].pose, result.relative_pose)
    out = _run_session(
        graph, coverage, records, config, session, start, state, is_mapping=False,
        debug_dir=debug_dir,
    )
    out.initialization_score = result.score
    return out


# ---------------------------------------------------------------------------
# multi-session driver


@dataclass
class RunResult:
    sessions: list[SessionResult]
    graph: PoseGraph
    coverage: CoverageIndex
    state: UpdateState


def run_streams(
    streams: list[list[SensorRecord]],
    config: PipelineConfig,
    out_dir: str | None = None,
    debug_dir: str | None = None,
) -> RunResult:
    """Run the first stream as the mapping session and the rest as
    localization sessions. With freeze_map every localization session
    restarts from the session-0 map and updates are discarded."""
    if not streams:
        raise ContractError("at least one sensor stream is required")
    state = UpdateState()
    records = list(streams[0])
    graph, coverage, first = run_mapping_session(records, config, state, debug_dir)
    results = [first]
    _write_session_outputs(out_dir, 0, first, graph, records)

    frozen_base = copy.deepcopy((graph, coverage)) if config.freeze_map else None
    for session, stream in enumerate(streams[1:], start=1):
        if frozen_base is not None:
            graph, coverage = copy.deepcopy(frozen_base)
            graph.session_counter = session  # keep session ids monotonic
        records = list(stream)
        result = run_localization_session(records, graph, coverage, config, state, debug_dir)
        results.append(result)
        _write_session_outputs(out_dir, session, result, graph, records)

    if out_dir is not None:
        save_checkpoint(graph, os.path.join(out_dir, "checkpoint"))
        _write_run_summary(out_dir, results, state)
    return RunResult(results, graph, coverage, state)


def run_simulation(
    scenario: Scenario,
    config: PipelineConfig,
    n_sessions: int,
    out_dir: str | None = None,
    debug_dir: str | None = None,
) -> RunResult:
    streams = [session_records(scenario, s) for s in range(n_sessions)]
    return run_streams(streams, config, out_dir, debug_dir)


def _write_session_outputs(out_dir, session, result, graph, records):
    if out_dir is None:
        return
    os.makedirs(out_dir, exist_ok=True)
    write_trajectory(os.path.join(out_dir, f"session_{session:03d}_trajectory.txt"),
                     result.trajectory)
    truth = np.array(
        [
            [r.timestamp, r.payload.x, r.payload.y, r.payload.theta]
            for r in records
            if r.kind == GROUND_TRUTH
        ]
    ).reshape(-1, 4)
    if len(truth):
        write_trajectory(os.path.join(out_dir, f"session_{session:03d}_truth.txt"), truth)
    with open(os.path.join(out_dir, f"session_{session:03d}_scores.txt"), "w") as fh:
        for s in result.match_scores:
            fh.write(f"{s!r}\n")
    rendered = render_global_map(list(graph.submaps.values()))
    if rendered.known_cell_count:
        write_pgm(rendered, os.path.join(out_dir, f"map_session_{session:03d}.pgm"))


def _write_run_summary(out_dir, results, state):
    with open(os.path.join(out_dir, "sessions.csv"), "w") as fh:
        fh.write("session,init_success,init_score,ams,matches\n")
        for r in results:
            score = "" if r.initialization_score is None else f"{r.initialization_score:.4f}"
            ams_text = f"{ams(r.match_scores):.4f}" if r.match_scores else "-"
            fh.write(
                f"{r.session},{int(r.initialization_success)},{score},"
                f"{ams_text},{len(r.match_scores)}\n"
            )
    with open(os.path.join(out_dir, "complexity.csv"), "w") as fh:
        fh.write("event,nodes,submaps,constraints\n")
        for row in state.snapshots:
            fh.write(",".join(str(v) for v in row) + "\n")
