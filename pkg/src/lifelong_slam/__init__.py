"""Lifelong 2D LiDAR SLAM: multi-session mapping, submap trimming and
Chow-Liu pose-graph sparsification, with a built-in changing-world simulator."""

__version__ = "0.1.0"

from .geometry import Pose2, compose, inverse, between, residual, weighted_cost
from .pose_graph import (
    Constraint,
    ConstraintKind,
    Node,
    NodeId,
    PoseGraph,
    Prior,
    SubmapId,
)
from .optimizer import OptimizerConfig, OptimizationReport, evaluate_cost, optimize
from .sparsifier import GaussianBelief, CltEdge, sparsify_submap

__all__ = [
    "Pose2",
    "compose",
    "inverse",
    "between",
    "residual",
    "weighted_cost",
    "NodeId",
    "SubmapId",
    "Node",
    "Constraint",
    "ConstraintKind",
    "Prior",
    "PoseGraph",
    "OptimizerConfig",
    "OptimizationReport",
    "evaluate_cost",
    "optimize",
    "GaussianBelief",
    "CltEdge",
    "sparsify_submap",
]
