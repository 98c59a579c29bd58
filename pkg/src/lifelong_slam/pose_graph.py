"""Multi-session pose graph: nodes, submaps, constraints and priors.

Constraint convention: a constraint (kind, from_id, to_id, z, info) is
satisfied when between(pose(to), pose(from)) == z, i.e. z is the pose of
`from` expressed in `to`'s frame. Odometry constraints store the newer node
as `from` and the older as `to`, so z is the forward motion delta.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Iterator, Union

import numpy as np

from .errors import DuplicateIdError, GraphIntegrityError, UnknownVariableError
from .geometry import Pose2, validate_information

if TYPE_CHECKING:
    from .mapping import Scan, Submap


@dataclass(frozen=True, order=True)
class NodeId:
    session: int
    index: int

    def __str__(self):
        return f"x{self.index}^{self.session}"


@dataclass(frozen=True, order=True)
class SubmapId:
    session: int
    index: int

    def __str__(self):
        return f"m{self.index}^{self.session}"


VariableId = Union[NodeId, SubmapId]


def variable_order_key(vid: VariableId) -> tuple[int, int, int]:
    """Deterministic total order over variables: submaps before nodes."""
    return (0 if isinstance(vid, SubmapId) else 1, vid.session, vid.index)


@dataclass
class Node:
    """A robot pose with its attached LiDAR scan."""

    id: NodeId
    pose: Pose2
    scan: "Scan | None"
    timestamp: float
    submap_id: SubmapId | None = None


class ConstraintKind(enum.Enum):
    NODE_TO_SUBMAP = "NODE_TO_SUBMAP"
    ODOMETRY = "ODOMETRY"
    NODE_TO_NODE = "NODE_TO_NODE"
    SUBMAP_TO_SUBMAP = "SUBMAP_TO_SUBMAP"


_ENDPOINT_TYPES = {
    ConstraintKind.NODE_TO_SUBMAP: (NodeId, SubmapId),
    ConstraintKind.ODOMETRY: (NodeId, NodeId),
    ConstraintKind.NODE_TO_NODE: (NodeId, NodeId),
    ConstraintKind.SUBMAP_TO_SUBMAP: (SubmapId, SubmapId),
}


@dataclass
class Constraint:
    kind: ConstraintKind
    from_id: VariableId
    to_id: VariableId
    z: Pose2
    info: np.ndarray

    def key(self) -> tuple:
        return (self.kind, self.from_id, self.to_id)


@dataclass
class Prior:
    """Unary anchor: the target pose should equal `pose` with weight `info`."""

    target: VariableId
    pose: Pose2
    info: np.ndarray


@dataclass
class ComplexityReport:
    nodes: int
    submaps: int
    constraints: int

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.nodes, self.submaps, self.constraints)


class PoseGraph:
    """Store of nodes, submaps, constraints and priors with adjacency indexing.

    Single-writer, multiple-reader: mutations require exclusive access,
    queries are safe under shared reads.
    """

    def __init__(self):
        self.nodes: dict[NodeId, Node] = {}
        self.submaps: dict[SubmapId, "Submap"] = {}
        self.constraints: dict[int, Constraint] = {}
        self.priors: list[Prior] = []
        self.session_counter: int = 0
        self._adjacency: dict[VariableId, set[int]] = {}
        self._constraint_keys: dict[tuple, int] = {}
        self._next_constraint_id: int = 0

    # -- session bookkeeping ------------------------------------------------

    def start_session(self) -> int:
        """Allocate the next session id (monotonically increasing)."""
        session = self.session_counter
        self.session_counter += 1
        return session

    # -- insertion ----------------------------------------------------------

    def add_node(self, node: Node) -> NodeId:
        if node.id in self.nodes:
            raise DuplicateIdError(f"node {node.id} already exists")
        if node.submap_id is not None:
            submap = self.submaps.get(node.submap_id)
            if submap is None:
                raise GraphIntegrityError(
                    f"node {node.id} references missing submap {node.submap_id}"
                )
            if node.submap_id.session != node.id.session:
                raise GraphIntegrityError(
                    f"node {node.id} may only belong to a submap of its own session"
                )
            submap.node_ids.append(node.id)
        self.nodes[node.id] = node
        self._adjacency.setdefault(node.id, set())
        return node.id

    def add_submap(self, submap: "Submap") -> SubmapId:
        if submap.id in self.submaps:
            raise DuplicateIdError(f"submap {submap.id} already exists")
        self.submaps[submap.id] = submap
        self._adjacency.setdefault(submap.id, set())
        return submap.id

    def add_constraint(self, constraint: Constraint, replace: bool = False) -> int:
        from_type, to_type = _ENDPOINT_TYPES[constraint.kind]
        if not isinstance(constraint.from_id, from_type) or not isinstance(
            constraint.to_id, to_type
        ):
            raise GraphIntegrityError(
                f"{constraint.kind.value} endpoints must be "
                f"({from_type.__name__}, {to_type.__name__})"
            )
        for endpoint in (constraint.from_id, constraint.to_id):
            if not self.has_variable(endpoint):
                raise GraphIntegrityError(f"constraint references missing {endpoint}")
        if constraint.kind is ConstraintKind.ODOMETRY:
            a, b = constraint.from_id, constraint.to_id
            if a.session != b.session or abs(a.index - b.index) != 1:
                raise GraphIntegrityError(
                    "odometry constraints must connect consecutive nodes of one session"
                )
        constraint.info = validate_information(constraint.info)

        key = constraint.key()
        existing = self._constraint_keys.get(key)
        if existing is not None:
            if not replace:
                raise DuplicateIdError(
                    f"constraint {constraint.kind.value} "
                    f"{constraint.from_id}->{constraint.to_id} already exists"
                )
            self.remove_constraint(existing)

        cid = self._next_constraint_id
        self._next_constraint_id += 1
        self.constraints[cid] = constraint
        self._constraint_keys[key] = cid
        self._adjacency[constraint.from_id].add(cid)
        self._adjacency[constraint.to_id].add(cid)
        return cid

    def add_prior(self, prior: Prior) -> None:
        if not self.has_variable(prior.target):
            raise GraphIntegrityError(f"prior references missing {prior.target}")
        prior.info = validate_information(prior.info)
        self.priors.append(prior)

    # -- lookup ---------------------------------------------------------------

    def has_variable(self, vid: VariableId) -> bool:
        if isinstance(vid, NodeId):
            return vid in self.nodes
        return vid in self.submaps

    def pose_of(self, vid: VariableId) -> Pose2:
        if isinstance(vid, NodeId):
            try:
                return self.nodes[vid].pose
            except KeyError:
                raise UnknownVariableError(str(vid)) from None
        try:
            return self.submaps[vid].pose
        except KeyError:
            raise UnknownVariableError(str(vid)) from None

    def set_pose(self, vid: VariableId, pose: Pose2) -> None:
        if isinstance(vid, NodeId):
            self.nodes[vid].pose = pose
        else:
            self.submaps[vid].pose = pose

    def variables(self) -> Iterator[VariableId]:
        yield from self.nodes
        yield from self.submaps

    def constraints_for(self, vid: VariableId) -> set[int]:
        if not self.has_variable(vid):
            raise UnknownVariableError(str(vid))
        return set(self._adjacency[vid])

    def neighbors(self, vid: VariableId) -> set[VariableId]:
        out: set[VariableId] = set()
        for cid in self.constraints_for(vid):
            c = self.constraints[cid]
            other = c.to_id if c.from_id == vid else c.from_id
            out.add(other)
        out.discard(vid)
        return out

    # -- queries --------------------------------------------------------------

    def markov_blanket(
        self, targets: Iterable[VariableId]
    ) -> tuple[set[VariableId], set[int]]:
        """Variables sharing a constraint with any target (targets excluded),
        plus every constraint with at least one endpoint in the targets."""
        target_set = set(targets)
        for t in target_set:
            if not self.has_variable(t):
                raise UnknownVariableError(str(t))
        cids: set[int] = set()
        for t in target_set:
            cids.update(self._adjacency[t])
        variables: set[VariableId] = set()
        for cid in cids:
            c = self.constraints[cid]
            variables.add(c.from_id)
            variables.add(c.to_id)
        variables -= target_set
        return variables, cids

    def remove_constraint(self, cid: int) -> Constraint:
        constraint = self.constraints.pop(cid)
        self._constraint_keys.pop(constraint.key(), None)
        self._adjacency[constraint.from_id].discard(cid)
        self._adjacency[constraint.to_id].discard(cid)
        return constraint

    def remove_variables(self, ids: Iterable[VariableId]) -> list[Constraint]:
        """Delete variables, all incident constraints and their priors.

        Returns the removed constraints. Submap membership lists and node
        back-references are kept consistent.
        """
        id_set = set(ids)
        for vid in id_set:
            if not self.has_variable(vid):
                raise UnknownVariableError(str(vid))
        removed_cids: set[int] = set()
        for vid in id_set:
            removed_cids.update(self._adjacency[vid])
        removed = [self.remove_constraint(cid) for cid in sorted(removed_cids)]
        self.priors = [p for p in self.priors if p.target not in id_set]
        for vid in id_set:
            del self._adjacency[vid]
            if isinstance(vid, NodeId):
                node = self.nodes.pop(vid)
                if node.submap_id is not None and node.submap_id in self.submaps:
                    submap = self.submaps[node.submap_id]
                    if vid in submap.node_ids:
                        submap.node_ids.remove(vid)
            else:
                submap = self.submaps.pop(vid)
                for nid in submap.node_ids:
                    if nid in self.nodes and nid not in id_set:
                        self.nodes[nid].submap_id = None
        return removed

    def complexity_report(self) -> ComplexityReport:
        return ComplexityReport(len(self.nodes), len(self.submaps), len(self.constraints))

    # -- integrity ------------------------------------------------------------

    def check_integrity(self) -> None:
        """Raise GraphIntegrityError if any index is inconsistent (test hook)."""
        for cid, c in self.constraints.items():
            for endpoint in (c.from_id, c.to_id):
                if not self.has_variable(endpoint):
                    raise GraphIntegrityError(f"constraint {cid} dangles on {endpoint}")
                if cid not in self._adjacency[endpoint]:
                    raise GraphIntegrityError(f"adjacency misses {cid} at {endpoint}")
        for vid, cids in self._adjacency.items():
            if not self.has_variable(vid):
                raise GraphIntegrityError(f"adjacency entry for missing {vid}")
            for cid in cids:
                if cid not in self.constraints:
                    raise GraphIntegrityError(f"adjacency lists dead constraint {cid}")
        for p in self.priors:
            if not self.has_variable(p.target):
                raise GraphIntegrityError(f"prior dangles on {p.target}")
        for sid, submap in self.submaps.items():
            for nid in submap.node_ids:
                if nid not in self.nodes:
                    raise GraphIntegrityError(f"submap {sid} lists missing node {nid}")
                if self.nodes[nid].submap_id != sid:
                    raise GraphIntegrityError(f"membership mismatch for {nid}")
