"""Submap removal by marginalization with Chow-Liu tree sparsification.

Removing a trimmed submap and its member nodes by plain deletion throws away
every measurement that touched them. Instead, the variables are marginalized
out of a local Gaussian belief built over the submap, its nodes and their
Markov blanket; the dense elimination clique left on the blanket is then
approximated by the maximum-mutual-information spanning tree (the Chow-Liu
tree, which minimizes the KL divergence among all tree-structured
approximations) and converted back into pairwise relative-pose constraints
plus one unary prior on the tree root.

All beliefs are kept in information form; covariance blocks are recovered
through Cholesky solves. Cliques are small (a submap's blanket), so dense
matrices are used throughout.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from .errors import ContractError, LifecycleError, SingularMarginalizationError
from .geometry import Pose2, between, residual_jacobians
from .pose_graph import (
    Constraint,
    ConstraintKind,
    NodeId,
    PoseGraph,
    Prior,
    SubmapId,
    VariableId,
    variable_order_key,
)

logger = logging.getLogger(__name__)

GAUGE_INFO = 1e-6  # weak anchor that removes the local gauge freedom


@dataclass
class GaussianBelief:
    """Information-form joint Gaussian over an ordered set of 3-DoF variables.

    Block k occupies rows/columns 3k..3k+2 of `information` and entries
    3k..3k+2 of `mean`.
    """

    variables: list[VariableId]
    mean: np.ndarray
    information: np.ndarray
    components: list[frozenset[VariableId]] = field(default_factory=list)

    @property
    def disconnected(self) -> bool:
        return len(self.components) > 1

    def index_of(self, vid: VariableId) -> int:
        return self.variables.index(vid)

    def block(self, vid: VariableId) -> slice:
        k = self.index_of(vid)
        return slice(3 * k, 3 * k + 3)

    def mean_pose(self, vid: VariableId) -> Pose2:
        return Pose2.from_array(self.mean[self.block(vid)])


@dataclass
class CltEdge:
    parent: VariableId
    child: VariableId
    mutual_information: float


@dataclass
class SparsificationDelta:
    removed_variables: list[VariableId]
    removed_constraints: list[Constraint]
    added_constraints: list[Constraint]
    added_priors: list[Prior]


# ---------------------------------------------------------------------------
# belief construction


def _local_components(
    variables: Sequence[VariableId], edges: Iterable[tuple[VariableId, VariableId]]
) -> list[frozenset[VariableId]]:
    parent = {v: v for v in variables}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    groups: dict[VariableId, set[VariableId]] = {}
    for v in variables:
        groups.setdefault(find(v), set()).add(v)
    comps = [frozenset(g) for g in groups.values()]
    comps.sort(key=lambda g: min(variable_order_key(v) for v in g))
    return comps


def build_local_belief(
    graph: PoseGraph,
    targets: Iterable[VariableId],
    blanket: Iterable[VariableId],
) -> GaussianBelief:
    """Linearize the constraints incident to `targets` into a joint Gaussian.

    The belief covers targets plus blanket, ordered submaps-first. Only
    target-incident constraints (and priors on targets) enter the
    information matrix: blanket-to-blanket constraints stay in the graph and
    must not be double counted. Each connected component receives a weak
    gauge prior on its lowest-id blanket variable; a disconnected local
    subgraph is flagged through `components`.
    """
    target_set = set(targets)
    blanket_set = set(blanket)
    local = sorted(target_set | blanket_set, key=variable_order_key)
    index = {v: i for i, v in enumerate(local)}
    dim = 3 * len(local)
    info = np.zeros((dim, dim))
    mean = np.concatenate([graph.pose_of(v).as_array() for v in local])

    _, cids = graph.markov_blanket(target_set)
    edges = []
    for cid in sorted(cids):
        c = graph.constraints[cid]
        pf = graph.pose_of(c.from_id)
        pt = graph.pose_of(c.to_id)
        jf, jt = residual_jacobians(pf, pt, c.z)
        bf, bt = 3 * index[c.from_id], 3 * index[c.to_id]
        info[bf : bf + 3, bf : bf + 3] += jf.T @ c.info @ jf
        info[bf : bf + 3, bt : bt + 3] += jf.T @ c.info @ jt
        info[bt : bt + 3, bf : bf + 3] += jt.T @ c.info @ jf
        info[bt : bt + 3, bt : bt + 3] += jt.T @ c.info @ jt
        edges.append((c.from_id, c.to_id))

    for prior in graph.priors:
        if prior.target in target_set:
            jp, _ = residual_jacobians(
                graph.pose_of(prior.target), Pose2.identity(), prior.pose
            )
            b = 3 * index[prior.target]
            info[b : b + 3, b : b + 3] += jp.T @ prior.info @ jp

    components = _local_components(local, edges)
    for comp in components:
        anchors = sorted(comp & blanket_set, key=variable_order_key)
        if anchors:
            b = 3 * index[anchors[0]]
            info[b : b + 3, b : b + 3] += GAUGE_INFO * np.eye(3)
    if len(components) > 1:
        logger.debug("local belief split into %d components", len(components))

    info = 0.5 * (info + info.T)
    return GaussianBelief(local, mean, info, components)


# ---------------------------------------------------------------------------
# Gaussian operations


def _block_indices(belief: GaussianBelief, vids: Iterable[VariableId]) -> np.ndarray:
    idx = []
    for v in vids:
        k = belief.index_of(v)
        idx.extend((3 * k, 3 * k + 1, 3 * k + 2))
    return np.array(idx, dtype=np.int64)


def covariance(belief: GaussianBelief) -> np.ndarray:
    """Dense covariance recovered from the information matrix (Cholesky solve)."""
    try:
        c, low = scipy.linalg.cho_factor(belief.information)
    except scipy.linalg.LinAlgError as exc:
        raise SingularMarginalizationError(
            "belief information matrix is singular (missing gauge prior?)"
        ) from exc
    return scipy.linalg.cho_solve((c, low), np.eye(belief.information.shape[0]))


def marginalize(belief: GaussianBelief, remove: Iterable[VariableId]) -> GaussianBelief:
    """Marginalize variables out in information form (Schur complement)."""
    remove_set = set(remove)
    missing = remove_set - set(belief.variables)
    if missing:
        raise ContractError(f"cannot marginalize unknown variables: {missing}")
    keep = [v for v in belief.variables if v not in remove_set]
    if not keep:
        raise ContractError("marginalization would remove every variable")
    ki = _block_indices(belief, keep)
    ri = _block_indices(belief, [v for v in belief.variables if v in remove_set])
    lkk = belief.information[np.ix_(ki, ki)]
    lkr = belief.information[np.ix_(ki, ri)]
    lrr = belief.information[np.ix_(ri, ri)]
    try:
        c, low = scipy.linalg.cho_factor(lrr)
    except scipy.linalg.LinAlgError as exc:
        raise SingularMarginalizationError(
            "block to marginalize is singular (missing gauge prior?)"
        ) from exc
    info = lkk - lkr @ scipy.linalg.cho_solve((c, low), lkr.T)
    info = 0.5 * (info + info.T)
    components = [frozenset(comp & set(keep)) for comp in belief.components]
    components = [c_ for c_ in components if c_]
    return GaussianBelief(keep, belief.mean[ki].copy(), info, components)


def _pair_mi(cov: np.ndarray, ia: int, ib: int) -> float:
    sa = slice(3 * ia, 3 * ia + 3)
    sb = slice(3 * ib, 3 * ib + 3)
    joint = np.block([[cov[sa, sa], cov[sa, sb]], [cov[sb, sa], cov[sb, sb]]])
    sign_a, ld_a = np.linalg.slogdet(cov[sa, sa])
    sign_b, ld_b = np.linalg.slogdet(cov[sb, sb])
    sign_j, ld_j = np.linalg.slogdet(joint)
    if sign_a <= 0 or sign_b <= 0 or sign_j <= 0:
        logger.warning("non-PSD covariance block while computing MI; clamping to 0")
        return 0.0
    return max(0.0, 0.5 * (ld_a + ld_b - ld_j))


def mutual_information(belief: GaussianBelief, a: VariableId, b: VariableId) -> float:
    """Gaussian mutual information (nats) between two 3-DoF variables."""
    if a == b:
        raise ContractError("mutual information requires two distinct variables")
    cov = covariance(belief)
    return _pair_mi(cov, belief.index_of(a), belief.index_of(b))


def chow_liu_tree(belief: GaussianBelief) -> list[CltEdge]:
    """Maximum-mutual-information spanning tree (forest on zero-MI splits).

    The root of each tree is its lowest variable id (submaps order before
    nodes); parents are assigned by BFS from the root. Weight ties break on
    lexicographic edge ids so the result is deterministic.
    """
    n = len(belief.variables)
    if n < 2:
        return []
    cov = covariance(belief)

    candidates = []
    for i in range(n):
        for j in range(i + 1, n):
            mi = _pair_mi(cov, i, j)
            if mi <= 0.0:
                continue
            u, v = belief.variables[i], belief.variables[j]
            if variable_order_key(v) < variable_order_key(u):
                u, v = v, u
            candidates.append((mi, u, v))
    candidates.sort(key=lambda t: (-t[0], variable_order_key(t[1]), variable_order_key(t[2])))

    parent = {v: v for v in belief.variables}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    adjacency: dict[VariableId, list[tuple[VariableId, float]]] = {
        v: [] for v in belief.variables
    }
    accepted = 0
    for mi, u, v in candidates:
        ru, rv = find(u), find(v)
        if ru == rv:
            continue
        parent[ru] = rv
        adjacency[u].append((v, mi))
        adjacency[v].append((u, mi))
        accepted += 1
        if accepted == n - 1:
            break

    # BFS orientation from the lowest-id variable of each tree component
    components: dict[VariableId, list[VariableId]] = {}
    for v in belief.variables:
        components.setdefault(find(v), []).append(v)
    edges: list[CltEdge] = []
    seen: set[VariableId] = set()
    for comp in sorted(components.values(), key=lambda c: min(map(variable_order_key, c))):
        root = min(comp, key=variable_order_key)
        queue = [root]
        seen.add(root)
        while queue:
            cur = queue.pop(0)
            for nxt, mi in sorted(adjacency[cur], key=lambda t: variable_order_key(t[0])):
                if nxt in seen:
                    continue
                seen.add(nxt)
                edges.append(CltEdge(cur, nxt, mi))
                queue.append(nxt)
    return edges


def gaussian_kld(p: GaussianBelief, q: GaussianBelief) -> float:
    """Closed-form KL divergence D(p || q) in nats; 0 iff p equals q."""
    if p.variables != q.variables:
        raise ContractError("KLD requires identical variable sets and order")
    n = p.information.shape[0]
    cp, lowp = scipy.linalg.cho_factor(p.information)
    sigma_p = scipy.linalg.cho_solve((cp, lowp), np.eye(n))
    _, ld_p = np.linalg.slogdet(p.information)
    _, ld_q = np.linalg.slogdet(q.information)
    delta = q.mean - p.mean
    kld = 0.5 * (
        float(np.trace(q.information @ sigma_p))
        - n
        + float(delta @ q.information @ delta)
        + ld_p
        - ld_q
    )
    return max(0.0, kld)


# ---------------------------------------------------------------------------
# conversion back into graph factors


def _clamped_inverse(cov: np.ndarray) -> tuple[np.ndarray, bool]:
    """Invert a symmetric covariance, repairing non-PD eigenvalues."""
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    floor = max(evals.max(), 1e-12) * 1e-12
    clamped = bool(np.any(evals < floor))
    evals = np.maximum(evals, floor)
    info = evecs @ np.diag(1.0 / evals) @ evecs.T
    return 0.5 * (info + info.T), clamped


def _constraint_kind(from_id: VariableId, to_id: VariableId) -> ConstraintKind:
    if isinstance(from_id, NodeId) and isinstance(to_id, NodeId):
        return ConstraintKind.NODE_TO_NODE
    if isinstance(from_id, SubmapId) and isinstance(to_id, SubmapId):
        return ConstraintKind.SUBMAP_TO_SUBMAP
    return ConstraintKind.NODE_TO_SUBMAP


def tree_to_factors(
    belief: GaussianBelief, tree: list[CltEdge]
) -> tuple[list[Constraint], list[Prior]]:
    """Convert CLT conditionals into relative-pose constraints plus root priors.

    Each edge yields one pairwise factor: z is the relative pose of the
    means, and the information is the inverse of the conditional covariance
    of the child given the parent, propagated to the residual frame at the
    means. Every tree root (and any isolated variable) gets a unary prior
    from its marginal so the p(x_1) term of the factorization is kept.
    """
    cov = covariance(belief)
    constraints: list[Constraint] = []
    children: set[VariableId] = set()
    for edge in tree:
        ip, ic = belief.index_of(edge.parent), belief.index_of(edge.child)
        sp = slice(3 * ip, 3 * ip + 3)
        sc = slice(3 * ic, 3 * ic + 3)
        cond = cov[sc, sc] - cov[sc, sp] @ np.linalg.solve(cov[sp, sp], cov[sp, sc])
        mu_p = belief.mean_pose(edge.parent)
        mu_c = belief.mean_pose(edge.child)

        if isinstance(edge.parent, NodeId) and isinstance(edge.child, SubmapId):
            # node->submap constraints must run from the node endpoint
            from_id, to_id = edge.parent, edge.child
            z = between(mu_p, mu_c)
            _, j_child = residual_jacobians(mu_p, mu_c, z)
        else:
            from_id, to_id = edge.child, edge.parent
            z = between(mu_p, mu_c)
            j_child, _ = residual_jacobians(mu_c, mu_p, z)

        info, clamped = _clamped_inverse(j_child @ cond @ j_child.T)
        if clamped:
            logger.warning(
                "conditional covariance for %s->%s repaired to PD", edge.parent, edge.child
            )
        constraints.append(
            Constraint(_constraint_kind(from_id, to_id), from_id, to_id, z, info)
        )
        children.add(edge.child)

    priors: list[Prior] = []
    for root in (v for v in belief.variables if v not in children):
        mu = belief.mean_pose(root)
        sr = belief.block(root)
        j_root, _ = residual_jacobians(mu, Pose2.identity(), mu)
        info, clamped = _clamped_inverse(j_root @ cov[sr, sr] @ j_root.T)
        if clamped:
            logger.warning("root prior for %s repaired to PD", root)
        priors.append(Prior(root, mu, info))
    return constraints, priors


# ---------------------------------------------------------------------------
# full Algorithm-1 step


def _dump_elimination(path, belief, marginal, tree):
    with open(path, "w") as fh:
        fh.write("# elimination dump v1\n")
        fh.write(f"LOCAL_VARIABLES {' '.join(str(v) for v in belief.variables)}\n")
        fh.write("LOCAL_INFORMATION\n")
        np.savetxt(fh, belief.information, fmt="%.12g")
        fh.write(f"CLIQUE_VARIABLES {' '.join(str(v) for v in marginal.variables)}\n")
        fh.write("CLIQUE_INFORMATION\n")
        np.savetxt(fh, marginal.information, fmt="%.12g")
        for e in tree:
            fh.write(f"TREE {e.parent} {e.child} {e.mutual_information:.12g}\n")


def sparsify_submap(
    graph: PoseGraph, submap_id: SubmapId, debug_dir: str | None = None
) -> SparsificationDelta:
    """Remove a trimmed submap and its nodes, replacing their measurements
    with Chow-Liu tree factors over the Markov blanket.

    Returns the applied delta. On error the graph is left untouched (all
    mutations happen after the new factors are computed).
    """
    from .mapping import SubmapState  # local import: mapping depends on matcher only

    submap = graph.submaps.get(submap_id)
    if submap is None:
        raise ContractError(f"unknown submap {submap_id}")
    if submap.state is not SubmapState.TRIMMED:
        raise LifecycleError(f"submap {submap_id} is {submap.state.name}, not TRIMMED")

    targets = sorted([submap_id, *submap.node_ids], key=variable_order_key)
    blanket_vars, _ = graph.markov_blanket(targets)
    if not blanket_vars:
        removed = graph.remove_variables(targets)
        return SparsificationDelta(list(targets), removed, [], [])

    belief = build_local_belief(graph, targets, blanket_vars)
    target_set = set(targets)
    # components made of targets only cannot pass information to the blanket
    doomed = set()
    for comp in belief.components:
        if not (comp - target_set):
            doomed |= comp
    if doomed:
        keep = [v for v in belief.variables if v not in doomed]
        ki = _block_indices(belief, keep)
        belief = GaussianBelief(
            keep,
            belief.mean[ki].copy(),
            belief.information[np.ix_(ki, ki)].copy(),
            [c for c in belief.components if not (c <= doomed)],
        )

    marginal = marginalize(belief, target_set - doomed)
    tree = chow_liu_tree(marginal)
    factors, priors = tree_to_factors(marginal, tree)

    if debug_dir is not None:
        os.makedirs(debug_dir, exist_ok=True)
        name = f"elim_{submap_id.session}_{submap_id.index}.txt"
        _dump_elimination(os.path.join(debug_dir, name), belief, marginal, tree)

    removed_constraints = graph.remove_variables(targets)
    for factor in factors:
        graph.add_constraint(factor, replace=True)
    for prior in priors:
        graph.add_prior(prior)
    return SparsificationDelta(list(targets), removed_constraints, factors, priors)
