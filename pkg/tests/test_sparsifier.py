import copy
import itertools
import math

import numpy as np
import pytest

from conftest import random_information, random_pose
from lifelong_slam.errors import ContractError, LifecycleError, SingularMarginalizationError
from lifelong_slam.geometry import Pose2, between, compose, residual_jacobians
from lifelong_slam.grid import OccupancyGrid
from lifelong_slam.mapping import Submap, SubmapState, mark_trimmed
from lifelong_slam.pose_graph import (
    Constraint,
    ConstraintKind,
    Node,
    NodeId,
    PoseGraph,
    Prior,
    SubmapId,
)
from lifelong_slam.sparsifier import (
    GAUGE_INFO,
    CltEdge,
    GaussianBelief,
    build_local_belief,
    chow_liu_tree,
    gaussian_kld,
    marginalize,
    mutual_information,
    sparsify_submap,
    tree_to_factors,
)

# ---------------------------------------------------------------------------
# oracles (covariance-domain, independent of the information-form code path)


def random_belief(rng, n, scale=1.0):
    dim = 3 * n
    a = rng.normal(size=(dim, dim)) / math.sqrt(dim)
    info = scale * (a @ a.T + np.eye(dim))
    mean = rng.normal(size=dim)
    variables = [NodeId(0, i) for i in range(n)]
    return GaussianBelief(variables, mean, info)


def dense_marginal_oracle(info, keep):
    cov = np.linalg.inv(info)
    sub = cov[np.ix_(keep, keep)]
    return np.linalg.inv(sub)


def mi_oracle(info, ia, ib):
    cov = np.linalg.inv(info)
    sa = slice(3 * ia, 3 * ia + 3)
    sb = slice(3 * ib, 3 * ib + 3)
    joint = np.block([[cov[sa, sa], cov[sa, sb]], [cov[sb, sa], cov[sb, sb]]])
    ratio = np.linalg.det(cov[sa, sa]) * np.linalg.det(cov[sb, sb]) / np.linalg.det(joint)
    return 0.5 * math.log(ratio)


def kld_oracle(mean_p, cov_p, mean_q, cov_q):
    n = len(mean_p)
    inv_q = np.linalg.inv(cov_q)
    delta = mean_q - mean_p
    return 0.5 * (
        np.trace(inv_q @ cov_p)
        - n
        + delta @ inv_q @ delta
        + math.log(np.linalg.det(cov_q) / np.linalg.det(cov_p))
    )


def tree_projection_oracle(belief, edges):
    """Tree-structured approximation q built from pairwise covariance
    marginals: Lambda_q = sum_e inv(Sigma_uv) - sum_v (deg_v - 1) inv(Sigma_v)."""
    n = len(belief.variables)
    cov = np.linalg.inv(belief.information)
    info_q = np.zeros_like(belief.information)
    degree = {v: 0 for v in belief.variables}
    for u, v in edges:
        iu, iv = belief.index_of(u), belief.index_of(v)
        idx = np.r_[3 * iu : 3 * iu + 3, 3 * iv : 3 * iv + 3]
        info_q[np.ix_(idx, idx)] += np.linalg.inv(cov[np.ix_(idx, idx)])
        degree[u] += 1
        degree[v] += 1
    for v, deg in degree.items():
        iv = belief.index_of(v)
        idx = np.r_[3 * iv : 3 * iv + 3]
        info_q[np.ix_(idx, idx)] -= (deg - 1) * np.linalg.inv(cov[np.ix_(idx, idx)])
    return GaussianBelief(list(belief.variables), belief.mean.copy(), info_q)


def all_spanning_trees(n):
    pairs = list(itertools.combinations(range(n), 2))
    for subset in itertools.combinations(pairs, n - 1):
        parent = list(range(n))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        ok = True
        for a, b in subset:
            ra, rb = find(a), find(b)
            if ra == rb:
                ok = False
                break
            parent[ra] = rb
        if ok:
            yield subset


# ---------------------------------------------------------------------------


class TestBuildLocalBelief:
    def test_single_constraint_hand_assembly(self, rng):
        g = PoseGraph()
        sub = Submap(SubmapId(0, 0), Pose2(1.0, 0.5, 0.2), OccupancyGrid(),
                     state=SubmapState.FINISHED)
        g.add_submap(sub)
        node_pose = Pose2(2.0, 1.0, -0.4)
        g.add_node(Node(NodeId(0, 0), node_pose, None, 0.0))
        z = between(sub.pose, node_pose)
        info = random_information(rng)
        g.add_constraint(
            Constraint(ConstraintKind.NODE_TO_SUBMAP, NodeId(0, 0), SubmapId(0, 0), z, info)
        )
        belief = build_local_belief(g, [NodeId(0, 0)], [SubmapId(0, 0)])
        assert belief.variables == [SubmapId(0, 0), NodeId(0, 0)]

        jx, jy = residual_jacobians(node_pose, sub.pose, z)
        j = np.zeros((3, 6))
        j[:, 0:3] = jy  # submap block comes first
        j[:, 3:6] = jx
        expected = j.T @ info @ j
        expected[0:3, 0:3] += GAUGE_INFO * np.eye(3)
        np.testing.assert_allclose(belief.information, expected, atol=1e-12)
        np.testing.assert_allclose(belief.mean[0:3], sub.pose.as_array())
        np.testing.assert_allclose(belief.mean[3:6], node_pose.as_array())
        assert not belief.disconnected

    def test_two_branch_marginal_matches_schur_oracle(self, rng):
        # one target linked to two blanket nodes, no blanket-blanket factor
        g = PoseGraph()
        poses = {NodeId(0, i): random_pose(rng, scale=1.0) for i in range(3)}
        for nid, pose in poses.items():
            g.add_node(Node(nid, pose, None, 0.0))
        target = NodeId(0, 1)
        for other in (NodeId(0, 0), NodeId(0, 2)):
            z = between(poses[other], poses[target])
            g.add_constraint(
                Constraint(ConstraintKind.NODE_TO_NODE, target, other, z,
                           random_information(rng))
            )
        belief = build_local_belief(g, [target], [NodeId(0, 0), NodeId(0, 2)])
        marg = marginalize(belief, [target])
        keep = [i for i, v in enumerate(belief.variables) if v != target]
        keep_idx = np.concatenate([np.arange(3 * k, 3 * k + 3) for k in keep])
        expected = dense_marginal_oracle(belief.information, keep_idx)
        np.testing.assert_allclose(marg.information, expected, atol=1e-9)
        # marginalizing the shared target couples the two survivors
        assert np.abs(marg.information[0:3, 3:6]).max() > 1e-3

    def test_disconnected_local_graph_flagged(self, rng):
        g = PoseGraph()
        for i in range(4):
            g.add_node(Node(NodeId(0, i), random_pose(rng), None, 0.0))
        for a, b in ((0, 1), (2, 3)):
            z = between(g.pose_of(NodeId(0, b)), g.pose_of(NodeId(0, a)))
            g.add_constraint(
                Constraint(ConstraintKind.NODE_TO_NODE, NodeId(0, a), NodeId(0, b), z,
                           np.eye(3))
            )
        belief = build_local_belief(g, [NodeId(0, 0), NodeId(0, 2)],
                                    [NodeId(0, 1), NodeId(0, 3)])
        assert belief.disconnected
        assert len(belief.components) == 2


class TestMarginalize:
    def test_independent_blocks_unchanged(self, rng):
        blocks = [random_information(rng) for _ in range(3)]
        info = np.zeros((9, 9))
        for k, b in enumerate(blocks):
            info[3 * k : 3 * k + 3, 3 * k : 3 * k + 3] = b
        belief = GaussianBelief([NodeId(0, i) for i in range(3)], rng.normal(size=9), info)
        marg = marginalize(belief, [NodeId(0, 1)])
        np.testing.assert_allclose(marg.information[0:3, 0:3], blocks[0], atol=1e-12)
        np.testing.assert_allclose(marg.information[3:6, 3:6], blocks[2], atol=1e-12)
        np.testing.assert_allclose(marg.information[0:3, 3:6], 0.0, atol=1e-12)

    def test_chain_elimination_induces_fill_in(self, rng):
        # precision-tridiagonal chain: removing the middle variable couples
        # the endpoints (the elimination clique goes dense)
        info = np.zeros((9, 9))
        d = random_information(rng, scale=8.0)
        for k in range(3):
            info[3 * k : 3 * k + 3, 3 * k : 3 * k + 3] = d
        off = 0.5 * np.eye(3)
        info[0:3, 3:6] = info[3:6, 0:3] = off
        info[3:6, 6:9] = info[6:9, 3:6] = off
        belief = GaussianBelief([NodeId(0, i) for i in range(3)], np.zeros(9), info)
        assert np.abs(info[0:3, 6:9]).max() == 0.0
        marg = marginalize(belief, [NodeId(0, 1)])
        assert np.abs(marg.information[0:3, 3:6]).max() > 1e-3

    def test_matches_dense_oracle_random(self, rng):
        for _ in range(30):
            n = int(rng.integers(3, 6))
            belief = random_belief(rng, n)
            k = int(rng.integers(1, n))
            remove = [belief.variables[int(i)] for i in rng.choice(n, size=k, replace=False)]
            marg = marginalize(belief, remove)
            keep_idx = np.concatenate(
                [np.arange(3 * i, 3 * i + 3) for i, v in enumerate(belief.variables)
                 if v not in remove]
            )
            expected = dense_marginal_oracle(belief.information, keep_idx)
            np.testing.assert_allclose(marg.information, expected, atol=1e-9)
            np.testing.assert_allclose(marg.mean, belief.mean[keep_idx])

    def test_singular_block_raises(self):
        info = np.zeros((6, 6))
        info[0:3, 0:3] = np.eye(3)
        belief = GaussianBelief([NodeId(0, 0), NodeId(0, 1)], np.zeros(6), info)
        with pytest.raises(SingularMarginalizationError):
            marginalize(belief, [NodeId(0, 1)])

    def test_unknown_variable_rejected(self, rng):
        belief = random_belief(rng, 2)
        with pytest.raises(ContractError):
            marginalize(belief, [NodeId(9, 9)])


class TestMutualInformation:
    def test_independent_variables_zero(self, rng):
        info = np.zeros((6, 6))
        info[0:3, 0:3] = random_information(rng)
        info[3:6, 3:6] = random_information(rng)
        belief = GaussianBelief([NodeId(0, 0), NodeId(0, 1)], np.zeros(6), info)
        assert mutual_information(belief, NodeId(0, 0), NodeId(0, 1)) == 0.0

    def test_near_perfect_correlation_large_but_finite(self):
        # strongly coupled pair: info = [[D, -C], [-C, D]] with C close to D
        d = 1e4 * np.eye(3)
        c = (1e4 - 1e-3) * np.eye(3)
        info = np.block([[d, -c], [-c, d]])
        belief = GaussianBelief([NodeId(0, 0), NodeId(0, 1)], np.zeros(6), info)
        mi = mutual_information(belief, NodeId(0, 0), NodeId(0, 1))
        assert np.isfinite(mi)
        assert mi > 5.0

    def test_matches_covariance_oracle(self, rng):
        for _ in range(30):
            belief = random_belief(rng, 3)
            got = mutual_information(belief, belief.variables[0], belief.variables[2])
            expected = mi_oracle(belief.information, 0, 2)
            assert got == pytest.approx(expected, abs=1e-9)
            assert got >= 0.0

    def test_same_variable_rejected(self, rng):
        belief = random_belief(rng, 2)
        with pytest.raises(ContractError):
            mutual_information(belief, belief.variables[0], belief.variables[0])


class TestChowLiuTree:
    def test_two_variables_single_edge(self, rng):
        belief = random_belief(rng, 2)
        edges = chow_liu_tree(belief)
        assert len(edges) == 1
        assert edges[0].parent == belief.variables[0]
        assert edges[0].child == belief.variables[1]

    def test_single_variable_empty(self, rng):
        belief = random_belief(rng, 1)
        assert chow_liu_tree(belief) == []

    def test_chain_belief_recovers_chain(self, rng):
        n = 5
        info = np.zeros((3 * n, 3 * n))
        for k in range(n):
            info[3 * k : 3 * k + 3, 3 * k : 3 * k + 3] = 6.0 * np.eye(3)
        for k in range(n - 1):
            blk = -2.0 * np.eye(3)
            info[3 * k : 3 * k + 3, 3 * k + 3 : 3 * k + 6] = blk
            info[3 * k + 3 : 3 * k + 6, 3 * k : 3 * k + 3] = blk
        belief = GaussianBelief([NodeId(0, i) for i in range(n)], np.zeros(3 * n), info)
        edges = chow_liu_tree(belief)
        got = {(e.parent, e.child) for e in edges}
        expected = {(NodeId(0, i), NodeId(0, i + 1)) for i in range(n - 1)}
        assert got == expected

    def test_minimizes_kld_over_enumeration(self, rng):
        for _ in range(10):
            n = 4
            belief = random_belief(rng, n)
            edges = chow_liu_tree(belief)
            q_ours = tree_projection_oracle(
                belief, [(e.parent, e.child) for e in edges]
            )
            cov = np.linalg.inv(belief.information)
            ours = kld_oracle(belief.mean, cov, q_ours.mean,
                              np.linalg.inv(q_ours.information))
            best = min(
                kld_oracle(
                    belief.mean,
                    cov,
                    belief.mean,
                    np.linalg.inv(
                        tree_projection_oracle(
                            belief,
                            [(belief.variables[a], belief.variables[b]) for a, b in tree],
                        ).information
                    ),
                )
                for tree in all_spanning_trees(n)
            )
            assert ours <= best + 1e-12

    def test_deterministic(self, rng):
        belief = random_belief(rng, 5)
        e1 = chow_liu_tree(belief)
        e2 = chow_liu_tree(
            GaussianBelief(list(belief.variables), belief.mean.copy(),
                           belief.information.copy())
        )
        assert [(e.parent, e.child) for e in e1] == [(e.parent, e.child) for e in e2]


class TestGaussianKld:
    def test_identical_distributions(self, rng):
        p = random_belief(rng, 3)
        q = GaussianBelief(list(p.variables), p.mean.copy(), p.information.copy())
        assert gaussian_kld(p, q) == pytest.approx(0.0, abs=1e-10)

    def test_mean_shift_closed_form(self, rng):
        p = random_belief(rng, 2)
        delta = rng.normal(size=6) * 0.1
        q = GaussianBelief(list(p.variables), p.mean + delta, p.information.copy())
        expected = 0.5 * delta @ p.information @ delta
        assert gaussian_kld(p, q) == pytest.approx(expected, rel=1e-9)

    def test_mismatched_variables_rejected(self, rng):
        p = random_belief(rng, 2)
        q = random_belief(rng, 3)
        with pytest.raises(ContractError):
            gaussian_kld(p, q)

    def test_clt_beats_random_trees(self, rng):
        n = 5
        belief = random_belief(rng, n)
        edges = chow_liu_tree(belief)
        q_clt = tree_projection_oracle(belief, [(e.parent, e.child) for e in edges])
        best = gaussian_kld(belief, q_clt)
        trees = list(all_spanning_trees(n))
        picks = rng.choice(len(trees), size=20, replace=False)
        for k in picks:
            tree = [(belief.variables[a], belief.variables[b]) for a, b in trees[int(k)]]
            q = tree_projection_oracle(belief, tree)
            assert best <= gaussian_kld(belief, q) + 1e-12


def belief_from_factors(var_poses, factors, gauge_target):
    """Assemble a belief the same way tree-factor graphs linearize:
    sum J^T info J plus a weak gauge prior."""
    variables = sorted(var_poses, key=lambda v: (not isinstance(v, SubmapId), v.session, v.index))
    index = {v: i for i, v in enumerate(variables)}
    dim = 3 * len(variables)
    info = np.zeros((dim, dim))
    for from_id, to_id, z, lam in factors:
        jx, jy = residual_jacobians(var_poses[from_id], var_poses[to_id], z)
        j = np.zeros((3, dim))
        j[:, 3 * index[from_id] : 3 * index[from_id] + 3] = jx
        j[:, 3 * index[to_id] : 3 * index[to_id] + 3] = jy
        info += j.T @ lam @ j
    b = 3 * index[gauge_target]
    info[b : b + 3, b : b + 3] += GAUGE_INFO * np.eye(3)
    mean = np.concatenate([var_poses[v].as_array() for v in variables])
    return GaussianBelief(variables, mean, info)


class TestTreeToFactors:
    def test_single_constraint_roundtrip(self, rng):
        parent = SubmapId(0, 0)
        child = NodeId(0, 5)
        pose_p = Pose2(0.7, -0.2, 0.3)
        z = Pose2(1.0, 0.4, -0.5)
        pose_c = compose(pose_p, z)
        lam = random_information(rng)
        belief = belief_from_factors(
            {parent: pose_p, child: pose_c}, [(child, parent, z, lam)], parent
        )
        edges = chow_liu_tree(belief)
        assert [(e.parent, e.child) for e in edges] == [(parent, child)]
        constraints, priors = tree_to_factors(belief, edges)
        assert len(constraints) == 1 and len(priors) == 1
        factor = constraints[0]
        assert factor.kind is ConstraintKind.NODE_TO_SUBMAP
        assert (factor.from_id, factor.to_id) == (child, parent)
        np.testing.assert_allclose(factor.z.as_array(), z.as_array(), atol=1e-9)
        np.testing.assert_allclose(factor.info, lam, atol=1e-6 * np.abs(lam).max())
        assert priors[0].target == parent

    def test_identity_mean_belief_gives_identity_z(self, rng):
        n = 3
        belief = random_belief(rng, n)
        belief.mean = np.zeros(3 * n)
        edges = chow_liu_tree(belief)
        constraints, _ = tree_to_factors(belief, edges)
        for c in constraints:
            np.testing.assert_allclose(c.z.as_array(), 0.0, atol=1e-12)

    def test_telescoping_reproduces_tree_joint(self, rng):
        # q built from a chain of relative-pose factors; converting its CLT
        # back to factors must reassemble q's information exactly
        m0, x0, x1, x2 = SubmapId(0, 0), NodeId(0, 0), NodeId(0, 1), NodeId(0, 2)
        poses = {m0: Pose2(0, 0, 0.2)}
        z1, z2, z3 = Pose2(1, 0.2, 0.3), Pose2(0.8, -0.1, -0.2), Pose2(0.5, 0.3, 0.4)
        poses[x0] = compose(poses[m0], z1)
        poses[x1] = compose(poses[x0], z2)
        poses[x2] = compose(poses[x1], z3)
        factors = [
            (x0, m0, z1, random_information(rng)),
            (x1, x0, z2, random_information(rng)),
            (x2, x1, z3, random_information(rng)),
        ]
        q = belief_from_factors(poses, factors, m0)
        edges = chow_liu_tree(q)
        constraints, priors = tree_to_factors(q, edges)

        rebuilt = np.zeros_like(q.information)
        index = {v: i for i, v in enumerate(q.variables)}
        for c in constraints:
            jx, jy = residual_jacobians(poses[c.from_id], poses[c.to_id], c.z)
            j = np.zeros((3, rebuilt.shape[0]))
            j[:, 3 * index[c.from_id] : 3 * index[c.from_id] + 3] = jx
            j[:, 3 * index[c.to_id] : 3 * index[c.to_id] + 3] = jy
            rebuilt += j.T @ c.info @ j
        for p in priors:
            jx, _ = residual_jacobians(poses[p.target], Pose2.identity(), p.pose)
            b = 3 * index[p.target]
            rebuilt[b : b + 3, b : b + 3] += jx.T @ p.info @ jx
        np.testing.assert_allclose(rebuilt, q.information, atol=1e-8)


def build_fig4_graph(rng):
    """Central submap m1^1 with member nodes x1^1, x2^1 and six neighbors."""
    g = PoseGraph()
    center = Pose2(0, 0, 0)
    submap_poses = {
        SubmapId(1, 0): Pose2(-1.5, 0, 0),
        SubmapId(1, 1): center,
        SubmapId(1, 2): Pose2(1.5, 0, 0),
        SubmapId(0, 7): Pose2(0.2, 1.0, 0.1),
    }
    for sid, pose in submap_poses.items():
        g.add_submap(Submap(sid, pose, OccupancyGrid(), state=SubmapState.FINISHED))
    node_poses = {
        NodeId(1, 0): Pose2(-1.2, 0.1, 0),
        NodeId(1, 1): Pose2(-0.4, 0.0, 0),
        NodeId(1, 2): Pose2(0.4, 0.0, 0),
        NodeId(1, 3): Pose2(1.2, -0.1, 0),
        NodeId(0, 9): Pose2(0.0, 0.6, 0.2),
    }
    memberships = {NodeId(1, 1): SubmapId(1, 1), NodeId(1, 2): SubmapId(1, 1),
                   NodeId(1, 0): SubmapId(1, 0), NodeId(1, 3): SubmapId(1, 2)}
    for nid, pose in node_poses.items():
        g.add_node(Node(nid, pose, None, float(nid.index), memberships.get(nid)))

    def pose_of(vid):
        return submap_poses.get(vid) or node_poses[vid]

    def link(kind, a, b):
        z = between(pose_of(b), pose_of(a))
        g.add_constraint(Constraint(kind, a, b, z, random_information(rng, scale=50.0)))

    link(ConstraintKind.NODE_TO_SUBMAP, NodeId(1, 1), SubmapId(1, 1))
    link(ConstraintKind.NODE_TO_SUBMAP, NodeId(1, 2), SubmapId(1, 1))
    link(ConstraintKind.ODOMETRY, NodeId(1, 1), NodeId(1, 0))
    link(ConstraintKind.ODOMETRY, NodeId(1, 2), NodeId(1, 1))
    link(ConstraintKind.ODOMETRY, NodeId(1, 3), NodeId(1, 2))
    link(ConstraintKind.NODE_TO_SUBMAP, NodeId(1, 1), SubmapId(1, 0))
    link(ConstraintKind.NODE_TO_SUBMAP, NodeId(1, 2), SubmapId(1, 2))
    link(ConstraintKind.NODE_TO_SUBMAP, NodeId(0, 9), SubmapId(1, 1))
    link(ConstraintKind.SUBMAP_TO_SUBMAP, SubmapId(1, 1), SubmapId(0, 7))
    g.add_prior(Prior(SubmapId(1, 0), submap_poses[SubmapId(1, 0)], 1e4 * np.eye(3)))
    return g


class TestSparsifySubmap:
    def test_fig4_scenario_tree_over_blanket(self, rng):
        g = build_fig4_graph(rng)
        targets = {SubmapId(1, 1), NodeId(1, 1), NodeId(1, 2)}
        blanket, _ = g.markov_blanket(targets)
        assert len(blanket) == 6
        mark_trimmed(g.submaps[SubmapId(1, 1)])
        before = g.complexity_report()
        delta = sparsify_submap(g, SubmapId(1, 1))
        g.check_integrity()
        assert set(delta.removed_variables) == targets
        for vid in targets:
            assert not g.has_variable(vid)
        # new pairwise factors form a forest over the blanket plus root priors
        assert len(delta.added_constraints) <= len(blanket) - 1
        assert len(delta.added_constraints) + len(delta.added_priors) <= len(blanket)
        for c in delta.added_constraints:
            assert c.from_id in blanket and c.to_id in blanket
            if isinstance(c.from_id, NodeId) and isinstance(c.to_id, NodeId):
                assert c.kind is ConstraintKind.NODE_TO_NODE
            elif isinstance(c.from_id, SubmapId) and isinstance(c.to_id, SubmapId):
                assert c.kind is ConstraintKind.SUBMAP_TO_SUBMAP
            else:
                assert c.kind is ConstraintKind.NODE_TO_SUBMAP
        report = g.complexity_report()
        assert report.nodes + report.submaps < before.nodes + before.submaps

    def test_requires_trimmed_state(self, rng):
        g = build_fig4_graph(rng)
        with pytest.raises(LifecycleError):
            sparsify_submap(g, SubmapId(1, 1))

    def test_isolated_submap_plain_deletion(self, rng):
        g = PoseGraph()
        sub = Submap(SubmapId(0, 0), Pose2.identity(), OccupancyGrid(),
                     state=SubmapState.FINISHED)
        g.add_submap(sub)
        g.add_node(Node(NodeId(0, 0), Pose2.identity(), None, 0.0, SubmapId(0, 0)))
        z = Pose2.identity()
        g.add_constraint(
            Constraint(ConstraintKind.NODE_TO_SUBMAP, NodeId(0, 0), SubmapId(0, 0), z, np.eye(3))
        )
        mark_trimmed(sub)
        delta = sparsify_submap(g, SubmapId(0, 0))
        assert delta.added_constraints == [] and delta.added_priors == []
        assert len(delta.removed_constraints) == 1
        assert g.complexity_report().as_tuple() == (0, 0, 0)

    def test_deterministic_delta(self, rng):
        g1 = build_fig4_graph(rng)
        g2 = copy.deepcopy(g1)
        for g in (g1, g2):
            mark_trimmed(g.submaps[SubmapId(1, 1)])
        d1 = sparsify_submap(g1, SubmapId(1, 1))
        d2 = sparsify_submap(g2, SubmapId(1, 1))
        assert [(c.kind, c.from_id, c.to_id) for c in d1.added_constraints] == [
            (c.kind, c.from_id, c.to_id) for c in d2.added_constraints
        ]
        for c1, c2 in zip(d1.added_constraints, d2.added_constraints):
            np.testing.assert_array_equal(c1.info, c2.info)
            assert c1.z == c2.z

    def test_never_increases_variable_count(self, rng):
        g = build_fig4_graph(rng)
        mark_trimmed(g.submaps[SubmapId(1, 1)])
        before = g.complexity_report()
        sparsify_submap(g, SubmapId(1, 1))
        after = g.complexity_report()
        assert after.nodes + after.submaps <= before.nodes + before.submaps

    def test_debug_dump_written(self, rng, tmp_path):
        g = build_fig4_graph(rng)
        mark_trimmed(g.submaps[SubmapId(1, 1)])
        sparsify_submap(g, SubmapId(1, 1), debug_dir=str(tmp_path))
        files = list(tmp_path.glob("elim_*.txt"))
        assert len(files) == 1
        text = files[0].read_text()
        assert "CLIQUE_INFORMATION" in text and "TREE" in text
