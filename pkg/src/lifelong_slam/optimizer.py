"""Nonlinear least-squares refinement of all node and submap poses.

Levenberg-Marquardt on the stacked (x, y, theta) parameters with a sparse
Gauss-Newton Hessian approximation. Residuals and Jacobians are evaluated
vectorized over all constraints; variables are ordered nodes first, submaps
last (submaps have the highest degree, so late elimination reduces fill-in).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclasses_field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import ContractError, NumericalFailureError, RankDeficiencyError
from .geometry import Pose2
from .pose_graph import PoseGraph, VariableId, variable_order_key

_DENSE_LIMIT = 384  # below this many scalar unknowns a dense solve is faster
_LAMBDA_MAX = 1e12


@dataclass
class OptimizerConfig:
    max_iterations: int = 50
    convergence_tolerance: float = 1e-6
    damping: float = 1e-4

    def validate(self) -> None:
        if self.max_iterations < 1:
            raise ContractError("max_iterations must be >= 1")
        if self.convergence_tolerance <= 0:
            raise ContractError("convergence_tolerance must be > 0")
        if self.damping < 0:
            raise ContractError("damping must be >= 0")


@dataclass
class OptimizationReport:
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    cost_trace: list[float] = dataclasses_field(default_factory=list)  # accepted costs


class _Problem:
    """Vectorized view of a graph's constraints and priors."""

    def __init__(self, graph: PoseGraph):
        nodes = sorted(graph.nodes, key=variable_order_key)
        submaps = sorted(graph.submaps, key=variable_order_key)
        self.order: list[VariableId] = list(nodes) + list(submaps)
        self.index = {vid: i for i, vid in enumerate(self.order)}
        self.n = len(self.order)

        cids = sorted(graph.constraints)
        self.ci_from = np.array(
            [self.index[graph.constraints[c].from_id] for c in cids], dtype=np.int64
        )
        self.ci_to = np.array(
            [self.index[graph.constraints[c].to_id] for c in cids], dtype=np.int64
        )
        self.cz = np.array(
            [graph.constraints[c].z.as_array() for c in cids], dtype=np.float64
        ).reshape(-1, 3)
        self.cinfo = np.array(
            [graph.constraints[c].info for c in cids], dtype=np.float64
        ).reshape(-1, 3, 3)

        self.pi = np.array([self.index[p.target] for p in graph.priors], dtype=np.int64)
        self.pz = np.array([p.pose.as_array() for p in graph.priors], dtype=np.float64).reshape(-1, 3)
        self.pinfo = np.array([p.info for p in graph.priors], dtype=np.float64).reshape(-1, 3, 3)

    def stacked_poses(self, graph: PoseGraph) -> np.ndarray:
        return np.array([graph.pose_of(v).as_array() for v in self.order]).reshape(-1, 3)

    def write_back(self, graph: PoseGraph, x: np.ndarray) -> None:
        for i, vid in enumerate(self.order):
            graph.set_pose(vid, Pose2(x[i, 0], x[i, 1], x[i, 2]))

    # -- residuals ----------------------------------------------------------

    def _constraint_residuals(self, x: np.ndarray):
        pf = x[self.ci_from]
        pt = x[self.ci_to]
        dx = pf[:, 0] - pt[:, 0]
        dy = pf[:, 1] - pt[:, 1]
        ct, st = np.cos(pt[:, 2]), np.sin(pt[:, 2])
        bx = ct * dx + st * dy
        by = -st * dx + ct * dy
        cz, sz = np.cos(self.cz[:, 2]), np.sin(self.cz[:, 2])
        ex = cz * (bx - self.cz[:, 0]) + sz * (by - self.cz[:, 1])
        ey = -sz * (bx - self.cz[:, 0]) + cz * (by - self.cz[:, 1])
        eth = pf[:, 2] - pt[:, 2] - self.cz[:, 2]
        eth = np.arctan2(np.sin(eth), np.cos(eth))
        return np.stack([ex, ey, eth], axis=1), (dx, dy)

    def _prior_residuals(self, x: np.ndarray):
        xp = x[self.pi]
        dxp = xp[:, 0] - self.pz[:, 0]
        dyp = xp[:, 1] - self.pz[:, 1]
        cz, sz = np.cos(self.pz[:, 2]), np.sin(self.pz[:, 2])
        ex = cz * dxp + sz * dyp
        ey = -sz * dxp + cz * dyp
        eth = xp[:, 2] - self.pz[:, 2]
        eth = np.arctan2(np.sin(eth), np.cos(eth))
        return np.stack([ex, ey, eth], axis=1)

    def cost(self, x: np.ndarray) -> float:
        total = 0.0
        if len(self.ci_from):
            e, _ = self._constraint_residuals(x)
            total += float(np.einsum("ci,cij,cj->", e, self.cinfo, e))
        if len(self.pi):
            e = self._prior_residuals(x)
            total += float(np.einsum("ci,cij,cj->", e, self.pinfo, e))
        return total

    # -- linearization --------------------------------------------------------

    def linearize(self, x: np.ndarray):
        """Gauss-Newton system at x: H = sum J^T info J, g = sum J^T info e."""
        dim = 3 * self.n
        g = np.zeros(dim)
        rows: list[np.ndarray] = []
        cols: list[np.ndarray] = []
        vals: list[np.ndarray] = []
        r3 = np.arange(3)

        def scatter(block, vi, vj):
            # block: (C, 3, 3) contributions at variable slots vi, vj
            rows.append((3 * vi)[:, None, None] + r3[None, :, None] + np.zeros_like(block, dtype=np.int64))
            cols.append((3 * vj)[:, None, None] + r3[None, None, :] + np.zeros_like(block, dtype=np.int64))
            vals.append(block)

        if len(self.ci_from):
            e, (dx, dy) = self._constraint_residuals(x)
            pt = x[self.ci_to]
            alpha = pt[:, 2] + self.cz[:, 2]
            ca, sa = np.cos(alpha), np.sin(alpha)
            c = len(alpha)
            jf = np.zeros((c, 3, 3))
            jf[:, 0, 0] = ca
            jf[:, 0, 1] = sa
            jf[:, 1, 0] = -sa
            jf[:, 1, 1] = ca
            jf[:, 2, 2] = 1.0
            jt = np.zeros((c, 3, 3))
            jt[:, :2, :2] = -jf[:, :2, :2]
            jt[:, 0, 2] = ca * dy - sa * dx
            jt[:, 1, 2] = -sa * dy - ca * dx
            jt[:, 2, 2] = -1.0

            lf = np.einsum("cij,cjk->cik", self.cinfo, jf)
            lt = np.einsum("cij,cjk->cik", self.cinfo, jt)
            scatter(np.einsum("cji,cjk->cik", jf, lf), self.ci_from, self.ci_from)
            scatter(np.einsum("cji,cjk->cik", jf, lt), self.ci_from, self.ci_to)
            scatter(np.einsum("cji,cjk->cik", jt, lf), self.ci_to, self.ci_from)
            scatter(np.einsum("cji,cjk->cik", jt, lt), self.ci_to, self.ci_to)
            np.add.at(g, (3 * self.ci_from)[:, None] + r3, np.einsum("cji,cjk,ck->ci", jf, self.cinfo, e))
            np.add.at(g, (3 * self.ci_to)[:, None] + r3, np.einsum("cji,cjk,ck->ci", jt, self.cinfo, e))

        if len(self.pi):
            e = self._prior_residuals(x)
            cz, sz = np.cos(self.pz[:, 2]), np.sin(self.pz[:, 2])
            p = len(self.pi)
            jp = np.zeros((p, 3, 3))
            jp[:, 0, 0] = cz
            jp[:, 0, 1] = sz
            jp[:, 1, 0] = -sz
            jp[:, 1, 1] = cz
            jp[:, 2, 2] = 1.0
            scatter(np.einsum("cji,cjk,ckl->cil", jp, self.pinfo, jp), self.pi, self.pi)
            np.add.at(g, (3 * self.pi)[:, None] + r3, np.einsum("cji,cjk,ck->ci", jp, self.pinfo, e))

        if rows:
            h = scipy.sparse.coo_matrix(
                (
                    np.concatenate([v.ravel() for v in vals]),
                    (
                        np.concatenate([r.ravel() for r in rows]),
                        np.concatenate([c.ravel() for c in cols]),
                    ),
                ),
                shape=(dim, dim),
            ).tocsr()
        else:
            h = scipy.sparse.csr_matrix((dim, dim))
        return h, g


def evaluate_cost(graph: PoseGraph) -> float:
    """Total weighted squared error over all priors and constraints."""
    problem = _Problem(graph)
    if problem.n == 0:
        return 0.0
    return problem.cost(problem.stacked_poses(graph))


def evaluate_gradient(graph: PoseGraph) -> tuple[np.ndarray, list[VariableId]]:
    """Exact gradient of evaluate_cost w.r.t. stacked poses (2 J^T info e)."""
    problem = _Problem(graph)
    _, g = problem.linearize(problem.stacked_poses(graph))
    return 2.0 * g, problem.order


def solve_normal_equations(hessian, gradient: np.ndarray, damping: float) -> np.ndarray:
    """Solve (H + lambda*D) delta = -g with D = max(diag(H), 1e-12).

    Damping is grown by 10x on numerical failure; raises
    NumericalFailureError if the system stays unsolvable at the cap.
    """
    g = np.asarray(gradient, dtype=np.float64)
    dim = g.size
    sparse_h = scipy.sparse.issparse(hessian)
    diag = hessian.diagonal() if sparse_h else np.diag(hessian).copy()
    d = np.maximum(diag, 1e-12)
    lam = max(damping, 0.0)
    while True:
        try:
            if sparse_h and dim > _DENSE_LIMIT:
                a = (hessian + scipy.sparse.diags(lam * d)).tocsc()
                delta = scipy.sparse.linalg.spsolve(a, -g)
            else:
                a = (hessian.toarray() if sparse_h else np.asarray(hessian)) + np.diag(lam * d)
                c, low = scipy.linalg.cho_factor(a)
                delta = scipy.linalg.cho_solve((c, low), -g)
            if np.all(np.isfinite(delta)):
                residual = (hessian @ delta) + lam * d * delta + g
                if np.linalg.norm(residual) <= 1e-8 * (np.linalg.norm(g) + 1.0):
                    return delta
        except (scipy.linalg.LinAlgError, RuntimeError):
            pass
        lam = 10.0 * lam if lam > 0 else 1e-8
        if lam > _LAMBDA_MAX:
            raise NumericalFailureError(
                "normal equations remain singular at maximum damping"
            )


def _check_gauge(graph: PoseGraph) -> None:
    """Every constraint-connected component must contain at least one prior."""
    parent: dict[VariableId, VariableId] = {v: v for v in graph.variables()}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for c in graph.constraints.values():
        a, b = find(c.from_id), find(c.to_id)
        if a != b:
            parent[a] = b
    anchored = {find(p.target) for p in graph.priors}
    for v in graph.variables():
        if find(v) not in anchored:
            component = sorted(
                (u for u in graph.variables() if find(u) == find(v)),
                key=variable_order_key,
            )
            shown = ", ".join(str(u) for u in component[:5])
            if len(component) > 5:
                shown += ", ..."
            raise RankDeficiencyError(
                f"connected component without prior ({len(component)} variables: {shown})"
            )


def optimize(graph: PoseGraph, config: OptimizerConfig | None = None) -> OptimizationReport:
    """Minimize the graph cost in place; poses are updated and wrapped."""
    config = config or OptimizerConfig()
    config.validate()
    problem = _Problem(graph)
    if problem.n == 0:
        return OptimizationReport(0.0, 0.0, 0, True, [0.0])
    _check_gauge(graph)

    x = problem.stacked_poses(graph)
    cost = problem.cost(x)
    initial_cost = cost
    trace = [cost]
    lam = config.damping
    steps = 0
    converged = False

    for _ in range(config.max_iterations):
        if cost <= 1e-18:
            converged = True
            break
        h, g = problem.linearize(x)
        if np.max(np.abs(g), initial=0.0) < 1e-14 * (1.0 + cost):
            converged = True
            break
        accepted = False
        while True:
            delta = solve_normal_equations(h, g, lam)
            candidate = x + delta.reshape(-1, 3)
            candidate[:, 2] = np.arctan2(np.sin(candidate[:, 2]), np.cos(candidate[:, 2]))
            new_cost = problem.cost(candidate)
            if new_cost <= cost * (1.0 + 1e-14) + 1e-300:
                accepted = True
                break
            lam = 10.0 * lam if lam > 0 else 1e-8
            if lam > _LAMBDA_MAX:
                break
        if not accepted:
            converged = True  # no damped step decreases the cost: local minimum
            break
        x = candidate
        steps += 1
        decrease = cost - new_cost
        cost = min(new_cost, cost)
        trace.append(cost)
        if lam > 1e-12:
            lam /= 3.0
        if decrease <= config.convergence_tolerance * max(cost, 1e-300):
            converged = True
            break

    problem.write_back(graph, x)
    return OptimizationReport(initial_cost, cost, steps, converged, trace)
