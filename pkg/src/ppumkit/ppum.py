"""Parallel partition of unity driver.

1. solve on a global coarse mesh;
2. partition the coarse mesh into parts of equal indicator weight and
   build the overlapping cover and partition of unity;
3. give every task a private copy of the whole coarse mesh and let it run
   an adaptive loop whose marks are confined to its patch;
4. combine the local solutions as ``u_pp = sum_i phi_i u_i``.

The tasks share no mutable state, so they may run on a thread pool; the
result is identical to running them one after another.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import cover as cov
from . import estimate as est
from . import fem
from .fem import FeFunction, FeSpace, WeakProblem
from .mesh import Mesh, barycentric_many, reconcile_all

log = logging.getLogger(__name__)


class PpumError(Exception):
    pass


class ConfigError(PpumError, ValueError):
    pass


@dataclass
class PpumConfig:
    p: int = 4
    overlap_layers: int = 1
    partitioner: str = "inertial"
    theta: float = 0.5
    mode: str = "estimator"
    target_dofs: int = 2000
    epsilon: float = 1e-3
    max_rounds: int = 30
    dual_refine: bool = True
    # optional alternate stop in estimator mode: restricted indicator total
    eta_tol: float | None = None

    def validate(self) -> "PpumConfig":
        if self.p < 1 or (self.p & (self.p - 1)):
            raise ConfigError(f"p must be a power of two, got {self.p}")
        if self.overlap_layers < 1:
            raise ConfigError("overlap_layers must be >= 1")
        if self.partitioner not in ("inertial", "spectral"):
            raise ConfigError(f"unknown partitioner {self.partitioner!r}")
        if not 0 < self.theta <= 1:
            raise ConfigError("theta must lie in (0, 1]")
        if self.mode not in ("estimator", "goal"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "goal" and not self.epsilon > 0:
            raise ConfigError("epsilon must be positive in goal mode")
        if self.max_rounds < 0 or self.target_dofs < 0:
            raise ConfigError("max_rounds and target_dofs must be nonnegative")
        return self


@dataclass
class SubdomainTask:
    index: int
    region: np.ndarray          # coarse-row mask of the overlapped patch
    interior: np.ndarray        # coarse-row mask of the disjoint part
    mesh: Mesh
    u: FeFunction | None = None
    rounds: int = 0
    stop_reason: str = ""
    eta_total: float = float("nan")
    goal_term: float | None = None
    goal_history: list = field(default_factory=list)
    marks_total: int = 0
    marks_outside: int = 0
    refined_total: int = 0
    refined_outside: int = 0
    failure: str | None = None
    l2_err: float | None = None
    h1_err: float | None = None

    @property
    def dofs(self) -> int:
        return 0 if self.u is None else self.u.space.n_dofs


@dataclass
class PpumSolution:
    coarse_mesh: Mesh
    coarse_u: FeFunction
    partition: cov.Partition
    cover: cov.Cover
    pu: cov.PartitionOfUnity
    tasks: list
    config: PpumConfig
    report: dict = field(default_factory=dict)

    @property
    def meshes(self):
        return [t.mesh for t in self.tasks]

    @property
    def locals(self):
        return [t.u for t in self.tasks]


def coarse_row_map(mesh: Mesh, coarse: Mesh) -> np.ndarray:
    """For every simplex id of ``mesh`` (a refined copy of ``coarse``), the
    row of its coarse live ancestor, or -1 for coarse dead simplices."""
    n0 = coarse.n_simplices
    out = np.full(mesh.n_simplices, -1, dtype=np.int64)
    out[coarse.live_ids()] = np.arange(coarse.n_live)
    parent = np.asarray(mesh.sparent[n0:], dtype=np.int64)
    # children always have larger ids than their parents
    for j, par in enumerate(parent):
        out[n0 + j] = out[par]
    return out


def h_min_in(mesh: Mesh, rows_mask: np.ndarray, coarse: Mesh) -> float:
    """Shortest edge among live simplices descending from masked coarse rows."""
    cmap = coarse_row_map(mesh, coarse)[mesh.live_ids()]
    sel = rows_mask[cmap]
    return float(mesh.edge_lengths()[sel].min())


# ----------------------------------------------------------------------
# steps 1 and 2


def initial_guess(problem: WeakProblem, space: FeSpace) -> FeFunction:
    """Dirichlet data on the boundary; 1 inside when the problem needs positivity."""
    interior = 1.0 if problem.feasible is not None else 0.0
    return fem.dirichlet_function(problem, space, interior)


def coarse_solve(problem: WeakProblem, coarse_mesh: Mesh, tol: float = 1e-10):
    V = FeSpace(coarse_mesh, problem.dirichlet_markers)
    u, _trace = fem.solve_newton(problem, initial_guess(problem, V), tol=tol)
    return u


def decompose(problem: WeakProblem, coarse_u: FeFunction, coarse_mesh: Mesh, config: PpumConfig):
    """Partition by indicator weights, then build the cover and partition of unity."""
    ind = est.residual_indicator(problem, coarse_u)
    weights = ind.eta ** 2
    if weights.sum() <= 0:
        weights = np.ones_like(weights)
    part = cov.partition(coarse_mesh, weights, config.p, config.partitioner)
    cover = cov.extend_overlap(coarse_mesh, part, config.overlap_layers)
    pu = cov.build_pu(coarse_mesh, cover)
    return part, cover, pu


# ----------------------------------------------------------------------
# step 3


def _restart(problem, u_prev, V):
    if u_prev is None:
        return initial_guess(problem, V)
    u0 = fem.transfer(u_prev, V)
    if len(V.dirichlet):
        u0.values[V.dirichlet] = problem.dirichlet_data(V.P[V.dirichlet])
    return u0


def _dual_space(mesh: Mesh, problem: WeakProblem, refine: bool) -> FeSpace | None:
    if not refine:
        return None
    # one uniform level = two bisection rounds, halving the mesh size
    return FeSpace(mesh.copy().refine_uniform(2), problem.dirichlet_markers)


def local_adapt_solve(task: SubdomainTask, problem: WeakProblem, config: PpumConfig,
                      coarse_mesh: Mesh, coarse_u: FeFunction | None = None,
                      goal: est.GoalFunctional | None = None,
                      phi: FeFunction | None = None) -> SubdomainTask:
    """Adaptive loop on the task's private mesh with marks confined to its patch."""
    mesh = task.mesh
    u = coarse_u
    goal_mode = config.mode == "goal"
    for rnd in range(config.max_rounds + 1):
        V = FeSpace(mesh, problem.dirichlet_markers)
        u, _trace = fem.solve_newton(problem, _restart(problem, u, V))
        task.u = u
        task.rounds = rnd
        ind = est.residual_indicator(problem, u)
        cmap = coarse_row_map(mesh, coarse_mesh)[V.live]
        inside = task.region[cmap]
        ind = est.restrict_indicator(ind, inside)
        task.eta_total = ind.total
        if goal_mode:
            dual = est.solve_dual_localized(problem, u, goal, phi, _dual_space(mesh, problem, config.dual_refine))
            task.goal_term = est.goal_error_term(problem, u, dual.omega)
            task.goal_history.append(task.goal_term)
            if abs(task.goal_term) < config.epsilon / config.p:
                task.stop_reason = "tolerance"
                break
        elif config.eta_tol is not None and task.eta_total <= config.eta_tol:
            task.stop_reason = "eta_tol"
            break
        if not goal_mode and V.n_dofs >= config.target_dofs:
            task.stop_reason = "dofs"
            break
        if rnd == config.max_rounds:
            task.stop_reason = "max_rounds"
            if goal_mode:
                task.failure = "MaxRoundsWithoutTolerance"
            break
        marks = est.mark(ind, config.theta)
        if not marks:
            task.stop_reason = "no_marks"
            break
        rows = np.searchsorted(V.live, marks)
        task.marks_total += len(marks)
        task.marks_outside += int(np.count_nonzero(~inside[rows]))
        n_before = mesh.n_simplices
        mesh.bisect(marks)
        cm = coarse_row_map(mesh, coarse_mesh)
        new = cm[n_before:]
        # each bisection adds two children
        task.refined_total += len(new) // 2
        task.refined_outside += int(np.count_nonzero(~task.region[new])) // 2
    return task


def _run_task(args):
    task, problem, config, coarse_mesh, coarse_u, goal, phi = args
    try:
        local_adapt_solve(task, problem, config, coarse_mesh, coarse_u, goal, phi)
    except (fem.FemError, cov.CoverError, ValueError) as exc:
        task.failure = f"{type(exc).__name__}: {exc}"
        log.warning("task %d failed: %s", task.index, task.failure)
    return task


# ----------------------------------------------------------------------
# step 4 and evaluation


def combine_evaluate(sol: PpumSolution, x):
    """``u_pp(x)`` and its gradient by the product rule."""
    phis, dphis = sol.pu.evaluate(x)
    val = 0.0
    grad = np.zeros(2)
    for i, task in enumerate(sol.tasks):
        if phis[i] == 0.0:
            continue
        ui, gi = fem.evaluate(task.u, x)
        val += phis[i] * ui
        grad += dphis[i] * ui + phis[i] * gi
    return float(val), grad


def _rows_in(union: FeSpace, target: FeSpace) -> np.ndarray:
    return fem.ancestor_rows(union, target)


def combined_at_quadrature(sol: PpumSolution, union: FeSpace):
    """``u_pp`` values and gradients at the quadrature points of ``union``."""
    X = union.qpoints  # (n, q, 2)
    n, nq, _ = X.shape
    flat = X.reshape(-1, 2)
    pu_rows = np.repeat(_rows_in(union, sol.pu.space), nq)
    PV = sol.pu.space
    lam_c = barycentric_many(PV.P[PV.T[pu_rows]], flat)
    val = np.zeros(n * nq)
    grad = np.zeros((n * nq, 2))
    for i, task in enumerate(sol.tasks):
        nodal_phi = sol.pu.coefficients[i][PV.T[pu_rows]]
        phi = np.einsum("nk,nk->n", nodal_phi, lam_c)
        dphi = np.einsum("nk,nkd->nd", nodal_phi, PV.grad_hat[pu_rows])
        Vi = task.u.space
        rows = np.repeat(_rows_in(union, Vi), nq)
        lam = barycentric_many(Vi.P[Vi.T[rows]], flat)
        ui, gi = fem.evaluate_many(task.u, rows, lam)
        val += phi * ui
        grad += dphi * ui[:, None] + phi[:, None] * gi
    return val.reshape(n, nq), grad.reshape(n, nq, 2)


def union_space(sol: PpumSolution) -> FeSpace:
    return FeSpace(reconcile_all(sol.meshes), ())


def global_error(sol: PpumSolution, exact, union: FeSpace | None = None):
    """``(L2, H1-seminorm)`` errors of ``u_pp`` on the reconciled union mesh."""
    if union is None:
        union = union_space(sol)
    val, grad = combined_at_quadrature(sol, union)
    ev, eg = exact(union.qpoints)
    eg = np.broadcast_to(eg, grad.shape)
    w = union.qweights
    l2 = np.sum(w * (val - ev) ** 2)
    h1 = np.sum(w * ((grad - eg) ** 2).sum(axis=-1))
    return float(np.sqrt(l2)), float(np.sqrt(h1))


def goal_value(sol: PpumSolution, goal: est.GoalFunctional, union: FeSpace | None = None) -> float:
    """``l(u_pp)`` by quadrature on the union mesh."""
    if union is None:
        union = union_space(sol)
    val, _ = combined_at_quadrature(sol, union)
    return fem.integrate(union, val * goal.psi(union.qpoints))


def reference_solution(problem: WeakProblem, mesh: Mesh, levels: int = 2) -> FeFunction:
    """Global solve on ``mesh`` refined by ``levels`` uniform levels (2 bisection rounds each)."""
    fine = mesh.copy().refine_uniform(2 * levels)
    V = FeSpace(fine, problem.dirichlet_markers)
    u, _ = fem.solve_newton(problem, initial_guess(problem, V))
    return u


# ----------------------------------------------------------------------
# driver


def run_ppum(problem: WeakProblem, coarse_mesh: Mesh, config: PpumConfig,
             goal: est.GoalFunctional | None = None, exact=None,
             threads: int | None = None) -> PpumSolution:
    """Run all four steps; ``threads=1`` forces sequential task execution."""
    config.validate()
    if config.mode == "goal" and goal is None:
        raise ConfigError("goal mode requires a goal functional")
    coarse_u = coarse_solve(problem, coarse_mesh)
    part, cover, pu = decompose(problem, coarse_u, coarse_mesh, config)
    tasks = [
        SubdomainTask(i, cover.member[i].copy(), part.subdomain == i, coarse_mesh.copy())
        for i in range(config.p)
    ]
    args = [
        (t, problem, config, coarse_mesh, coarse_u, goal,
         pu.function(t.index) if goal is not None else None)
        for t in tasks
    ]
    workers = threads if threads is not None else min(config.p, 4)
    if workers <= 1:
        tasks = [_run_task(a) for a in args]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            tasks = list(pool.map(_run_task, args))
    sol = PpumSolution(coarse_mesh, coarse_u, part, cover, pu, tasks, config)
    sol.report = build_report(sol, exact, goal)
    return sol


def run_ppum_goal(problem: WeakProblem, coarse_mesh: Mesh, config: PpumConfig,
                  goal: est.GoalFunctional, exact=None, threads: int | None = None) -> PpumSolution:
    if config.mode != "goal":
        config = PpumConfig(**{**asdict(config), "mode": "goal"})
    return run_ppum(problem, coarse_mesh, config, goal, exact, threads)


def build_report(sol: PpumSolution, exact=None, goal=None) -> dict:
    cfg = sol.config
    per = []
    union = None
    failed = any(t.failure and t.u is None for t in sol.tasks)
    if exact is not None and not failed:
        union = union_space(sol)
    for t in sol.tasks:
        entry = {
            "index": t.index,
            "dofs": t.dofs,
            "rounds": t.rounds,
            "stop_reason": t.stop_reason,
            "eta_total": _num(t.eta_total),
            "goal_term": _num(t.goal_term),
            "l2_err": None,
            "h1_err": None,
            "h_min_interior": _num(h_min_in(t.mesh, t.interior, sol.coarse_mesh)),
            "marks_total": t.marks_total,
            "marks_outside": t.marks_outside,
            "refined_total": t.refined_total,
            "refined_outside": t.refined_outside,
            "failure": t.failure,
        }
        if exact is not None and t.u is not None:
            cmap = coarse_row_map(t.mesh, sol.coarse_mesh)[t.u.space.live]
            l2, h1 = fem.local_error_norms(t.u, exact, np.flatnonzero(t.region[cmap]))
            t.l2_err, t.h1_err = l2, h1
            entry["l2_err"], entry["h1_err"] = _num(l2), _num(h1)
        per.append(entry)
    glob = {"l2_err": None, "h1_err": None, "goal_estimate": None, "guarantee": None}
    if union is not None:
        l2, h1 = global_error(sol, exact, union)
        glob["l2_err"], glob["h1_err"] = _num(l2), _num(h1)
    if cfg.mode == "goal":
        terms = [t.goal_term if t.goal_term is not None else float("nan") for t in sol.tasks]
        passes, guarantee = est.check_local_tolerances(terms, cfg.epsilon)
        glob["goal_estimate"] = _num(-math.fsum(terms))
        glob["terms"] = [_num(x) for x in terms]
        glob["pass"] = passes
        glob["guarantee"] = guarantee
        glob["linearization"] = "linearized-at-approximation"
    return {
        "config": asdict(cfg),
        "pu_report": sol.pu.report.as_dict(),
        "partition_imbalance": _num(sol.partition.imbalance()),
        "partition_warnings": list(sol.partition.warnings),
        "per_subdomain": per,
        "global": glob,
    }


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
