"""Residual error indicators, marking, and localized dual problems."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fem
from .fem import FeFunction, FeSpace, WeakProblem
from .mesh import reconcile

_GAUSS2 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


@dataclass
class ErrorIndicator:
    """Per-simplex indicator values aligned with ``simplex_ids``."""

    simplex_ids: np.ndarray
    eta: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sqrt(np.sum(self.eta ** 2)))


@dataclass
class GoalFunctional:
    """Linear functional ``l(v) = int v * psi``."""

    psi: Callable
    name: str = "goal"

    def __call__(self, u: FeFunction) -> float:
        V = u.space
        uq, _ = V.values_at_quadrature(u.values)
        return fem.integrate(V, uq * self.psi(V.qpoints))


@dataclass
class DualSolution:
    omega: FeFunction
    # "primal" when the dual lives on the primal mesh, "refined" otherwise
    dual_space: str = "primal"
    linearization: str = "linearized-at-approximation"


def residual_indicator(problem: WeakProblem, u: FeFunction) -> ErrorIndicator:
    """Element residual plus flux-jump indicator.

    ``eta_T^2 = h_T^2 ||r||_T^2 + 1/2 sum_e h_e ||[flux . n]||_e^2`` where
    ``r`` is the pointwise source term of the residual form (the flux of a
    P1 function is elementwise constant for the built-in problems) and
    ``h_T`` is the longest edge of ``T``.
    """
    V = u.space
    uq, du = V.values_at_quadrature(u.values)
    duq = np.broadcast_to(du[:, None, :], V.qpoints.shape)
    with np.errstate(all="ignore"):
        source, _ = problem.residual_form(V.qpoints, uq, duq)
    source = np.broadcast_to(source, uq.shape)
    fem._check_finite(source)
    X = V.P[V.T]
    L = np.stack([np.linalg.norm(X[:, (k + 2) % 3] - X[:, (k + 1) % 3], axis=1) for k in range(3)], axis=1)
    hT = L.max(axis=1)
    eta2 = hT ** 2 * np.sum(V.qweights * source ** 2, axis=1)

    nbr = V.mesh.neighbors
    if len(nbr) != len(V.T):
        raise ValueError("mesh changed since the space was built")
    e_idx, k_idx = np.nonzero(nbr >= 0)
    if len(e_idx):
        n_rows = np.searchsorted(V.live, nbr[e_idx, k_idx])
        p = V.T[e_idx, (k_idx + 1) % 3]
        q = V.T[e_idx, (k_idx + 2) % 3]
        P, Q = V.P[p], V.P[q]
        edge = Q - P
        le = np.linalg.norm(edge, axis=1)
        normal = np.column_stack([edge[:, 1], -edge[:, 0]]) / le[:, None]
        jump2 = np.zeros(len(e_idx))
        for t in _GAUSS2:
            x = P + t * edge
            val = (1 - t) * u.values[p] + t * u.values[q]
            with np.errstate(all="ignore"):
                _, f_in = problem.residual_form(x, val, du[e_idx])
                _, f_out = problem.residual_form(x, val, du[n_rows])
            f_in = np.broadcast_to(f_in, x.shape)
            f_out = np.broadcast_to(f_out, x.shape)
            jump = np.einsum("nd,nd->n", f_in - f_out, normal)
            jump2 += 0.5 * le * jump ** 2
        np.add.at(eta2, e_idx, 0.5 * le * jump2)
    return ErrorIndicator(V.live.copy(), np.sqrt(eta2))


def restrict_indicator(ind: ErrorIndicator, region) -> ErrorIndicator:
    """Zero the indicator outside ``region`` (a set or mask of simplex ids)."""
    if isinstance(region, np.ndarray) and region.dtype == bool:
        keep = region
    else:
        keep = np.isin(ind.simplex_ids, np.fromiter(region, dtype=np.int64))
    return ErrorIndicator(ind.simplex_ids, np.where(keep, ind.eta, 0.0))


def mark(ind: ErrorIndicator, theta: float = 0.5) -> list[int]:
    """Smallest prefix in decreasing-eta order (ties by id) holding ``theta`` of the squared total."""
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    eta2 = ind.eta ** 2
    total = eta2.sum()
    if total == 0:
        return []
    order = np.lexsort((ind.simplex_ids, -eta2))
    cum = np.cumsum(eta2[order])
    if theta == 1:
        n = int(np.count_nonzero(eta2 > 0))
    else:
        n = int(np.searchsorted(cum, theta * total * (1 - 1e-14))) + 1
    return sorted(int(s) for s in ind.simplex_ids[order[:n]])


def solve_dual_localized(problem: WeakProblem, u: FeFunction, goal: GoalFunctional,
                         phi_i: FeFunction, space: FeSpace | None = None,
                         tol: float = 1e-12) -> DualSolution:
    """Discrete dual problem with data ``phi_i * psi``.

    The operator is the transposed Jacobian assembled at ``u``; ``phi_i`` is
    a coarse-mesh function, transferred exactly to ``space`` (a refinement).
    """
    if space is None:
        space = u.space
    u_d = u if space is u.space else fem.transfer(u, space)
    phi = fem.transfer(phi_i, space)
    load = dual_load(space, goal, phi)
    A = fem.assemble_jacobian(problem, u_d)
    if not problem.symmetric:
        A = A.T.tocsr()
    w = fem.solve_linear(A, load, tol=tol)
    omega = space.function()
    omega.coefficients = w
    return DualSolution(omega, "primal" if space is u.space else "refined")


def dual_load(space: FeSpace, goal: GoalFunctional, phi: FeFunction | None = None) -> np.ndarray:
    """``int phi * psi * lambda_j`` over free vertices (``phi = 1`` if omitted)."""
    psi = goal.psi(space.qpoints)
    if phi is not None:
        psi = psi * space.values_at_quadrature(phi.values)[0]
    return fem.assemble_load(space, psi)


def goal_error_term(problem: WeakProblem, u: FeFunction, omega: FeFunction) -> float:
    """``<F(u), omega>`` on a common refinement of the two meshes."""
    if omega.space is u.space:
        W = u.space
        return float(fem.assemble_residual(problem, u) @ omega.coefficients)
    Vu, Vw = u.space, omega.space
    if Vw.n_vertices >= Vu.n_vertices and _refines(Vw, Vu):
        W, uw, ww = Vw, fem.transfer(u, Vw), omega
    else:
        common = reconcile(Vu.mesh, Vw.mesh)
        W = FeSpace(common)
        uw, ww = fem.transfer(u, W), fem.transfer(omega, W)
    # omega vanishes on the Dirichlet boundary, so omitted rows do not matter
    return float(fem.assemble_residual(problem, uw) @ ww.values[W.free])


def _refines(fine: FeSpace, coarse: FeSpace) -> bool:
    try:
        fem.ancestor_rows(fine, coarse)
    except KeyError:
        return False
    return True


def goal_error_terms(problem: WeakProblem, u_locals, duals) -> list[float]:
    """Terms ``<F(u_i), omega_i>``; the error estimate of ``l(u - u_pp)`` is minus their sum."""
    return [goal_error_term(problem, u, d.omega if isinstance(d, DualSolution) else d)
            for u, d in zip(u_locals, duals)]


def check_local_tolerances(terms, epsilon: float):
    """Per-subdomain pass flags ``|term_i| < epsilon/p`` and the global guarantee flag."""
    p = len(terms)
    passes = [bool(abs(t) < epsilon / p) for t in terms]
    return passes, all(passes)
