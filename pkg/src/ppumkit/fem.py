"""P1 Lagrange finite elements on a :class:`~ppumkit.mesh.Mesh`.

A problem is given only through its weak forms.  ``residual_form`` returns,
at quadrature points, the pair ``(source, flux)`` so that

    <F(u), v> = sum_T  int_T  flux . grad v + source * v  dx,

and ``jacobian_form`` returns ``(reaction, diffusion)`` so that

    <DF(u) w, v> = sum_T  int_T  (diffusion grad w) . grad v + reaction * w * v  dx.

Dirichlet vertices are eliminated from the algebraic systems; their values
are stored on the :class:`FeFunction` and never change during a solve.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import Mesh, barycentric_many

log = logging.getLogger(__name__)

DIRICHLET = -1

# 6-point symmetric rule, exact for polynomials of degree 4
_A, _B = 0.445948490915965, 0.091576213509771
_WA, _WB = 0.223381589678011, 0.109951743655322
QUAD_BARY = np.array([
    [_A, _A, 1 - 2 * _A],
    [_A, 1 - 2 * _A, _A],
    [1 - 2 * _A, _A, _A],
    [_B, _B, 1 - 2 * _B],
    [_B, 1 - 2 * _B, _B],
    [1 - 2 * _B, _B, _B],
])
QUAD_WEIGHTS = np.array([_WA, _WA, _WA, _WB, _WB, _WB])


class FemError(Exception):
    pass


class QuadratureFailure(FemError):
    pass


class NoConvergence(FemError):
    def __init__(self, msg, x=None, info=None):
        super().__init__(msg)
        self.x = x
        self.info = info


class NotSPD(FemError):
    pass


class LineSearchFailure(FemError):
    pass


class MaxIterations(FemError):
    def __init__(self, msg, u=None, trace=None):
        super().__init__(msg)
        self.u = u
        self.trace = trace


class InfeasibleIterate(FemError):
    pass


def _zero(x):
    return np.zeros(x.shape[:-1])


@dataclass
class WeakProblem:
    """Elliptic problem defined by its residual and linearization forms.

    Form callables are vectorized: ``x`` has shape ``(..., 2)``, ``u`` shape
    ``(...)`` and ``grad`` shape ``(..., 2)``.
    """

    name: str
    residual_form: Callable
    jacobian_form: Callable
    dirichlet_data: Callable = _zero
    # None means every vertex with a positive boundary marker is Dirichlet
    dirichlet_markers: frozenset | None = None
    # optional admissibility test on nodal values (e.g. positivity)
    feasible: Callable | None = None
    linear: bool = False
    symmetric: bool = True


class FeSpace:
    """Continuous piecewise-linear functions on the current state of a mesh.

    The space snapshots the live simplices at construction; refining the
    mesh afterwards requires a new space.
    """

    def __init__(self, mesh: Mesh, dirichlet_markers=None):
        self.mesh = mesh
        self.live = mesh.live_ids().copy()
        self.T = mesh.triangles.copy()
        self.P = mesh.points.copy()
        markers = mesh.boundary_markers
        if dirichlet_markers is None:
            is_dir = markers > 0
        else:
            is_dir = np.isin(markers, list(dirichlet_markers))
        self.dof_of_vertex = np.full(len(self.P), DIRICHLET, dtype=np.int64)
        self.free = np.flatnonzero(~is_dir)
        self.dof_of_vertex[self.free] = np.arange(len(self.free))
        self.dirichlet = np.flatnonzero(is_dir)
        self._geometry()

    @property
    def n_dofs(self) -> int:
        return len(self.free)

    @property
    def n_vertices(self) -> int:
        return len(self.P)

    def _geometry(self):
        X = self.P[self.T]  # (n, 3, 2)
        d1 = X[:, 1] - X[:, 0]
        d2 = X[:, 2] - X[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        self.area = 0.5 * det
        g = np.empty((len(self.T), 3, 2))
        for k in range(3):
            p, q = X[:, (k + 1) % 3], X[:, (k + 2) % 3]
            # grad of the hat function at vertex k: rotated opposite edge / 2|T|
            g[:, k, 0] = (p[:, 1] - q[:, 1]) / det
            g[:, k, 1] = (q[:, 0] - p[:, 0]) / det
        self.grad_hat = g
        self.qpoints = np.einsum("qk,nkd->nqd", QUAD_BARY, X)
        self.qweights = self.area[:, None] * QUAD_WEIGHTS[None, :]

    def element_of(self, s: int) -> int:
        """Row index in ``T`` of live simplex id ``s``."""
        i = int(np.searchsorted(self.live, s))
        if i >= len(self.live) or self.live[i] != s:
            raise KeyError(f"simplex {s} not in this space")
        return i

    def values_at_quadrature(self, values: np.ndarray):
        """Nodal vector -> (values (n, 6), gradients (n, 2)) per element."""
        nodal = values[self.T]
        u = nodal @ QUAD_BARY.T
        du = np.einsum("nk,nkd->nd", nodal, self.grad_hat)
        return u, du

    def scatter(self, elem_vals: np.ndarray) -> np.ndarray:
        """Sum per-element local vectors ``(n, 3)`` into a nodal vector."""
        return np.bincount(self.T.ravel(), weights=elem_vals.ravel(), minlength=self.n_vertices)

    def function(self, values=None) -> "FeFunction":
        if values is None:
            values = np.zeros(self.n_vertices)
        return FeFunction(self, np.array(values, dtype=float))


@dataclass
class FeFunction:
    """Nodal values over all vertices of ``space`` (Dirichlet values included)."""

    space: FeSpace
    values: np.ndarray

    @property
    def coefficients(self) -> np.ndarray:
        return self.values[self.space.free]

    @coefficients.setter
    def coefficients(self, c):
        self.values[self.space.free] = c

    def copy(self) -> "FeFunction":
        return FeFunction(self.space, self.values.copy())

    def __call__(self, x):
        return evaluate(self, x)


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray | None = None


@dataclass
class CGInfo:
    iterations: int
    residual: float
    converged: bool
    history: list = field(default_factory=list)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise QuadratureFailure("non-finite integrand value")


def assemble_residual(problem: WeakProblem, u: FeFunction) -> np.ndarray:
    """Entries ``<F(u), lambda_j>`` for the free vertices ``j``."""
    V = u.space
    uq, du = V.values_at_quadrature(u.values)
    duq = np.broadcast_to(du[:, None, :], V.qpoints.shape)
    with np.errstate(all="ignore"):
        source, flux = problem.residual_form(V.qpoints, uq, duq)
    source = np.broadcast_to(source, uq.shape)
    flux = np.broadcast_to(flux, V.qpoints.shape)
    _check_finite(source, flux)
    w = V.qweights
    # flux . grad(lambda_k) + source * lambda_k, integrated
    loc = np.einsum("nq,nqd,nkd->nk", w, flux, V.grad_hat)
    loc += np.einsum("nq,nq,qk->nk", w, source, QUAD_BARY)
    return V.scatter(loc)[V.free]


def assemble_jacobian(problem: WeakProblem, u: FeFunction) -> sp.csr_matrix:
    """Matrix ``(i, j) -> <DF(u) lambda_j, lambda_i>`` over the free vertices."""
    V = u.space
    uq, du = V.values_at_quadrature(u.values)
    duq = np.broadcast_to(du[:, None, :], V.qpoints.shape)
    with np.errstate(all="ignore"):
        reaction, diffusion = problem.jacobian_form(V.qpoints, uq, duq)
    reaction = np.broadcast_to(reaction, uq.shape)
    diffusion = np.broadcast_to(diffusion, uq.shape + (2, 2))
    _check_finite(reaction, diffusion)
    w = V.qweights
    G = V.grad_hat
    K = np.einsum("nq,nqde,nje,nid->nij", w, diffusion, G, G)
    K += np.einsum("nq,nq,qi,qj->nij", w, reaction, QUAD_BARY, QUAD_BARY)
    return _to_free_csr(V, K)


def assemble_mass(space: FeSpace) -> sp.csr_matrix:
    K = np.einsum("nq,qi,qj->nij", space.qweights, QUAD_BARY, QUAD_BARY)
    return _to_free_csr(space, K)


def _to_free_csr(V: FeSpace, K: np.ndarray) -> sp.csr_matrix:
    dof = V.dof_of_vertex[V.T]  # (n, 3)
    rows = np.repeat(dof, 3, axis=1).ravel()
    cols = np.tile(dof, (1, 3)).ravel()
    vals = K.ravel()
    keep = (rows >= 0) & (cols >= 0)
    n = V.n_dofs
    A = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def assemble_load(space: FeSpace, density) -> np.ndarray:
    """``int density * lambda_j`` for free ``j``; ``density`` maps ``x -> values``
    or is an array of values at the quadrature points, shape ``(n, 6)``."""
    q = density(space.qpoints) if callable(density) else density
    q = np.broadcast_to(q, space.qweights.shape)
    _check_finite(q)
    loc = np.einsum("nq,nq,qk->nk", space.qweights, q, QUAD_BARY)
    return space.scatter(loc)[space.free]


def integrate(space: FeSpace, density) -> float:
    q = density(space.qpoints) if callable(density) else density
    return float(np.sum(space.qweights * q))


class SymmetricGaussSeidel:
    """Symmetric Gauss-Seidel preconditioner ``M = (D+L) D^-1 (D+U)``."""

    def __init__(self, A: sp.csr_matrix):
        d = A.diagonal()
        if np.any(d <= 0):
            raise NotSPD("nonpositive diagonal entry")
        self.d = d
        opts = dict(permc_spec="NATURAL", diag_pivot_thresh=0.0,
                    options=dict(SymmetricMode=True))
        self._lower = splu(sp.tril(A, format="csc"), **opts)
        self._upper = splu(sp.triu(A, format="csc"), **opts)

    def __call__(self, r):
        return self._upper.solve(self.d * self._lower.solve(r))


def solve_linear(A, b, tol: float = 1e-12, max_iter: int | None = None,
                 full_output: bool = False):
    """Preconditioned conjugate gradients from a zero initial guess.

    Stops when ``||b - A x|| <= tol * ||b||``.  With ``full_output`` the
    return value is ``(x, CGInfo)`` and non-convergence is reported in the
    info instead of raising :class:`NoConvergence`.
    """
    if isinstance(A, SparseSystem):
        A, b = A.matrix, A.rhs if b is None else b
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = len(b)
    if max_iter is None:
        max_iter = max(10 * n, 100)
    x = np.zeros(n)
    bnorm = float(np.linalg.norm(b))
    info = CGInfo(0, 0.0, True)
    if n == 0 or bnorm == 0.0:
        return (x, info) if full_output else x
    M = SymmetricGaussSeidel(A)
    r = b.copy()
    z = M(r)
    d = z.copy()
    rz = float(r @ z)
    rnorm = bnorm
    best_x, best_r = x.copy(), rnorm
    for k in range(1, max_iter + 1):
        Ad = A @ d
        dAd = float(d @ Ad)
        if dAd <= 0:
            raise NotSPD(f"d^T A d = {dAd:.3e} at iteration {k}")
        alpha = rz / dAd
        x += alpha * d
        r -= alpha * Ad
        rnorm = float(np.linalg.norm(r))
        info.history.append(rnorm / bnorm)
        if rnorm < best_r:
            best_x, best_r = x.copy(), rnorm
        if rnorm <= tol * bnorm:
            info.iterations, info.residual = k, rnorm / bnorm
            return (x, info) if full_output else x
        z = M(r)
        rz_new = float(r @ z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    info.iterations, info.residual, info.converged = max_iter, best_r / bnorm, False
    if full_output:
        return best_x, info
    raise NoConvergence(f"CG did not reach {tol:g} in {max_iter} iterations", best_x, info)


def solve_newton(problem: WeakProblem, u0: FeFunction, tol: float = 1e-10,
                 max_iter: int = 50, linear_tol: float = 1e-13):
    """Damped Newton iteration; returns ``(u, trace)`` of residual 2-norms.

    Each step is halved (up to 30 times) until the residual norm decreases
    and the iterate stays feasible.
    """
    u = u0.copy()
    if problem.feasible is not None and not problem.feasible(u.values):
        raise InfeasibleIterate("initial guess violates the problem's admissibility test")
    r = assemble_residual(problem, u)
    norm = float(np.linalg.norm(r))
    trace = [norm]
    for _ in range(max_iter):
        if norm <= tol:
            return u, trace
        J = assemble_jacobian(problem, u)
        du, _info = solve_linear(J, -r, tol=linear_tol, full_output=True)
        step = 1.0
        for _halving in range(31):
            trial = u.copy()
            trial.coefficients = u.coefficients + step * du
            ok = problem.feasible is None or problem.feasible(trial.values)
            if ok:
                try:
                    rt = assemble_residual(problem, trial)
                except QuadratureFailure:
                    ok = False
            if ok:
                tnorm = float(np.linalg.norm(rt))
                if tnorm < (1.0 - 1e-4 * step) * norm:
                    break
            step *= 0.5
        else:
            raise LineSearchFailure(f"no decrease after 30 halvings (residual {norm:.3e})")
        u, r, norm = trial, rt, tnorm
        trace.append(norm)
    if norm <= tol:
        return u, trace
    raise MaxIterations(f"residual {norm:.3e} > {tol:g} after {max_iter} iterations", u, trace)


def solve(problem: WeakProblem, space: FeSpace, u0: FeFunction | None = None,
          tol: float = 1e-10, max_iter: int = 50):
    """Solve on ``space`` starting from ``u0`` (default: Dirichlet data, zero inside)."""
    if u0 is None:
        u0 = dirichlet_function(problem, space)
    return solve_newton(problem, u0, tol=tol, max_iter=max_iter)


def dirichlet_function(problem: WeakProblem, space: FeSpace, interior=0.0) -> FeFunction:
    u = space.function()
    u.values[:] = interior
    if len(space.dirichlet):
        u.values[space.dirichlet] = problem.dirichlet_data(space.P[space.dirichlet])
    return u


def interpolate(space: FeSpace, g) -> FeFunction:
    """Nodal interpolant of ``g``; ``g`` maps ``(n, 2)`` points to ``(n,)`` values."""
    vals = np.asarray(g(space.P), dtype=float)
    return space.function(np.broadcast_to(vals, (space.n_vertices,)).copy())


def evaluate(u: FeFunction, x, seed=None):
    """Value and gradient of ``u`` at point ``x``."""
    V = u.space
    s, lam = V.mesh.locate_point(x, seed=seed)
    e = V.element_of(s)
    nodal = u.values[V.T[e]]
    return float(lam @ nodal), nodal @ V.grad_hat[e]


def evaluate_many(u: FeFunction, elems: np.ndarray, lam: np.ndarray):
    """Values/gradients at points given by element rows and barycentrics."""
    V = u.space
    nodal = u.values[V.T[elems]]
    return np.einsum("nk,nk->n", nodal, lam), np.einsum("nk,nkd->nd", nodal, V.grad_hat[elems])


def error_norms(u: FeFunction, exact) -> tuple[float, float]:
    """``(||u - exact||_L2, |u - exact|_H1)`` by 6-point quadrature.

    ``exact`` maps points ``(..., 2)`` to ``(value, gradient)``.
    """
    V = u.space
    uq, du = V.values_at_quadrature(u.values)
    ev, eg = exact(V.qpoints)
    eg = np.broadcast_to(eg, V.qpoints.shape)
    l2 = np.sum(V.qweights * (uq - ev) ** 2)
    h1 = np.sum(V.qweights * ((du[:, None, :] - eg) ** 2).sum(axis=-1))
    return float(np.sqrt(l2)), float(np.sqrt(h1))


def local_error_norms(u: FeFunction, exact, elements: np.ndarray):
    """Like :func:`error_norms` but restricted to element rows ``elements``."""
    V = u.space
    uq, du = V.values_at_quadrature(u.values)
    ev, eg = exact(V.qpoints)
    eg = np.broadcast_to(eg, V.qpoints.shape)
    w = V.qweights[elements]
    l2 = np.sum(w * (uq[elements] - ev[elements]) ** 2)
    h1 = np.sum(w * ((du[elements, None, :] - eg[elements]) ** 2).sum(axis=-1))
    return float(np.sqrt(l2)), float(np.sqrt(h1))


def h1_norm_sq(space: FeSpace, values: np.ndarray, elements=None) -> float:
    """Squared full H1 norm of a nodal vector, optionally over element rows."""
    uq, du = space.values_at_quadrature(values)
    w = space.qweights
    per_elem = np.sum(w * uq ** 2, axis=1) + space.area * (du ** 2).sum(axis=1)
    if elements is not None:
        per_elem = per_elem[elements]
    return float(per_elem.sum())


def transfer(u: FeFunction, space: FeSpace) -> FeFunction:
    """Interpolate ``u`` onto ``space``, whose mesh refines ``u``'s mesh by bisection.

    Exact: a P1 function is linear on every descendant simplex.
    """
    src = u.space
    rows = ancestor_rows(space, src)
    # each fine vertex takes its value from the coarse element of a fine simplex using it
    vals = np.empty(space.n_vertices)
    owner = np.empty(space.n_vertices, dtype=np.int64)
    owner[space.T.ravel()] = np.repeat(np.arange(len(space.T)), 3)
    coarse_rows = rows[owner]
    lam = barycentric_many(src.P[src.T[coarse_rows]], space.P)
    vals[:] = np.einsum("nk,nk->n", lam, u.values[src.T[coarse_rows]])
    return space.function(vals)


def _ancestor_row(mesh: Mesh, s: int, keys: dict) -> int:
    while True:
        hit = keys.get((mesh.sroot[s], mesh.scode[s]))
        if hit is not None:
            return hit
        s = mesh.sparent[s]
        if s < 0:
            raise KeyError("mesh is not a refinement of the source mesh")


def ancestor_rows(fine: FeSpace, coarse: FeSpace) -> np.ndarray:
    """For each element of ``fine``, the element row of ``coarse`` containing it."""
    cm = coarse.mesh
    keys = {(cm.sroot[s], cm.scode[s]): i for i, s in enumerate(coarse.live)}
    fm = fine.mesh
    return np.array([_ancestor_row(fm, int(s), keys) for s in fine.live], dtype=np.int64)


def jacobian_fd_check(problem: WeakProblem, u: FeFunction, n_directions: int = 20,
                      eps: float = 1e-6, seed: int = 0) -> np.ndarray:
    """Relative errors of ``J w`` against one-sided differences of the residual.

    Directions are random unit vectors over the free dofs.
    """
    rng = np.random.default_rng(seed)
    J = assemble_jacobian(problem, u)
    r0 = assemble_residual(problem, u)
    errs = np.empty(n_directions)
    for k in range(n_directions):
        w = rng.standard_normal(u.space.n_dofs)
        w /= np.linalg.norm(w)
        up = u.copy()
        up.coefficients = u.coefficients + eps * w
        fd = (assemble_residual(problem, up) - r0) / eps
        Jw = J @ w
        errs[k] = np.linalg.norm(fd - Jw) / np.linalg.norm(Jw)
    return errs
