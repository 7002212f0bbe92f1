"""Model problems and built-in coarse domains."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fem import WeakProblem
from .mesh import Mesh, build_mesh

PI = np.pi


@dataclass
class ModelProblem:
    name: str
    problem: WeakProblem
    exact: Callable | None = None
    # regularity of the exact solution, u in H^{1+alpha}
    alpha: float = 1.0
    domain: str = "unit_square"


def _identity_diffusion(x, u, du):
    return np.zeros(np.shape(u)), np.broadcast_to(np.eye(2), np.shape(u) + (2, 2))


def poisson(name: str, f: Callable, g: Callable | None = None, **kw) -> WeakProblem:
    """``-lap u = f`` with Dirichlet data ``g`` (zero by default)."""

    def residual(x, u, du):
        return -f(x), du

    extra = {} if g is None else {"dirichlet_data": g}
    return WeakProblem(name, residual, _identity_diffusion, linear=True, **extra, **kw)


def _smooth_exact(x):
    sx, sy = np.sin(PI * x[..., 0]), np.sin(PI * x[..., 1])
    cx, cy = np.cos(PI * x[..., 0]), np.cos(PI * x[..., 1])
    return sx * sy, np.stack([PI * cx * sy, PI * sx * cy], axis=-1)


def poisson_smooth() -> ModelProblem:
    def f(x):
        return 2 * PI ** 2 * _smooth_exact(x)[0]

    return ModelProblem("poisson_smooth", poisson("poisson_smooth", f), _smooth_exact, 1.0)


def poisson_linear() -> ModelProblem:
    """Exact solution ``1 + 2x - 3y``, reproduced exactly by P1."""

    def exact(x):
        val = 1 + 2 * x[..., 0] - 3 * x[..., 1]
        grad = np.broadcast_to(np.array([2.0, -3.0]), np.shape(val) + (2,))
        return val, grad

    prob = poisson("poisson_linear", lambda x: np.zeros(x.shape[:-1]), lambda x: exact(x)[0])
    return ModelProblem("poisson_linear", prob, exact, np.inf)


def poisson_unit_load() -> ModelProblem:
    prob = poisson("poisson_unit_load", lambda x: np.ones(x.shape[:-1]))
    return ModelProblem("poisson_unit_load", prob, None, 1.0)


def _corner_exact(x):
    r = np.hypot(x[..., 0], x[..., 1])
    th = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * PI)
    with np.errstate(all="ignore"):
        val = r ** (2 / 3) * np.sin(2 * th / 3)
        # grad of r^a sin(a th) in polar components
        ur = (2 / 3) * r ** (-1 / 3) * np.sin(2 * th / 3)
        ut = (2 / 3) * r ** (-1 / 3) * np.cos(2 * th / 3)
        gx = ur * np.cos(th) - ut * np.sin(th)
        gy = ur * np.sin(th) + ut * np.cos(th)
    gx = np.where(r > 0, gx, 0.0)
    gy = np.where(r > 0, gy, 0.0)
    return np.where(r > 0, val, 0.0), np.stack([gx, gy], axis=-1)


def poisson_lshape() -> ModelProblem:
    """Harmonic corner singularity ``r^(2/3) sin(2 theta/3)`` on the L-shape."""
    prob = poisson("poisson_lshape", lambda x: np.zeros(x.shape[:-1]), lambda x: _corner_exact(x)[0])
    return ModelProblem("poisson_lshape", prob, _corner_exact, 2 / 3, domain="l_shape")


# coefficients of the Hamiltonian-constraint-style toy problem
TOY_C1, TOY_C2, TOY_C3 = 1.0, 0.1, 0.01


def _toy_exact(x):
    s, g = _smooth_exact(x)
    return 1 + 0.5 * s, 0.5 * g


def _toy_source(x):
    phi = _toy_exact(x)[0]
    s = _smooth_exact(x)[0]
    lap = -PI ** 2 * s  # laplacian of 0.5*sin*sin is -pi^2 sin sin
    return -lap + TOY_C1 * phi + TOY_C2 * phi ** 5 - TOY_C3 * phi ** -7


def hamiltonian_toy() -> ModelProblem:
    """``-lap phi + c1 phi + c2 phi^5 - c3 phi^-7 = g`` with manufactured ``phi``."""

    def residual(x, u, du):
        return TOY_C1 * u + TOY_C2 * u ** 5 - TOY_C3 * u ** -7 - _toy_source(x), du

    def jacobian(x, u, du):
        react = TOY_C1 + 5 * TOY_C2 * u ** 4 + 7 * TOY_C3 * u ** -8
        return react, np.broadcast_to(np.eye(2), np.shape(u) + (2, 2))

    prob = WeakProblem(
        "hamiltonian_toy", residual, jacobian,
        dirichlet_data=lambda x: _toy_exact(x)[0],
        feasible=lambda v: bool(np.all(v > 0)),
    )
    return ModelProblem("hamiltonian_toy", prob, _toy_exact, 1.0)


REGISTRY: dict[str, Callable[[], ModelProblem]] = {
    "poisson_smooth": poisson_smooth,
    "poisson_linear": poisson_linear,
    "poisson_unit_load": poisson_unit_load,
    "poisson_lshape": poisson_lshape,
    "hamiltonian_toy": hamiltonian_toy,
}


class UnknownProblem(KeyError):
    pass


class UnknownDomain(KeyError):
    pass


def get_problem(name: str) -> ModelProblem:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise UnknownProblem(f"unknown problem {name!r}; choose from {sorted(REGISTRY)}") from None


def _unit_square():
    verts = [((0, 0), 1), ((1, 0), 1), ((1, 1), 1), ((0, 1), 1)]
    return verts, [(0, 1, 2), (0, 2, 3)]


def _l_shape():
    # [-1,1]^2 minus [0,1]x[-1,0]: three unit squares, two triangles each
    pts = [(-1, -1), (0, -1), (-1, 0), (0, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]
    tris = [(0, 1, 3), (0, 3, 2), (2, 3, 6), (2, 6, 5), (3, 4, 7), (3, 7, 6)]
    return [(p, 1) for p in pts], tris


def _annulus_approx():
    # octagonal ring, radii 0.5 and 1, 16 triangles
    n = 8
    ang = 2 * np.pi * np.arange(n) / n
    outer = [((float(np.cos(a)), float(np.sin(a))), 1) for a in ang]
    inner = [((float(0.5 * np.cos(a)), float(0.5 * np.sin(a))), 2) for a in ang]
    tris = []
    for i in range(n):
        j = (i + 1) % n
        tris.append((i, j, n + j))
        tris.append((i, n + j, n + i))
    return outer + inner, tris


DOMAINS = {"unit_square": _unit_square, "l_shape": _l_shape, "annulus_approx": _annulus_approx}


def make_domain(name: str, initial_refines: int = 0) -> Mesh:
    """Built-in coarse mesh followed by ``initial_refines`` uniform bisection rounds."""
    try:
        verts, tris = DOMAINS[name]()
    except KeyError:
        raise UnknownDomain(f"unknown domain {name!r}; choose from {sorted(DOMAINS)}") from None
    mesh = build_mesh(verts, tris)
    return mesh.refine_uniform(initial_refines)
