"""Weighted mesh partitioning, overlapping covers and the P1 partition of unity.

Subdomains are built by recursive bisection of the dual graph of a mesh
(simplices are nodes, shared edges are links), either geometrically
(inertial) or spectrally (Fiedler vector).  Each disjoint part is grown by
whole vertex rings into an overlapping patch, and the partition of unity is
the sum of the nodal hat functions of the vertices a subdomain owns.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import ArpackNoConvergence, eigsh
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from . import fem
from .fem import FeSpace
from .mesh import Mesh

log = logging.getLogger(__name__)


class CoverError(Exception):
    pass


class TooFewSimplices(CoverError):
    pass


class EigenNoConvergence(CoverError):
    pass


class SupportViolation(CoverError):
    pass


@dataclass
class Partition:
    """Disjoint assignment of the live simplices of a mesh to ``p`` parts.

    ``subdomain[r]`` is the part of the simplex ``simplex_ids[r]``.
    """

    simplex_ids: np.ndarray
    subdomain: np.ndarray
    p: int
    weights: np.ndarray
    warnings: list = field(default_factory=list)

    def part_weights(self) -> np.ndarray:
        return np.bincount(self.subdomain, weights=self.weights, minlength=self.p)

    def imbalance(self) -> float:
        w = self.part_weights()
        return float(w.max() / w.mean())

    def subdomain_of(self, s: int) -> int:
        return int(self.subdomain[np.searchsorted(self.simplex_ids, s)])


@dataclass
class Cover:
    """Overlapping patches: ``member[i, r]`` is true when row ``r`` lies in patch ``i``."""

    member: np.ndarray
    owner: np.ndarray
    layers: int
    simplex_ids: np.ndarray
    partition: Partition

    @property
    def p(self) -> int:
        return self.member.shape[0]

    def member_simplices(self, i: int) -> set:
        return set(int(s) for s in self.simplex_ids[self.member[i]])

    def counts(self) -> np.ndarray:
        """Number of patches containing each simplex."""
        return self.member.sum(axis=0)


@dataclass
class PuReport:
    M: int
    C_inf: float
    C_G: float
    diam_min: float
    sum_residual: float

    def as_dict(self) -> dict:
        return {"M": self.M, "C_inf": self.C_inf, "C_G": self.C_G,
                "diam_min": self.diam_min, "sum_residual": self.sum_residual}


@dataclass
class PartitionOfUnity:
    """Nodal coefficients of ``phi_i`` on the partitioning mesh, shape ``(p, n_vertices)``."""

    space: FeSpace
    coefficients: np.ndarray
    report: PuReport | None = None

    @property
    def p(self) -> int:
        return self.coefficients.shape[0]

    def function(self, i: int) -> fem.FeFunction:
        return self.space.function(self.coefficients[i])

    def evaluate(self, x):
        """Values and gradients of every ``phi_i`` at one point."""
        s, lam = self.space.mesh.locate_point(x)
        e = self.space.element_of(s)
        nodal = self.coefficients[:, self.space.T[e]]  # (p, 3)
        return nodal @ lam, nodal @ self.space.grad_hat[e]


# ----------------------------------------------------------------------
# graphs


def dual_graph(mesh: Mesh) -> sp.csr_matrix:
    """Adjacency of live simplices (rows in live-id order) sharing an edge."""
    live = mesh.live_ids()
    nbr = mesh.neighbors
    e, k = np.nonzero(nbr >= 0)
    cols = np.searchsorted(live, nbr[e, k])
    n = len(live)
    A = sp.coo_matrix((np.ones(len(e)), (e, cols)), shape=(n, n)).tocsr()
    A.data[:] = 1.0
    return A


def laplacian(adj: sp.spmatrix) -> sp.csr_matrix:
    adj = sp.csr_matrix(adj)
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return (sp.diags(deg) - adj).tocsr()


def fiedler_vector(L, tol: float = 1e-8, return_value: bool = False):
    """Eigenvector of the second-smallest eigenvalue of a connected graph Laplacian.

    The sign is fixed so the first entry with magnitude above ``tol`` is
    positive.  Small graphs use a dense symmetric eigensolver; larger ones
    use shift-invert Lanczos with a fixed start vector.
    """
    L = sp.csr_matrix(L, dtype=float)
    n = L.shape[0]
    if n < 2:
        raise EigenNoConvergence("graph has fewer than two nodes")
    if n <= 600:
        w, V = np.linalg.eigh(L.toarray())
        lam, v = float(w[1]), V[:, 1].copy()
    else:
        v0 = np.cos(np.arange(n) + 0.5)
        try:
            w, V = eigsh(L, k=2, sigma=-1e-3, which="LM", v0=v0, tol=tol * 1e-2)
        except ArpackNoConvergence as exc:
            raise EigenNoConvergence(str(exc)) from exc
        order = np.argsort(w)
        lam, v = float(w[order[1]]), V[:, order[1]].copy()
    v -= v.mean()
    v /= np.linalg.norm(v)
    res = float(np.linalg.norm(L @ v - lam * v))
    if res > tol * max(1.0, abs(lam)) * 10:
        raise EigenNoConvergence(f"eigen residual {res:.2e}")
    nz = np.flatnonzero(np.abs(v) > tol)
    if len(nz) and v[nz[0]] < 0:
        v = -v
    return (lam, v) if return_value else v


# ----------------------------------------------------------------------
# partitioning


def _weighted_cut(order: np.ndarray, w: np.ndarray) -> int:
    """Cut position minimizing the weight imbalance of ``order[:k] | order[k:]``."""
    n = len(order)
    cum = np.cumsum(w[order])
    total = cum[-1]
    k = np.arange(1, n)
    diff = np.abs(2 * cum[:-1] - total)
    # ties go to the cut closest to an even count split
    best = np.lexsort((np.abs(k - n / 2), np.round(diff, 12)))[0]
    return int(k[best])


def _components(adj: sp.csr_matrix, rows: np.ndarray):
    sub = adj[rows][:, rows]
    nc, labels = connected_components(sub, directed=False)
    return nc, labels


def _repair(adj, left: np.ndarray, right: np.ndarray):
    """Move stranded components of each side to the other side."""
    for _ in range(8):
        moved = False
        for side in (0, 1):
            a, b = (left, right) if side == 0 else (right, left)
            if len(a) == 0:
                continue
            nc, labels = _components(adj, a)
            if nc <= 1:
                continue
            sizes = np.bincount(labels)
            # keep the largest component, ties to the one with the smallest row
            firsts = np.array([a[labels == c].min() for c in range(nc)])
            keep = np.lexsort((firsts, -sizes))[0]
            b_mask = np.zeros(adj.shape[0], dtype=bool)
            b_mask[b] = True
            move = []
            for c in range(nc):
                if c == keep or sizes[c] >= len(a) / 2:
                    continue
                rows = a[labels == c]
                touching = adj[rows].indices
                if b_mask[touching].any():
                    move.append(rows)
            if move:
                mv = np.concatenate(move)
                a = np.setdiff1d(a, mv)
                b = np.union1d(b, mv)
                moved = True
            if side == 0:
                left, right = a, b
            else:
                right, left = a, b
        if not moved:
            break
    return np.sort(left), np.sort(right)


def _inertial_split(cent, w, rows):
    c = cent[rows]
    ww = w[rows]
    if ww.sum() <= 0:
        ww = np.ones(len(rows))
    mean = (ww[:, None] * c).sum(axis=0) / ww.sum()
    d = c - mean
    cov = (ww[:, None, None] * d[:, :, None] * d[:, None, :]).sum(axis=0)
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] - evals[0] <= 1e-9 * max(evals[1], 1e-300):
        axis = np.array([1.0, 0.0])
    else:
        axis = evecs[:, 1]
        nz = np.flatnonzero(np.abs(axis) > 1e-12)
        if axis[nz[0]] < 0:
            axis = -axis
    proj = c @ axis
    return np.lexsort((rows, np.round(proj, 12)))


def _recursive(mesh, weights, p, splitter):
    n = mesh.n_live
    if p < 1 or (p & (p - 1)):
        raise ValueError("p must be a power of two")
    if n < p:
        raise TooFewSimplices(f"{n} simplices cannot form {p} parts")
    w = np.asarray(weights, dtype=float)
    if len(w) != n or np.any(w < 0):
        raise ValueError("weights must be nonnegative, one per live simplex")
    if w.sum() <= 0:
        raise ValueError("total weight must be positive")
    adj = dual_graph(mesh)
    parts = [np.arange(n)]
    warnings = []
    while len(parts) < p:
        nxt = []
        for rows in parts:
            order = splitter(rows, warnings)
            k = _weighted_cut(order, w[rows])
            left, right = _repair(adj, np.sort(rows[order[:k]]), np.sort(rows[order[k:]]))
            nxt += [left, right]
        parts = nxt
    sub = np.empty(n, dtype=np.int64)
    for i, rows in enumerate(parts):
        sub[rows] = i
    return Partition(mesh.live_ids().copy(), sub, p, w, warnings)


def _centroids(mesh):
    return mesh.points[mesh.triangles].mean(axis=1)


def partition_inertial(mesh: Mesh, weights, p: int) -> Partition:
    """Recursive weighted-median bisection along the principal inertia axis."""
    cent = _centroids(mesh)
    w = np.asarray(weights, dtype=float)
    return _recursive(mesh, w, p, lambda rows, warn: _inertial_split(cent, w, rows))


def partition_spectral(mesh: Mesh, weights, p: int) -> Partition:
    """Recursive bisection at the weighted median of Fiedler vector values.

    A disconnected part is first split between its components.
    """
    adj = dual_graph(mesh)
    cent = _centroids(mesh)
    w = np.asarray(weights, dtype=float)

    def split(rows, warnings):
        nc, labels = _components(adj, rows)
        if nc > 1:
            # place whole components, heaviest first, on the lighter side
            cw = np.bincount(labels, weights=w[rows], minlength=nc)
            firsts = np.array([rows[labels == c].min() for c in range(nc)])
            side = np.zeros(nc, dtype=int)
            load = [0.0, 0.0]
            for c in np.lexsort((firsts, -cw)):
                s = 0 if load[0] <= load[1] else 1
                side[c] = s
                load[s] += cw[c]
            key = side[labels]
            return np.lexsort((rows, key))
        if len(rows) < 2:
            return np.arange(len(rows))
        try:
            f = fiedler_vector(laplacian(adj[rows][:, rows]))
        except EigenNoConvergence as exc:
            warnings.append(f"EigenNoConvergence: {exc}; inertial fallback")
            return _inertial_split(cent, w, rows)
        return np.lexsort((rows, np.round(f, 12)))

    return _recursive(mesh, w, p, split)


def partition(mesh: Mesh, weights, p: int, method: str = "inertial") -> Partition:
    if method == "inertial":
        return partition_inertial(mesh, weights, p)
    if method == "spectral":
        return partition_spectral(mesh, weights, p)
    raise ValueError(f"unknown partitioner {method!r}")


def cut_size(mesh: Mesh, part: Partition) -> int:
    adj = sp.triu(dual_graph(mesh)).tocoo()
    return int(np.count_nonzero(part.subdomain[adj.row] != part.subdomain[adj.col]))


# ----------------------------------------------------------------------
# overlap and partition of unity


def incidence(mesh: Mesh) -> sp.csr_matrix:
    """Vertex-by-live-simplex incidence matrix."""
    T = mesh.triangles
    n = len(T)
    rows = T.ravel()
    cols = np.repeat(np.arange(n), 3)
    return sp.csr_matrix((np.ones(3 * n), (rows, cols)), shape=(mesh.n_vertices, n))


def extend_overlap(mesh: Mesh, part: Partition, layers: int = 1) -> Cover:
    """Grow each part by the rings of its boundary vertices, ``layers`` times.

    Each vertex is owned by the smallest part index among its simplices.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    inc = incidence(mesh)
    T = mesh.triangles
    owner = np.full(mesh.n_vertices, part.p, dtype=np.int64)
    for k in range(3):
        np.minimum.at(owner, T[:, k], part.subdomain)
    member = np.zeros((part.p, len(T)), dtype=bool)
    member[part.subdomain, np.arange(len(T))] = True
    for i in range(part.p):
        m = member[i].astype(float)
        for _ in range(layers):
            verts = inc @ m > 0
            m = (inc.T @ verts.astype(float) > 0).astype(float)
        member[i] = m > 0
    return Cover(member, owner, layers, part.simplex_ids, part)


def _diameter(pts: np.ndarray) -> float:
    if len(pts) > 8:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass
    return float(pdist(pts).max()) if len(pts) > 1 else 0.0


def build_pu(mesh: Mesh, cover: Cover) -> PartitionOfUnity:
    """Partition of unity from vertex ownership; certifies support and constants.

    Raises
    ------
    SupportViolation
        If a simplex touching a vertex owned by ``i`` lies outside patch ``i``.
    """
    V = FeSpace(mesh, dirichlet_markers=())
    p = cover.p
    coeff = np.zeros((p, V.n_vertices))
    coeff[cover.owner, np.arange(V.n_vertices)] = 1.0
    T = V.T
    grad_max = 0.0
    diam = []
    for i in range(p):
        touches = (cover.owner[T] == i).any(axis=1)
        bad = touches & ~cover.member[i]
        if bad.any():
            raise SupportViolation(
                f"phi_{i} is nonzero on simplices {V.live[bad][:5].tolist()} outside patch {i}")
        g = np.einsum("nk,nkd->nd", coeff[i][T], V.grad_hat)
        grad_max = max(grad_max, float(np.linalg.norm(g, axis=1).max()))
        diam.append(_diameter(V.P[np.unique(T[cover.member[i]])]))
    pu = PartitionOfUnity(V, coeff)
    pu.report = PuReport(
        M=int(cover.counts().max()),
        C_inf=float(coeff.max()),
        C_G=grad_max,
        diam_min=float(min(diam)),
        sum_residual=pu_sum_residual(pu),
    )
    return pu


def pu_sum_residual(pu: PartitionOfUnity, points: np.ndarray | None = None) -> float:
    """``max |sum_i phi_i - 1|`` at quadrature points (default) or at given points."""
    V = pu.space
    if points is None:
        total = np.zeros(V.qpoints.shape[:2])
        for i in range(pu.p):
            total += V.values_at_quadrature(pu.coefficients[i])[0]
        return float(np.abs(total - 1).max())
    vals = np.array([pu.evaluate(x)[0].sum() for x in points])
    return float(np.abs(vals - 1).max())


def overlap_lemma_check(mesh: Mesh, cover: Cover, M: int, n_samples: int = 50, seed: int = 0):
    """Numeric check of the bounded-overlap H1 inequalities.

    For random P1 functions ``w`` checks
    ``sum_i ||w||^2_{H1(patch i)} <= M ||w||^2_{H1}``, and for random tuples
    ``w_i`` supported in patch ``i`` checks
    ``||sum_i w_i||^2_{H1} <= M sum_i ||w_i||^2_{H1(patch i)}``.
    Returns a dict with violation counts and the worst ratios.
    """
    V = FeSpace(mesh, dirichlet_markers=())
    rng = np.random.default_rng(seed)
    p = cover.p
    rtol = 1e-12
    # vertices whose whole ring lies in the patch may carry local functions
    inner = []
    for i in range(p):
        outside = V.T[~cover.member[i]].ravel()
        ok = np.ones(V.n_vertices, dtype=bool)
        ok[outside] = False
        inner.append(ok)
    out = {"first_violations": 0, "second_violations": 0,
           "first_worst": 0.0, "second_worst": 0.0}
    for _ in range(n_samples):
        w = rng.standard_normal(V.n_vertices)
        lhs = sum(fem.h1_norm_sq(V, w, cover.member[i]) for i in range(p))
        rhs = M * fem.h1_norm_sq(V, w)
        out["first_worst"] = max(out["first_worst"], lhs / rhs)
        out["first_violations"] += int(lhs > rhs * (1 + rtol))
    for _ in range(n_samples):
        ws = [np.where(inner[i], rng.standard_normal(V.n_vertices), 0.0) for i in range(p)]
        lhs = fem.h1_norm_sq(V, np.sum(ws, axis=0))
        rhs = M * sum(fem.h1_norm_sq(V, ws[i], cover.member[i]) for i in range(p))
        if rhs == 0:
            continue
        out["second_worst"] = max(out["second_worst"], lhs / rhs)
        out["second_violations"] += int(lhs > rhs * (1 + rtol))
    return out
