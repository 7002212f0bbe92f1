"""Ringed-vertex triangle mesh with longest-edge bisection.

Every vertex and simplex is a fixed-size record stored in parallel lists
indexed by its integer id.  A simplex stores its three vertices
(counterclockwise), the neighbor across each face (``nbrs[k]`` is across
the face opposite ``verts[k]``), its bisection generation and its position
in the refinement forest.  A vertex stores its coordinates, a boundary
marker and a single *anchor* simplex; the ring of simplices around a
vertex is recovered by walking neighbor links from the anchor.

Refined simplices are flagged dead and kept, so the whole bisection forest
stays available.  Two meshes descending from the same initial mesh can
therefore be reconciled (see :func:`reconcile`) by replaying bisections.

Examples
--------
>>> m = build_mesh([((0, 0), 1), ((1, 0), 1), ((1, 1), 1), ((0, 1), 1)],
...                [(0, 1, 2), (0, 2, 3)])
>>> report = m.bisect(m.live_ids())
>>> m.n_live, m.n_vertices
(4, 5)
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

NO_NEIGHBOR = -1

# relative tolerance for treating two edge lengths as equal
_TIE_RTOL = 1e-12


class MeshError(Exception):
    """Base class for mesh errors."""


class NonConforming(MeshError):
    pass


class DegenerateSimplex(MeshError):
    pass


class DanglingVertex(MeshError):
    pass


class OutsideDomain(MeshError):
    pass


class IncompatibleGenealogy(MeshError):
    pass


@dataclass
class RefinementReport:
    """Summary of one :meth:`Mesh.bisect` call."""

    n_marked: int = 0
    n_bisections: int = 0
    n_closure: int = 0
    quality_min: float = 1.0
    warnings: list = field(default_factory=list)


def _orient2d(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


class Mesh:
    """Conforming 2D simplicial mesh; see the module docstring.

    Use :func:`build_mesh` to construct one from raw connectivity.
    """

    dim = 2

    def __init__(self):
        # vertex records
        self.vx: list[float] = []
        self.vy: list[float] = []
        self.vmarker: list[int] = []
        self.vanchor: list[int] = []
        # simplex records
        self.sverts: list[list[int]] = []
        self.snbrs: list[list[int]] = []
        self.sgen: list[int] = []
        self.salive: list[bool] = []
        self.sparent: list[int] = []
        self.schildren: list[tuple[int, int] | None] = []
        self.sroot: list[int] = []
        self.scode: list[int] = []
        self.ssub: list[int | None] = []
        self._edge_mid: dict[tuple[int, int], int] = {}
        self.n_roots = 0
        self.fingerprint = ""
        self.quality_floor = 0.05
        self._version = 0
        self._cache: dict = {}
        self._key_index: dict | None = None

    # ------------------------------------------------------------------
    # basic queries

    @property
    def n_vertices(self) -> int:
        return len(self.vx)

    @property
    def n_simplices(self) -> int:
        """Number of simplex records, dead ones included."""
        return len(self.sverts)

    @property
    def n_live(self) -> int:
        return len(self.live_ids())

    def _cached(self, name, fn):
        hit = self._cache.get(name)
        if hit is not None and hit[0] == self._version:
            return hit[1]
        val = fn()
        self._cache[name] = (self._version, val)
        return val

    def live_ids(self) -> np.ndarray:
        """Ids of live simplices in increasing order."""
        return self._cached(
            "live", lambda: np.flatnonzero(np.array(self.salive, dtype=bool))
        )

    @property
    def points(self) -> np.ndarray:
        """Vertex coordinates, shape ``(n_vertices, 2)``."""
        return self._cached(
            "points", lambda: np.column_stack([self.vx, self.vy]).astype(float)
        )

    @property
    def triangles(self) -> np.ndarray:
        """Vertex ids of the live simplices, shape ``(n_live, 3)``."""
        def build():
            verts = self.sverts
            return np.array([verts[s] for s in self.live_ids()], dtype=np.int64).reshape(-1, 3)
        return self._cached("tris", build)

    @property
    def neighbors(self) -> np.ndarray:
        """Neighbor simplex ids of the live simplices (``-1`` on the boundary)."""
        def build():
            nbrs = self.snbrs
            return np.array([nbrs[s] for s in self.live_ids()], dtype=np.int64).reshape(-1, 3)
        return self._cached("nbrs", build)

    @property
    def roots(self) -> np.ndarray:
        """Initial-mesh ancestor of each live simplex."""
        return self._cached(
            "roots", lambda: np.array(self.sroot, dtype=np.int64)[self.live_ids()]
        )

    @property
    def boundary_markers(self) -> np.ndarray:
        return np.array(self.vmarker, dtype=np.int64)

    def coords(self, v: int) -> tuple[float, float]:
        return (self.vx[v], self.vy[v])

    def key(self, s: int) -> tuple[int, int]:
        """Genealogy key ``(root, path code)``, identical across mesh copies."""
        return (self.sroot[s], self.scode[s])

    def key_index(self) -> dict:
        """Map from genealogy key to simplex id, dead simplices included."""
        if self._key_index is None or len(self._key_index) != len(self.sverts):
            self._key_index = {(r, c): s for s, (r, c) in enumerate(zip(self.sroot, self.scode))}
        return self._key_index

    def area(self, s: int) -> float:
        a, b, c = self.sverts[s]
        vx, vy = self.vx, self.vy
        return 0.5 * _orient2d(vx[a], vy[a], vx[b], vy[b], vx[c], vy[c])

    def areas(self) -> np.ndarray:
        P = self.points
        T = self.triangles
        d1 = P[T[:, 1]] - P[T[:, 0]]
        d2 = P[T[:, 2]] - P[T[:, 0]]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_lengths(self) -> np.ndarray:
        """Edge lengths of live simplices; column k is the edge opposite vertex k."""
        P = self.points
        T = self.triangles
        out = np.empty(T.shape, dtype=float)
        for k in range(3):
            out[:, k] = np.linalg.norm(P[T[:, (k + 1) % 3]] - P[T[:, (k + 2) % 3]], axis=1)
        return out

    def qualities(self) -> np.ndarray:
        L = self.edge_lengths()
        return 4.0 * math.sqrt(3.0) * self.areas() / (L ** 2).sum(axis=1)

    @property
    def h_max(self) -> float:
        return float(self.edge_lengths().max())

    @property
    def h_min(self) -> float:
        return float(self.edge_lengths().min())

    @property
    def quality_min(self) -> float:
        return float(self.qualities().min())

    # ------------------------------------------------------------------
    # topology

    def ring(self, v: int) -> list[int]:
        """Live simplices around vertex ``v``, in rotational order.

        For a boundary vertex the fan is open; the walk then also runs from
        the anchor in the opposite direction.
        """
        verts, nbrs = self.sverts, self.snbrs
        s0 = self.vanchor[v]
        fwd = [s0]
        s = s0
        while True:
            i = verts[s].index(v)
            n = nbrs[s][(i + 2) % 3]
            if n == s0:
                return fwd
            if n == NO_NEIGHBOR:
                break
            fwd.append(n)
            s = n
        back = []
        s = s0
        while True:
            i = verts[s].index(v)
            n = nbrs[s][(i + 1) % 3]
            if n == NO_NEIGHBOR:
                break
            back.append(n)
            s = n
        return back[::-1] + fwd

    def vertex_to_simplices(self) -> list[list[int]]:
        """Brute-force incidence lists of live simplices per vertex."""
        out: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for s in self.live_ids():
            for v in self.sverts[s]:
                out[v].append(int(s))
        return out

    # ------------------------------------------------------------------
    # refinement

    def _longest_edge(self, s: int) -> int:
        """Local index of the vertex opposite the bisection edge of ``s``."""
        verts = self.sverts[s]
        vx, vy = self.vx, self.vy
        best = -1
        best_len = -1.0
        best_key = None
        for k in range(3):
            p, q = verts[(k + 1) % 3], verts[(k + 2) % 3]
            cp, cq = (vx[p], vy[p]), (vx[q], vy[q])
            if cq < cp:
                cp, cq = cq, cp
            ln = (cq[0] - cp[0]) ** 2 + (cq[1] - cp[1]) ** 2
            key = (cp, cq)
            if best < 0 or ln > best_len * (1 + _TIE_RTOL):
                best, best_len, best_key = k, ln, key
            elif ln >= best_len * (1 - _TIE_RTOL) and key < best_key:
                best, best_len, best_key = k, max(ln, best_len), key
        return best

    def _midpoint(self, p: int, q: int, on_boundary: bool) -> int:
        e = (p, q) if p < q else (q, p)
        m = self._edge_mid.get(e)
        if m is not None:
            return m
        m = len(self.vx)
        # 0.5*(a+b) is symmetric in a, b, so copies get identical coordinates
        self.vx.append(0.5 * (self.vx[p] + self.vx[q]))
        self.vy.append(0.5 * (self.vy[p] + self.vy[q]))
        if on_boundary:
            mp, mq = self.vmarker[p], self.vmarker[q]
            pos = [x for x in (mp, mq) if x > 0]
            self.vmarker.append(min(pos) if pos else 1)
        else:
            self.vmarker.append(0)
        self.vanchor.append(-1)
        self._edge_mid[e] = m
        return m

    def _new_simplex(self, verts, nbrs, parent, child_index) -> int:
        s = len(self.sverts)
        self.sverts.append(verts)
        self.snbrs.append(nbrs)
        self.sgen.append(self.sgen[parent] + 1)
        self.salive.append(True)
        self.sparent.append(parent)
        self.schildren.append(None)
        self.sroot.append(self.sroot[parent])
        self.scode.append(2 * self.scode[parent] + child_index)
        self.ssub.append(self.ssub[parent])
        return s

    def _replace_nbr(self, n: int, old: int, new: int) -> None:
        if n == NO_NEIGHBOR:
            return
        row = self.snbrs[n]
        row[row.index(old)] = new

    def _split(self, s: int, k: int, m: int) -> tuple[int, int]:
        verts = self.sverts[s]
        nb = self.snbrs[s]
        a, p, q = verts[k], verts[(k + 1) % 3], verts[(k + 2) % 3]
        n_p = nb[(k + 1) % 3]  # across edge q-a
        n_q = nb[(k + 2) % 3]  # across edge a-p
        c1 = self._new_simplex([a, p, m], [NO_NEIGHBOR, -1, n_q], s, 0)
        c2 = self._new_simplex([a, m, q], [NO_NEIGHBOR, n_p, c1], s, 1)
        self.snbrs[c1][1] = c2
        self._replace_nbr(n_q, s, c1)
        self._replace_nbr(n_p, s, c2)
        self.vanchor[a] = c1
        self.vanchor[p] = c1
        self.vanchor[m] = c1
        self.vanchor[q] = c2
        self.salive[s] = False
        self.schildren[s] = (c1, c2)
        return c1, c2

    def _bisect_one(self, s: int) -> int:
        """Bisect ``s`` and whatever its closure requires; return split count."""
        count = 0
        stack = [s]
        while stack:
            t = stack[-1]
            if not self.salive[t]:
                stack.pop()
                continue
            k = self._longest_edge(t)
            n = self.snbrs[t][k]
            verts = self.sverts[t]
            p, q = verts[(k + 1) % 3], verts[(k + 2) % 3]
            if n == NO_NEIGHBOR:
                m = self._midpoint(p, q, True)
                self._split(t, k, m)
                count += 1
                stack.pop()
                continue
            j = self.snbrs[n].index(t)
            if self._longest_edge(n) != j:
                stack.append(n)
                continue
            m = self._midpoint(p, q, False)
            t1, t2 = self._split(t, k, m)
            n1, n2 = self._split(n, j, m)
            # t1=[a,p,m] meets n2=[b,m,p]; t2=[a,m,q] meets n1=[b,q,m]
            self.snbrs[t1][0] = n2
            self.snbrs[n2][0] = t1
            self.snbrs[t2][0] = n1
            self.snbrs[n1][0] = t2
            count += 2
            stack.pop()
        return count

    def bisect(self, marked) -> RefinementReport:
        """Bisect every marked simplex across its longest edge, with closure.

        Marked ids are processed in increasing order, so the result depends
        only on the mesh and the marked set.  Simplices already split by the
        closure of an earlier mark count as bisected.
        """
        marked = sorted({int(s) for s in marked})
        report = RefinementReport(n_marked=len(marked))
        if not marked:
            return report
        for s in marked:
            if not self.salive[s]:
                raise ValueError(f"simplex {s} is not live")
        for s in marked:
            if self.salive[s]:
                report.n_bisections += self._bisect_one(s)
        report.n_closure = report.n_bisections - len(marked)
        self._version += 1
        report.quality_min = self.quality_min
        if report.quality_min < self.quality_floor:
            report.warnings.append(
                f"QualityCollapse: quality_min={report.quality_min:.3g} < {self.quality_floor}"
            )
        return report

    def refine_uniform(self, rounds: int = 1) -> "Mesh":
        """Bisect every live simplex ``rounds`` times (in place)."""
        for _ in range(rounds):
            self.bisect(self.live_ids())
        return self

    # ------------------------------------------------------------------
    # point location

    def barycentric(self, s: int, x) -> np.ndarray:
        a, b, c = self.sverts[s]
        vx, vy = self.vx, self.vy
        det = _orient2d(vx[a], vy[a], vx[b], vy[b], vx[c], vy[c])
        l0 = _orient2d(x[0], x[1], vx[b], vy[b], vx[c], vy[c]) / det
        l1 = _orient2d(vx[a], vy[a], x[0], x[1], vx[c], vy[c]) / det
        return np.array([l0, l1, 1.0 - l0 - l1])

    def locate_point(self, x, seed: int | None = None, tol: float = 1e-12):
        """Return ``(simplex id, barycentric coordinates)`` of the simplex containing ``x``.

        Walks toward ``x`` by crossing the face with the most negative
        barycentric coordinate; falls back to an exhaustive scan when the
        walk leaves the domain or cycles.
        """
        x = (float(x[0]), float(x[1]))
        live = self.live_ids()
        s = int(live[0]) if seed is None or not self.salive[seed] else int(seed)
        seen = set()
        while s not in seen:
            seen.add(s)
            lam = self.barycentric(s, x)
            k = int(np.argmin(lam))
            if lam[k] >= -tol:
                return s, lam
            n = self.snbrs[s][k]
            if n == NO_NEIGHBOR:
                break
            s = n
        return self._locate_scan(x, tol)

    def _locate_scan(self, x, tol):
        P = self.points
        T = self.triangles
        lam = barycentric_many(P[T], np.asarray(x, dtype=float)[None, :].repeat(len(T), 0))
        worst = lam.min(axis=1)
        i = int(np.argmax(worst))
        if worst[i] < -tol:
            raise OutsideDomain(f"point {x} is outside the mesh")
        return int(self.live_ids()[i]), lam[i]

    # ------------------------------------------------------------------

    def copy(self) -> "Mesh":
        m = Mesh.__new__(Mesh)
        m.vx = self.vx[:]
        m.vy = self.vy[:]
        m.vmarker = self.vmarker[:]
        m.vanchor = self.vanchor[:]
        m.sverts = [v[:] for v in self.sverts]
        m.snbrs = [n[:] for n in self.snbrs]
        m.sgen = self.sgen[:]
        m.salive = self.salive[:]
        m.sparent = self.sparent[:]
        m.schildren = self.schildren[:]
        m.sroot = self.sroot[:]
        m.scode = self.scode[:]
        m.ssub = self.ssub[:]
        m._edge_mid = dict(self._edge_mid)
        m.n_roots = self.n_roots
        m.fingerprint = self.fingerprint
        m.quality_floor = self.quality_floor
        m._version = 0
        m._cache = {}
        m._key_index = None
        return m

    def compact(self) -> "Mesh":
        """Fresh mesh holding only the live simplices, renumbered.

        The result starts a new genealogy: it cannot be reconciled with
        meshes refined from this one.
        """
        live = self.live_ids()
        used = np.unique(self.triangles)
        P = self.points
        return build_mesh(
            [((P[v, 0], P[v, 1]), self.vmarker[v]) for v in used],
            np.searchsorted(used, self.triangles).tolist(),
        ) if len(live) else Mesh()

    def ancestor_in(self, s: int, keys: dict) -> int:
        """Walk up from ``s`` to the first ancestor whose key is in ``keys``."""
        while True:
            k = (self.sroot[s], self.scode[s])
            hit = keys.get(k)
            if hit is not None:
                return hit
            s = self.sparent[s]
            if s < 0:
                raise IncompatibleGenealogy("no common ancestor")

    def __repr__(self):
        return f"Mesh(n_vertices={self.n_vertices}, n_live={self.n_live})"


def barycentric_many(tri_pts: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of points ``x[i]`` in triangles ``tri_pts[i]``."""
    a, b, c = tri_pts[:, 0], tri_pts[:, 1], tri_pts[:, 2]

    def orient(p, q, r):
        return (q[:, 0] - p[:, 0]) * (r[:, 1] - p[:, 1]) - (q[:, 1] - p[:, 1]) * (r[:, 0] - p[:, 0])

    det = orient(a, b, c)
    l0 = orient(x, b, c) / det
    l1 = orient(a, x, c) / det
    return np.column_stack([l0, l1, 1.0 - l0 - l1])


def _fingerprint(vx, vy, tris) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(vx, dtype=float).tobytes())
    h.update(np.asarray(vy, dtype=float).tobytes())
    h.update(np.asarray(tris, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


def build_mesh(vertices, triangles) -> Mesh:
    """Build a conforming mesh from ``[((x, y), marker), ...]`` and vertex triples.

    Triangles are reoriented counterclockwise where needed.

    Raises
    ------
    NonConforming
        If an edge is shared by more than two triangles or two triangles lie
        on the same side of a shared edge.
    DegenerateSimplex
        If a triangle has zero area.
    DanglingVertex
        If a vertex is referenced by no triangle, or a triangle references
        a missing vertex.
    """
    m = Mesh()
    for (xy, marker) in vertices:
        m.vx.append(float(xy[0]))
        m.vy.append(float(xy[1]))
        m.vmarker.append(int(marker))
        m.vanchor.append(-1)
    nv = len(m.vx)
    edges: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for s, tri in enumerate(triangles):
        a, b, c = (int(v) for v in tri)
        if len({a, b, c}) != 3 or min(a, b, c) < 0 or max(a, b, c) >= nv:
            raise DanglingVertex(f"triangle {s} references invalid vertices {tri}")
        o = _orient2d(m.vx[a], m.vy[a], m.vx[b], m.vy[b], m.vx[c], m.vy[c])
        if o < 0:
            b, c = c, b
        elif o == 0:
            raise DegenerateSimplex(f"triangle {s} has zero area")
        m.sverts.append([a, b, c])
        m.snbrs.append([NO_NEIGHBOR] * 3)
        m.sgen.append(0)
        m.salive.append(True)
        m.sparent.append(-1)
        m.schildren.append(None)
        m.sroot.append(s)
        m.scode.append(1)
        m.ssub.append(None)
        verts = m.sverts[s]
        for k in range(3):
            p, q = verts[(k + 1) % 3], verts[(k + 2) % 3]
            e = (p, q) if p < q else (q, p)
            edges.setdefault(e, []).append((s, k, p))
        for v in verts:
            m.vanchor[v] = s
    for e, uses in edges.items():
        if len(uses) > 2:
            raise NonConforming(f"edge {e} shared by {len(uses)} triangles")
        if len(uses) == 2:
            (s1, k1, p1), (s2, k2, p2) = uses
            if p1 == p2:
                raise NonConforming(f"triangles {s1} and {s2} overlap across edge {e}")
            m.snbrs[s1][k1] = s2
            m.snbrs[s2][k2] = s1
    for v in range(nv):
        if m.vanchor[v] < 0:
            raise DanglingVertex(f"vertex {v} is not used by any triangle")
    m.n_roots = len(m.sverts)
    m.fingerprint = _fingerprint(m.vx, m.vy, [t for t in m.sverts])
    return m


def shape_quality(mesh: Mesh, s: int) -> float:
    """``4*sqrt(3)*area / sum(edge length^2)``; 1 for equilateral triangles."""
    area = mesh.area(s)
    if area <= 0:
        raise DegenerateSimplex(f"simplex {s} has area {area}")
    a, b, c = (np.array(mesh.coords(v)) for v in mesh.sverts[s])
    l2 = ((b - a) ** 2).sum() + ((c - b) ** 2).sum() + ((a - c) ** 2).sum()
    return float(4.0 * math.sqrt(3.0) * area / l2)


def reconcile(a: Mesh, b: Mesh) -> Mesh:
    """Coarsest common bisection refinement of two meshes with shared genealogy.

    Starting from a copy of ``a``, every live simplex that was bisected in
    ``b`` is bisected again (with conformity closure) until none is left.
    Because bisection is deterministic, the children produced are the same
    simplices ``b`` holds.
    """
    if a.fingerprint != b.fingerprint:
        raise IncompatibleGenealogy("meshes descend from different initial meshes")
    out = a.copy()
    split_in_b = {
        (b.sroot[s], b.scode[s]) for s in range(b.n_simplices) if b.schildren[s] is not None
    }
    while True:
        todo = [
            int(s) for s in out.live_ids() if (out.sroot[s], out.scode[s]) in split_in_b
        ]
        if not todo:
            return out
        out.bisect(todo)


def reconcile_all(meshes) -> Mesh:
    """Fold :func:`reconcile` over a sequence of meshes."""
    meshes = list(meshes)
    out = meshes[0]
    for m in meshes[1:]:
        out = reconcile(out, m)
    if len(meshes) == 1:
        out = out.copy()
    return out


def audit_conformity(mesh: Mesh) -> list[str]:
    """Brute-force conformity audit; returns a list of problems (empty if fine).

    Checks edge incidence counts, neighbor symmetry, orientation, hanging
    midpoints and conservation of the boundary length.
    """
    problems = []
    T = mesh.triangles
    live = mesh.live_ids()
    edge_count: dict[tuple[int, int], list[int]] = {}
    for s, tri in zip(live, T):
        for k in range(3):
            p, q = int(tri[(k + 1) % 3]), int(tri[(k + 2) % 3])
            edge_count.setdefault((min(p, q), max(p, q)), []).append(int(s))
    for e, owners in edge_count.items():
        if len(owners) > 2:
            problems.append(f"edge {e} in {len(owners)} simplices")
    for s in live:
        if mesh.area(s) <= 0:
            problems.append(f"simplex {s} not positively oriented")
        verts = mesh.sverts[s]
        for k in range(3):
            n = mesh.snbrs[s][k]
            p, q = verts[(k + 1) % 3], verts[(k + 2) % 3]
            owners = edge_count[(min(p, q), max(p, q))]
            if n == NO_NEIGHBOR:
                if len(owners) != 1:
                    problems.append(f"simplex {s} misses neighbor across {(p, q)}")
            else:
                if not mesh.salive[n] or s not in mesh.snbrs[n] or n not in owners:
                    problems.append(f"asymmetric link {s}->{n}")
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[T.ravel()] = True
    for e, m in mesh._edge_mid.items():
        if e in edge_count and used[m]:
            problems.append(f"hanging vertex {m} on edge {e}")
    # boundary length is invariant under bisection
    P = mesh.points
    blen = 0.0
    for e, owners in edge_count.items():
        if len(owners) == 1:
            blen += float(np.linalg.norm(P[e[0]] - P[e[1]]))
    ref = mesh._cache.get("_boundary_length0")
    if ref is None:
        ref = _root_boundary_length(mesh)
    if abs(blen - ref) > 1e-9 * max(1.0, ref):
        problems.append(f"boundary length {blen} != {ref}")
    return problems


def _root_boundary_length(mesh: Mesh) -> float:
    total = 0.0
    P = mesh.points
    counts: dict[tuple[int, int], int] = {}
    for s in range(mesh.n_roots):
        verts = mesh.sverts[s]
        for k in range(3):
            p, q = verts[(k + 1) % 3], verts[(k + 2) % 3]
            e = (min(p, q), max(p, q))
            counts[e] = counts.get(e, 0) + 1
    for e, c in counts.items():
        if c == 1:
            total += float(np.linalg.norm(P[e[0]] - P[e[1]]))
    return total


def leaf_keys(mesh: Mesh) -> set:
    return {(mesh.sroot[s], mesh.scode[s]) for s in mesh.live_ids()}


def all_keys(mesh: Mesh) -> set:
    return set(zip(mesh.sroot, mesh.scode))
