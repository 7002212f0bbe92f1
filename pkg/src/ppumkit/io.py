"""Plain-text mesh, function, partition and report formats."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .fem import FeFunction
from .mesh import Mesh, MeshError, build_mesh


class FormatError(MeshError, ValueError):
    pass


def _data_lines(path):
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(line.split())
    return out


def read_triangle(node_path, ele_path) -> Mesh:
    """Read Triangle-style ``.node`` and ``.ele`` files.

    ``.node`` holds a count line then ``id x y marker`` lines; ``.ele`` a
    count line then ``id v1 v2 v3``.  Ids may start at 0 or 1.
    """
    nodes = _data_lines(node_path)
    eles = _data_lines(ele_path)
    if not nodes or not eles:
        raise FormatError("empty .node or .ele file")
    n = int(nodes[0][0])
    rows = nodes[1:1 + n]
    if len(rows) != n:
        raise FormatError(f".node declares {n} vertices, found {len(rows)}")
    ids = [int(r[0]) for r in rows]
    index = {vid: k for k, vid in enumerate(ids)}
    verts = []
    for r in rows:
        if len(r) < 3:
            raise FormatError(f"bad .node line {' '.join(r)!r}")
        marker = int(r[3]) if len(r) > 3 else 0
        verts.append(((float(r[1]), float(r[2])), marker))
    m = int(eles[0][0])
    erows = eles[1:1 + m]
    if len(erows) != m:
        raise FormatError(f".ele declares {m} triangles, found {len(erows)}")
    try:
        tris = [tuple(index[int(v)] for v in r[1:4]) for r in erows]
    except KeyError as exc:
        raise FormatError(f".ele references unknown vertex {exc.args[0]}") from None
    return build_mesh(verts, tris)


def write_triangle(mesh: Mesh, stem) -> tuple[Path, Path]:
    """Write ``stem.node`` and ``stem.ele`` for the live simplices (0-based ids)."""
    stem = Path(stem)
    P, T = mesh.points, mesh.triangles
    markers = mesh.boundary_markers
    node = [f"{len(P)} 2 0 1"]
    node += [f"{i} {x!r} {y!r} {int(mk)}" for i, ((x, y), mk) in enumerate(zip(P.tolist(), markers))]
    ele = [f"{len(T)} 3 0"]
    ele += [f"{i} {a} {b} {c}" for i, (a, b, c) in enumerate(T.tolist())]
    node_path, ele_path = stem.with_suffix(".node"), stem.with_suffix(".ele")
    node_path.write_text("\n".join(node) + "\n")
    ele_path.write_text("\n".join(ele) + "\n")
    return node_path, ele_path


def mesh_to_dict(mesh: Mesh) -> dict:
    P, T = mesh.points, mesh.triangles
    return {
        "vertices": [[x, y, int(mk)] for (x, y), mk in zip(P.tolist(), mesh.boundary_markers)],
        "triangles": T.tolist(),
    }


def mesh_from_dict(doc: dict) -> Mesh:
    try:
        verts = [((float(v[0]), float(v[1])), int(v[2]) if len(v) > 2 else 0) for v in doc["vertices"]]
        tris = [tuple(int(i) for i in t) for t in doc["triangles"]]
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise FormatError(f"malformed mesh document: {exc}") from None
    return build_mesh(verts, tris)


def write_mesh_json(mesh: Mesh, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(mesh_to_dict(mesh)) + "\n")
    return path


def read_mesh_json(path) -> Mesh:
    return mesh_from_dict(json.loads(Path(path).read_text()))


def read_mesh(path) -> Mesh:
    """Dispatch on suffix: ``.json`` or a Triangle stem (``.node``/``.ele``)."""
    path = Path(path)
    if path.suffix == ".json":
        return read_mesh_json(path)
    return read_triangle(path.with_suffix(".node"), path.with_suffix(".ele"))


def write_vtk(path, mesh: Mesh, point_data: dict | None = None,
              cell_data: dict | None = None, title: str = "ppumkit") -> Path:
    """Legacy ASCII VTK unstructured grid with optional scalar fields."""
    P, T = mesh.points, mesh.triangles
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(P)} double"]
    lines += [f"{x!r} {y!r} 0.0" for x, y in P.tolist()]
    lines.append(f"CELLS {len(T)} {4 * len(T)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in T.tolist()]
    lines.append(f"CELL_TYPES {len(T)}")
    lines += ["5"] * len(T)
    for header, n, data in (("POINT_DATA", len(P), point_data), ("CELL_DATA", len(T), cell_data)):
        if not data:
            continue
        lines.append(f"{header} {n}")
        for name, vals in data.items():
            vals = np.asarray(vals, dtype=float)
            if vals.shape != (n,):
                raise ValueError(f"field {name!r} has shape {vals.shape}, expected ({n},)")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(v) for v in vals.tolist()]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def write_function_csv(u: FeFunction, path) -> Path:
    P = u.space.P
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex_id", "x", "y", "value"])
        for i, ((x, y), v) in enumerate(zip(P.tolist(), u.values.tolist())):
            w.writerow([i, repr(x), repr(y), repr(v)])
    return path


def read_function_csv(path) -> np.ndarray:
    """Nodal values ordered by ``vertex_id``."""
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    ids = np.array([int(r["vertex_id"]) for r in rows])
    vals = np.array([float(r["value"]) for r in rows])
    out = np.empty(len(rows))
    out[ids] = vals
    return out


def write_function_vtk(u: FeFunction, path, name: str = "u") -> Path:
    return write_vtk(path, u.space.mesh, point_data={name: u.values})


def _write_pairs(path, header, ids, vals, fmt):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s, v in zip(np.asarray(ids).tolist(), np.asarray(vals).tolist()):
            w.writerow([s, fmt(v)])
    return path


def write_partition_csv(part, path) -> Path:
    return _write_pairs(path, ["simplex_id", "subdomain"], part.simplex_ids, part.subdomain, int)


def read_partition_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([int(r["simplex_id"]) for r in rows], dtype=np.int64),
            np.array([int(r["subdomain"]) for r in rows], dtype=np.int64))


def write_indicator_csv(ind, path) -> Path:
    return _write_pairs(path, ["simplex_id", "eta"], ind.simplex_ids, ind.eta, repr)


def read_indicator_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([int(r["simplex_id"]) for r in rows], dtype=np.int64),
            np.array([float(r["eta"]) for r in rows]))


def dumps(doc) -> str:
    """Canonical JSON: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_json(doc, path) -> Path:
    path = Path(path)
    path.write_text(dumps(doc))
    return path


def read_json(path):
    return json.loads(Path(path).read_text())
