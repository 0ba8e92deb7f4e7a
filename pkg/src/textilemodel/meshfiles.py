"""Mesh export: Wavefront OBJ for surfaces, legacy ASCII VTK for volumes.

Floats are written with %.9g so files stay compact, stable across runs
and precise enough to round-trip float32 exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .reconstruct import QuadSurfaceMesh, VolumeMesh
from .storage import atomic_write_text

VTK_WEDGE = 13
VTK_HEXAHEDRON = 12


def _fmt(x: float) -> str:
    return "%.9g" % x


def write_obj(mesh: QuadSurfaceMesh, path) -> None:
    """Write a quad surface mesh as OBJ (1-based face indices)."""
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}")
    for q in mesh.quads:
        lines.append("f %d %d %d %d" % tuple(q + 1))
    for t in mesh.cap_triangles:
        lines.append("f %d %d %d" % tuple(t + 1))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_obj(path):
    """Read back an OBJ written by :func:`write_obj`.

    Returns (vertices, quads, triangles) with 0-based indices.
    """
    verts = []
    quads = []
    tris = []
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) != 4:
                    raise ConfigError(f"{path}:{ln}: malformed vertex")
                verts.append([float(p) for p in parts[1:]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                if len(idx) == 4:
                    quads.append(idx)
                elif len(idx) == 3:
                    tris.append(idx)
                else:
                    raise ConfigError(f"{path}:{ln}: only tris and quads supported")
    return (
        np.array(verts, dtype=float),
        np.array(quads, dtype=np.int64).reshape(-1, 4),
        np.array(tris, dtype=np.int64).reshape(-1, 3),
    )


def write_vtk(mesh: VolumeMesh, path, title: str = "textile volume mesh") -> None:
    """Write a wedge/hex volume mesh as legacy ASCII VTK with cell labels."""
    if "\n" in title:
        raise ConfigError("title must be a single line")
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(mesh.vertices)} float",
    ]
    for v in mesh.vertices:
        lines.append(f"{_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}")
    n_cells = mesh.n_cells
    size = len(mesh.wedges) * 7 + len(mesh.hexes) * 9
    lines.append(f"CELLS {n_cells} {size}")
    for w in mesh.wedges:
        lines.append("6 " + " ".join(str(int(i)) for i in w))
    for h in mesh.hexes:
        lines.append("8 " + " ".join(str(int(i)) for i in h))
    lines.append(f"CELL_TYPES {n_cells}")
    lines.extend([str(VTK_WEDGE)] * len(mesh.wedges))
    lines.extend([str(VTK_HEXAHEDRON)] * len(mesh.hexes))
    lines.append(f"CELL_DATA {n_cells}")
    lines.append("SCALARS yarn_id int 1")
    lines.append("LOOKUP_TABLE default")
    labels = np.concatenate([mesh.wedge_labels, mesh.hex_labels])
    lines.extend(str(int(x)) for x in labels)
    atomic_write_text(path, "\n".join(lines) + "\n")
