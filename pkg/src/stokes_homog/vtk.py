"""Legacy ASCII VTK output of P2 velocity / P1 pressure fields on quadratic triangles."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .fem import DofSpace

QUADRATIC_TRIANGLE = 22


def write_vtk(path, space: DofSpace, point_vectors: dict | None = None,
              vertex_scalars: dict | None = None, title: str = "stokes_homog") -> None:
    """Write an UNSTRUCTURED_GRID with one quadratic triangle per element.

    ``point_vectors`` maps names to component-major P2 vectors;
    ``vertex_scalars`` maps names to P1 vertex values, which are extended to
    edge midpoints by averaging so every field lives on all grid points.
    """
    coords = space.coords
    n = len(coords)
    cells = space.tri_dofs
    lines = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    lines += [f"{x!r} {y!r} 0.0" for x, y in coords.tolist()]
    lines.append(f"CELLS {len(cells)} {7 * len(cells)}")
    lines += ["6 " + " ".join(map(str, c)) for c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += [str(QUADRATIC_TRIANGLE)] * len(cells)
    fields = []
    for name, u in (point_vectors or {}).items():
        v = np.asarray(u, dtype=float).reshape(2, n)
        fields.append([f"VECTORS {name} double"] + [f"{a!r} {b!r} 0.0" for a, b in v.T.tolist()])
    edges = space.mesh.all_edges
    for name, p in (vertex_scalars or {}).items():
        p = np.asarray(p, dtype=float)
        full = np.concatenate([p, 0.5 * (p[edges[:, 0]] + p[edges[:, 1]])])
        fields.append([f"SCALARS {name} double 1", "LOOKUP_TABLE default"] + [repr(v) for v in full.tolist()])
    if fields:
        lines.append(f"POINT_DATA {n}")
        for f in fields:
            lines += f
    Path(path).write_text("\n".join(lines) + "\n")
