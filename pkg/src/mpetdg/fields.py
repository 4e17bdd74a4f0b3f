"""Legacy ASCII VTK output of DG fields.

Every sub-simplex becomes a cell with its own copies of the vertices, so the
discontinuous fields are sampled without averaging across elements.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .assembly import BlockSystem
from .timestepper import TransientState

CELL_TYPE = {2: 5, 3: 10}  # VTK_TRIANGLE, VTK_TETRA


def sample_fields(state: TransientState, system: BlockSystem):
    """Point coordinates and sampled fields at the sub-simplex vertices."""
    mesh = system.mesh
    d = mesh.dim
    nv = d + 1
    coords = mesh.vertices[mesh.simplices]  # (ns, nv, d)
    owner = mesh.simplex_element
    u, _ = system.space_u.evaluate(state.U, owner, coords, grad=False)
    pressures = []
    for j in range(system.params.n_networks):
        pj, _ = system.space_q.evaluate(state.P[system.pressure_slice(j)], owner, coords, grad=False)
        pressures.append(pj[..., 0].reshape(-1))
    return coords.reshape(-1, d), u.reshape(-1, d), pressures, nv


def write_fields(state: TransientState, system: BlockSystem, path) -> Path:
    """Write displacement (magnitude and vector) and pressures at ``state.t``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pts, u, pressures, nv = sample_fields(state, system)
    d = pts.shape[1]
    npts = len(pts)
    ncell = npts // nv
    pad = np.zeros((npts, 3))
    pad[:, :d] = pts
    upad = np.zeros((npts, 3))
    upad[:, :d] = u
    lines = [
        "# vtk DataFile Version 3.0",
        f"mpetdg fields t={state.t:.17g}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {npts} double",
    ]
    lines += [f"{a:.17g} {b:.17g} {c:.17g}" for a, b, c in pad]
    lines.append(f"CELLS {ncell} {ncell * (nv + 1)}")
    conn = np.arange(npts).reshape(ncell, nv)
    lines += [f"{nv} " + " ".join(map(str, row)) for row in conn]
    lines.append(f"CELL_TYPES {ncell}")
    lines += [str(CELL_TYPE[d])] * ncell
    lines.append(f"POINT_DATA {npts}")
    lines += ["SCALARS displacement_magnitude double 1", "LOOKUP_TABLE default"]
    lines += [f"{v:.17g}" for v in np.linalg.norm(u, axis=1)]
    lines.append("VECTORS displacement double")
    lines += [f"{a:.17g} {b:.17g} {c:.17g}" for a, b, c in upad]
    for j, pj in enumerate(pressures):
        lines += [f"SCALARS pressure_{j + 1} double 1", "LOOKUP_TABLE default"]
        lines += [f"{v:.17g}" for v in pj]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_points(path) -> np.ndarray:
    """Point coordinates of a legacy unstructured-grid file written by :func:`write_fields`."""
    with open(path) as fh:
        for line in fh:
            if line.startswith("POINTS"):
                n = int(line.split()[1])
                return np.array([[float(v) for v in next(fh).split()] for _ in range(n)])
    raise ValueError(f"no POINTS section in {path}")


def read_cells(path) -> tuple[int, list]:
    """Number of cells and the cell-type list."""
    with open(path) as fh:
        text = fh.read().splitlines()
    i = next(k for k, s in enumerate(text) if s.startswith("CELL_TYPES"))
    n = int(text[i].split()[1])
    return n, [int(v) for v in text[i + 1:i + 1 + n]]
