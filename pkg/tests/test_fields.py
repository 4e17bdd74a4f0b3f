"""VTK field output."""
import numpy as np

from mpetdg.assembly import assemble_system
from mpetdg.fields import read_cells, read_points, write_fields
from mpetdg.mesh import agglomerate_mesh, build_structured_mesh
from mpetdg.model import table1_parameters, table3_parameters
from mpetdg.timestepper import TransientState


def _zero(system):
    return TransientState(0.0, np.zeros(system.n_u), np.zeros(system.n_p),
                          np.zeros(system.n_u), np.zeros(system.n_u))


def _data_values(path):
    lines = path.read_text().splitlines()
    start = next(i for i, s in enumerate(lines) if s.startswith("POINT_DATA"))
    vals = []
    for s in lines[start + 1:]:
        try:
            vals += [float(v) for v in s.split()]
        except ValueError:
            continue
    return np.array(vals)


def test_zero_state_2d(tmp_path):
    mesh = agglomerate_mesh(build_structured_mesh(None, 4, 2), 5, 0)
    system = assemble_system(mesh, table3_parameters(), 2, 1)
    path = write_fields(_zero(system), system, tmp_path / "z.vtk")
    assert np.all(_data_values(path) == 0.0)
    n, types = read_cells(path)
    assert n == len(mesh.simplices) and set(types) == {5}
    pts = read_points(path)
    assert np.abs(pts[:, :2] - mesh.vertices[mesh.simplices].reshape(-1, 2)).max() < 1e-12
    assert np.all(pts[:, 2] == 0)
    text = path.read_text()
    assert "pressure_1" in text and "pressure_2" in text and "pressure_3" not in text


def test_constant_fields_3d(tmp_path):
    mesh = build_structured_mesh(None, 1, 3)
    system = assemble_system(mesh, table1_parameters(), 1, 1)
    state = _zero(system)
    # the lowest mode of each element is constant; fit u = (1, 2, 3), p_j = j
    pts = mesh.vertices[mesh.simplices]
    owner = mesh.simplex_element
    U = system.space_u.project(lambda x: np.tile([1.0, 2.0, 3.0], (len(x), 1)))
    state = TransientState(0.0, U, state.P, state.Z, state.A)
    path = write_fields(state, system, tmp_path / "c.vtk")
    n, types = read_cells(path)
    assert n == len(mesh.simplices) and set(types) == {10}
    assert np.abs(read_points(path) - pts.reshape(-1, 3)).max() < 1e-12
    lines = path.read_text().splitlines()
    i = lines.index("VECTORS displacement double")
    vec = np.array([[float(v) for v in s.split()] for s in lines[i + 1:i + 1 + len(owner) * 4]])
    assert np.allclose(vec, [1.0, 2.0, 3.0], atol=1e-12)
