"""Property-based checks on random small meshes and inputs."""
import numpy as np
from hypothesis import given, settings, strategies as st

from mpetdg.analysis import rate
from mpetdg.assembly import assemble_system, harmonic_mean
from mpetdg.basis import DgSpace
from mpetdg.checks import relative_asymmetry
from mpetdg.mesh import agglomerate_mesh, build_structured_mesh
from mpetdg.model import table3_parameters

FAST = settings(max_examples=15, deadline=None)
positive = st.floats(1e-6, 1e6, allow_nan=False, allow_infinity=False)


@given(c=positive, r=st.floats(0.1, 8.0), h0=st.floats(1e-3, 1.0), k=st.floats(1.1, 4.0))
def test_rate_recovers_exponent(c, r, h0, k):
    h1 = h0 / k
    assert abs(rate(c * h0**r, c * h1**r, h0, h1) - r) < 1e-9


@given(a=positive, b=positive)
def test_harmonic_mean_bounds(a, b):
    m = float(harmonic_mean(a, b))
    assert min(a, b) * (1 - 1e-12) <= m <= 2 * min(a, b) * (1 + 1e-12)
    assert m <= 0.5 * (a + b) * (1 + 1e-12)
    assert m == float(harmonic_mean(b, a))


@st.composite
def polygon_mesh(draw):
    div = draw(st.integers(2, 5))
    n_tri = 2 * div * div
    parts = draw(st.integers(1, min(12, n_tri)))
    return agglomerate_mesh(build_structured_mesh(None, div, 2), parts, draw(st.integers(0, 99)))


@FAST
@given(mesh=polygon_mesh(), degree=st.integers(1, 6))
def test_basis_orthonormal_on_random_agglomerates(mesh, degree):
    space = DgSpace(mesh, degree, 1)
    eye = np.eye(space.local_dim)
    assert np.abs(space.local_mass - eye).max() < 1e-10


@FAST
@given(mesh=polygon_mesh(), p=st.integers(1, 3), q=st.integers(1, 3))
def test_operators_symmetric_on_random_agglomerates(mesh, p, q):
    system = assemble_system(mesh, table3_parameters(), p, q)
    for name, m in system.matrices().items():
        if name != "B":
            assert relative_asymmetry(m) < 1e-12, name
    assert system.B.shape == (system.n_p, system.n_u)


@FAST
@given(mesh=polygon_mesh())
def test_agglomerate_partitions_simplices(mesh):
    owner = mesh.simplex_element
    assert set(np.unique(owner)) == set(range(mesh.n_elements))
    assert abs(mesh.element_measures.sum() - 1.0) < 1e-12
