import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from mpetdg.assembly import RhsAssembler, assemble_system
from mpetdg.basis import element_blocks
from mpetdg.checks import elastic_parameters
from mpetdg.mesh import agglomerate_mesh, build_structured_mesh
from mpetdg.model import boundary_data_from_exact, manufactured_case, table3_parameters, zero_case
from mpetdg.timestepper import (CoupledStepper, LinearSolver, SolverError, TimeConfig,
                                TransientState, initialize_state, run_transient, step)


def scalar_newmark(u, v, a, omega2, dt, beta=0.25, gamma=0.5, f=0.0):
    """One Newmark step of ``u'' + omega^2 u = f`` (unit mass)."""
    k_eff = 1.0 / (beta * dt**2) + omega2
    r = f + u / (beta * dt**2) + v / (beta * dt) + (1 / (2 * beta) - 1) * a
    u1 = r / k_eff
    a1 = (u1 - u) / (beta * dt**2) - v / (beta * dt) - (1 / (2 * beta) - 1) * a
    v1 = v + dt * ((1 - gamma) * a + gamma * a1)
    return u1, v1, a1


@pytest.fixture(scope="module")
def elastic_system():
    mesh = agglomerate_mesh(build_structured_mesh(None, 3, 2), 4, 0)
    return assemble_system(mesh, elastic_parameters(2), 1, 1)


@pytest.mark.parametrize("beta,gamma", [(0.25, 0.5), (0.3, 0.6)])
def test_step_matches_scalar_newmark_per_mode(elastic_system, rng, beta, gamma):
    s = elastic_system
    w2, modes = sla.eigh(s.K_u.toarray(), s.M_u.toarray())  # M-orthonormal modes
    c_u, c_v = rng.standard_normal((2, len(w2)))
    U, Z = modes @ c_u, modes @ c_v
    rhs = RhsAssembler(s, None)
    A = -modes @ (w2 * c_u)
    state = TransientState(0.0, U, np.zeros(s.n_p), Z, A)
    dt = 1e-3
    cfg = TimeConfig(dt=dt, T=dt, beta=beta, gamma=gamma)
    new = step(state, s, rhs, cfg)
    Mu = s.M_u.toarray()
    got = modes.T @ Mu @ new.U
    got_v = modes.T @ Mu @ new.Z
    for k in (0, len(w2) // 2, len(w2) - 1):
        u1, v1, _ = scalar_newmark(c_u[k], c_v[k], -w2[k] * c_u[k], w2[k], dt, beta, gamma)
        assert got[k] == pytest.approx(u1, rel=1e-12, abs=1e-12 * abs(c_u).max())
        assert got_v[k] == pytest.approx(v1, rel=1e-12, abs=1e-10 * abs(c_v).max())


def test_scalar_oracle_single_dof():
    # a 1-dof system: u'' + 4 u = 0 with u(0) = 1, trapezoidal Newmark is a rotation
    u, v, a = 1.0, 0.0, -4.0
    e0 = v**2 + 4 * u**2
    for _ in range(200):
        u, v, a = scalar_newmark(u, v, a, 4.0, 0.01)
    assert v**2 + 4 * u**2 == pytest.approx(e0, rel=1e-13)


def test_zero_state_stays_zero():
    params = table3_parameters()
    mesh = build_structured_mesh(None, 2, 2)
    s = assemble_system(mesh, params, 2, 1)
    case = zero_case(params)
    rhs = RhsAssembler(s, boundary_data_from_exact(case), case.f, case.g)
    st = initialize_state(s, rhs, case)
    res = run_transient(s, rhs, st, TimeConfig(dt=1e-3, T=5e-3))
    for v in (res.final.U, res.final.P, res.final.Z, res.final.A):
        assert np.all(v == 0.0)
    assert res.n_steps == 5


def test_ba_sign_irrelevant_for_trapezoidal():
    case = manufactured_case("TC2_2D")
    mesh = build_structured_mesh(None, 2, 2)
    s = assemble_system(mesh, case.params, 2, 1)
    rhs = RhsAssembler(s, boundary_data_from_exact(case), case.f, case.g)
    st = initialize_state(s, rhs, case)
    a = run_transient(s, rhs, st, TimeConfig(dt=1e-3, T=3e-3, ba_sign=-1)).final
    b = run_transient(s, rhs, st, TimeConfig(dt=1e-3, T=3e-3, ba_sign=1)).final
    assert np.array_equal(a.U, b.U) and np.array_equal(a.P, b.P)


def test_ba_sign_matters_otherwise():
    case = manufactured_case("TC2_2D")
    s = assemble_system(build_structured_mesh(None, 2, 2), case.params, 2, 1)
    rhs = RhsAssembler(s, boundary_data_from_exact(case), case.f, case.g)
    st = initialize_state(s, rhs, case)
    a = run_transient(s, rhs, st, TimeConfig(1e-3, 2e-3, beta=0.3, gamma=0.5, ba_sign=-1)).final
    b = run_transient(s, rhs, st, TimeConfig(1e-3, 2e-3, beta=0.3, gamma=0.5, ba_sign=1)).final
    assert not np.allclose(a.P, b.P, rtol=1e-12, atol=0)


def test_zero_length_run_returns_initial():
    case = manufactured_case("TC2_2D")
    s = assemble_system(build_structured_mesh(None, 1, 2), case.params, 1, 1)
    rhs = RhsAssembler(s, boundary_data_from_exact(case), case.f, case.g)
    st = initialize_state(s, rhs, case, t0=0.2)
    res = run_transient(s, rhs, st, TimeConfig(dt=1e-3, T=0.0))
    assert res.n_steps == 0
    assert np.array_equal(res.final.U, st.U) and res.final.t == st.t


def test_reference_step_counts():
    assert TimeConfig(dt=1e-5, T=5e-3).n_steps == 500
    assert TimeConfig(dt=1e-7, T=1e-5).n_steps == 100


@pytest.mark.parametrize("kw", [{"dt": 0.0, "T": 1.0}, {"dt": 1.0, "T": 0.5},
                                {"dt": 0.1, "T": 1.0, "gamma": 2.0},
                                {"dt": 0.1, "T": 1.0, "ba_sign": 0}])
def test_time_config_validation(kw):
    with pytest.raises(ValueError):
        TimeConfig(**kw)


def test_tc1_initial_state():
    case = manufactured_case("TC1_3D")
    s = assemble_system(build_structured_mesh(None, 1, 3), case.params, 1, 1)
    rhs = RhsAssembler(s, boundary_data_from_exact(case), case.f, case.g)
    st = initialize_state(s, rhs, case)
    assert np.abs(st.U).max() == 0 and np.abs(st.P).max() < 1e-15
    A = np.linalg.solve(s.M_u.toarray(), rhs.F(0.0))
    assert np.allclose(st.A, A, rtol=1e-12, atol=1e-12)


def test_velocity_projection_reproduces_polynomial():
    case = manufactured_case("TC2_2D")
    mesh = agglomerate_mesh(build_structured_mesh(None, 3, 2), 3, 0)
    s = assemble_system(mesh, case.params, 2, 1)
    rhs = RhsAssembler(s, None)
    v0 = lambda x: np.stack([x[:, 0] * x[:, 1], 1 - x[:, 0] ** 2], 1)
    st = initialize_state(s, rhs, v0=v0)
    coeffs = s.space_u.project(v0)
    assert np.abs(st.Z - coeffs).max() < 1e-12
    for els, pts, _ in element_blocks(mesh.volume_quadrature(4)):
        vals, _ = s.space_u.evaluate(st.Z, els, pts, grad=False)
        assert np.abs(vals - v0(pts.reshape(-1, 2)).reshape(vals.shape)).max() < 1e-12


def test_iterative_matches_direct():
    case = manufactured_case("TC2_2D")
    mesh = agglomerate_mesh(build_structured_mesh(None, 4, 2), 6, 0)
    s = assemble_system(mesh, case.params, 2, 1)
    rhs = RhsAssembler(s, boundary_data_from_exact(case), case.f, case.g)
    st = initialize_state(s, rhs, case)
    cfg = TimeConfig(1e-7, 5e-7)
    d = run_transient(s, rhs, st, cfg, solver="direct").final
    it = run_transient(s, rhs, st, cfg, solver="iterative")
    assert it.solver_method == "iterative" and it.iterations > 0
    assert np.abs(it.final.U - d.U).max() <= 1e-9 * np.abs(d.U).max()
    assert np.abs(it.final.P - d.P).max() <= 1e-9 * np.abs(d.P).max()


def test_gmres_failure_reported():
    A = sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 3.0]]))
    solver = LinearSolver(A, "iterative", groups=np.array([0, 1]))
    with pytest.raises(SolverError, match="GMRES"):
        solver.solve(np.array([np.nan, 1.0]))


def test_non_finite_state_detected():
    st = TransientState(0.0, np.array([np.inf]), np.zeros(1), np.zeros(1), np.zeros(1))
    with pytest.raises(SolverError, match="U"):
        st.check_finite()


def test_stepper_reuses_factorisation(elastic_system):
    rhs = RhsAssembler(elastic_system, None)
    stp = CoupledStepper(elastic_system, rhs, TimeConfig(1e-3, 1e-3), "direct")
    assert stp.solver.method == "direct"
    lu = stp.solver._lu
    st = TransientState(0.0, np.ones(elastic_system.n_u), np.zeros(elastic_system.n_p),
                        np.zeros(elastic_system.n_u), np.zeros(elastic_system.n_u))
    stp.step(stp.step(st))
    assert stp.solver._lu is lu
