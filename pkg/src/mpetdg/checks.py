"""Invariant suite: matrix properties, Newmark conservation and energy stability.

Each check returns :class:`CheckResult` records; ``run_invariant_suite`` runs
them on small meshes and is what ``mpetdg check`` executes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .analysis import EnergyTrace, energy_terms
from .assembly import BlockSystem, PenaltyConfig, RhsAssembler, assemble_system
from .mesh import agglomerate_mesh, build_structured_mesh
from .model import MpetParameters, NetworkParameters, table1_parameters, table3_parameters
from .timestepper import TimeConfig, TransientState, acceleration, run_transient

log = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
CONSERVATION_TOL = 1e-8
GROWTH_TOL = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tol: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name}: {self.value:.3e} (tol {self.tol:.0e}) {self.detail}".rstrip()


def relative_asymmetry(matrix) -> float:
    """``max|A - A^T| / max|A|`` (zero for the zero matrix)."""
    a = matrix.tocsr()
    scale = abs(a).max() if a.nnz else 0.0
    if scale == 0:
        return 0.0
    diff = a - a.T
    return (abs(diff).max() if diff.nnz else 0.0) / scale


def cholesky_ok(matrix) -> bool:
    try:
        sla.cholesky(matrix.toarray(), lower=True)
    except sla.LinAlgError:
        return False
    return True


def check_matrix_properties(system: BlockSystem, rng: np.random.Generator,
                            n_vectors: int = 1000) -> list[CheckResult]:
    """Symmetry, SPD masses, positive-definite ``K_u`` and a PSD transfer block."""
    out = []
    mats = system.matrices()
    for name in ("M_u", "K_u", "M_p", "K_p", "C"):
        m = mats.get(name)
        if m is None:
            continue
        v = relative_asymmetry(m)
        out.append(CheckResult(f"symmetry {name}", v < SYMMETRY_TOL, v, SYMMETRY_TOL))
    for name in ("M_u", "M_p"):
        ok = cholesky_ok(mats[name])
        out.append(CheckResult(f"cholesky {name}", ok, 0.0 if ok else 1.0, 0.0))
    # Dirichlet data enter through the penalty, so K_u itself must be definite
    ku = mats["K_u"].toarray()
    ku = 0.5 * (ku + ku.T)
    lmin = float(np.linalg.eigvalsh(ku)[0]) / max(abs(ku).max(), 1e-300)
    out.append(CheckResult("K_u positive definite", lmin > 0, lmin, 0.0, "(min eigenvalue / max entry)"))
    c = mats.get("C")
    if c is None:
        return out
    x = rng.standard_normal((c.shape[0], n_vectors))
    quad = np.einsum("ij,ij->j", x, c @ x)
    worst = float(quad.min() / max(np.einsum("ij,ij->j", x, x).max(), 1e-300))
    scale = abs(c).max() if c.nnz else 1.0
    out.append(CheckResult("coupling PSD", worst >= -1e-12 * scale, worst, 1e-12,
                           f"({n_vectors} random vectors)"))
    return out


def _random_state(system: BlockSystem, rhs: RhsAssembler, rng, pressure: bool) -> TransientState:
    U = rng.standard_normal(system.n_u)
    Z = rng.standard_normal(system.n_u)
    P = rng.standard_normal(system.n_p) if pressure else np.zeros(system.n_p)
    # scale so the three energies are of comparable size
    s = energy_terms(TransientState(0.0, U, P, Z, U), system)
    U *= np.sqrt(s["kinetic"] / max(s["strain"], 1e-300))
    if pressure and s["storage"] > 0:
        P *= np.sqrt(s["kinetic"] / s["storage"])
    A = acceleration(system, rhs, 0.0, U, P)
    return TransientState(0.0, U, P, Z, A)


def elastic_parameters(dim: int) -> MpetParameters:
    """``table3`` elastic moduli with a single decoupled network (``alpha = 0``)."""
    base = table3_parameters()
    net = NetworkParameters(alpha=0.0, c=1.0, K=1.0, mu=1.0)
    return MpetParameters(dim, base.rho, base.lam, base.mu, (net,))


def check_newmark_conservation(system: BlockSystem, rng, n_steps: int = 1000,
                               dt: float | None = None) -> CheckResult:
    """Relative drift of ``(Z^T M_u Z + U^T K_u U) / 2`` with no coupling or forcing."""
    if any(a != 0 for a in system.params.alpha):
        raise ValueError("conservation check needs alpha = 0")
    rhs = RhsAssembler(system, None)
    state = _random_state(system, rhs, rng, pressure=False)
    dt = dt or 1e-3
    cfg = TimeConfig(dt=dt, T=n_steps * dt)
    energies = []

    def record(k, s, _):
        e = energy_terms(s, system)
        energies.append(0.5 * (e["kinetic"] + e["strain"]))

    run_transient(system, rhs, state, cfg, [record], solver="direct")
    e = np.asarray(energies)
    drift = float(np.max(np.abs(e - e[0])) / e[0])
    return CheckResult(f"Newmark energy drift ({n_steps} steps)", drift < CONSERVATION_TOL,
                       drift, CONSERVATION_TOL)


def check_energy_stability(system: BlockSystem, rng, n_steps: int = 1000,
                           dt: float = 1e-5) -> list[CheckResult]:
    """Instantaneous energy never grows and dissipation accumulators are monotone."""
    rhs = RhsAssembler(system, None)
    state = _random_state(system, rhs, rng, pressure=True)
    trace = EnergyTrace(system)
    run_transient(system, rhs, state, TimeConfig(dt=dt, T=n_steps * dt), [trace], solver="direct")
    e = trace.instantaneous()
    growth = float(np.max(e - e[0]) / e[0])
    diss = np.asarray(trace.dissipation)
    ext = np.asarray(trace.external)
    mono = bool(np.all(np.diff(diss) >= 0) and np.all(np.diff(ext) >= 0))
    return [
        CheckResult(f"energy growth ({n_steps} steps)", growth <= GROWTH_TOL, max(growth, 0.0),
                    GROWTH_TOL),
        CheckResult("dissipation monotone", mono, 0.0 if mono else 1.0, 0.0),
    ]


def small_mesh(dim: int, seed: int = 0):
    if dim == 2:
        return agglomerate_mesh(build_structured_mesh(None, 4, 2), 8, seed)
    return build_structured_mesh(None, 1, 3)


def run_invariant_suite(seed: int = 0, n_steps: int = 1000) -> list[CheckResult]:
    """All checks on a small agglomerated square and a single-cube mesh."""
    rng = np.random.default_rng(seed)
    results = []
    for dim in (2, 3):
        mesh = small_mesh(dim, seed)
        params = table3_parameters() if dim == 2 else table1_parameters()
        system = assemble_system(mesh, params, 2, 1, PenaltyConfig())
        results += [CheckResult(f"[{dim}D] {r.name}", r.passed, r.value, r.tol, r.detail)
                    for r in check_matrix_properties(system, rng)]
    mesh = small_mesh(2, seed)
    elastic = assemble_system(mesh, elastic_parameters(2), 2, 1, PenaltyConfig())
    results.append(check_newmark_conservation(elastic, rng, n_steps))
    full = assemble_system(mesh, table3_parameters(), 2, 1, PenaltyConfig())
    results += check_energy_stability(full, rng, n_steps)
    return results
