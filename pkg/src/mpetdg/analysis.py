"""Error norms, convergence rates and energy traces."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .assembly import (DIRICHLET, INTERIOR, BlockSystem, assemble_mass,
                       assemble_pressure_stiffness, face_sets)
from .basis import DgSpace, element_blocks
from .model import ManufacturedCase
from .timestepper import TransientState

# field evaluation ------------------------------------------------------------------


def coefficient_field(space: DgSpace, coeffs) -> Callable:
    """Evaluator ``(elements, points) -> (values, gradients)`` of a DG vector."""
    coeffs = np.asarray(coeffs, dtype=float)
    return lambda els, pts: space.evaluate(coeffs, els, pts)


def error_field(space: DgSpace, coeffs, exact: Callable, exact_grad: Callable) -> Callable:
    """Evaluator of ``exact - discrete``.

    ``exact(points (N, d)) -> (N, ncomp)`` and ``exact_grad -> (N, ncomp, d)``.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    d = space.dim

    def evaluate(els, pts):
        v, g = space.evaluate(coeffs, els, pts)
        flat = pts.reshape(-1, d)
        ev = np.asarray(exact(flat)).reshape(v.shape)
        eg = np.asarray(exact_grad(flat)).reshape(g.shape)
        return ev - v, eg - g

    return evaluate


# DG norms ---------------------------------------------------------------------------


def _norm_parts(field, space: DgSpace, faces: np.ndarray, penalty: np.ndarray, order: int,
                volume_density: Callable, jump_density: Callable):
    mesh = space.mesh
    vol = 0.0
    for els, pts, w in element_blocks(mesh.volume_quadrature(order)):
        v, g = field(els, pts)
        vol += float(np.sum(w * volume_density(v, g)))
    jump = 0.0
    for fs in face_sets(mesh, faces, order):
        v0, _ = field(fs.elements[:, 0], fs.points)
        a = v0
        if fs.interior:
            v1, _ = field(fs.elements[:, 1], fs.points)
            a = v0 - v1
        jump += float(np.sum(penalty[fs.faces][:, None] * fs.weights * jump_density(a, fs.normals)))
    return vol, jump


def dg_norm(field, which: str, system: BlockSystem, order: int | None = None) -> float:
    """``||v||_DG,E`` (``which="E"``) or ``||p||_DG,P_j`` (``which="P0"``, ``"P1"``, ...).

    ``field`` is a coefficient vector of the matching space or an evaluator
    ``(elements, points) -> (values, gradients)``. The norm is the sum of the
    bulk and the penalty-jump contributions.
    """
    params = system.params
    if which == "E":
        space = system.space_u
        faces = system.faces.u_faces(INTERIOR, DIRICHLET)
        pen = system.eta
        lam, mu = params.lam, params.mu

        def vol_density(v, g):
            eps = 0.5 * (g + np.swapaxes(g, -1, -2))
            tr = np.trace(eps, axis1=-2, axis2=-1)
            return 2 * mu * np.sum(eps * eps, axis=(-2, -1)) + lam * tr**2

        def jump_density(a, n):
            an = np.einsum("fqi,fi->fq", a, n)
            return 0.5 * (np.sum(a * a, axis=-1) + an**2)
    elif which.startswith("P"):
        j = int(which[1:])
        space = system.space_q
        faces = system.faces.p_faces(j, INTERIOR, DIRICHLET)
        pen = system.zeta[j]
        kappa = params.permeability(j) / params.networks[j].mu

        def vol_density(v, g):
            return np.einsum("...k,kl,...l->...", g[..., 0, :], kappa, g[..., 0, :])

        def jump_density(a, n):
            return a[..., 0] ** 2
    else:
        raise ValueError(f"unknown norm {which!r}")
    order = order or 2 * max(system.space_u.degree, system.space_q.degree) + 4
    if not callable(field):
        field = coefficient_field(space, field)
    vol, jump = _norm_parts(field, space, faces, pen, order, vol_density, jump_density)
    return math.sqrt(max(vol, 0.0)) + math.sqrt(max(jump, 0.0))


def l2_norm(field, space: DgSpace, order: int, weight: float = 1.0) -> float:
    if not callable(field):
        field = coefficient_field(space, field)
    total = 0.0
    for els, pts, w in element_blocks(space.mesh.volume_quadrature(order)):
        v, _ = field(els, pts)
        total += float(np.sum(w[..., None] * v * v))
    return math.sqrt(weight * total)


# error reports ---------------------------------------------------------------------------------


@dataclass
class ErrorReport:
    h: float
    p: int
    q: int
    err_u_dg: float
    err_p_l2: float
    err_p_dg: list
    err_u_l2: float
    t_eval: float

    @property
    def pairing(self) -> str:
        return f"P{self.q}-P{self.p}"


def error_report(state: TransientState, case: ManufacturedCase, system: BlockSystem,
                 t: float | None = None) -> ErrorReport:
    """Errors against the exact fields at ``t`` (the state's time by default)."""
    t = state.t if t is None else t
    su, sq = system.space_u, system.space_q
    order = 2 * max(su.degree, sq.degree) + 4
    eu = error_field(su, state.U, lambda x: case.u(x, t), lambda x: case.grad_u(x, t))
    err_u = dg_norm(eu, "E", system, order)
    err_u_l2 = l2_norm(eu, su, order)
    err_p_l2 = 0.0
    err_p_dg = []
    for j in range(system.params.n_networks):
        pj = state.P[system.pressure_slice(j)]
        ep = error_field(sq, pj, lambda x, j=j: case.p(x, t)[:, j:j + 1],
                         lambda x, j=j: case.grad_p(x, t)[:, j:j + 1, :])
        err_p_l2 += l2_norm(ep, sq, order, system.params.networks[j].c)
        err_p_dg.append(dg_norm(ep, f"P{j}", system, order))
    return ErrorReport(h=system.mesh.mesh_size, p=su.degree, q=sq.degree, err_u_dg=err_u,
                       err_p_l2=err_p_l2, err_p_dg=err_p_dg, err_u_l2=err_u_l2, t_eval=t)


# convergence tables -----------------------------------------------------------------------------


def rate(e0: float, e1: float, h0: float, h1: float) -> float:
    return math.log(e0 / e1) / math.log(h0 / h1)


@dataclass
class RateTable:
    """Rows of ``(h, err_u_dg, roc_u, err_p_l2, roc_p)`` for one degree pairing."""

    pairing: str
    h: list
    err_u: list
    err_p: list
    roc_u: list = field(default_factory=list)
    roc_p: list = field(default_factory=list)

    def rows(self):
        for i, h in enumerate(self.h):
            yield (self.pairing, h, self.err_u[i], self.roc_u[i], self.err_p[i], self.roc_p[i])

    def write_csv(self, path):
        write_rate_csv([self], path)


CSV_COLUMNS = ("pairing", "h", "err_u_dg", "roc_u", "err_p_l2", "roc_p")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6e}"
    return str(v)


def write_rate_csv(tables, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for table in tables:
            for row in table.rows():
                w.writerow([_fmt(v) for v in row])


def convergence_rates(reports, pairing: str | None = None) -> RateTable:
    """Rates ``log(e_i / e_{i+1}) / log(h_i / h_{i+1})`` for consecutive reports."""
    reports = list(reports)
    if len(reports) < 2:
        raise ValueError("at least two reports are needed for a rate")
    hs = [r.h for r in reports]
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError(f"mesh sizes must strictly decrease, got {hs}")
    eu = [r.err_u_dg for r in reports]
    ep = [r.err_p_l2 for r in reports]
    roc_u = [None] + [rate(eu[i], eu[i + 1], hs[i], hs[i + 1]) for i in range(len(hs) - 1)]
    roc_p = [None] + [rate(ep[i], ep[i + 1], hs[i], hs[i + 1]) for i in range(len(hs) - 1)]
    return RateTable(pairing or reports[0].pairing, hs, eu, ep, roc_u, roc_p)


# energy ---------------------------------------------------------------------------------------


def energy_terms(state: TransientState, system: BlockSystem) -> dict:
    """Kinetic ``Z^T M_u Z``, strain ``U^T K_u U`` and storage ``P^T M_p P``."""
    return {
        "kinetic": float(state.Z @ (system.M_u @ state.Z)),
        "strain": float(state.U @ (system.K_u @ state.U)),
        "storage": float(state.P @ (system.M_p @ state.P)),
    }


class EnergyTrace:
    """Observer recording instantaneous energy and accumulated dissipation.

    The dissipation integrands ``||p_k||^2_DG,P_k`` and ``||sqrt(beta_e) p_k||^2``
    are integrated in time with the trapezoidal rule.
    """

    name = "energy"

    def __init__(self, system: BlockSystem, stride: int = 1):
        self.system = system
        self.stride = stride
        order = 2 * max(system.space_u.degree, system.space_q.degree) + 2
        sq = system.space_q
        self._vol = []
        self._jump = []
        for j in range(system.params.n_networks):
            self._vol.append(assemble_pressure_stiffness(sq, system.params, j, system.zeta[j],
                                                         system.faces, order, {"volume"}))
            self._jump.append(assemble_pressure_stiffness(sq, system.params, j, system.zeta[j],
                                                          system.faces, order, {"penalty"}))
        mass = system.mass_q if system.mass_q is not None else assemble_mass(sq)
        self._ext = sp.block_diag([b * mass for b in system.params.beta_e], format="csr")
        self.times: list = []
        self.kinetic: list = []
        self.strain: list = []
        self.storage: list = []
        self.dissipation: list = []
        self.external: list = []
        self._last = None

    def rates(self, state: TransientState) -> tuple[float, float]:
        dg = 0.0
        for j in range(self.system.params.n_networks):
            p = state.P[self.system.pressure_slice(j)]
            a = max(float(p @ (self._vol[j] @ p)), 0.0)
            b = max(float(p @ (self._jump[j] @ p)), 0.0)
            dg += (math.sqrt(a) + math.sqrt(b)) ** 2
        ext = max(float(state.P @ (self._ext @ state.P)), 0.0)
        return dg, ext

    def __call__(self, step_index: int, state: TransientState, stepper=None):
        rate_now = self.rates(state)
        if self._last is None:
            acc = (0.0, 0.0)
        else:
            t0, r0, a0 = self._last
            dt = state.t - t0
            acc = (a0[0] + 0.5 * dt * (r0[0] + rate_now[0]), a0[1] + 0.5 * dt * (r0[1] + rate_now[1]))
        self._last = (state.t, rate_now, acc)
        if step_index % self.stride:
            return
        terms = energy_terms(state, self.system)
        self.times.append(state.t)
        self.kinetic.append(terms["kinetic"])
        self.strain.append(terms["strain"])
        self.storage.append(terms["storage"])
        self.dissipation.append(acc[0])
        self.external.append(acc[1])

    @property
    def records(self) -> dict:
        return {"t": self.times, "kinetic": self.kinetic, "strain": self.strain,
                "storage": self.storage, "dissipation": self.dissipation,
                "external": self.external}

    def instantaneous(self) -> np.ndarray:
        return np.asarray(self.kinetic) + np.asarray(self.strain) + np.asarray(self.storage)


def energy_trace(result_or_states, system: BlockSystem) -> dict:
    """Energy records for a sequence of states (or a finished observer)."""
    if isinstance(result_or_states, EnergyTrace):
        return result_or_states.records
    tr = EnergyTrace(system)
    for k, s in enumerate(result_or_states):
        tr(k, s)
    return tr.records
