"""Coupled Newmark-beta / theta-method time integration.

The momentum balance is advanced with Newmark's scheme and the pressure
equations with the theta-method, both written in terms of the unknowns
``(U, P)`` at the new level; velocity ``Z`` and acceleration ``A`` are then
updated explicitly. The coupled matrix is constant and factorised once.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import BlockSystem, RhsAssembler
from .model import ManufacturedCase

log = logging.getLogger(__name__)

DIRECT_LIMIT = 10_000


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeConfig:
    """Step size, horizon and integrator parameters.

    ``ba_sign`` selects the sign of the ``B A^n`` term in the pressure rows:
    ``-1`` follows the theta-method derivation, ``+1`` the alternative.
    """

    dt: float
    T: float
    beta: float = 0.25
    gamma: float = 0.5
    theta: float = 0.5
    ba_sign: int = -1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not self.T >= 0:
            raise ValueError(f"T must be >= 0, got {self.T}")
        if self.T > 0 and self.dt > self.T * (1 + 1e-12):
            raise ValueError("dt must not exceed T")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0 <= self.theta <= 1:
            raise ValueError("theta must lie in [0, 1]")
        if self.ba_sign not in (-1, 1):
            raise ValueError("ba_sign must be -1 or +1")

    @property
    def n_steps(self) -> int:
        ratio = self.T / self.dt
        n = int(round(ratio))
        if abs(ratio - n) > 1e-9 * max(1.0, ratio):
            log.warning("T/dt = %.6g is not whole; taking %d steps to t = %.6g",
                        ratio, n, n * self.dt)
        return n


@dataclass
class TransientState:
    t: float
    U: np.ndarray
    P: np.ndarray
    Z: np.ndarray
    A: np.ndarray

    def copy(self) -> "TransientState":
        return TransientState(self.t, self.U.copy(), self.P.copy(), self.Z.copy(), self.A.copy())

    @property
    def vector(self) -> np.ndarray:
        """Stacked ``[U; P; Z; A]``."""
        return np.concatenate([self.U, self.P, self.Z, self.A])

    def check_finite(self):
        for name in ("U", "P", "Z", "A"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise SolverError(f"non-finite entries in {name} at t = {self.t:.6g}")


# linear solver -----------------------------------------------------------------------


def _element_groups(system: BlockSystem) -> np.ndarray:
    """Element id of every unknown of the reduced ``(U, P)`` system."""
    su, sq = system.space_u, system.space_q
    gu = np.repeat(np.arange(system.mesh.n_elements), su.block)
    gp = np.tile(np.repeat(np.arange(system.mesh.n_elements), sq.block), system.params.n_networks)
    return np.concatenate([gu, gp])


class LinearSolver:
    """Factor-once solver for the constant coupled matrix.

    ``method`` is ``"direct"`` (sparse LU), ``"iterative"`` (restarted GMRES
    with an element block-Jacobi preconditioner) or ``"auto"`` (direct up to
    :data:`DIRECT_LIMIT` unknowns).
    """

    def __init__(self, matrix: sp.spmatrix, method: str = "auto", groups: np.ndarray | None = None,
                 rtol: float = 1e-12):
        self.matrix = sp.csc_matrix(matrix)
        n = self.matrix.shape[0]
        if method == "auto":
            method = "direct" if n <= DIRECT_LIMIT or groups is None else "iterative"
        if method not in ("direct", "iterative"):
            raise ValueError(f"unknown solver method {method!r}")
        self.method = method
        self.rtol = rtol
        self.iterations = 0
        if method == "direct":
            self._lu = spla.splu(self.matrix, permc_spec="COLAMD")
        else:
            if groups is None:
                groups = np.arange(n)
            self._prec = self._block_jacobi(groups)
            self._csr = self.matrix.tocsr()

    def _block_jacobi(self, groups: np.ndarray) -> spla.LinearOperator:
        order = np.argsort(groups, kind="stable")
        counts = np.bincount(groups)
        mat = self.matrix.tocsr()[order][:, order]
        blocks = []
        start = 0
        for c in counts:
            blocks.append(np.linalg.inv(mat[start:start + c, start:start + c].toarray()))
            start += c
        inv = sp.block_diag(blocks, format="csr")
        perm = sp.csr_matrix((np.ones(len(order)), (order, np.arange(len(order)))),
                             shape=(len(order),) * 2)
        full = (perm @ inv @ perm.T).tocsr()
        return spla.aslinearoperator(full)

    def solve(self, rhs: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        if self.method == "direct":
            return self._lu.solve(rhs)
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = spla.gmres(self._csr, rhs, x0=x0, rtol=self.rtol, atol=0.0, restart=50,
                             maxiter=200, M=self._prec, callback=cb, callback_type="pr_norm")
        self.iterations += count[0]
        if info != 0:
            res = np.linalg.norm(self._csr @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
            raise SolverError(f"GMRES did not converge (info={info}, relative residual {res:.3e})")
        return x


# stepping ----------------------------------------------------------------------------------


class CoupledStepper:
    """Holds the factorised coupled matrix and advances one step at a time."""

    def __init__(self, system: BlockSystem, rhs: RhsAssembler, config: TimeConfig,
                 solver: str = "auto"):
        self.system = system
        self.rhs = rhs
        self.config = config
        b, g, th, dt = config.beta, config.gamma, config.theta, config.dt
        self.c_u = 1.0 / (b * dt * dt)
        self.c_b = th * g / (b * dt)
        top = sp.hstack([self.c_u * system.M_u + system.K_u, -system.B.T])
        bottom = sp.hstack([self.c_b * system.B, system.M_p / dt + th * system.K_p])
        self.matrix = sp.vstack([top, bottom], format="csr")
        self.solver = LinearSolver(self.matrix, solver, _element_groups(system))
        self._G_cache: tuple[float, np.ndarray] | None = None

    def _G(self, t: float) -> np.ndarray:
        if self._G_cache is not None and self._G_cache[0] == t:
            return self._G_cache[1]
        G = self.rhs.G(t)
        self._G_cache = (t, G)
        return G

    def right_hand_side(self, state: TransientState) -> np.ndarray:
        cfg = self.config
        b, g, th, dt = cfg.beta, cfg.gamma, cfg.theta, cfg.dt
        s = self.system
        t1 = state.t + dt
        U, P, Z, A = state.U, state.P, state.Z, state.A
        r1 = self.rhs.F(t1) + s.M_u @ (self.c_u * U + Z / (b * dt) + (1 - 2 * b) / (2 * b) * A)
        G1 = self._G(t1)
        G0 = self._G(state.t) if th < 1 else 0.0
        r2 = (th * G1 + (1 - th) * G0 + s.M_p @ P / dt - (1 - th) * (s.K_p @ P)
              + s.B @ (self.c_b * U + (th * g / b - 1) * Z
                       + cfg.ba_sign * th * (1 - g / (2 * b)) * dt * A))
        self._G_cache = (t1, G1)
        return np.concatenate([r1, r2])

    def step(self, state: TransientState) -> TransientState:
        cfg = self.config
        b, g, dt = cfg.beta, cfg.gamma, cfg.dt
        rhs = self.right_hand_side(state)
        x0 = np.concatenate([state.U, state.P])
        x = self.solver.solve(rhs, x0=x0)
        nu = self.system.n_u
        U1, P1 = x[:nu], x[nu:]
        A1 = (U1 - state.U) / (b * dt * dt) - state.Z / (b * dt) + (2 * b - 1) / (2 * b) * state.A
        Z1 = state.Z + dt * (g * A1 + (1 - g) * state.A)
        new = TransientState(state.t + dt, U1, P1, Z1, A1)
        new.check_finite()
        return new


def step(state: TransientState, system: BlockSystem, rhs: RhsAssembler, config: TimeConfig,
         solver: str = "auto") -> TransientState:
    """One step; builds and factorises the matrix on every call (use :class:`CoupledStepper` in loops)."""
    return CoupledStepper(system, rhs, config, solver).step(state)


def full_matrices(system: BlockSystem, config: TimeConfig):
    """Block matrices ``A1``, ``A2`` of ``A1 X^{n+1} = A2 X^n + S^{n+1}``, ``X = [U; P; Z; A]``.

    The momentum row of ``A2`` has no pressure entry; the ``B A^n`` entry
    carries ``config.ba_sign``.
    """
    b, g, th, dt = config.beta, config.gamma, config.theta, config.dt
    nu, npr = system.n_u, system.n_p
    Iu = sp.identity(nu, format="csr")
    Zuu = sp.csr_matrix((nu, nu))
    Zup = sp.csr_matrix((nu, npr))
    Zpu = sp.csr_matrix((npr, nu))
    M, K, B = system.M_u, system.K_u, system.B
    c_u = 1.0 / (b * dt * dt)
    A1 = sp.bmat([
        [c_u * M + K, -B.T, Zuu, Zuu],
        [th * g / (b * dt) * B, system.M_p / dt + th * system.K_p, Zpu, Zpu],
        [Zuu, Zup, Iu, -dt * g * Iu],
        [-c_u * Iu, Zup, Zuu, Iu],
    ], format="csr")
    A2 = sp.bmat([
        [c_u * M, Zup, M / (b * dt), (1 - 2 * b) / (2 * b) * M],
        [th * g / (b * dt) * B, system.M_p / dt - (1 - th) * system.K_p, (th * g / b - 1) * B,
         config.ba_sign * th * (1 - g / (2 * b)) * dt * B],
        [Zuu, Zup, Iu, dt * (1 - g) * Iu],
        [-c_u * Iu, Zup, -Iu / (b * dt), (2 * b - 1) / (2 * b) * Iu],
    ], format="csr")
    return A1, A2


def source_vector(rhs: RhsAssembler, t_new: float, config: TimeConfig) -> np.ndarray:
    th = config.theta
    F = rhs.F(t_new)
    G = th * rhs.G(t_new) + (1 - th) * rhs.G(t_new - config.dt)
    return np.concatenate([F, G, np.zeros(2 * len(F))])


# initial data and the time loop ---------------------------------------------------------------


def initialize_state(system: BlockSystem, rhs: RhsAssembler, case: ManufacturedCase | None = None,
                     t0: float = 0.0, u0: Callable | None = None, v0: Callable | None = None,
                     p0: Callable | None = None) -> TransientState:
    """L2 projections of the initial fields and the consistent initial acceleration.

    Initial fields default to the case's exact solution at ``t0``; without a
    case and explicit callables they are zero.
    """
    su, sq = system.space_u, system.space_q
    J = system.params.n_networks
    if case is not None:
        u0 = u0 or (lambda x: case.u(x, t0))
        v0 = v0 or (lambda x: case.u_t(x, t0))
        p0 = p0 or (lambda x: case.p(x, t0))
    U = su.project(u0) if u0 is not None else np.zeros(system.n_u)
    Z = su.project(v0) if v0 is not None else np.zeros(system.n_u)
    if p0 is not None:
        sq_all = DgSpaceStack(sq, J)
        P = sq_all.project(p0)
    else:
        P = np.zeros(system.n_p)
    A = acceleration(system, rhs, t0, U, P)
    return TransientState(t0, U, P, Z, A)


class DgSpaceStack:
    """Project ``J`` scalar fields into the network-major pressure vector."""

    def __init__(self, space, n_networks: int):
        self.space = space
        self.n = n_networks

    def project(self, func) -> np.ndarray:
        parts = []
        for j in range(self.n):
            parts.append(self.space.project(lambda x, j=j: np.asarray(func(x))[:, j]))
        return np.concatenate(parts)


def acceleration(system: BlockSystem, rhs: RhsAssembler, t: float, U, P) -> np.ndarray:
    """Solve ``M_u A = F(t) - K_u U + B^T P``."""
    res = rhs.F(t) - system.K_u @ U + system.B.T @ P
    return spla.spsolve(sp.csc_matrix(system.M_u), res)


@dataclass
class Observer:
    """Callback ``fn(state, stepper) -> value`` invoked every ``stride`` steps."""

    name: str
    fn: Callable
    stride: int = 1
    records: list = field(default_factory=list)

    def __call__(self, step_index: int, state: TransientState, stepper):
        if step_index % self.stride == 0:
            self.records.append((state.t, self.fn(state, stepper)))


@dataclass
class TransientResult:
    initial: TransientState
    final: TransientState
    n_steps: int
    records: dict
    solver_method: str = "direct"
    iterations: int = 0


def _records(observers) -> dict:
    return {o.name: o.records for o in observers if hasattr(o, "records")}


def run_transient(system: BlockSystem, rhs: RhsAssembler, initial: TransientState,
                  config: TimeConfig, observers=(), solver: str = "auto",
                  stepper: CoupledStepper | None = None) -> TransientResult:
    """Advance ``initial`` over ``config.n_steps`` steps, calling observers along the way."""
    n = config.n_steps if config.T > 0 else 0
    observers = list(observers)
    state = initial.copy()
    for obs in observers:
        obs(0, state, stepper)
    if n == 0:
        return TransientResult(initial, state, 0, _records(observers))
    stepper = stepper or CoupledStepper(system, rhs, config, solver)
    for k in range(1, n + 1):
        state = stepper.step(state)
        for obs in observers:
            obs(k, state, stepper)
    # snap the clock onto the grid to avoid drift from repeated addition
    state.t = initial.t + n * config.dt
    return TransientResult(initial, state, n, _records(observers),
                           stepper.solver.method, stepper.solver.iterations)
