"""Physical parameters, boundary data and manufactured solutions.

Coefficients are spatially constant. Exact fields are written once as sympy
expressions; derivatives and forcing terms are derived symbolically and
compiled to vectorised numpy callables of the form ``f(points (N, d), t)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import sympy as sy


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkParameters:
    """Coefficients of one fluid network.

    ``K`` is either a scalar permeability (isotropic) or a ``d x d`` tensor.
    """

    alpha: float
    c: float
    K: float | np.ndarray
    mu: float
    beta_e: float = 0.0

    def permeability(self, dim: int) -> np.ndarray:
        K = np.asarray(self.K, dtype=float)
        if K.ndim == 0:
            return float(K) * np.eye(dim)
        return K


@dataclass(frozen=True)
class MpetParameters:
    dim: int
    rho: float
    lam: float
    mu: float
    networks: tuple[NetworkParameters, ...]
    beta: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "networks", tuple(self.networks))
        n = len(self.networks)
        beta = np.zeros((n, n)) if self.beta is None else np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "beta", beta)

    @property
    def n_networks(self) -> int:
        return len(self.networks)

    @property
    def elastic_bound(self) -> float:
        """Largest eigenvalue of the isotropic stiffness tensor, ``d lam + 2 mu``."""
        return self.dim * self.lam + 2.0 * self.mu

    def permeability(self, j: int) -> np.ndarray:
        return self.networks[j].permeability(self.dim)

    def permeability_bound(self, j: int) -> float:
        return float(np.linalg.eigvalsh(self.permeability(j)).max())

    @property
    def alpha(self) -> np.ndarray:
        return np.array([nw.alpha for nw in self.networks])

    @property
    def storage(self) -> np.ndarray:
        return np.array([nw.c for nw in self.networks])

    @property
    def beta_e(self) -> np.ndarray:
        return np.array([nw.beta_e for nw in self.networks])

    def transfer_matrix(self) -> np.ndarray:
        """Network coupling ``diag(sum_k beta_jk + beta_e_j) - beta``."""
        return np.diag(self.beta.sum(axis=1) + self.beta_e) - self.beta

    def with_networks(self, **changes) -> "MpetParameters":
        """Copy with the same change applied to every network."""
        return replace(self, networks=tuple(replace(nw, **changes) for nw in self.networks))


def validate_parameters(params: MpetParameters) -> MpetParameters:
    """Check every coefficient bound; raise :class:`ParameterError` naming the field."""
    def need(ok, name, value, bound):
        if not ok:
            raise ParameterError(f"{name} must be {bound}, got {value!r}")

    if params.dim not in (2, 3):
        raise ParameterError(f"dim must be 2 or 3, got {params.dim}")
    for name in ("rho", "lam", "mu"):
        v = getattr(params, name)
        need(np.isfinite(v), name, v, "finite")
    need(params.rho > 0, "rho", params.rho, "> 0")
    need(params.mu > 0, "mu", params.mu, "> 0")
    need(params.lam >= 0, "lam", params.lam, ">= 0")
    if params.n_networks < 1:
        raise ParameterError("at least one network is required")
    for j, nw in enumerate(params.networks):
        tag = f"networks[{j}]"
        for name in ("alpha", "c", "mu", "beta_e"):
            v = getattr(nw, name)
            need(np.isfinite(v), f"{tag}.{name}", v, "finite")
        need(nw.c > 0, f"{tag}.c", nw.c, "> 0")
        need(nw.mu > 0, f"{tag}.mu", nw.mu, "> 0")
        need(nw.alpha >= 0, f"{tag}.alpha", nw.alpha, ">= 0")
        need(nw.beta_e >= 0, f"{tag}.beta_e", nw.beta_e, ">= 0")
        K = np.asarray(nw.K, dtype=float)
        if K.ndim == 0:
            need(K > 0, f"{tag}.K", float(K), "> 0")
        else:
            if K.shape != (params.dim, params.dim):
                raise ParameterError(f"{tag}.K must be a scalar or {params.dim}x{params.dim}")
            if not np.allclose(K, K.T, rtol=1e-14, atol=0.0):
                raise ParameterError(f"{tag}.K must be symmetric")
            need(np.linalg.eigvalsh(K).min() > 0, f"{tag}.K", "eigenvalues", "positive definite")
    beta = params.beta
    n = params.n_networks
    if beta.shape != (n, n):
        raise ParameterError(f"beta must be {n}x{n}, got shape {beta.shape}")
    if not np.all(np.isfinite(beta)):
        raise ParameterError("beta must be finite")
    if not np.array_equal(beta, beta.T):
        raise ParameterError("beta must be symmetric")
    if np.any(np.diag(beta) != 0):
        raise ParameterError("beta diagonal must be zero")
    if np.any(beta < 0):
        raise ParameterError("beta entries must be >= 0")
    return params


def table1_parameters() -> MpetParameters:
    """3D four-network benchmark coefficients."""
    beta = np.zeros((4, 4))
    beta[0, 1] = beta[1, 0] = 1.0
    beta[2, 3] = beta[3, 2] = 1.0
    nw = NetworkParameters(alpha=0.25, c=0.1, K=1.0, mu=1.0, beta_e=0.0)
    return MpetParameters(dim=3, rho=1.0, lam=1.0, mu=1.0, networks=(nw,) * 4, beta=beta)


def table3_parameters() -> MpetParameters:
    """2D two-network coefficients at brain-tissue scale."""
    beta = np.array([[0.0, 1e-7], [1e-7, 0.0]])
    nws = tuple(NetworkParameters(alpha=a, c=1e-6, K=3.5e-11, mu=3.5e-3) for a in (0.49, 0.51))
    return MpetParameters(dim=2, rho=1000.0, lam=505.0, mu=216.0, networks=nws, beta=beta)


# manufactured solutions ------------------------------------------------------

X = sy.symbols("x y z", real=True)
T = sy.Symbol("t", real=True)


def _compile(exprs, dim: int) -> Callable:
    """Vectorise an array of sympy expressions into ``f(points, t)``."""
    arr = np.asarray(exprs, dtype=object)
    shape = arr.shape
    flat = list(arr.ravel())
    fn = sy.lambdify((X[:dim], T), flat, modules="numpy", cse=True)

    def evaluate(points, t):
        pts = np.asarray(points, dtype=float)
        lead = pts.shape[:-1]
        cols = tuple(pts[..., k] for k in range(dim))
        vals = fn(cols, float(t))
        out = np.empty(lead + (len(flat),))
        for i, v in enumerate(vals):
            out[..., i] = v
        return out.reshape(lead + shape)

    return evaluate


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact fields and derived forcing; every callable maps ``(points, t)``.

    Shapes for ``N`` points: ``u`` and its time derivatives ``(N, d)``,
    ``grad_u`` ``(N, d, d)`` with ``[i, k] = d u_i / d x_k``, pressures
    ``(N, J)``, ``grad_p`` ``(N, J, d)``, ``stress`` ``(N, d, d)``,
    ``f`` ``(N, d)`` and ``g`` ``(N, J)``.
    """

    name: str
    params: MpetParameters
    u: Callable
    u_t: Callable
    u_tt: Callable
    grad_u: Callable
    stress: Callable
    p: Callable
    p_t: Callable
    grad_p: Callable
    f: Callable
    g: Callable
    expressions: dict = field(repr=False, default_factory=dict)

    @property
    def dim(self) -> int:
        return self.params.dim

    @property
    def n_networks(self) -> int:
        return self.params.n_networks


def case_from_expressions(name: str, params: MpetParameters, u_exprs: Sequence,
                          p_exprs: Sequence) -> ManufacturedCase:
    """Build a case from sympy expressions in ``x, y[, z], t``."""
    d = params.dim
    J = params.n_networks
    if len(u_exprs) != d:
        raise ValueError(f"{name}: displacement needs {d} components, got {len(u_exprs)}")
    if len(p_exprs) != J:
        raise ValueError(f"{name}: expected {J} pressures, got {len(p_exprs)}")
    x = X[:d]
    u = sy.Matrix([sy.sympify(e) for e in u_exprs])
    p = sy.Matrix([sy.sympify(e) for e in p_exprs])
    grad_u = u.jacobian(x)
    eps = (grad_u + grad_u.T) / 2
    sigma = params.lam * eps.trace() * sy.eye(d) + 2 * params.mu * eps
    div_sigma = sy.Matrix([sum(sy.diff(sigma[i, k], x[k]) for k in range(d)) for i in range(d)])
    grad_p = p.jacobian(x)
    u_t = u.diff(T)
    u_tt = u_t.diff(T)
    p_t = p.diff(T)
    alpha = params.alpha
    f = params.rho * u_tt - div_sigma
    for k in range(J):
        f += alpha[k] * grad_p[k, :].T
    div_u_t = sum(sy.diff(u_t[k], x[k]) for k in range(d))
    coupling = params.transfer_matrix()
    g = []
    for j, nw in enumerate(params.networks):
        Kmu = sy.Matrix(params.permeability(j)) / nw.mu
        flux = Kmu * grad_p[j, :].T
        div_flux = sum(sy.diff(flux[k], x[k]) for k in range(d))
        exchange = sum(coupling[j, k] * p[k] for k in range(J))
        g.append(nw.c * p_t[j] + nw.alpha * div_u_t - div_flux + exchange)
    g = sy.Matrix(g)

    return ManufacturedCase(
        name=name,
        params=params,
        u=_compile(list(u), d),
        u_t=_compile(list(u_t), d),
        u_tt=_compile(list(u_tt), d),
        grad_u=_compile(grad_u.tolist(), d),
        stress=_compile(sigma.tolist(), d),
        p=_compile(list(p), d),
        p_t=_compile(list(p_t), d),
        grad_p=_compile(grad_p.tolist(), d),
        f=_compile(list(f), d),
        g=_compile(list(g), d),
        expressions={"u": u, "p": p, "f": f, "g": g},
    )


def manufactured_case(which: str, params: MpetParameters | None = None) -> ManufacturedCase:
    """The two benchmark solutions, ``"TC1_3D"`` and ``"TC2_2D"``."""
    x, y, z = X
    pi = sy.pi
    s = sy.sin(pi * T)
    if which == "TC1_3D":
        params = table1_parameters() if params is None else params
        if params.dim != 3 or params.n_networks != 4:
            raise ValueError("TC1_3D requires d=3 and 4 networks")
        u = [-s * sy.cos(pi * x) * sy.cos(pi * y), s * sy.sin(pi * x) * sy.sin(pi * y), s * z]
        pa = pi * s * (sy.cos(pi * y) * sy.sin(pi * x) + sy.cos(pi * x) * sy.sin(pi * y)) * z
        pb = pi * s * (sy.cos(pi * y) * sy.sin(pi * x) - sy.cos(pi * x) * sy.sin(pi * y)) * z
        return case_from_expressions(which, params, u, [pa, pb, pa, pb])
    if which == "TC2_2D":
        params = table3_parameters() if params is None else params
        if params.dim != 2 or params.n_networks != 2:
            raise ValueError("TC2_2D requires d=2 and 2 networks")
        u = [-s * sy.cos(pi * x) * sy.cos(pi * y), s * sy.sin(pi * x) * sy.sin(pi * y)]
        amp = 10**4 * pi * s
        p1 = amp * (sy.cos(pi * y) * sy.sin(pi * x) + sy.cos(pi * x) * sy.sin(pi * y))
        p2 = amp * (sy.cos(pi * y) * sy.sin(pi * x) - sy.cos(pi * x) * sy.sin(pi * y))
        return case_from_expressions(which, params, u, [p1, p2])
    raise ValueError(f"unknown manufactured case {which!r}")


def zero_case(params: MpetParameters) -> ManufacturedCase:
    return case_from_expressions("zero", params, [0] * params.dim, [0] * params.n_networks)


# boundary data -------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryData:
    """Boundary conditions by face tag.

    Displacement is Dirichlet on every boundary tag not listed in
    ``neumann_u``; network ``j`` is Dirichlet on tags not in ``neumann_p[j]``.
    Dirichlet callables take ``(points, t)``; Neumann callables take
    ``(points, t, normals)`` and return ``(N, d)`` tractions or ``(N, J)``
    fluxes. ``u_dirichlet_t`` is the time derivative of the displacement
    data, needed by the coupling lift.
    """

    dim: int
    n_networks: int
    u_dirichlet: Callable | None = None
    u_dirichlet_t: Callable | None = None
    traction: Callable | None = None
    p_dirichlet: Callable | None = None
    flux: Callable | None = None
    neumann_u: frozenset = frozenset()
    neumann_p: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "neumann_u", frozenset(self.neumann_u))
        np_ = tuple(frozenset(s) for s in self.neumann_p) or (frozenset(),) * self.n_networks
        if len(np_) != self.n_networks:
            raise ValueError("neumann_p needs one tag set per network")
        object.__setattr__(self, "neumann_p", np_)


def boundary_data_from_exact(case: ManufacturedCase, neumann_u=(), neumann_p=None) -> BoundaryData:
    """Boundary data sampled from the exact solution (all Dirichlet by default)."""
    params = case.params
    alpha = params.alpha
    kmu = [params.permeability(j) / nw.mu for j, nw in enumerate(params.networks)]

    def traction(points, t, normals):
        sig = case.stress(points, t)
        p = case.p(points, t)
        out = np.einsum("nik,nk->ni", sig, normals)
        return out - (p @ alpha)[:, None] * normals

    def flux(points, t, normals):
        gp = case.grad_p(points, t)
        kn = np.stack([normals @ k for k in kmu], axis=1)  # K_j n / mu_j, K symmetric
        return np.einsum("njd,njd->nj", gp, kn)

    return BoundaryData(
        dim=case.dim,
        n_networks=case.n_networks,
        u_dirichlet=case.u,
        u_dirichlet_t=case.u_t,
        traction=traction,
        p_dirichlet=case.p,
        flux=flux,
        neumann_u=frozenset(neumann_u),
        neumann_p=tuple(neumann_p) if neumann_p is not None else (),
    )
