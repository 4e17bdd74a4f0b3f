"""Sparse assembly of the symmetric interior penalty forms.

All face integrals use the face normal ``n`` of the first neighbour. On an
interior face side 0 carries sign +1 and side 1 carries -1, so a scalar jump
is ``sign * value * n`` and an average takes weight 1/2; a boundary face has
a single side with weight 1. Local blocks for vector spaces are laid out
component-major, matching :class:`~mpetdg.basis.DgSpace`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .basis import DgSpace, element_blocks
from .mesh import PolyMesh
from .model import BoundaryData, MpetParameters

log = logging.getLogger(__name__)

INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2


class AssemblyError(RuntimeError):
    pass


# face classification and penalties -------------------------------------------


@dataclass(frozen=True)
class FaceClassification:
    """Per-face kind for the displacement ``u`` and each pressure network."""

    u: np.ndarray
    p: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: PolyMesh, n_networks: int, neumann_u=(), neumann_p=None):
        tags = mesh.face_tags
        boundary = mesh.face_elements[:, 1] < 0

        def kinds(neumann):
            k = np.where(boundary, DIRICHLET, INTERIOR)
            if neumann:
                is_n = np.array([t in neumann for t in tags], dtype=bool)
                k[boundary & is_n] = NEUMANN
            return k

        neumann_p = neumann_p or [()] * n_networks
        if len(neumann_p) != n_networks:
            raise ValueError("neumann_p needs one tag set per network")
        return cls(u=kinds(set(neumann_u)), p=np.stack([kinds(set(s)) for s in neumann_p]))

    @classmethod
    def from_boundary_data(cls, mesh: PolyMesh, data: BoundaryData):
        return cls.from_mesh(mesh, data.n_networks, data.neumann_u, data.neumann_p)

    def u_faces(self, *kinds) -> np.ndarray:
        return np.nonzero(np.isin(self.u, kinds))[0]

    def p_faces(self, j: int, *kinds) -> np.ndarray:
        return np.nonzero(np.isin(self.p[j], kinds))[0]


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty scales ``eta0`` (displacement) and ``z`` (per network)."""

    eta0: float = 10.0
    z: tuple = (10.0,)
    auto_rescale: bool = True

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.z, dtype=float))
        object.__setattr__(self, "z", tuple(float(v) for v in z))
        if not self.eta0 > 0 or any(not v > 0 for v in self.z):
            raise ValueError("penalty scales must be positive")
        if self.eta0 < 3.0:
            log.warning("eta0 = %g is small; the displacement form may lose coercivity", self.eta0)

    def z_for(self, j: int) -> float:
        return self.z[j] if len(self.z) > 1 else self.z[0]

    def effective_z(self, params: MpetParameters, j: int) -> float:
        """Network scale, raised so that ``zeta >= 10 q^2 (k/mu) / h`` when enabled."""
        z = self.z_for(j)
        if self.auto_rescale:
            z = max(z, 10.0 / np.sqrt(params.networks[j].mu))
        return z


def harmonic_mean(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return 2.0 * a * b / (a + b)


def penalty_value(scale: float, coeff, degree: int, h_plus, h_minus=None, coeff_minus=None):
    """``scale * coeff * degree^2 / {h}_H`` with harmonic face averages.

    Omitting the minus side gives the boundary value ``scale * coeff * degree^2 / h``.
    """
    if h_minus is None:
        return scale * np.asarray(coeff, dtype=float) * degree**2 / np.asarray(h_plus, dtype=float)
    c = coeff if coeff_minus is None else harmonic_mean(coeff, coeff_minus)
    return scale * np.asarray(c, dtype=float) * degree**2 / harmonic_mean(h_plus, h_minus)


def penalty_eta(mesh: PolyMesh, params: MpetParameters, config: PenaltyConfig, degree: int):
    """Displacement penalty per face; constant coefficients so the mean is trivial."""
    return config.eta0 * params.elastic_bound * degree**2 / mesh.face_harmonic_h()


def penalty_zeta(mesh: PolyMesh, params: MpetParameters, config: PenaltyConfig, degree: int, j: int):
    """Pressure penalty of network ``j`` per face, ``z k_j / sqrt(mu_j) q^2 / {h}_H``."""
    k = params.permeability_bound(j)
    z = config.effective_z(params, j)
    return z * k / np.sqrt(params.networks[j].mu) * degree**2 / mesh.face_harmonic_h()


# triplet collection ----------------------------------------------------------------


class Triplets:
    """COO accumulator; conversion sums duplicates in insertion order."""

    def __init__(self, shape):
        self.shape = shape
        self.rows, self.cols, self.vals = [], [], []

    def add(self, rows, cols, block):
        """``rows (m, r)``, ``cols (m, c)``, ``block (m, r, c)``."""
        m, r = rows.shape
        c = cols.shape[1]
        self.rows.append(np.broadcast_to(rows[:, :, None], (m, r, c)).ravel())
        self.cols.append(np.broadcast_to(cols[:, None, :], (m, r, c)).ravel())
        self.vals.append(np.asarray(block).ravel())

    def tocsr(self) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix(self.shape)
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        order = np.lexsort((cols, rows))
        mat = sp.coo_matrix((vals[order], (rows[order], cols[order])), shape=self.shape).tocsr()
        mat.sum_duplicates()
        mat.sort_indices()
        return mat


def _dofs(space: DgSpace, elements) -> np.ndarray:
    elements = np.asarray(elements)
    return space.dof_offsets[elements][:, None] + np.arange(space.block)[None, :]


# face geometry ---------------------------------------------------------------------


@dataclass
class FaceSet:
    """Quadrature on a subset of faces with the neighbour elements."""

    faces: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    elements: np.ndarray  # (m, 2), -1 on boundary

    @property
    def interior(self) -> bool:
        return bool(len(self.faces)) and bool(np.all(self.elements[:, 1] >= 0))

    def sides(self):
        """``(side index, sign, average weight)`` of each side present."""
        if self.interior:
            return [(0, 1.0, 0.5), (1, -1.0, 0.5)]
        return [(0, 1.0, 1.0)]


def face_sets(mesh: PolyMesh, faces: np.ndarray, order: int) -> list[FaceSet]:
    """Split ``faces`` into an interior set and a boundary set."""
    pts, w = mesh.face_quadrature(order)
    faces = np.asarray(faces, dtype=np.int64)
    out = []
    for sel in (mesh.face_elements[faces, 1] >= 0, mesh.face_elements[faces, 1] < 0):
        f = faces[sel]
        if len(f):
            out.append(FaceSet(f, pts[f], w[f], mesh.face_normals[f], mesh.face_elements[f]))
    return out


def quad_order(p: int, q: int) -> int:
    return 2 * max(p, q) + 2


# mass matrices ---------------------------------------------------------------------------


def _scalar_mass_blocks(space: DgSpace, order: int) -> np.ndarray:
    quad = space.mesh.volume_quadrature(order)
    out = np.empty((space.mesh.n_elements, space.local_dim, space.local_dim))
    for els, pts, w in element_blocks(quad):
        v, _ = space.eval_at(els, pts, grad=False)
        out[els] = np.einsum("eq,eqa,eqb->eab", w, v, v)
    return out


def assemble_mass(space: DgSpace, weight: float = 1.0, order: int | None = None) -> sp.csr_matrix:
    """Weighted L2 mass matrix of ``space`` (block diagonal)."""
    order = order or 2 * space.degree + 2
    blocks = weight * _scalar_mass_blocks(space, order)
    nel = space.mesh.n_elements
    nc = space.n_components
    full = np.einsum("cd,eab->ecadb", np.eye(nc), blocks).reshape(nel, space.block, space.block)
    t = Triplets((space.n_dofs, space.n_dofs))
    dofs = _dofs(space, np.arange(nel))
    t.add(dofs, dofs, full)
    return t.tocsr()


# elasticity -----------------------------------------------------------------------------


ALL_TERMS = frozenset({"volume", "penalty", "consistency"})


def assemble_elastic_stiffness(space: DgSpace, params: MpetParameters, eta: np.ndarray,
                               faces: FaceClassification, order: int | None = None,
                               terms=ALL_TERMS) -> sp.csr_matrix:
    """SIPG linear elasticity form over interior and displacement-Dirichlet faces.

    ``terms`` selects a subset of ``{"volume", "penalty", "consistency"}``;
    volume plus penalty gives the squared parts of the DG norm.
    """
    d = space.dim
    if space.n_components != d:
        raise ValueError("elastic stiffness needs a vector space")
    order = order or 2 * space.degree + 2
    mesh = space.mesh
    lam, mu = params.lam, params.mu
    n = space.local_dim
    eye = np.eye(d)
    t = Triplets((space.n_dofs, space.n_dofs))

    quad = mesh.volume_quadrature(order)
    for els, pts, w in element_blocks(quad) if "volume" in terms else ():
        _, g = space.eval_at(els, pts)
        G = np.einsum("eq,eqbk,eqal->ebakl", w, g, g)  # test b, trial a
        lap = np.einsum("ebakk->eba", G)
        blk = (mu * np.einsum("ji,eba->ejbia", eye, lap)
               + mu * np.einsum("ebaij->ejbia", G)
               + lam * np.einsum("ebaji->ejbia", G))
        dofs = _dofs(space, els)
        t.add(dofs, dofs, blk.reshape(len(els), d * n, d * n))

    for fs in face_sets(mesh, faces.u_faces(INTERIOR, DIRICHLET), order):
        nrm = fs.normals
        pen = eta[fs.faces]
        nn = np.einsum("fi,fj->fij", nrm, nrm)
        ev = {s: space.eval_at(fs.elements[:, s], fs.points) for s, _, _ in fs.sides()}
        for s, sg, wa in fs.sides():
            vs, gs = ev[s]
            for s2, sg2, _ in fs.sides():
                vt, gt = ev[s2]
                P = np.einsum("fq,fqb,fqa->fba", fs.weights, vs, vt)
                Q1 = np.einsum("fq,fqb,fqak->fbak", fs.weights, vs, gt)  # test value, trial grad
                Q2 = np.einsum("fq,fqa,fqbk->fabk", fs.weights, vt, gs)  # trial value, test grad
                Q1n = np.einsum("fbak,fk->fba", Q1, nrm)
                Q2n = np.einsum("fabk,fk->fab", Q2, nrm)
                blk = 0.5 * sg * sg2 * pen[:, None, None, None, None] * np.einsum(
                    "fba,fij->fjbia", P, eye[None] + nn)
                if "penalty" not in terms:
                    blk[:] = 0.0
                if "consistency" not in terms:
                    t.add(_dofs(space, fs.elements[:, s]), _dofs(space, fs.elements[:, s2]),
                          blk.reshape(len(fs.faces), d * n, d * n))
                    continue
                blk -= wa * sg * (mu * (np.einsum("ij,fba->fjbia", eye, Q1n)
                                        + np.einsum("fbaj,fi->fjbia", Q1, nrm))
                                  + lam * np.einsum("fbai,fj->fjbia", Q1, nrm))
                blk -= wa * sg2 * (mu * (np.einsum("ij,fab->fjbia", eye, Q2n)
                                         + np.einsum("fabi,fj->fjbia", Q2, nrm))
                                   + lam * np.einsum("fabj,fi->fjbia", Q2, nrm))
                t.add(_dofs(space, fs.elements[:, s]), _dofs(space, fs.elements[:, s2]),
                      blk.reshape(len(fs.faces), d * n, d * n))
    return t.tocsr()


# pressure --------------------------------------------------------------------------------


def assemble_pressure_stiffness(space: DgSpace, params: MpetParameters, j: int, zeta: np.ndarray,
                                faces: FaceClassification, order: int | None = None,
                                terms=ALL_TERMS) -> sp.csr_matrix:
    """SIPG diffusion form ``A_Pj`` over interior and network-``j`` Dirichlet faces."""
    if space.n_components != 1:
        raise ValueError("pressure stiffness needs a scalar space")
    order = order or 2 * space.degree + 2
    mesh = space.mesh
    kappa = params.permeability(j) / params.networks[j].mu
    t = Triplets((space.n_dofs, space.n_dofs))

    quad = mesh.volume_quadrature(order)
    for els, pts, w in element_blocks(quad) if "volume" in terms else ():
        _, g = space.eval_at(els, pts)
        blk = np.einsum("eq,eqbk,kl,eqal->eba", w, g, kappa, g)
        dofs = _dofs(space, els)
        t.add(dofs, dofs, blk)

    for fs in face_sets(mesh, faces.p_faces(j, INTERIOR, DIRICHLET), order):
        kn = fs.normals @ kappa  # kappa symmetric
        pen = zeta[fs.faces][:, None, None]
        ev = {s: space.eval_at(fs.elements[:, s], fs.points) for s, _, _ in fs.sides()}
        for s, sg, wa in fs.sides():
            vs, gs = ev[s]
            for s2, sg2, _ in fs.sides():
                vt, gt = ev[s2]
                P = np.einsum("fq,fqb,fqa->fba", fs.weights, vs, vt)
                c1 = np.einsum("fq,fqb,fqak,fk->fba", fs.weights, vs, gt, kn)
                c2 = np.einsum("fq,fqa,fqbk,fk->fba", fs.weights, vt, gs, kn)
                blk = np.zeros_like(P)
                if "penalty" in terms:
                    blk += sg * sg2 * pen * P
                if "consistency" in terms:
                    blk -= wa * sg * c1 + wa * sg2 * c2
                t.add(_dofs(space, fs.elements[:, s]), _dofs(space, fs.elements[:, s2]), blk)
    return t.tocsr()


# coupling ------------------------------------------------------------------------------


def assemble_coupling_B(space_q: DgSpace, space_u: DgSpace, params: MpetParameters, j: int,
                        faces: FaceClassification, order: int | None = None) -> sp.csr_matrix:
    """``B_j(q, v) = (alpha_j q, div v) - sum_F (alpha_j {q}, [v].n)``; rows ``q``, columns ``v``.

    The face sum runs over interior and displacement-Dirichlet faces, where
    the test displacement has a jump that the momentum balance must see.
    """
    d = space_u.dim
    order = order or quad_order(space_u.degree, space_q.degree)
    mesh = space_u.mesh
    alpha = params.networks[j].alpha
    shape = (space_q.n_dofs, space_u.n_dofs)
    t = Triplets(shape)
    if alpha == 0.0:
        return t.tocsr()
    nq, nu = space_q.local_dim, space_u.local_dim

    quad = mesh.volume_quadrature(order)
    for els, pts, w in element_blocks(quad):
        vq, _ = space_q.eval_at(els, pts, grad=False)
        _, gu = space_u.eval_at(els, pts)
        blk = alpha * np.einsum("eq,eqb,eqai->ebia", w, vq, gu)
        t.add(_dofs(space_q, els), _dofs(space_u, els), blk.reshape(len(els), nq, d * nu))

    for fs in face_sets(mesh, faces.u_faces(INTERIOR, DIRICHLET), order):
        for s, _, wa in fs.sides():
            vq, _ = space_q.eval_at(fs.elements[:, s], fs.points, grad=False)
            for s2, sg2, _ in fs.sides():
                vu, _ = space_u.eval_at(fs.elements[:, s2], fs.points, grad=False)
                P = np.einsum("fq,fqb,fqa->fba", fs.weights, vq, vu)
                blk = -alpha * wa * sg2 * np.einsum("fba,fi->fbia", P, fs.normals)
                t.add(_dofs(space_q, fs.elements[:, s]), _dofs(space_u, fs.elements[:, s2]),
                      blk.reshape(len(fs.faces), nq, d * nu))
    return t.tocsr()


def assemble_transfer_coupling(space_q: DgSpace, params: MpetParameters,
                               mass: sp.spmatrix | None = None) -> sp.csr_matrix:
    """Exchange terms for the stacked pressure vector (network-major)."""
    if mass is None:
        mass = assemble_mass(space_q)
    return sp.kron(sp.csr_matrix(params.transfer_matrix()), mass, format="csr")


# full system -----------------------------------------------------------------------------


@dataclass
class BlockSystem:
    """Assembled operators of the semi-discrete problem."""

    mesh: PolyMesh
    space_u: DgSpace
    space_q: DgSpace
    params: MpetParameters
    penalty: PenaltyConfig
    faces: FaceClassification
    eta: np.ndarray
    zeta: np.ndarray
    M_u: sp.csr_matrix
    K_u: sp.csr_matrix
    B: sp.csr_matrix
    M_p: sp.csr_matrix
    K_p: sp.csr_matrix
    A_p: list = field(default_factory=list)
    B_blocks: list = field(default_factory=list)
    coupling: sp.csr_matrix | None = None
    mass_q: sp.csr_matrix | None = None

    @property
    def n_u(self) -> int:
        return self.space_u.n_dofs

    @property
    def n_p(self) -> int:
        return self.space_q.n_dofs * self.params.n_networks

    def pressure_slice(self, j: int) -> slice:
        nq = self.space_q.n_dofs
        return slice(j * nq, (j + 1) * nq)

    def matrices(self) -> dict:
        out = {"M_u": self.M_u, "K_u": self.K_u, "B": self.B, "M_p": self.M_p, "K_p": self.K_p}
        if self.coupling is not None:
            out["C"] = self.coupling
        return out


def assemble_system(mesh: PolyMesh, params: MpetParameters, p: int, q: int,
                    penalty: PenaltyConfig | None = None, faces: FaceClassification | None = None,
                    coercivity_check: bool = True) -> BlockSystem:
    """Build spaces and every matrix for displacement degree ``p`` and pressure degree ``q``."""
    penalty = penalty or PenaltyConfig()
    J = params.n_networks
    faces = faces or FaceClassification.from_mesh(mesh, J)
    order = quad_order(p, q)
    space_u = DgSpace(mesh, p, mesh.dim)
    space_q = DgSpace(mesh, q, 1)

    eta = penalty_eta(mesh, params, penalty, p)
    zeta = np.stack([penalty_zeta(mesh, params, penalty, q, j) for j in range(J)])
    M_u = assemble_mass(space_u, params.rho, order)
    K_u = assemble_elastic_stiffness(space_u, params, eta, faces, order)
    mass_q = assemble_mass(space_q, 1.0, order)
    A_p = [assemble_pressure_stiffness(space_q, params, j, zeta[j], faces, order) for j in range(J)]
    B_blocks = [assemble_coupling_B(space_q, space_u, params, j, faces, order) for j in range(J)]
    coupling = assemble_transfer_coupling(space_q, params, mass_q)
    M_p = sp.block_diag([c * mass_q for c in params.storage], format="csr")
    K_p = (sp.block_diag(A_p, format="csr") + coupling).tocsr()
    B = sp.vstack(B_blocks, format="csr")
    system = BlockSystem(mesh, space_u, space_q, params, penalty, faces, eta, zeta,
                         M_u, K_u, B, M_p, K_p, A_p, B_blocks, coupling, mass_q)
    if coercivity_check:
        check_coercivity(system)
    return system


def check_coercivity(system: BlockSystem, max_dofs: int = 3000) -> bool | None:
    """Dense Cholesky of ``K_u`` on small systems with displacement-Dirichlet faces.

    Returns ``None`` when the check is skipped and raises :class:`AssemblyError`
    when the penalty is too small for the form to be positive definite.
    """
    if len(system.faces.u_faces(DIRICHLET)) == 0 or system.n_u > max_dofs:
        return None
    try:
        np.linalg.cholesky(system.K_u.toarray())
    except np.linalg.LinAlgError:
        raise AssemblyError(
            f"elastic form is not positive definite with eta0={system.penalty.eta0}; "
            "increase the penalty") from None
    return True


def dump_matrices(system: BlockSystem, directory) -> list[Path]:
    """Write each operator as ``row col value`` lines (0-based indices)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, mat in system.matrices().items():
        coo = sp.coo_matrix(mat)
        path = directory / f"{name}.coo"
        with open(path, "w") as fh:
            fh.write(f"# {name} {mat.shape[0]} {mat.shape[1]} {coo.nnz}\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r} {c} {v:.17g}\n")
        paths.append(path)
    return paths


# right-hand side ---------------------------------------------------------------------------


class RhsAssembler:
    """Evaluate ``F(t)`` and ``G(t)`` for a system and its data.

    ``forcing_f(points, t) -> (N, d)`` and ``forcing_g(points, t) -> (N, J)``
    are the volume loads (either may be ``None``). Quadrature points and
    basis values are computed once.
    """

    def __init__(self, system: BlockSystem, boundary: BoundaryData | None,
                 forcing_f: Callable | None = None, forcing_g: Callable | None = None,
                 order: int | None = None):
        self.system = system
        self.boundary = boundary
        self.forcing_f = forcing_f
        self.forcing_g = forcing_g
        su, sq = system.space_u, system.space_q
        mesh = system.mesh
        self.order = order or quad_order(su.degree, sq.degree)
        self._volume = []
        for els, pts, w in element_blocks(mesh.volume_quadrature(self.order)):
            vu, _ = su.eval_at(els, pts, grad=False)
            vq, _ = sq.eval_at(els, pts, grad=False)
            self._volume.append((els, pts, w, vu, vq))
        pts, w = mesh.face_quadrature(self.order)
        self._fpts, self._fw = pts, w
        bnd = np.nonzero(mesh.face_elements[:, 1] < 0)[0]
        self._bnd = bnd
        owners = mesh.face_elements[bnd, 0]
        self._fvu, self._fgu = su.eval_at(owners, pts[bnd])
        self._fvq, self._fgq = sq.eval_at(owners, pts[bnd])
        self._owners = owners
        faces = system.faces
        self._u_kind = faces.u[bnd]
        self._p_kind = faces.p[:, bnd]

    def _scatter(self, space: DgSpace, elements, local) -> np.ndarray:
        out = np.zeros(space.n_dofs)
        np.add.at(out, _dofs(space, elements), local.reshape(len(elements), -1))
        return out

    def F(self, t: float) -> np.ndarray:
        sys_ = self.system
        su = sys_.space_u
        d = su.dim
        out = np.zeros(su.n_dofs)
        if self.forcing_f is not None:
            for els, pts, w, vu, _ in self._volume:
                f = self.forcing_f(pts.reshape(-1, d), t).reshape(len(els), -1, d)
                out += self._scatter(su, els, np.einsum("eq,eqa,eqi->eia", w, vu, f))
        bd = self.boundary
        if bd is None:
            return out
        lam, mu = sys_.params.lam, sys_.params.mu
        dir_ = self._u_kind == DIRICHLET
        if dir_.any() and bd.u_dirichlet is not None:
            sel = np.nonzero(dir_)[0]
            faces = self._bnd[sel]
            pts = self._fpts[faces]
            w = self._fw[faces]
            nrm = sys_.mesh.face_normals[faces]
            g = bd.u_dirichlet(pts.reshape(-1, d), t).reshape(len(sel), -1, d)
            v, gr = self._fvu[sel], self._fgu[sel]
            gn = np.einsum("fqi,fi->fq", g, nrm)
            dn = np.einsum("fqak,fk->fqa", gr, nrm)
            gdot = np.einsum("fqak,fqk->fqa", gr, g)
            eta = sys_.eta[faces][:, None, None, None]
            pen = 0.5 * eta * (np.einsum("fqa,fqj->fjqa", v, g)
                               + np.einsum("fqa,fq,fj->fjqa", v, gn, nrm))
            cons = (mu * (np.einsum("fqj,fqa->fjqa", g, dn) + np.einsum("fqa,fj->fjqa", gdot, nrm))
                    + lam * np.einsum("fqaj,fq->fjqa", gr, gn))
            local = np.einsum("fq,fjqa->fja", w, pen - cons)
            out += self._scatter(su, self._owners[sel], local)
        neu = self._u_kind == NEUMANN
        if neu.any() and bd.traction is not None:
            sel = np.nonzero(neu)[0]
            faces = self._bnd[sel]
            pts = self._fpts[faces]
            nrm = np.repeat(sys_.mesh.face_normals[faces], pts.shape[1], axis=0)
            h = bd.traction(pts.reshape(-1, d), t, nrm).reshape(len(sel), -1, d)
            local = np.einsum("fq,fqa,fqj->fja", self._fw[faces], self._fvu[sel], h)
            out += self._scatter(su, self._owners[sel], local)
        return out

    def G(self, t: float) -> np.ndarray:
        sys_ = self.system
        sq = sys_.space_q
        d, J = sq.dim, sys_.params.n_networks
        nq = sq.n_dofs
        out = np.zeros(J * nq)
        if self.forcing_g is not None:
            for els, pts, w, _, vq in self._volume:
                g = self.forcing_g(pts.reshape(-1, d), t).reshape(len(els), -1, J)
                loc = np.einsum("eq,eqa,eqj->jea", w, vq, g)
                for j in range(J):
                    out[j * nq:(j + 1) * nq] += self._scatter(sq, els, loc[j])
        bd = self.boundary
        if bd is None:
            return out
        mesh = sys_.mesh
        params = sys_.params
        # coupling lift from the displacement-Dirichlet faces of B_j
        dir_u = np.nonzero(self._u_kind == DIRICHLET)[0]
        if len(dir_u) and bd.u_dirichlet_t is not None and np.any(params.alpha != 0):
            faces = self._bnd[dir_u]
            pts = self._fpts[faces]
            ud = bd.u_dirichlet_t(pts.reshape(-1, d), t).reshape(len(dir_u), -1, d)
            udn = np.einsum("fqi,fi->fq", ud, mesh.face_normals[faces])
            base = np.einsum("fq,fqa,fq->fa", self._fw[faces], self._fvq[dir_u], udn)
            for j in range(J):
                out[j * nq:(j + 1) * nq] -= params.alpha[j] * self._scatter(sq, self._owners[dir_u], base)
        for j in range(J):
            sl = slice(j * nq, (j + 1) * nq)
            kappa = params.permeability(j) / params.networks[j].mu
            dir_p = np.nonzero(self._p_kind[j] == DIRICHLET)[0]
            if len(dir_p) and bd.p_dirichlet is not None:
                faces = self._bnd[dir_p]
                pts = self._fpts[faces]
                pd = bd.p_dirichlet(pts.reshape(-1, d), t)[:, j].reshape(len(dir_p), -1)
                kn = mesh.face_normals[faces] @ kappa
                dn = np.einsum("fqak,fk->fqa", self._fgq[dir_p], kn)
                integrand = sys_.zeta[j, faces][:, None, None] * self._fvq[dir_p] - dn
                local = np.einsum("fq,fqa,fq->fa", self._fw[faces], integrand, pd)
                out[sl] += self._scatter(sq, self._owners[dir_p], local)
            neu = np.nonzero(self._p_kind[j] == NEUMANN)[0]
            if len(neu) and bd.flux is not None:
                faces = self._bnd[neu]
                pts = self._fpts[faces]
                nrm = np.repeat(mesh.face_normals[faces], pts.shape[1], axis=0)
                h = bd.flux(pts.reshape(-1, d), t, nrm)[:, j].reshape(len(neu), -1)
                local = np.einsum("fq,fqa,fq->fa", self._fw[faces], self._fvq[neu], h)
                out[sl] += self._scatter(sq, self._owners[neu], local)
        return out
