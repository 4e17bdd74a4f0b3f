"""Modal discontinuous bases on polytopic elements.

Each element carries the complete polynomial space of a given total degree,
written in coordinates scaled to the element's bounding box and made
orthonormal in L2(K) by two QR sweeps of the quadrature-sampled basis.
"""
from __future__ import annotations

from functools import cached_property
from math import comb

import numpy as np

from .mesh import ElementQuadrature, PolyMesh

MAX_DEGREE = 6


def multi_indices(degree: int, dim: int) -> np.ndarray:
    """Exponents of total degree <= ``degree``, graded, constant first."""
    out = []
    for total in range(degree + 1):
        if dim == 2:
            out += [(total - j, j) for j in range(total + 1)]
        else:
            for i in range(total, -1, -1):
                out += [(i, j, total - i - j) for j in range(total - i, -1, -1)]
    arr = np.array(out, dtype=int).reshape(-1, dim)
    return arr


def _legendre(x: np.ndarray, n: int):
    """Legendre values and derivatives up to degree ``n``; shape ``(n + 1, ...)``."""
    p = np.empty((n + 1,) + x.shape)
    dp = np.empty_like(p)
    p[0], dp[0] = 1.0, 0.0
    if n >= 1:
        p[1], dp[1] = x, 1.0
    for k in range(1, n):
        p[k + 1] = ((2 * k + 1) * x * p[k] - k * p[k - 1]) / (k + 1)
        dp[k + 1] = dp[k - 1] + (2 * k + 1) * p[k]
    return p, dp


def element_blocks(quad: ElementQuadrature):
    """Group elements with equal point counts.

    Yields ``(elements, points (m, nq, d), weights (m, nq))``.
    """
    counts = np.diff(quad.offsets)
    d = quad.points.shape[1]
    for nq in np.unique(counts):
        els = np.nonzero(counts == nq)[0]
        idx = quad.offsets[els][:, None] + np.arange(nq)[None, :]
        yield els, quad.points[idx].reshape(len(els), nq, d), quad.weights[idx]


class DgSpace:
    """Broken polynomial space of fixed degree on a :class:`PolyMesh`.

    Degrees of freedom are numbered element by element; inside an element
    the layout is component-major (all modes of component 0, then 1, ...).
    """

    def __init__(self, mesh: PolyMesh, degree: int, n_components: int = 1):
        if degree < 1:
            raise ValueError(f"polynomial degree must be >= 1, got {degree}")
        if degree > MAX_DEGREE:
            raise ValueError(f"polynomial degree must be <= {MAX_DEGREE}, got {degree}")
        if n_components < 1:
            raise ValueError("n_components must be positive")
        self.mesh = mesh
        self.degree = int(degree)
        self.n_components = int(n_components)
        self.dim = mesh.dim
        self.exponents = multi_indices(self.degree, self.dim)
        self.local_dim = comb(self.degree + self.dim, self.dim)
        assert len(self.exponents) == self.local_dim
        self.block = self.local_dim * self.n_components
        self.n_dofs = self.block * mesh.n_elements
        self.dof_offsets = np.arange(mesh.n_elements + 1) * self.block

        box = mesh.bounding_boxes
        self.center = 0.5 * (box[:, 0] + box[:, 1])
        self.half = 0.5 * (box[:, 1] - box[:, 0])
        self.coeffs = self._orthonormalize()

    def __repr__(self):
        return (f"DgSpace(degree={self.degree}, n_components={self.n_components}, "
                f"n_dofs={self.n_dofs})")

    def dofs(self, element: int) -> np.ndarray:
        return np.arange(self.dof_offsets[element], self.dof_offsets[element + 1])

    # raw modal basis ---------------------------------------------------------

    def _raw(self, elements: np.ndarray, points: np.ndarray, grad: bool = True):
        """Unnormalised Legendre products at ``points`` of shape ``(m, nq, d)``."""
        xh = (points - self.center[elements][:, None, :]) / self.half[elements][:, None, :]
        p, dp = _legendre(xh, self.degree)  # (deg+1, m, nq, d)
        exps = self.exponents
        dims = np.arange(self.dim)
        factors = p[exps[:, dims], ..., dims]  # (nloc, d, m, nq)
        vals = np.prod(factors, axis=1)
        vals = np.moveaxis(vals, 0, -1)
        if not grad:
            return vals, None
        dfac = dp[exps[:, dims], ..., dims]
        grads = np.empty(vals.shape + (self.dim,))
        for l in range(self.dim):
            f = factors.copy()
            f[:, l] = dfac[:, l]
            grads[..., l] = np.moveaxis(np.prod(f, axis=1), 0, -1)
        grads /= self.half[elements][:, None, None, :]
        return vals, grads

    def _orthonormalize(self) -> np.ndarray:
        quad = self.mesh.volume_quadrature(2 * self.degree)
        n = self.local_dim
        coeffs = np.empty((self.mesh.n_elements, n, n))
        for els, pts, w in element_blocks(quad):
            r, _ = self._raw(els, pts, grad=False)
            a = np.sqrt(w)[..., None] * r
            c = np.broadcast_to(np.eye(n), (len(els), n, n))
            # two QR sweeps on the sampled basis; forming the Gram matrix
            # explicitly would square its condition number
            for _ in range(2):
                tri = np.linalg.qr(np.einsum("eqm,eam->eqa", a, c), mode="r")
                sign = np.sign(np.diagonal(tri, axis1=1, axis2=2))
                tri = tri * sign[..., None]
                c = np.linalg.solve(tri.transpose(0, 2, 1), c)
            coeffs[els] = c
        return coeffs

    # evaluation ----------------------------------------------------------------

    def eval_at(self, elements, points, grad: bool = True):
        """Orthonormal basis at ``points`` ``(m, nq, d)`` inside ``elements`` ``(m,)``.

        Returns values ``(m, nq, nloc)`` and gradients ``(m, nq, nloc, d)``.
        """
        elements = np.asarray(elements)
        r, dr = self._raw(elements, points, grad=grad)
        c = self.coeffs[elements]
        vals = np.einsum("eqm,eam->eqa", r, c)
        if not grad:
            return vals, None
        grads = np.einsum("eqmd,eam->eqad", dr, c)
        return vals, grads

    def eval_basis(self, element: int, points):
        """Values ``(npts, nloc)`` and gradients ``(npts, nloc, d)`` on one element."""
        pts = np.asarray(points, dtype=float).reshape(1, -1, self.dim)
        v, g = self.eval_at(np.array([element]), pts)
        return v[0], g[0]

    def evaluate(self, coeffs, elements, points, grad: bool = True):
        """Field values ``(m, nq, ncomp)`` and gradients ``(m, nq, ncomp, d)``."""
        elements = np.asarray(elements)
        v, g = self.eval_at(elements, points, grad=grad)
        local = np.asarray(coeffs).reshape(self.mesh.n_elements, self.n_components, self.local_dim)
        c = local[elements]
        vals = np.einsum("eqa,eca->eqc", v, c)
        if not grad:
            return vals, None
        return vals, np.einsum("eqad,eca->eqcd", g, c)

    # projection ----------------------------------------------------------------

    @cached_property
    def local_mass(self) -> np.ndarray:
        """Scalar element mass matrices ``(n_el, nloc, nloc)`` (identity up to round-off)."""
        quad = self.mesh.volume_quadrature(2 * self.degree)
        out = np.empty((self.mesh.n_elements, self.local_dim, self.local_dim))
        for els, pts, w in element_blocks(quad):
            v, _ = self.eval_at(els, pts, grad=False)
            out[els] = np.einsum("eq,eqa,eqb->eab", w, v, v)
        return out

    def project(self, func, order: int | None = None) -> np.ndarray:
        """L2 projection of ``func(points (N, d)) -> (N,) | (N, ncomp)``."""
        order = order or 2 * self.degree + 2
        quad = self.mesh.volume_quadrature(order)
        rhs = np.zeros((self.mesh.n_elements, self.n_components, self.local_dim))
        for els, pts, w in element_blocks(quad):
            vals = np.asarray(func(pts.reshape(-1, self.dim)), dtype=float)
            vals = vals.reshape(len(els), pts.shape[1], self.n_components)
            v, _ = self.eval_at(els, pts, grad=False)
            rhs[els] = np.einsum("eq,eqa,eqc->eca", w, v, vals)
        sol = np.linalg.solve(self.local_mass[:, None], rhs[..., None])[..., 0]
        return sol.reshape(-1)


def build_space(mesh: PolyMesh, degree: int, n_components: int = 1) -> DgSpace:
    return DgSpace(mesh, degree, n_components)
