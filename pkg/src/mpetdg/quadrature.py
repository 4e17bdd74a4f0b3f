"""Gauss rules on simplices, mapped onto mesh entities.

Volume rules use the collapsed-coordinate (Duffy) construction: a tensor
product of Gauss-Jacobi rules pulled back to the reference simplex. With
``n`` points per direction the rule integrates polynomials of total degree
``2n - 1`` exactly, all weights are positive and all points are interior.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_ORDER = 40


@dataclass(frozen=True)
class QuadRule:
    """Quadrature points (physical coordinates) and weights (measures)."""

    points: np.ndarray
    weights: np.ndarray

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return np.tensordot(self.weights, values, axes=(0, 0))


def _check_order(order: int) -> int:
    if order < 1 or order > MAX_ORDER:
        raise ValueError(f"quadrature order must lie in [1, {MAX_ORDER}], got {order}")
    return int(order)


def _gauss_jacobi_01(n: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Rule for int_0^1 (1 - s)^alpha f(s) ds."""
    t, w = roots_jacobi(n, alpha, 0.0)
    return (1.0 + t) / 2.0, w / 2.0 ** (alpha + 1.0)


@lru_cache(maxsize=None)
def reference_rule(dim: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric rule on the reference ``dim``-simplex.

    Returns ``(bary, weights)`` with ``bary`` of shape ``(n, dim + 1)``; the
    weights sum to one, i.e. they are fractions of the simplex measure.
    """
    order = _check_order(order)
    n = order // 2 + 1
    if dim == 1:
        s, w = _gauss_jacobi_01(n, 0.0)
        bary = np.column_stack([1.0 - s, s])
        return bary, w
    if dim == 2:
        s0, w0 = _gauss_jacobi_01(n, 1.0)
        s1, w1 = _gauss_jacobi_01(n, 0.0)
        a, b = np.meshgrid(s0, s1, indexing="ij")
        x = a.ravel()
        y = (b * (1.0 - a)).ravel()
        w = np.outer(w0, w1).ravel() * 2.0
        return np.column_stack([1.0 - x - y, x, y]), w
    if dim == 3:
        s0, w0 = _gauss_jacobi_01(n, 2.0)
        s1, w1 = _gauss_jacobi_01(n, 1.0)
        s2, w2 = _gauss_jacobi_01(n, 0.0)
        a, b, c = np.meshgrid(s0, s1, s2, indexing="ij")
        x = a.ravel()
        y = (b * (1.0 - a)).ravel()
        z = (c * (1.0 - a) * (1.0 - b)).ravel()
        w = np.einsum("i,j,k->ijk", w0, w1, w2).ravel() * 6.0
        return np.column_stack([1.0 - x - y - z, x, y, z]), w
    raise ValueError(f"unsupported simplex dimension {dim}")


def simplex_measures(coords: np.ndarray) -> np.ndarray:
    """Measures of simplices given vertex coordinates ``(m, k + 1, d)``."""
    edges = coords[:, 1:, :] - coords[:, :1, :]
    k = edges.shape[1]
    gram = np.einsum("mid,mjd->mij", edges, edges)
    det = np.linalg.det(gram) if k > 1 else gram[:, 0, 0]
    fact = {1: 1.0, 2: 2.0, 3: 6.0}[k]
    return np.sqrt(np.clip(det, 0.0, None)) / fact


def map_rule(coords: np.ndarray, order: int, measures: np.ndarray | None = None):
    """Map the reference rule onto a batch of simplices.

    ``coords`` has shape ``(m, k + 1, d)``. Returns points ``(m, nq, d)`` and
    weights ``(m, nq)``.
    """
    k = coords.shape[1] - 1
    bary, w = reference_rule(k, order)
    pts = np.einsum("qv,mvd->mqd", bary, coords)
    if measures is None:
        measures = simplex_measures(coords)
    return pts, measures[:, None] * w[None, :]


def segment_rule(a, b, order: int) -> QuadRule:
    coords = np.asarray([[a, b]], dtype=float)
    pts, w = map_rule(coords, order)
    return QuadRule(pts[0], w[0])
