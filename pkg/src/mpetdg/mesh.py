"""Polytopic meshes built from simplices.

Every element is stored as a union of sub-simplices (a single simplex for
structured meshes, many for agglomerates). Faces are the (d-1)-simplices
separating two different elements or lying on the boundary, so a polygonal
interface between two agglomerates is stored as its constituent segments
(2D) or triangles (3D).
"""
from __future__ import annotations

import heapq
import itertools
import logging
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.spatial import ConvexHull, QhullError

from .quadrature import map_rule, simplex_measures

log = logging.getLogger(__name__)

INTERIOR = ""


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Element:
    vertices: np.ndarray
    sub_simplices: np.ndarray
    h: float
    bounding_box: np.ndarray
    measure: float


@dataclass(frozen=True)
class Face:
    vertices: np.ndarray
    geometry: np.ndarray
    normal: np.ndarray
    measure: float
    neighbors: tuple[int, ...]
    tag: str
    interface: int

    @property
    def is_interior(self) -> bool:
        return len(self.neighbors) == 2


def _facet_normals(coords: np.ndarray) -> np.ndarray:
    """Unit normals of facets with vertex coordinates ``(m, d, d)``."""
    d = coords.shape[-1]
    if d == 2:
        t = coords[:, 1] - coords[:, 0]
        n = np.column_stack([t[:, 1], -t[:, 0]])
    elif d == 3:
        n = np.cross(coords[:, 1] - coords[:, 0], coords[:, 2] - coords[:, 0])
    else:
        raise MeshError(f"unsupported dimension {d}")
    return n / np.linalg.norm(n, axis=1)[:, None]


def _diameter(points: np.ndarray) -> float:
    if len(points) > 3 * (points.shape[1] + 1):
        try:
            points = points[ConvexHull(points).vertices]
        except QhullError:
            pass
    diff = points[:, None, :] - points[None, :, :]
    return float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", diff, diff))))


class PolyMesh:
    """Immutable polytopic mesh.

    Parameters
    ----------
    vertices : (nv, d) array
    simplices : (ns, d + 1) int array
    simplex_element : (ns,) int array, element owning each simplex
        (defaults to one element per simplex).
    facet_tags : dict mapping sorted boundary facet vertex tuples to tags,
        or a callable ``tagger(centroids, normals) -> list[str]``.
    """

    def __init__(self, vertices, simplices, simplex_element=None, facet_tags=None):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        simplices = np.ascontiguousarray(simplices, dtype=np.int64)
        self.dim = vertices.shape[1]
        if self.dim not in (2, 3):
            raise MeshError(f"mesh dimension must be 2 or 3, got {self.dim}")
        if simplices.shape[1] != self.dim + 1:
            raise MeshError("simplices must have d + 1 vertices")
        if simplex_element is None:
            simplex_element = np.arange(len(simplices))
        simplex_element = np.asarray(simplex_element, dtype=np.int64)
        order = np.argsort(simplex_element, kind="stable")
        self.vertices = vertices
        self.simplices = simplices[order]
        self.simplex_element = simplex_element[order]
        self.n_elements = int(self.simplex_element.max()) + 1
        counts = np.bincount(self.simplex_element, minlength=self.n_elements)
        if np.any(counts == 0):
            raise MeshError("element ids must be contiguous")
        self.element_offsets = np.concatenate([[0], np.cumsum(counts)])

        coords = self.vertices[self.simplices]
        self.simplex_measures = simplex_measures(coords)
        if np.any(self.simplex_measures <= 0.0):
            raise MeshError("degenerate simplex in mesh")
        self.element_measures = np.bincount(
            self.simplex_element, weights=self.simplex_measures, minlength=self.n_elements
        )
        self._build_geometry()
        self._build_faces(facet_tags)
        for arr in (self.vertices, self.simplices, self.simplex_element):
            arr.setflags(write=False)

    # construction helpers -------------------------------------------------

    def _element_vertex_sets(self):
        return [
            np.unique(self.simplices[self.element_offsets[e]:self.element_offsets[e + 1]])
            for e in range(self.n_elements)
        ]

    def _build_geometry(self):
        if self.is_simplicial:
            coords = self.vertices[self.simplices]
            diff = coords[:, :, None, :] - coords[:, None, :, :]
            self.h = np.sqrt(np.einsum("mijk,mijk->mij", diff, diff).max(axis=(1, 2)))
            self.bounding_boxes = np.stack([coords.min(axis=1), coords.max(axis=1)], axis=1)
            self._vertex_sets = None
        else:
            sets = self._element_vertex_sets()
            self._vertex_sets = sets
            self.h = np.array([_diameter(self.vertices[s]) for s in sets])
            self.bounding_boxes = np.array(
                [[self.vertices[s].min(axis=0), self.vertices[s].max(axis=0)] for s in sets]
            )

    def _build_faces(self, facet_tags):
        d = self.dim
        ns = len(self.simplices)
        local = np.array([[j for j in range(d + 1) if j != i] for i in range(d + 1)])
        facets = self.simplices[:, local].reshape(-1, d)
        opposite = self.simplices.reshape(-1)
        owner = np.repeat(np.arange(ns), d + 1)
        keys = np.sort(facets, axis=1)
        _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(-1)
        if np.any(counts > 2):
            raise MeshError("non-manifold facet shared by more than two simplices")
        order = np.argsort(inverse, kind="stable")
        first_pos = np.concatenate([[0], np.cumsum(counts)[:-1]])
        first = order[first_pos]
        second = np.where(counts == 2, order[np.minimum(first_pos + 1, len(order) - 1)], -1)

        el_first = self.simplex_element[owner[first]]
        el_second = np.where(second >= 0, self.simplex_element[owner[np.maximum(second, 0)]], -1)
        keep = (second < 0) | (el_first != el_second)
        first, second = first[keep], second[keep]
        el_first, el_second = el_first[keep], el_second[keep]

        fverts = facets[first]
        fcoords = self.vertices[fverts]
        normals = _facet_normals(fcoords)
        opp = self.vertices[opposite[first]]
        flip = np.einsum("md,md->m", normals, opp - fcoords[:, 0]) > 0.0
        normals[flip] *= -1.0
        # store facet vertices so that the ordering is deterministic
        self.face_vertices = fverts
        self.face_elements = np.column_stack([el_first, el_second])
        self.face_normals = normals
        self.face_measures = simplex_measures(fcoords)

        interior = self.face_elements[:, 1] >= 0
        tags = np.full(len(fverts), INTERIOR, dtype=object)
        bidx = np.nonzero(~interior)[0]
        if len(bidx):
            if facet_tags is None:
                tags[bidx] = "boundary"
            elif callable(facet_tags):
                cent = fcoords[bidx].mean(axis=1)
                tags[bidx] = list(facet_tags(cent, normals[bidx]))
            else:
                for f in bidx:
                    tags[f] = facet_tags.get(tuple(sorted(fverts[f].tolist())), "boundary")
        self.face_tags = tags

        pair = np.sort(self.face_elements, axis=1)
        pair[~interior] = -1
        iface = np.full(len(fverts), -1, dtype=np.int64)
        if interior.any():
            _, inv = np.unique(pair[interior], axis=0, return_inverse=True)
            iface[interior] = inv.reshape(-1)
        self.face_interface = iface

    # basic queries ---------------------------------------------------------

    @property
    def is_simplicial(self) -> bool:
        return len(self.simplices) == self.n_elements

    @property
    def n_faces(self) -> int:
        return len(self.face_vertices)

    @property
    def interior_faces(self) -> np.ndarray:
        return np.nonzero(self.face_elements[:, 1] >= 0)[0]

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.nonzero(self.face_elements[:, 1] < 0)[0]

    @property
    def boundary_tags(self) -> dict[int, str]:
        return {int(f): str(self.face_tags[f]) for f in self.boundary_faces}

    @property
    def mesh_size(self) -> float:
        return float(self.h.max())

    @property
    def measure(self) -> float:
        return float(self.element_measures.sum())

    def element_simplices(self, e: int) -> np.ndarray:
        return self.simplices[self.element_offsets[e]:self.element_offsets[e + 1]]

    @cached_property
    def elements(self) -> list[Element]:
        sets = self._vertex_sets or [np.asarray(s) for s in self.simplices]
        return [
            Element(
                vertices=np.asarray(sets[e]),
                sub_simplices=self.element_simplices(e),
                h=float(self.h[e]),
                bounding_box=self.bounding_boxes[e],
                measure=float(self.element_measures[e]),
            )
            for e in range(self.n_elements)
        ]

    @cached_property
    def faces(self) -> list[Face]:
        out = []
        for f in range(self.n_faces):
            a, b = self.face_elements[f]
            out.append(
                Face(
                    vertices=self.face_vertices[f],
                    geometry=self.vertices[self.face_vertices[f]],
                    normal=self.face_normals[f],
                    measure=float(self.face_measures[f]),
                    neighbors=(int(a),) if b < 0 else (int(a), int(b)),
                    tag=str(self.face_tags[f]),
                    interface=int(self.face_interface[f]),
                )
            )
        return out

    def face_harmonic_h(self) -> np.ndarray:
        """Harmonic average of neighbour diameters per face (owner h on boundary)."""
        h1 = self.h[self.face_elements[:, 0]]
        second = self.face_elements[:, 1]
        h2 = np.where(second >= 0, self.h[np.maximum(second, 0)], h1)
        return 2.0 * h1 * h2 / (h1 + h2)

    def element_adjacency(self) -> sp.csr_matrix:
        inner = self.interior_faces
        a, b = self.face_elements[inner].T
        n = self.n_elements
        g = sp.coo_matrix((np.ones(2 * len(a)), (np.r_[a, b], np.r_[b, a])), shape=(n, n))
        g = g.tocsr()
        g.data[:] = 1.0
        return g

    # quadrature --------------------------------------------------------------

    def volume_quadrature(self, order: int) -> "ElementQuadrature":
        return _volume_quadrature(self, order)

    def face_quadrature(self, order: int) -> tuple[np.ndarray, np.ndarray]:
        """Face points ``(nf, nq, d)`` and weights ``(nf, nq)``."""
        key = ("face", order)
        if key not in self._cache:
            coords = self.vertices[self.face_vertices]
            self._cache[key] = map_rule(coords, order, self.face_measures)
        return self._cache[key]

    @cached_property
    def _cache(self) -> dict:
        return {}

    # diagnostics -------------------------------------------------------------

    def normal_closure(self) -> np.ndarray:
        """Per element ``sum_F |F| n_F(K)``; vanishes for closed elements."""
        out = np.zeros((self.n_elements, self.dim))
        w = self.face_measures[:, None] * self.face_normals
        np.add.at(out, self.face_elements[:, 0], w)
        inner = self.interior_faces
        np.add.at(out, self.face_elements[inner, 1], -w[inner])
        return out

    def check(self, rtol: float = 1e-12) -> None:
        """Raise :class:`MeshError` if a structural invariant is violated."""
        if np.any(self.element_measures <= 0.0):
            raise MeshError("element with non-positive measure")
        sums = np.bincount(self.simplex_element, weights=self.simplex_measures)
        if not np.allclose(sums, self.element_measures, rtol=rtol, atol=0.0):
            raise MeshError("sub-simplex tessellation does not partition element")
        if np.any(self.face_elements[:, 0] < 0):
            raise MeshError("face without owner")
        closure = np.abs(self.normal_closure()).max(axis=1)
        inner = self.interior_faces
        scale = np.bincount(self.face_elements[:, 0], weights=self.face_measures,
                            minlength=self.n_elements)
        scale += np.bincount(self.face_elements[inner, 1], weights=self.face_measures[inner],
                             minlength=self.n_elements)
        if np.any(closure > 1e-12 * np.maximum(scale, 1.0)):
            raise MeshError("element boundary is not closed")
        if np.abs(np.linalg.norm(self.face_normals, axis=1) - 1.0).max() > 1e-14:
            raise MeshError("face normals are not unit vectors")

    def neighbor_size_ratio(self) -> np.ndarray:
        inner = self.interior_faces
        a, b = self.face_elements[inner].T
        ha, hb = self.h[a], self.h[b]
        return np.maximum(ha, hb) / np.minimum(ha, hb)


@dataclass(frozen=True)
class ElementQuadrature:
    """Volume quadrature concatenated over elements (points sorted by element)."""

    points: np.ndarray
    weights: np.ndarray
    element: np.ndarray
    offsets: np.ndarray

    @property
    def uniform(self) -> int:
        counts = np.diff(self.offsets)
        return int(counts[0]) if np.all(counts == counts[0]) else 0

    def element_rule(self, e: int):
        s = slice(self.offsets[e], self.offsets[e + 1])
        return self.points[s], self.weights[s]


def _volume_quadrature(mesh: PolyMesh, order: int) -> ElementQuadrature:
    key = ("vol", order)
    if key not in mesh._cache:
        coords = mesh.vertices[mesh.simplices]
        pts, w = map_rule(coords, order, mesh.simplex_measures)
        nq = pts.shape[1]
        element = np.repeat(mesh.simplex_element, nq)
        counts = np.bincount(element, minlength=mesh.n_elements)
        mesh._cache[key] = ElementQuadrature(
            points=pts.reshape(-1, mesh.dim),
            weights=w.reshape(-1),
            element=element,
            offsets=np.concatenate([[0], np.cumsum(counts)]),
        )
    return mesh._cache[key]


# builders -------------------------------------------------------------------


def box_tagger(lower, upper, tol=1e-10):
    """Tag boundary facets by the box side they lie on (``x0``, ``x1``, ...)."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    names = "xyz"

    def tagger(centroids, normals):
        tags = []
        scale = tol * max(1.0, float(np.max(upper - lower)))
        for c in centroids:
            tag = "boundary"
            for k in range(len(lower)):
                if abs(c[k] - lower[k]) < scale:
                    tag = f"{names[k]}0"
                    break
                if abs(c[k] - upper[k]) < scale:
                    tag = f"{names[k]}1"
                    break
            tags.append(tag)
        return tags

    return tagger


def build_structured_mesh(box=None, divisions=1, dim=2) -> PolyMesh:
    """Structured simplicial mesh of an axis-aligned box.

    Each grid cell is split into 2 triangles (2D) or 6 tetrahedra sharing
    the cell's main diagonal (3D).
    """
    if box is None:
        box = (np.zeros(dim), np.ones(dim))
    lower, upper = (np.asarray(b, dtype=float) for b in box)
    if lower.shape != (dim,) or upper.shape != (dim,):
        raise MeshError("box corners must match the mesh dimension")
    if np.any(upper - lower <= 0.0):
        raise MeshError("degenerate box")
    div = np.broadcast_to(np.asarray(divisions, dtype=int), (dim,))
    if np.any(div < 1):
        raise MeshError("divisions must be >= 1")

    axes = [np.linspace(lower[k], upper[k], div[k] + 1) for k in range(dim)]
    grid = np.meshgrid(*axes, indexing="ij")
    vertices = np.column_stack([g.ravel() for g in grid])
    shape = tuple(div + 1)

    def vid(idx):
        return np.ravel_multi_index(tuple(idx), shape)

    cells = np.stack(np.meshgrid(*[np.arange(n) for n in div], indexing="ij"), -1).reshape(-1, dim)
    simplices = []
    if dim == 2:
        c = cells.T
        v00 = vid(c)
        v10 = vid(c + np.array([[1], [0]]))
        v11 = vid(c + np.array([[1], [1]]))
        v01 = vid(c + np.array([[0], [1]]))
        simplices = np.concatenate([
            np.column_stack([v00, v10, v11]),
            np.column_stack([v00, v11, v01]),
        ])
        ncell = len(cells)
        simplices = simplices.reshape(2, ncell, 3).transpose(1, 0, 2).reshape(-1, 3)
    else:
        c = cells.T
        blocks = []
        eye = np.eye(3, dtype=int)
        for perm in itertools.permutations(range(3)):
            path = [np.zeros(3, dtype=int)]
            for k in perm:
                path.append(path[-1] + eye[k])
            blocks.append(np.column_stack([vid(c + p[:, None]) for p in path]))
        simplices = np.stack(blocks, axis=1).reshape(-1, 4)
    return PolyMesh(vertices, simplices, facet_tags=box_tagger(lower, upper))


def _facet_tag_lookup(mesh: PolyMesh) -> dict:
    return {
        tuple(sorted(mesh.face_vertices[f].tolist())): str(mesh.face_tags[f])
        for f in mesh.boundary_faces
    }


def agglomerate_mesh(mesh: PolyMesh, n_parts: int, seed: int = 0) -> PolyMesh:
    """Agglomerate a simplicial mesh into ``n_parts`` face-connected polytopes.

    Greedy breadth-first growth from farthest-point seeds; the smallest part
    grows first so part sizes stay balanced.
    """
    if not mesh.is_simplicial:
        raise MeshError("agglomeration expects a simplicial input mesh")
    n = mesh.n_elements
    if n_parts < 1 or n_parts > n:
        raise MeshError(f"n_parts must lie in [1, {n}], got {n_parts}")
    graph = mesh.element_adjacency()
    ncomp, _ = connected_components(graph, directed=False)
    if ncomp != 1:
        raise MeshError("input mesh is not face-connected")

    rng = np.random.default_rng(seed)
    seeds = [int(rng.integers(n))]
    dist = shortest_path(graph, unweighted=True, indices=seeds[0])
    while len(seeds) < n_parts:
        nxt = int(np.argmax(dist))
        seeds.append(nxt)
        dist = np.minimum(dist, shortest_path(graph, unweighted=True, indices=nxt))

    part = np.full(n, -1, dtype=np.int64)
    frontier = []
    heap = []
    for k, s in enumerate(seeds):
        part[s] = k
        frontier.append(deque(graph.indices[graph.indptr[s]:graph.indptr[s + 1]].tolist()))
        heapq.heappush(heap, (1, k))
    remaining = n - n_parts
    while remaining and heap:
        size, k = heapq.heappop(heap)
        q = frontier[k]
        while q and part[q[0]] >= 0:
            q.popleft()
        if not q:
            continue
        cell = q.popleft()
        part[cell] = k
        remaining -= 1
        q.extend(graph.indices[graph.indptr[cell]:graph.indptr[cell + 1]].tolist())
        heapq.heappush(heap, (size + 1, k))
    if np.any(part < 0):
        raise MeshError("agglomeration left cells unassigned")

    # relabel parts by their lowest simplex id for a stable ordering
    first = np.full(n_parts, n, dtype=np.int64)
    np.minimum.at(first, part, np.arange(n))
    relabel = np.empty(n_parts, dtype=np.int64)
    relabel[np.argsort(first)] = np.arange(n_parts)
    part = relabel[part]

    for k in range(n_parts):
        idx = np.nonzero(part == k)[0]
        sub = graph[idx][:, idx]
        if connected_components(sub, directed=False)[0] != 1:
            raise MeshError(f"part {k} is not face-connected")

    out = PolyMesh(mesh.vertices, mesh.simplices, part, facet_tags=_facet_tag_lookup(mesh))
    if np.any(out.element_measures <= 0.0):
        raise MeshError("agglomerate with zero measure")
    return out


# text format ----------------------------------------------------------------


def write_mesh(mesh: PolyMesh, path) -> None:
    """Write the plain-text mesh format documented in the README."""
    lines = [f"{mesh.dim} {len(mesh.vertices)} {mesh.n_elements}"]
    lines += [" ".join(repr(float(x)) for x in v) for v in mesh.vertices]
    for e in range(mesh.n_elements):
        simp = mesh.element_simplices(e)
        verts = np.unique(simp)
        line = f"{len(verts)} " + " ".join(map(str, verts))
        if not mesh.is_simplicial:
            line += f" | {len(simp)} " + " ".join(map(str, simp.ravel()))
        lines.append(line)
    bfaces = mesh.boundary_faces
    lines.append(f"tags {len(bfaces)}")
    for f in bfaces:
        lines.append(f"{mesh.face_tags[f]} " + " ".join(map(str, mesh.face_vertices[f])))
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> PolyMesh:
    raw = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in raw if ln]
    try:
        dim, nv, ne = (int(x) for x in lines[0].split())
        vertices = np.array([[float(x) for x in ln.split()] for ln in lines[1:1 + nv]])
        simplices, owner = [], []
        for e, ln in enumerate(lines[1 + nv:1 + nv + ne]):
            if "|" in ln:
                _, rest = ln.split("|")
                vals = [int(x) for x in rest.split()]
                simp = np.array(vals[1:]).reshape(vals[0], dim + 1)
            else:
                vals = [int(x) for x in ln.split()]
                simp = np.array(vals[1:]).reshape(1, dim + 1)
            simplices.append(simp)
            owner.append(np.full(len(simp), e))
        tags = {}
        rest = lines[1 + nv + ne:]
        if rest:
            head = rest[0].split()
            if head[0] != "tags":
                raise MeshError(f"expected 'tags' section, got {rest[0]!r}")
            for ln in rest[1:1 + int(head[1])]:
                parts = ln.split()
                tags[tuple(sorted(int(x) for x in parts[1:]))] = parts[0]
    except (IndexError, ValueError) as exc:
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    if vertices.shape != (nv, dim):
        raise MeshError("vertex block does not match header")
    return PolyMesh(vertices, np.concatenate(simplices), np.concatenate(owner), facet_tags=tags or None)
