"""Simplicial meshes in one, two and three dimensions.

Meshes are immutable once built.  Elements are stored with positive signed
volume, and vertices are split into interior vertices (degrees of freedom
under homogeneous Dirichlet conditions) and boundary vertices.

The text format read by :func:`load_mesh` is::

    d N_v N N_b
    <N_v lines of d coordinates>
    <N lines of d+1 vertex indices, 1-based>
    <N_b boundary vertex indices, 1-based>

Tokens may be split across lines arbitrarily and ``#`` starts a comment.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

__all__ = [
    "MeshError",
    "MeshParseError",
    "MeshTopologyError",
    "InvertedElementError",
    "SimplicialMesh",
    "ElementGeometry",
    "VertexPatches",
    "reference_simplex",
    "load_mesh",
    "serialize_mesh",
    "generate_uniform",
    "generate_perturbed",
    "generate_graded",
    "generate_mapped_anisotropic",
    "MAPS",
    "vertex_patches",
    "edge_length_ratios",
]

_DEGENERATE_RTOL = 1e-13
_BOUNDARY_ATOL = 1e-12


class MeshError(ValueError):
    """Base class for mesh construction failures."""


class MeshParseError(MeshError):
    pass


class MeshTopologyError(MeshError):
    pass


class InvertedElementError(MeshError):
    """A coordinate map folded the mesh (some element has nonpositive volume)."""


def reference_simplex(dim: int) -> np.ndarray:
    """Vertices of the equilateral simplex of unit volume, shape ``(dim+1, dim)``."""
    if dim == 1:
        return np.array([[0.0], [1.0]])
    a = (1.0 - math.sqrt(dim + 1.0)) / dim
    verts = np.vstack([np.full(dim, a), np.eye(dim)])
    vol = abs(np.linalg.det((verts[1:] - verts[0]).T)) / math.factorial(dim)
    return verts * vol ** (-1.0 / dim)


def _edge_matrices(vertices: np.ndarray, elements: np.ndarray) -> np.ndarray:
    # columns are v_i - v_0, i = 1..d
    pts = vertices[elements]
    return np.transpose(pts[:, 1:, :] - pts[:, :1, :], (0, 2, 1))


def _signed_dets(vertices: np.ndarray, elements: np.ndarray) -> np.ndarray:
    return np.linalg.det(_edge_matrices(vertices, elements))


def _flip(elements: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = elements.copy()
    out[mask, -2], out[mask, -1] = elements[mask, -1], elements[mask, -2]
    return out


@dataclass(frozen=True)
class ElementGeometry:
    """Affine data of one element: ``x = jacobian @ (xhat - xhat_0) + vertices[0]``."""

    jacobian: np.ndarray
    volume: float
    vertices: np.ndarray


class SimplicialMesh:
    """A conforming simplicial mesh.

    Parameters
    ----------
    vertices : array_like, shape (N_v, d)
    elements : array_like of int, shape (N, d+1)
        0-based vertex indices.
    boundary_vertices : iterable of int
        0-based indices of the vertices on the domain boundary.

    Elements with negative signed volume are reordered so that every element
    is positively oriented.  Out-of-range or repeated indices and
    zero-volume elements raise :class:`MeshTopologyError`.
    """

    def __init__(self, vertices, elements, boundary_vertices):
        vertices = np.array(vertices, dtype=float)
        if vertices.ndim == 1:
            vertices = vertices[:, None]
        elements = np.array(elements, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] not in (1, 2, 3):
            raise MeshTopologyError(f"vertices must have shape (N_v, d), d in 1..3; got {vertices.shape}")
        dim = vertices.shape[1]
        if elements.ndim != 2 or elements.shape[1] != dim + 1:
            raise MeshTopologyError(f"elements must have {dim + 1} vertices each; got shape {elements.shape}")
        n_v = len(vertices)
        if elements.size and (elements.min() < 0 or elements.max() >= n_v):
            bad = int(np.argmax((elements < 0).any(1) | (elements >= n_v).any(1)))
            raise MeshTopologyError(f"element {bad} references a vertex outside 0..{n_v - 1}")
        srt = np.sort(elements, axis=1)
        rep = (srt[:, 1:] == srt[:, :-1]).any(axis=1)
        if rep.any():
            raise MeshTopologyError(f"element {int(np.argmax(rep))} repeats a vertex")

        dets = _signed_dets(vertices, elements)
        edges = _edge_matrices(vertices, elements)
        scale = np.linalg.norm(edges, axis=1).max(axis=1) ** dim if len(elements) else np.zeros(0)
        degenerate = np.abs(dets) <= _DEGENERATE_RTOL * scale
        if degenerate.any():
            raise MeshTopologyError(f"element {int(np.argmax(degenerate))} has zero volume")
        elements = _flip(elements, dets < 0)

        bnd = np.unique(np.asarray(list(boundary_vertices), dtype=np.int64))
        if bnd.size and (bnd.min() < 0 or bnd.max() >= n_v):
            raise MeshTopologyError("boundary vertex index out of range")

        self._vertices = vertices
        self._elements = elements
        self._boundary = bnd
        for arr in (self._vertices, self._elements, self._boundary):
            arr.setflags(write=False)

    # -- basic data --------------------------------------------------------

    @property
    def dim(self) -> int:
        return self._vertices.shape[1]

    @property
    def vertices(self) -> np.ndarray:
        return self._vertices

    @property
    def elements(self) -> np.ndarray:
        return self._elements

    @property
    def boundary_vertices(self) -> np.ndarray:
        """Sorted 0-based indices of boundary vertices."""
        return self._boundary

    @property
    def n_vertices(self) -> int:
        return len(self._vertices)

    @property
    def n_elements(self) -> int:
        return len(self._elements)

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        mask = np.ones(self.n_vertices, dtype=bool)
        mask[self._boundary] = False
        out = np.flatnonzero(mask)
        out.setflags(write=False)
        return out

    @property
    def n_interior(self) -> int:
        return len(self.interior_vertices)

    @cached_property
    def interior_order(self) -> np.ndarray:
        """Vertex permutation listing the interior vertices first."""
        out = np.concatenate([self.interior_vertices, self._boundary])
        out.setflags(write=False)
        return out

    @cached_property
    def dof_index(self) -> np.ndarray:
        """Map vertex -> position among interior vertices, ``-1`` on the boundary."""
        out = np.full(self.n_vertices, -1, dtype=np.int64)
        out[self.interior_vertices] = np.arange(self.n_interior)
        out.setflags(write=False)
        return out

    # -- geometry ----------------------------------------------------------

    @cached_property
    def edge_matrices(self) -> np.ndarray:
        """``(N, d, d)`` array whose columns are ``v_i - v_0``."""
        out = _edge_matrices(self._vertices, self._elements)
        out.setflags(write=False)
        return out

    @cached_property
    def volumes(self) -> np.ndarray:
        out = np.linalg.det(self.edge_matrices) / math.factorial(self.dim)
        out.setflags(write=False)
        return out

    @cached_property
    def jacobians(self) -> np.ndarray:
        """Jacobians of the affine maps from the unit-volume reference simplex, so det = |K|."""
        ref = reference_simplex(self.dim)
        ref_edges = (ref[1:] - ref[0]).T
        out = self.edge_matrices @ np.linalg.inv(ref_edges)
        out.setflags(write=False)
        return out

    @property
    def domain_volume(self) -> float:
        return float(self.volumes.sum())

    def element_geometry(self, k: int) -> ElementGeometry:
        return ElementGeometry(
            jacobian=self.jacobians[k],
            volume=float(self.volumes[k]),
            vertices=self._vertices[self._elements[k]],
        )

    def __repr__(self) -> str:
        return (
            f"SimplicialMesh(dim={self.dim}, N_v={self.n_vertices}, "
            f"N={self.n_elements}, N_vi={self.n_interior})"
        )


# -- file I/O ---------------------------------------------------------------


def _tokens(text: str) -> list[tuple[str, int]]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0]
        out.extend((tok, lineno) for tok in line.split())
    return out


def load_mesh(text: str) -> SimplicialMesh:
    """Parse a mesh from the text format described in the module docstring."""
    toks = _tokens(text)
    pos = 0

    def take(kind, what):
        nonlocal pos
        if pos >= len(toks):
            raise MeshParseError(f"unexpected end of input while reading {what}")
        tok, lineno = toks[pos]
        pos += 1
        try:
            return kind(tok)
        except ValueError:
            raise MeshParseError(f"line {lineno}: cannot read {what} from {tok!r}") from None

    dim, n_v, n_el, n_b = (take(int, "header") for _ in range(4))
    if dim not in (1, 2, 3):
        raise MeshParseError(f"dimension must be 1, 2 or 3, got {dim}")
    if min(n_v, n_el, n_b) < 0:
        raise MeshParseError("negative count in header")
    coords = [[take(float, f"coordinate of vertex {i + 1}") for _ in range(dim)] for i in range(n_v)]
    elems = [[take(int, f"index of element {k + 1}") - 1 for _ in range(dim + 1)] for k in range(n_el)]
    bnd = [take(int, "boundary vertex index") - 1 for _ in range(n_b)]
    if pos != len(toks):
        raise MeshParseError(f"line {toks[pos][1]}: trailing data after boundary list")
    if any(b < 0 or b >= n_v for b in bnd):
        raise MeshTopologyError("boundary vertex index out of range")
    return SimplicialMesh(np.array(coords, dtype=float).reshape(n_v, dim),
                          np.array(elems, dtype=np.int64).reshape(n_el, dim + 1), bnd)


def serialize_mesh(mesh: SimplicialMesh) -> str:
    """Inverse of :func:`load_mesh`; coordinates are written with ``repr`` so they round-trip."""
    lines = [f"{mesh.dim} {mesh.n_vertices} {mesh.n_elements} {len(mesh.boundary_vertices)}"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += [" ".join(str(int(i) + 1) for i in e) for e in mesh.elements]
    lines += [" ".join(str(int(b) + 1) for b in mesh.boundary_vertices)]
    return "\n".join(lines) + "\n"


# -- generators -------------------------------------------------------------


def _kuhn_grid(dim: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and positively oriented Kuhn simplices of the uniform grid on (0,1)^dim."""
    ticks = np.linspace(0.0, 1.0, n + 1)
    grids = np.meshgrid(*([ticks] * dim), indexing="ij")
    # vertex index i_0 + (n+1) i_1 + (n+1)^2 i_2
    nodes = np.stack([g.transpose(*reversed(range(dim))).ravel() for g in grids], axis=1)
    strides = (n + 1) ** np.arange(dim)
    corners = np.stack(np.meshgrid(*([np.arange(n)] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    base = corners @ strides
    elems = []
    for perm in itertools.permutations(range(dim)):
        offs = [0]
        for axis in perm:
            offs.append(offs[-1] + strides[axis])
        elems.append(base[:, None] + np.array(offs)[None, :])
    elements = np.concatenate(elems, axis=0)
    dets = _signed_dets(nodes, elements)
    return nodes, _flip(elements, dets < 0)


def _analytic_boundary(nodes: np.ndarray) -> np.ndarray:
    on = (np.abs(nodes) <= _BOUNDARY_ATOL) | (np.abs(nodes - 1.0) <= _BOUNDARY_ATOL)
    return np.flatnonzero(on.any(axis=1))


def _mapped(nodes: np.ndarray, elements: np.ndarray, coords: np.ndarray) -> SimplicialMesh:
    dets = _signed_dets(coords, elements)
    bad = dets <= 0
    if bad.any():
        raise InvertedElementError(
            f"{int(bad.sum())} element(s) inverted by the coordinate map, first is element {int(np.argmax(bad))}"
        )
    return SimplicialMesh(coords, elements, _analytic_boundary(coords))


def generate_uniform(dim: int, n: int) -> SimplicialMesh:
    """Kuhn (Freudenthal) split of the ``n^dim`` grid on the unit cube into ``n^dim * dim!`` simplices."""
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    nodes, elements = _kuhn_grid(dim, n)
    return SimplicialMesh(nodes, elements, _analytic_boundary(nodes))


def generate_graded(dim: int, n: int, grading_exponent: float) -> SimplicialMesh:
    """Uniform topology with nodes moved by ``x -> x**beta`` along every axis."""
    if grading_exponent < 1:
        raise ValueError(f"grading exponent must be >= 1, got {grading_exponent}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    nodes, elements = _kuhn_grid(dim, n)
    return _mapped(nodes, elements, nodes**grading_exponent)


def generate_perturbed(dim: int, n: int, amplitude: float = 0.2, seed: int = 0) -> SimplicialMesh:
    """Uniform mesh with interior nodes jittered by up to ``amplitude * h`` per coordinate."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    nodes, elements = _kuhn_grid(dim, n)
    rng = np.random.default_rng(seed)
    interior = np.ones(len(nodes), dtype=bool)
    interior[_analytic_boundary(nodes)] = False
    coords = nodes.copy()
    coords[interior] += rng.uniform(-amplitude, amplitude, size=(interior.sum(), dim)) / n
    return _mapped(nodes, elements, coords)


def _identity_map(xy, **_):
    return xy.copy()


def _boundary_layer_map(xy, c=0.95):
    # y -> y + c y (1 - y); compresses towards y = 1 for 0 < c < 1, folds for |c| > 1
    out = xy.copy()
    y = xy[:, 1]
    out[:, 1] = y + c * y * (1.0 - y)
    return out


def _shear_map(xy, c=0.8):
    out = xy.copy()
    x, y = xy[:, 0], xy[:, 1]
    out[:, 0] = x + c * x * (1.0 - x) * (1.0 - 2.0 * y)
    return out


MAPS: dict[str, Callable[..., np.ndarray]] = {
    "identity": _identity_map,
    "boundary_layer": _boundary_layer_map,
    "shear": _shear_map,
}


def generate_mapped_anisotropic(n: int, map_id: str = "boundary_layer", dim: int = 2, **params) -> SimplicialMesh:
    """Uniform 2d mesh pushed through a registered smooth map of the unit square onto itself.

    Raises :class:`InvertedElementError` if the map folds at resolution ``n``.
    """
    if dim != 2:
        raise ValueError("mapped anisotropic meshes are only available in 2d")
    if map_id not in MAPS:
        raise ValueError(f"unknown map {map_id!r}; choose from {sorted(MAPS)}")
    nodes, elements = _kuhn_grid(2, n)
    return _mapped(nodes, elements, MAPS[map_id](nodes, **params))


# -- patches and quality ----------------------------------------------------


@dataclass(frozen=True)
class VertexPatches:
    elements: list[np.ndarray]
    volumes: np.ndarray


def vertex_patches(mesh: SimplicialMesh) -> VertexPatches:
    """Element lists and volumes ``|omega_j|`` of every vertex patch."""
    flat = mesh.elements.ravel()
    owner = np.repeat(np.arange(mesh.n_elements), mesh.dim + 1)
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=mesh.n_vertices)
    lists = np.split(owner[order], np.cumsum(counts)[:-1])
    vols = np.zeros(mesh.n_vertices)
    np.add.at(vols, flat, np.repeat(mesh.volumes, mesh.dim + 1))
    return VertexPatches(elements=lists, volumes=vols)


def edge_length_ratios(mesh: SimplicialMesh) -> np.ndarray:
    """Longest over shortest edge length, per element."""
    pts = mesh.vertices[mesh.elements]
    pairs = list(itertools.combinations(range(mesh.dim + 1), 2))
    lengths = np.stack([np.linalg.norm(pts[:, i] - pts[:, j], axis=1) for i, j in pairs], axis=1)
    return lengths.max(axis=1) / lengths.min(axis=1)
