"""Conforming simplicial meshes of intervals and rectangles.

Cells are segments (1D) or counter-clockwise triangles (2D).  Local facet
``i`` of a cell is the facet opposite local vertex ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class BoundaryFacet(NamedTuple):
    cell: int
    local_facet: int
    vertices: tuple
    normal: tuple


@dataclass(frozen=True)
class MeshMetrics:
    h_max: float
    h_min: float
    mu: float
    quasi_uniformity: float


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable simplicial mesh.

    Attributes
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    vertices : ndarray, shape (nv, dim)
    cells : ndarray of int, shape (nc, dim + 1)
    boundary_facets : tuple of BoundaryFacet
    """

    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    boundary_facets: tuple = field(default=None)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"unsupported mesh dimension {self.dim}")
        verts = np.array(self.vertices, dtype=float).reshape(-1, self.dim)
        cells = np.array(self.cells, dtype=np.int64).reshape(-1, self.dim + 1)
        verts.setflags(write=False)
        cells.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "cells", cells)
        if self.boundary_facets is None:
            object.__setattr__(self, "boundary_facets", _find_boundary_facets(verts, cells))
        if np.any(self.cell_measures() <= 0.0):
            raise ValueError("mesh contains cells with non-positive measure")

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    def cell_measures(self) -> np.ndarray:
        """Signed lengths (1D) or areas (2D); positive for valid meshes."""
        x = self.vertices[self.cells]
        if self.dim == 1:
            return x[:, 1, 0] - x[:, 0, 0]
        e1 = x[:, 1] - x[:, 0]
        e2 = x[:, 2] - x[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def cell_diameters(self) -> np.ndarray:
        x = self.vertices[self.cells]
        n = self.dim + 1
        diam = np.zeros(self.num_cells)
        for i in range(n):
            for j in range(i + 1, n):
                diam = np.maximum(diam, np.linalg.norm(x[:, i] - x[:, j], axis=1))
        return diam

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique edges of a 2D mesh.

        Returns
        -------
        edges : ndarray, shape (ne, 2)
            Sorted vertex pairs, lexicographically ordered.
        cell_edges : ndarray, shape (nc, 3)
            Edge index of local edges (0,1), (1,2), (2,0) of each cell.
        """
        if self.dim != 2:
            raise ValueError("edges() is only defined for 2D meshes")
        local = self.cells[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 3, 2)
        local = np.sort(local, axis=2).reshape(-1, 2)
        edges, inverse = np.unique(local, axis=0, return_inverse=True)
        return edges, inverse.reshape(-1, 3)

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(np.concatenate([np.asarray(f.vertices) for f in self.boundary_facets]))

    def domain_measure(self) -> float:
        return float(self.cell_measures().sum())


def _find_boundary_facets(vertices, cells):
    dim = vertices.shape[1]
    if dim == 1:
        # endpoint vertices belong to exactly one cell
        counts = np.bincount(cells.ravel(), minlength=len(vertices))
        facets = []
        for c, cell in enumerate(cells):
            for i in range(2):
                v = int(cell[i])
                if counts[v] == 1:
                    other = vertices[cell[1 - i], 0]
                    normal = 1.0 if vertices[v, 0] > other else -1.0
                    facets.append(BoundaryFacet(c, 1 - i, (v,), (normal,)))
        return tuple(facets)

    owners = {}
    for c, cell in enumerate(cells):
        for i in range(3):
            a, b = int(cell[(i + 1) % 3]), int(cell[(i + 2) % 3])
            owners.setdefault((min(a, b), max(a, b)), []).append((c, i, (a, b)))
    facets = []
    for key in sorted(owners):
        entries = owners[key]
        if len(entries) > 2:
            raise ValueError(f"non-manifold edge {key}")
        if len(entries) == 2:
            continue
        c, i, (a, b) = entries[0]
        t = vertices[b] - vertices[a]
        n = np.array([t[1], -t[0]]) / np.linalg.norm(t)
        # orient away from the opposite vertex
        if np.dot(vertices[cells[c, i]] - vertices[a], n) > 0:
            n = -n
        facets.append(BoundaryFacet(c, i, (a, b), (float(n[0]), float(n[1]))))
    return tuple(facets)


def unit_interval_mesh(n: int, a: float = 0.0, b: float = 1.0) -> Mesh:
    """Uniform mesh of ``[a, b]`` with ``n`` segments."""
    if n < 1 or not a < b:
        raise ValueError(f"need n >= 1 and a < b, got n={n}, a={a}, b={b}")
    x = np.linspace(a, b, n + 1)
    x[0], x[-1] = a, b
    cells = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return Mesh(1, x[:, None], cells)


def criss_cross_mesh(nx: int, ny: int, rect=(0.0, 0.0, 1.0, 1.0)) -> Mesh:
    """Criss-cross triangulation of a rectangle.

    Every one of the ``nx * ny`` grid cells is split into four triangles
    meeting at its centroid.  Grid vertices are numbered row by row first,
    followed by the centroids.
    """
    x0, y0, x1, y1 = map(float, rect)
    if nx < 1 or ny < 1 or not (x0 < x1 and y0 < y1):
        raise ValueError(f"degenerate criss-cross request nx={nx}, ny={ny}, rect={rect}")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    grid = np.column_stack([X.ravel(), Y.ravel()])
    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    CX, CY = np.meshgrid(cx, cy)
    centres = np.column_stack([CX.ravel(), CY.ravel()])
    vertices = np.vstack([grid, centres])

    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    i, j = i.ravel(), j.ravel()
    a = j * (nx + 1) + i
    b = a + 1
    c = b + nx + 1
    d = a + nx + 1
    m = (nx + 1) * (ny + 1) + j * nx + i
    cells = np.stack(
        [np.column_stack(t) for t in ((a, b, m), (b, c, m), (c, d, m), (d, a, m))], axis=1
    ).reshape(-1, 3)
    return Mesh(2, vertices, cells)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Bisect every segment (1D) or red-refine every triangle (2D).

    New vertices are appended after the existing ones, so coarse vertex
    indices remain valid on the refined mesh.
    """
    if mesh.dim == 1:
        cells = mesh.cells
        nv = mesh.num_vertices
        mids = 0.5 * (mesh.vertices[cells[:, 0]] + mesh.vertices[cells[:, 1]])
        mid_idx = nv + np.arange(mesh.num_cells)
        new_cells = np.stack(
            [np.column_stack([cells[:, 0], mid_idx]), np.column_stack([mid_idx, cells[:, 1]])], axis=1
        ).reshape(-1, 2)
        return Mesh(1, np.vstack([mesh.vertices, mids]), new_cells)

    edges, cell_edges = mesh.edges()
    nv = mesh.num_vertices
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    v0, v1, v2 = mesh.cells.T
    m01, m12, m20 = (nv + cell_edges).T
    children = (
        (v0, m01, m20),
        (m01, v1, m12),
        (m20, m12, v2),
        (m01, m12, m20),
    )
    new_cells = np.stack([np.column_stack(t) for t in children], axis=1).reshape(-1, 3)
    return Mesh(2, np.vstack([mesh.vertices, mids]), new_cells)


def inradii(mesh: Mesh) -> np.ndarray:
    """Radius of the largest inscribed ball per cell (``h_K`` in 1D by convention)."""
    if mesh.dim == 1:
        return mesh.cell_diameters()
    x = mesh.vertices[mesh.cells]
    perim = sum(np.linalg.norm(x[:, (i + 1) % 3] - x[:, i], axis=1) for i in range(3))
    return 2.0 * mesh.cell_measures() / perim


def metrics(mesh: Mesh) -> MeshMetrics:
    h = mesh.cell_diameters()
    rho = inradii(mesh)
    return MeshMetrics(
        h_max=float(h.max()),
        h_min=float(h.min()),
        mu=float(np.min(rho / h)),
        quasi_uniformity=float(h.max() / h.min()),
    )
