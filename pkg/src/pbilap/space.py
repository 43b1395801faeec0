"""Continuous Lagrange P1/P2 spaces, interpolation and Ritz projection.

Callbacks on the physical domain are vectorised: they receive an array of
points of shape ``(n, dim)`` and return shape ``(n,)`` (values) or
``(n, dim)`` (gradients).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mesh import Mesh
from .quadrature import QuadratureRule, quad_rule


# reference nodes, vertices first then edge midpoints (0,1), (1,2), (2,0)
_REF_NODES = {
    (1, 1): np.array([[0.0], [1.0]]),
    (1, 2): np.array([[0.0], [1.0], [0.5]]),
    (2, 1): np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
    (2, 2): np.array(
        [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]]
    ),
}


def tabulate(dim: int, k: int, points) -> tuple[np.ndarray, np.ndarray]:
    """Basis values ``(npts, nloc)`` and reference gradients ``(npts, nloc, dim)``."""
    if k not in (1, 2):
        raise ValueError(f"unsupported polynomial degree {k}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != dim:
        pts = pts.reshape(-1, dim)
    n = len(pts)
    if dim == 1:
        t = pts[:, 0]
        l0, l1 = 1.0 - t, t
        one = np.ones(n)
        if k == 1:
            vals = np.column_stack([l0, l1])
            grads = np.column_stack([-one, one])
        else:
            vals = np.column_stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), 4 * l0 * l1])
            grads = np.column_stack([-(4 * l0 - 1), 4 * l1 - 1, 4 * (l0 - l1)])
        return vals, grads[:, :, None]

    x, y = pts[:, 0], pts[:, 1]
    lam = [1.0 - x - y, x, y]
    # d(lambda_i)/d(x, y)
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    if k == 1:
        vals = np.column_stack(lam)
        grads = np.broadcast_to(dlam, (n, 3, 2)).copy()
        return vals, grads
    vals = np.empty((n, 6))
    grads = np.empty((n, 6, 2))
    for i in range(3):
        vals[:, i] = lam[i] * (2 * lam[i] - 1)
        grads[:, i, :] = (4 * lam[i] - 1)[:, None] * dlam[i]
    for e, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
        vals[:, 3 + e] = 4 * lam[i] * lam[j]
        grads[:, 3 + e, :] = 4 * (lam[i][:, None] * dlam[j] + lam[j][:, None] * dlam[i])
    return vals, grads


def shape_values(k: int, ref_point) -> tuple[np.ndarray, np.ndarray]:
    """Basis values and reference gradients at a single reference point.

    The element is inferred from the point: a scalar or length-1 point is on
    the unit segment, a length-2 point on the unit triangle.
    """
    pt = np.atleast_1d(np.asarray(ref_point, dtype=float))
    vals, grads = tabulate(len(pt), k, pt[None, :])
    return vals[0], grads[0]


@dataclass(frozen=True, eq=False)
class FeSpace:
    """Continuous piecewise-polynomial space of degree ``degree`` on ``mesh``."""

    mesh: Mesh
    degree: int
    cell_dofs: np.ndarray
    dof_coords: np.ndarray
    boundary_dofs: np.ndarray

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def dof_count(self) -> int:
        return len(self.dof_coords)

    @property
    def nloc(self) -> int:
        return self.cell_dofs.shape[1]

    @cached_property
    def interior_dofs(self) -> np.ndarray:
        mask = np.ones(self.dof_count, dtype=bool)
        mask[self.boundary_dofs] = False
        return np.flatnonzero(mask)

    @cached_property
    def _geometry(self):
        x = self.mesh.vertices[self.mesh.cells]
        jac = np.stack([x[:, i + 1] - x[:, 0] for i in range(self.dim)], axis=2)
        det = np.linalg.det(jac)
        inv_t = np.linalg.inv(jac).transpose(0, 2, 1)
        return x[:, 0], jac, det, inv_t

    def map_points(self, ref_points) -> np.ndarray:
        """Physical coordinates ``(ncells, npts, dim)`` of reference points."""
        x0, jac, _, _ = self._geometry
        ref = np.asarray(ref_points, dtype=float).reshape(-1, self.dim)
        return x0[:, None, :] + np.einsum("cij,qj->cqi", jac, ref)

    def jxw(self, rule: QuadratureRule) -> np.ndarray:
        """Quadrature weights times cell Jacobian determinant, ``(ncells, nq)``."""
        _, _, det, _ = self._geometry
        return np.abs(det)[:, None] * rule.weights[None, :]

    def basis(self, ref_points) -> np.ndarray:
        return tabulate(self.dim, self.degree, ref_points)[0]

    def physical_grads(self, ref_points) -> np.ndarray:
        """Physical basis gradients ``(ncells, npts, nloc, dim)``."""
        _, _, _, inv_t = self._geometry
        ref_grads = tabulate(self.dim, self.degree, ref_points)[1]
        return np.einsum("cij,qnj->cqni", inv_t, ref_grads)

    def cell_inverse_jacobian_t(self, cell: int) -> np.ndarray:
        return self._geometry[3][cell]


def build_space(mesh: Mesh, k: int) -> FeSpace:
    if k not in (1, 2):
        raise ValueError(f"unsupported polynomial degree {k}; expected 1 or 2")
    nv = mesh.num_vertices
    bverts = mesh.boundary_vertices()
    if k == 1:
        cell_dofs = mesh.cells.copy()
        coords = mesh.vertices.copy()
        bdofs = bverts
    elif mesh.dim == 1:
        mids = nv + np.arange(mesh.num_cells)
        cell_dofs = np.column_stack([mesh.cells, mids])
        coords = np.vstack([mesh.vertices, mesh.vertices[mesh.cells].mean(axis=1)])
        bdofs = bverts
    else:
        edges, cell_edges = mesh.edges()
        cell_dofs = np.column_stack([mesh.cells, nv + cell_edges])
        coords = np.vstack([mesh.vertices, mesh.vertices[edges].mean(axis=1)])
        lookup = {tuple(e): i for i, e in enumerate(edges.tolist())}
        bedges = [nv + lookup[tuple(sorted(f.vertices))] for f in mesh.boundary_facets]
        bdofs = np.concatenate([bverts, np.array(bedges, dtype=np.int64)])
    for arr in (cell_dofs, coords):
        arr.setflags(write=False)
    bdofs = np.unique(bdofs)
    bdofs.setflags(write=False)
    return FeSpace(mesh, k, cell_dofs, coords, bdofs)


class FeFunction:
    """Coefficient vector over a :class:`FeSpace`."""

    def __init__(self, space: FeSpace, coeffs=None):
        self.space = space
        if coeffs is None:
            coeffs = np.zeros(space.dof_count)
        coeffs = np.array(coeffs, dtype=float)
        if coeffs.shape != (space.dof_count,):
            raise ValueError(
                f"coefficient vector has shape {coeffs.shape}, expected ({space.dof_count},)"
            )
        self.coeffs = coeffs

    def copy(self) -> "FeFunction":
        return FeFunction(self.space, self.coeffs.copy())

    def _check_cell(self, cell):
        if not 0 <= cell < self.space.mesh.num_cells:
            raise ValueError(f"cell index {cell} out of range")

    def eval(self, cell: int, ref_point) -> float:
        self._check_cell(cell)
        vals = self.space.basis(np.atleast_1d(ref_point))[0]
        return float(vals @ self.coeffs[self.space.cell_dofs[cell]])

    def eval_grad(self, cell: int, ref_point) -> np.ndarray:
        self._check_cell(cell)
        ref_grads = tabulate(self.space.dim, self.space.degree, np.atleast_1d(ref_point))[1][0]
        grad = self.space.cell_inverse_jacobian_t(cell) @ (
            ref_grads.T @ self.coeffs[self.space.cell_dofs[cell]]
        )
        return grad

    def values_at(self, ref_points) -> np.ndarray:
        """Values at reference points on every cell, ``(ncells, npts)``."""
        return self.coeffs[self.space.cell_dofs] @ self.space.basis(ref_points).T

    def grads_at(self, ref_points) -> np.ndarray:
        """Physical gradients on every cell, ``(ncells, npts, dim)``."""
        dphi = self.space.physical_grads(ref_points)
        return np.einsum("cqni,cn->cqi", dphi, self.coeffs[self.space.cell_dofs])


def interpolate(space: FeSpace, f) -> FeFunction:
    """Nodal interpolant: ``coeffs[i] = f(dof_coords[i])``."""
    vals = np.asarray(f(space.dof_coords), dtype=float)
    return FeFunction(space, np.broadcast_to(vals, (space.dof_count,)))


def ritz_project(space: FeSpace, v, bc_values=None, value=None, quad_degree=None) -> FeFunction:
    """Discrete harmonic (Ritz) projection of ``v``.

    Parameters
    ----------
    v : FeFunction or callable
        The function to project, given either as a discrete function or as
        a gradient callback.
    bc_values : array_like, optional
        Coefficients imposed on ``space.boundary_dofs``.  When given, Galerkin
        orthogonality of the gradients is enforced against interior basis
        functions only.  When omitted the projection is taken over the whole
        space (a pure Neumann problem) and the constant is fixed by matching
        the mean of ``value``.
    value : FeFunction or callable, optional
        Values of ``v``; needed only when ``bc_values`` is omitted.
    """
    from .assembly import assemble_gradient_load, assemble_mass_vector, assemble_stiffness
    from .solver import lu_solve

    if isinstance(v, FeFunction):
        if value is None:
            value = v
        v_grad = v
    else:
        v_grad = v
    stiff = assemble_stiffness(space)
    load = assemble_gradient_load(space, v_grad, quad_degree)

    if bc_values is not None:
        inner = space.interior_dofs
        bnd = space.boundary_dofs
        bc = np.asarray(bc_values, dtype=float).reshape(len(bnd))
        x = np.zeros(space.dof_count)
        x[bnd] = bc
        rhs = load[inner] - stiff[inner][:, bnd] @ bc
        if len(inner):
            x[inner] = lu_solve(stiff[inner][:, inner].tocsc(), rhs)
        return FeFunction(space, x)

    if value is None:
        raise ValueError("value of v is required to fix the constant of a Neumann Ritz projection")
    from scipy import sparse

    mass = assemble_mass_vector(space)
    rule = quad_rule(space.dim, 2 * space.degree + 6 if space.dim == 1 else 8)
    if isinstance(value, FeFunction):
        vq = value.values_at(rule.points)
    else:
        vq = np.asarray(value(space.map_points(rule.points).reshape(-1, space.dim))).reshape(
            space.mesh.num_cells, -1
        )
    mean = float(np.sum(vq * space.jxw(rule)))
    n = space.dof_count
    aug = sparse.bmat(
        [[stiff, sparse.csr_matrix(mass[:, None])], [sparse.csr_matrix(mass[None, :]), None]]
    ).tocsc()
    sol = lu_solve(aug, np.concatenate([load, [mean]]))
    return FeFunction(space, sol[:n])
