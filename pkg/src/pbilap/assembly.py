"""Sparse assembly of the mixed p-Bilaplacian forms.

The discrete problem reads: find ``w`` in the full space and ``u`` with
Dirichlet data such that

    a(w, psi) + b(u, psi) = F(psi)    for all psi,
    b(w, phi)             = S(phi)    for all interior phi,

with ``a(w, psi) = int s(w) psi``, ``s(w) = |w|^(q-2) w`` (regularised by
``epsilon``), ``b(u, psi) = int grad u . grad psi``, ``F`` the Neumann
boundary functional of the data and ``S(phi) = -int f phi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from .quadrature import facet_rule, quad_rule
from .space import FeFunction, FeSpace, _REF_NODES, tabulate

HIGH_ORDER = {1: 10, 2: 8}


def high_order_rule(dim):
    """Fixed rule used for non-polynomial integrands and error norms."""
    return quad_rule(dim, HIGH_ORDER[dim])


def _zero(x):
    return np.zeros(len(x))


@dataclass(frozen=True)
class ProblemSpec:
    """Exponent, boundary datum ``g`` and optional source for one solve.

    ``g_value``, ``g_gradient``, ``g_laplacian`` and ``source_f`` are
    vectorised callbacks on points of shape ``(n, dim)``.
    """

    p: float
    g_value: Callable
    g_gradient: Callable
    g_laplacian: Callable
    source_f: Optional[Callable] = None
    epsilon: float = 0.0
    q: float = field(init=False)

    def __post_init__(self):
        if not self.p >= 2:
            raise ValueError(f"exponent p must be >= 2, got {self.p}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        object.__setattr__(self, "q", self.p / (self.p - 1.0))

    @property
    def has_source(self) -> bool:
        return self.source_f is not None

    def with_epsilon(self, epsilon: float) -> "ProblemSpec":
        return replace(self, epsilon=epsilon)

    def scaled(self, lam: float) -> "ProblemSpec":
        """Data for the solution ``lam * u``.

        The operator is homogeneous of degree ``p - 1``, so scaling ``g`` by
        ``lam`` scales the source by ``lam**(p - 1)`` and ``w`` likewise.
        """
        if lam == 1.0:
            return self
        src = self.source_f
        fscale = lam ** (self.p - 1.0)
        return replace(
            self,
            g_value=lambda x: lam * np.asarray(self.g_value(x)),
            g_gradient=lambda x: lam * np.asarray(self.g_gradient(x)),
            g_laplacian=lambda x: lam * np.asarray(self.g_laplacian(x)),
            source_f=None if src is None else (lambda x: fscale * np.asarray(src(x))),
        )


def s_eps(w, q, eps):
    """Regularised ``|w|^(q-2) w``; exactly that map when ``eps == 0``."""
    w = np.asarray(w, dtype=float)
    if q == 2.0:
        return w.copy()
    if eps == 0.0:
        out = np.zeros_like(w)
        nz = w != 0.0
        out[nz] = np.abs(w[nz]) ** (q - 2.0) * w[nz]
        return out
    return np.hypot(w, eps) ** (q - 2.0) * w


def ds_eps(w, q, eps):
    """Derivative of :func:`s_eps` with respect to ``w``.

    For ``eps == 0`` the derivative is unbounded at ``w = 0``; it is set to 0
    there.
    """
    w = np.asarray(w, dtype=float)
    if q == 2.0:
        return np.ones_like(w)
    if eps == 0.0:
        out = np.zeros_like(w)
        nz = w != 0.0
        out[nz] = (q - 1.0) * np.abs(w[nz]) ** (q - 2.0)
        return out
    r = np.hypot(w, eps)
    return r ** (q - 2.0) * (1.0 + (q - 2.0) * (w / r) ** 2)


def _scatter_matrix(space: FeSpace, local: np.ndarray) -> sparse.csr_matrix:
    cd = space.cell_dofs
    nloc = space.nloc
    rows = np.repeat(cd, nloc, axis=1).ravel()
    cols = np.tile(cd, (1, nloc)).ravel()
    n = space.dof_count
    mat = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _scatter_vector(space: FeSpace, local: np.ndarray) -> np.ndarray:
    return np.bincount(space.cell_dofs.ravel(), weights=local.ravel(), minlength=space.dof_count)


def _symmetrise(mat):
    out = (0.5 * (mat + mat.T)).tocsr()
    out.sort_indices()
    return out


def assemble_stiffness(space: FeSpace) -> sparse.csr_matrix:
    """``B[i, j] = int grad phi_j . grad phi_i`` over all DOFs."""
    rule = quad_rule(space.dim, 2 * space.degree)
    dphi = space.physical_grads(rule.points)
    local = np.einsum("cqni,cqmi,cq->cnm", dphi, dphi, space.jxw(rule))
    return _symmetrise(_scatter_matrix(space, local))


def assemble_weighted_mass(space: FeSpace, weight=None, rule=None) -> sparse.csr_matrix:
    """``M[i, j] = int weight phi_j phi_i``; ``weight`` is ``(ncells, nq)`` or None."""
    rule = rule or quad_rule(space.dim, 2 * space.degree)
    phi = space.basis(rule.points)
    jxw = space.jxw(rule)
    if weight is not None:
        jxw = jxw * weight
    local = np.einsum("qn,qm,cq->cnm", phi, phi, jxw)
    return _symmetrise(_scatter_matrix(space, local))


def assemble_mass(space: FeSpace) -> sparse.csr_matrix:
    return assemble_weighted_mass(space)


def assemble_mass_vector(space: FeSpace) -> np.ndarray:
    """``m[i] = int phi_i``."""
    rule = quad_rule(space.dim, space.degree)
    phi = space.basis(rule.points)
    return _scatter_vector(space, np.einsum("qn,cq->cn", phi, space.jxw(rule)))


def assemble_load(space: FeSpace, f, rule=None) -> np.ndarray:
    """``L[i] = int f phi_i`` for a vectorised callback ``f``."""
    rule = rule or high_order_rule(space.dim)
    pts = space.map_points(rule.points)
    fq = np.asarray(f(pts.reshape(-1, space.dim)), dtype=float).reshape(pts.shape[:2])
    phi = space.basis(rule.points)
    return _scatter_vector(space, np.einsum("qn,cq->cn", phi, fq * space.jxw(rule)))


def assemble_gradient_load(space: FeSpace, grad_v, quad_degree=None) -> np.ndarray:
    """``L[i] = int grad v . grad phi_i``; ``grad_v`` a FeFunction or gradient callback."""
    rule = quad_rule(space.dim, quad_degree) if quad_degree else high_order_rule(space.dim)
    dphi = space.physical_grads(rule.points)
    if isinstance(grad_v, FeFunction):
        gq = grad_v.grads_at(rule.points)
    else:
        pts = space.map_points(rule.points)
        gq = np.asarray(grad_v(pts.reshape(-1, space.dim)), dtype=float).reshape(pts.shape)
    local = np.einsum("cqni,cqi,cq->cn", dphi, gq, space.jxw(rule))
    return _scatter_vector(space, local)


def assemble_a_residual(w: FeFunction, spec: ProblemSpec, rule=None) -> np.ndarray:
    """``r[i] = int s_eps(w_h) phi_i``."""
    space = w.space
    rule = rule or high_order_rule(space.dim)
    wq = w.values_at(rule.points)
    sq = s_eps(wq, spec.q, spec.epsilon)
    phi = space.basis(rule.points)
    return _scatter_vector(space, np.einsum("qn,cq->cn", phi, sq * space.jxw(rule)))


def assemble_a_jacobian(w: FeFunction, spec: ProblemSpec, rule=None) -> sparse.csr_matrix:
    """``J[i, j] = int s_eps'(w_h) phi_j phi_i``."""
    space = w.space
    rule = rule or high_order_rule(space.dim)
    weight = ds_eps(w.values_at(rule.points), spec.q, spec.epsilon)
    return assemble_weighted_mass(space, weight, rule)


def assemble_neumann_rhs(space: FeSpace, spec: ProblemSpec) -> np.ndarray:
    """``F[i] = sum over boundary facets of int (grad g . n) phi_i ds``."""
    dim = space.dim
    frule = facet_rule(dim, HIGH_ORDER[1])
    ref_vertices = _REF_NODES[(dim, 1)]
    out = np.zeros(space.dof_count)
    facets = space.mesh.boundary_facets
    if not facets:
        return out
    cells = np.array([f.cell for f in facets])
    normals = np.array([f.normal for f in facets])
    x = space.mesh.vertices
    for lf in range(dim + 1):
        sel = np.array([f.local_facet == lf for f in facets])
        if not sel.any():
            continue
        local_verts = [v for v in range(dim + 1) if v != lf]
        if dim == 1:
            ref_pts = ref_vertices[local_verts[0]][None, :]
            phys = np.array([x[f.vertices[0]] for f, s in zip(facets, sel) if s])[:, None, :]
            ds = np.ones((sel.sum(), 1))
        else:
            a, b = ref_vertices[local_verts[0]], ref_vertices[local_verts[1]]
            t = frule.points[:, 0]
            ref_pts = a[None, :] + t[:, None] * (b - a)[None, :]
            fv = np.array([f.vertices for f, s in zip(facets, sel) if s])
            xa, xb = x[fv[:, 0]], x[fv[:, 1]]
            phys = xa[:, None, :] + t[None, :, None] * (xb - xa)[:, None, :]
            length = np.linalg.norm(xb - xa, axis=1)
            ds = length[:, None] * frule.weights[None, :]
        grad = np.asarray(spec.g_gradient(phys.reshape(-1, dim)), dtype=float).reshape(phys.shape)
        flux = np.einsum("fqi,fi->fq", grad, normals[sel])
        phi = tabulate(dim, space.degree, ref_pts)[0]
        local = np.einsum("qn,fq->fn", phi, flux * ds)
        np.add.at(out, space.cell_dofs[cells[sel]], local)
    return out


def assemble_source_rhs(space: FeSpace, spec: ProblemSpec) -> np.ndarray:
    """``S[i] = -int f phi_i``; zero without a source."""
    if spec.source_f is None:
        return np.zeros(space.dof_count)
    return -assemble_load(space, spec.source_f)


class SaddleProblem:
    """Cached blocks of the mixed system for one space and problem.

    Unknowns are ordered as ``[w (all DOFs), u (interior DOFs)]``; the
    boundary coefficients of ``u`` are fixed.
    """

    def __init__(self, space: FeSpace, spec: ProblemSpec):
        self.space = space
        self.spec = spec
        self.inner = space.interior_dofs
        self.stiffness = assemble_stiffness(space)
        self.b_cols = self.stiffness[:, self.inner].tocsr()
        self.b_rows = self.stiffness[self.inner, :].tocsr()
        self.neumann = assemble_neumann_rhs(space, spec)
        self.source = assemble_source_rhs(space, spec)[self.inner]
        self.rule = high_order_rule(space.dim)

    def with_spec(self, spec: ProblemSpec) -> "SaddleProblem":
        """Same blocks with a different regularisation parameter."""
        clone = object.__new__(SaddleProblem)
        clone.__dict__.update(self.__dict__)
        clone.spec = spec
        return clone

    @property
    def size(self) -> int:
        return self.space.dof_count + len(self.inner)

    def residual(self, u: FeFunction, w: FeFunction) -> np.ndarray:
        r1 = assemble_a_residual(w, self.spec, self.rule) + self.stiffness @ u.coeffs - self.neumann
        r2 = self.b_rows @ w.coeffs - self.source
        return np.concatenate([r1, r2])

    def jacobian(self, w: FeFunction) -> sparse.csc_matrix:
        ja = assemble_a_jacobian(w, self.spec, self.rule)
        return sparse.bmat([[ja, self.b_cols], [self.b_rows, None]], format="csc")

    def energy(self, u: FeFunction, w: FeFunction) -> float:
        """Convex functional ``int Phi_eps(w) + b(u_D, w) - F(w)`` with ``Phi_eps' = s_eps``.

        ``u_D`` is ``u`` with interior coefficients zeroed.  On the affine set
        ``b(w, phi) = S(phi)`` its minimiser solves the mixed system, the
        interior part of ``u`` being the Lagrange multiplier.
        """
        spec = self.spec
        wq = w.values_at(self.rule.points)
        q, eps = spec.q, spec.epsilon
        if eps == 0.0:
            dens = np.abs(wq) ** q / q
        else:
            dens = np.hypot(wq, eps) ** q / q
        u_d = u.coeffs.copy()
        u_d[self.inner] = 0.0
        val = float(np.sum(dens * self.space.jxw(self.rule)))
        return val + float(w.coeffs @ (self.stiffness @ u_d) - self.neumann @ w.coeffs)

    def constraint_residual(self, w: FeFunction) -> np.ndarray:
        return self.b_rows @ w.coeffs - self.source


def assemble_saddle_system(u: FeFunction, w: FeFunction, spec: ProblemSpec, space: FeSpace = None):
    """Newton matrix and negative residual at ``(u, w)``.

    Returns
    -------
    matrix : scipy.sparse.csc_matrix
        ``[[J_a(w), B[:, inner]], [B[inner, :], 0]]``
    rhs : ndarray
        Minus the residual of both block equations.
    """
    space = space or w.space
    if u.space is not space or w.space is not space:
        raise RuntimeError("u and w must live on the given space")
    prob = SaddleProblem(space, spec)
    return prob.jacobian(w), -prob.residual(u, w)
