"""Direct sparse solves, damped Newton and continuation in p."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy import sparse
from scipy.linalg import LinAlgWarning, lu_factor
from scipy.sparse.linalg import splu

from .assembly import ProblemSpec, SaddleProblem, assemble_mass, high_order_rule, s_eps
from .space import FeFunction, FeSpace, build_space, ritz_project

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised for singular systems; ``pivot`` is the offending column when known."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class ContinuationError(RuntimeError):
    def __init__(self, message, results):
        super().__init__(message)
        self.results = results


def lu_solve(A, rhs) -> np.ndarray:
    """Solve ``A x = rhs`` by sparse LU with partial pivoting (SuperLU)."""
    A = sparse.csc_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got {A.shape}")
    try:
        lu = splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SolverError(f"sparse LU failed: {exc}", pivot=_zero_pivot(A)) from exc
    diag = np.abs(lu.U.diagonal())
    bad = ~np.isfinite(diag) | (diag == 0.0)
    if bad.any():
        col = int(lu.perm_c[np.flatnonzero(bad)[0]])
        raise SolverError("matrix is singular", pivot=col)
    b = np.asarray(rhs, dtype=float)
    x = lu.solve(b)
    anorm = abs(A).sum(axis=1).max() if A.nnz else 0.0
    for _ in range(2):
        res = b - A @ x
        bound = 1e-9 * (anorm * np.max(np.abs(x), initial=0.0) + np.max(np.abs(b), initial=0.0))
        if np.all(np.isfinite(x)) and np.max(np.abs(res), initial=0.0) <= bound:
            return x
        x = x + lu.solve(res)
    raise SolverError("sparse LU solution failed the backward-error check")


DENSE_PIVOT_SEARCH_LIMIT = 3000


def _zero_pivot(A):
    """Best guess at the offending column of a singular matrix."""
    nnz_cols = np.diff(A.indptr)
    empty = np.flatnonzero(nnz_cols == 0)
    if len(empty):
        return int(empty[0])
    if A.shape[0] > DENSE_PIVOT_SEARCH_LIMIT:
        return None
    # partial pivoting permutes rows only, so U's diagonal indexes columns
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, _ = lu_factor(A.toarray(), check_finite=False)
    return int(np.argmin(np.abs(np.diag(lu))))


@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_iters: int = 50
    max_line_search_halvings: int = 20
    epsilon_schedule: tuple = (1e-2, 1e-4, 1e-6, 1e-8)
    line_search: str = "energy"
    armijo: float = 1e-4

    def __post_init__(self):
        if self.line_search not in ("energy", "residual"):
            raise ValueError(f"unknown line search {self.line_search!r}")
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        eps = tuple(float(e) for e in self.epsilon_schedule)
        if not eps or any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilon_schedule must be positive and strictly decreasing")
        object.__setattr__(self, "epsilon_schedule", eps)


DEFAULT_P_SCHEDULE = (2.0, 4.0, 12.0, 42.0, 68.0, 142.0, 202.0)


@dataclass(frozen=True)
class ContinuationConfig:
    p_schedule: tuple = DEFAULT_P_SCHEDULE
    warm_start: bool = True
    max_bisections: int = 5

    def __post_init__(self):
        ps = tuple(float(p) for p in self.p_schedule)
        if not ps:
            raise ValueError("p_schedule is empty")
        if ps[0] != 2.0:
            raise ValueError("p_schedule must start at 2")
        if any(b <= a for a, b in zip(ps, ps[1:])):
            raise ValueError("p_schedule must be strictly increasing")
        object.__setattr__(self, "p_schedule", ps)


@dataclass
class SolveReport:
    newton_iterations: list = field(default_factory=list)
    epsilons: list = field(default_factory=list)
    initial_residual: float = float("nan")
    final_residual: float = float("nan")
    converged: bool = False
    wall_time: float = 0.0
    scale: float = 1.0

    @property
    def total_iterations(self) -> int:
        return int(sum(self.newton_iterations))


def boundary_values(space: FeSpace, spec: ProblemSpec, mode: str = "ritz") -> np.ndarray:
    """Coefficients of the Dirichlet datum on ``space.boundary_dofs``.

    ``interpolate`` takes nodal values of ``g``; ``ritz`` takes the trace of
    the Ritz projection of ``g`` over the whole space (mean matched to ``g``).
    """
    if mode == "interpolate":
        return np.asarray(spec.g_value(space.dof_coords[space.boundary_dofs]), dtype=float)
    if mode == "ritz":
        rg = ritz_project(space, spec.g_gradient, value=spec.g_value)
        return rg.coeffs[space.boundary_dofs]
    raise ValueError(f"unknown boundary projection {mode!r}")


def laplacian_scale(space: FeSpace, spec: ProblemSpec, s_guess: Optional[np.ndarray] = None) -> float:
    """Largest magnitude of the Laplacian of the solution (or of ``g``).

    Normalising by the maximum keeps ``|w| = |Lap u|^(p-1) <= 1`` in the
    scaled problem, so nothing overflows for large ``p``.
    """
    if s_guess is None:
        rule = high_order_rule(space.dim)
        pts = space.map_points(rule.points)
        s_guess = np.asarray(spec.g_laplacian(pts.reshape(-1, space.dim)))
    return float(np.max(np.abs(s_guess), initial=0.0))


def _newton_stage(prob: SaddleProblem, u: FeFunction, w: FeFunction, cfg: NewtonConfig, tol_ref):
    """Damped Newton on one regularisation stage; updates ``u`` and ``w`` in place.

    ``line_search == "energy"``: iterates stay on the constraint set, where
    the problem is the minimisation of a convex energy along the Newton
    direction ``dw``.  The step length is found by bisection on the
    directional derivative ``phi'(alpha) = r1(w + alpha dw) . dw`` (strong
    Wolfe condition), and the multiplier (interior ``u``) takes the full
    Newton update.  ``"residual"``: the step is halved until the max-norm
    residual decreases.
    """
    inner = prob.inner
    n = prob.space.dof_count
    r = prob.residual(u, w)
    rn = np.max(np.abs(r))
    if tol_ref is None:
        tol_ref = rn
    tol = max(cfg.abs_tol, cfg.rel_tol * tol_ref)
    by_energy = cfg.line_search == "energy"
    its = 0
    while rn > tol:
        if its >= cfg.max_iters:
            return its, rn, tol_ref, False
        step = lu_solve(prob.jacobian(w), -r)
        dw, du = step[:n], step[n:]
        w0, u0 = w.coeffs.copy(), u.coeffs[inner].copy()
        its += 1
        if by_energy:
            u.coeffs[inner] = u0 + du
            r_try, alpha = _wolfe_search(prob, u, w, w0, dw, cfg)
            rn_try = np.max(np.abs(r_try))
            accepted = alpha > 0
        else:
            alpha, accepted = 1.0, False
            for _ in range(cfg.max_line_search_halvings + 1):
                w.coeffs = w0 + alpha * dw
                u.coeffs[inner] = u0 + alpha * du
                r_try = prob.residual(u, w)
                rn_try = np.max(np.abs(r_try))
                if rn_try < rn:
                    accepted = True
                    break
                alpha *= 0.5
        if not accepted:
            w.coeffs, u.coeffs[inner] = w0, u0
            log.debug("line search failed at residual %.3e", rn)
            return its, rn, tol_ref, False
        r, rn = r_try, rn_try
        log.debug("newton it %d alpha %.3g residual %.3e", its, alpha, rn)
    return its, rn, tol_ref, True


def _wolfe_search(prob, u, w, w0, dw, cfg, eta=0.25):
    """Step length along ``dw`` for the convex energy; sets ``w`` and returns (residual, alpha)."""
    n = prob.space.dof_count
    inner = prob.inner
    # u interior already updated; the constraint term drops out along feasible dw
    u_int = u.coeffs[inner]

    def slope(alpha):
        w.coeffs = w0 + alpha * dw
        res = prob.residual(u, w)
        return float((res[:n] - prob.b_cols @ u_int) @ dw), res

    g0, _ = slope(0.0)
    if g0 >= 0.0:
        # not a descent direction (round-off level); take the Newton step as is
        g1, res = slope(1.0)
        return res, 1.0
    lo, hi = 0.0, 1.0
    g, res = slope(1.0)
    if g <= eta * abs(g0):
        return res, 1.0
    for _ in range(cfg.max_line_search_halvings):
        alpha = 0.5 * (lo + hi)
        g, res = slope(alpha)
        if abs(g) <= eta * abs(g0):
            return res, alpha
        if g < 0.0:
            lo = alpha
        else:
            hi = alpha
    if lo == 0.0:
        w.coeffs = w0.copy()
        return prob.residual(u, w), 0.0
    g, res = slope(lo)
    return res, lo


def _restore_feasibility(prob: SaddleProblem, w: FeFunction):
    """Smallest (mass-norm) correction of ``w`` satisfying ``b(w, phi) = S(phi)``."""
    r2 = prob.constraint_residual(w)
    if not np.any(r2):
        return
    mass = assemble_mass(prob.space)
    kkt = sparse.bmat([[mass, prob.b_cols], [prob.b_rows, None]], format="csc")
    rhs = np.concatenate([np.zeros(prob.space.dof_count), -r2])
    w.coeffs += lu_solve(kkt, rhs)[: prob.space.dof_count]


def solve_p_bilaplacian(
    mesh_or_space,
    k: int,
    spec: ProblemSpec,
    cfg: NewtonConfig = NewtonConfig(),
    initial=None,
    boundary_projection: str = "ritz",
    scale=None,
):
    """Solve the discrete mixed p-Bilaplacian problem.

    Parameters
    ----------
    mesh_or_space : Mesh or FeSpace
    k : int
        Polynomial degree (ignored when a space is passed).
    spec : ProblemSpec
    cfg : NewtonConfig
    initial : tuple (u_h, w_h), optional
        Starting guess; ``u_h`` boundary values are overwritten by the data.
    boundary_projection : {"interpolate", "ritz"}
    scale : float, optional
        Normalising factor for the solution.  The problem is solved for
        ``scale * u`` so that the Laplacian is of unit size, which keeps the
        regularisation ``epsilon`` meaningful for large ``p``.  Defaults to
        the inverse maximum of the Laplacian of the initial guess (or of ``g``).

    Returns
    -------
    u_h, w_h : FeFunction
    report : SolveReport
    """
    t0 = time.perf_counter()
    space = mesh_or_space if isinstance(mesh_or_space, FeSpace) else build_space(mesh_or_space, k)
    rule = high_order_rule(space.dim)

    if scale is None:
        s_guess = None
        if initial is not None:
            wq = initial[1].values_at(rule.points)
            s_guess = s_eps(wq, spec.q, 0.0)
            if not np.any(s_guess):
                s_guess = None
        ref = laplacian_scale(space, spec, s_guess)
        scale = 1.0 / ref if ref > 0 and np.isfinite(ref) else 1.0
    lam = float(scale)
    wfac = lam ** (spec.p - 1.0)
    sspec = spec.scaled(lam)

    u = FeFunction(space)
    w = FeFunction(space)
    if initial is not None:
        u.coeffs[:] = lam * initial[0].coeffs
        w.coeffs[:] = wfac * initial[1].coeffs
    u.coeffs[space.boundary_dofs] = boundary_values(space, sspec, boundary_projection)

    base = SaddleProblem(space, sspec)
    if cfg.line_search == "energy":
        _restore_feasibility(base, w)
    schedule = (cfg.epsilon_schedule[-1],) if spec.q == 2.0 else cfg.epsilon_schedule
    report = SolveReport(scale=lam)
    tol_ref = None
    converged = False
    for eps in schedule:
        prob = base.with_spec(sspec.with_epsilon(eps))
        if tol_ref is None:
            report.initial_residual = float(np.max(np.abs(prob.residual(u, w))))
        its, rn, tol_ref, converged = _newton_stage(prob, u, w, cfg, tol_ref)
        report.newton_iterations.append(its)
        report.epsilons.append(eps)
        report.final_residual = float(rn)
        if not converged:
            log.info("p=%g: stage eps=%g did not converge (residual %.3e)", spec.p, eps, rn)
            break
    report.converged = converged
    report.wall_time = time.perf_counter() - t0
    return FeFunction(space, u.coeffs / lam), FeFunction(space, w.coeffs / wfac), report


class ContinuationStep(NamedTuple):
    p: float
    u: FeFunction
    w: FeFunction
    report: SolveReport
    diagnostics: dict


def _warm_start(space, spec_new, prev: ContinuationStep):
    """Map the previous Laplacian estimate to the auxiliary variable at the new exponent."""
    q_prev = prev.p / (prev.p - 1.0)
    s_nodes = s_eps(prev.w.coeffs, q_prev, 0.0)
    w0 = np.abs(s_nodes) ** (spec_new.p - 2.0) * s_nodes
    rule = high_order_rule(space.dim)
    s_q = s_eps(prev.w.values_at(rule.points), q_prev, 0.0)
    ref = laplacian_scale(space, spec_new, s_q)
    return (prev.u, FeFunction(space, w0)), ref


def continuation_solve(
    mesh_or_space,
    k: int,
    base_spec: ProblemSpec,
    ccfg: ContinuationConfig = ContinuationConfig(),
    ncfg: NewtonConfig = NewtonConfig(),
    boundary_projection: str = "ritz",
    callback=None,
):
    """Solve along ``ccfg.p_schedule``, warm-starting each exponent.

    A failed step is retried through intermediate exponents obtained by
    bisection, at most ``ccfg.max_bisections`` times.  Returns a list of
    :class:`ContinuationStep` for the scheduled exponents; raises
    :class:`ContinuationError` carrying the partial list when bisection is
    exhausted.
    """
    from .analysis import continuation_diagnostics

    if base_spec.has_source:
        raise ValueError("continuation is defined for the homogeneous (source-free) problem")
    space = mesh_or_space if isinstance(mesh_or_space, FeSpace) else build_space(mesh_or_space, k)
    results = []
    prev = None
    for p_target in ccfg.p_schedule:
        pending = [p_target]
        depth = 0
        while pending:
            p = pending[-1]
            spec = _with_p(base_spec, p)
            initial, scale = None, None
            if prev is not None and ccfg.warm_start:
                initial, ref = _warm_start(space, spec, prev)
                scale = 1.0 / ref if ref > 0 else None
            u, w, rep = solve_p_bilaplacian(
                space, k, spec, ncfg, initial=initial,
                boundary_projection=boundary_projection, scale=scale,
            )
            if rep.converged:
                diag = continuation_diagnostics(w, spec)
                step = ContinuationStep(p, u, w, rep, diag)
                pending.pop()
                prev = step
                if p == p_target:
                    results.append(step)
                    if callback is not None:
                        callback(step)
                else:
                    log.info("intermediate exponent p=%g converged", p)
                continue
            p_low = prev.p if prev is not None else None
            if p_low is None or depth >= ccfg.max_bisections:
                raise ContinuationError(
                    f"continuation failed at p={p} (residual {rep.final_residual:.3e})", results
                )
            depth += 1
            pending.append(0.5 * (p_low + p))
            log.info("bisecting p-step: trying p=%g", pending[-1])
    return results


def _with_p(spec: ProblemSpec, p: float) -> ProblemSpec:
    from dataclasses import replace

    return replace(spec, p=float(p))
