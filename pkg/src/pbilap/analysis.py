"""Test problems, error norms, convergence tables and large-p diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .assembly import ProblemSpec, high_order_rule, s_eps
from .space import FeFunction, FeSpace

PI = math.pi


class DiagnosticError(ValueError):
    pass


# ---------------------------------------------------------------- test cases


@dataclass(frozen=True)
class ManufacturedCase:
    spec: ProblemSpec
    exact_u: Callable
    exact_grad_u: Callable
    exact_w: Callable


def manufactured_sine(p: float) -> ManufacturedCase:
    """``u = sin(pi x) sin(pi y)`` on ``[-1, 1]^2`` with the matching source."""
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    p = float(p)
    c = 2.0 * PI**2

    def u(x):
        return np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1])

    def grad_u(x):
        sx, sy = np.sin(PI * x[:, 0]), np.sin(PI * x[:, 1])
        cx, cy = np.cos(PI * x[:, 0]), np.cos(PI * x[:, 1])
        return PI * np.column_stack([cx * sy, sx * cy])

    def lap_u(x):
        return -c * u(x)

    def w(x):
        s = u(x)
        return -(c ** (p - 1.0)) * np.abs(s) ** (p - 2.0) * s

    def source(x):
        s = u(x)
        grad2 = np.sum(grad_u(x) ** 2, axis=1)
        # (p-1) |s|^(p-4) s [(p-2)|grad s|^2 - c s^2], written to stay finite at s = 0
        term = -c * np.abs(s) ** (p - 2.0) * s
        if p != 2.0:
            nz = s != 0.0
            extra = np.zeros_like(s)
            extra[nz] = (p - 2.0) * np.abs(s[nz]) ** (p - 4.0) * s[nz] * grad2[nz]
            term = term + extra
        return -(c ** (p - 1.0)) * (p - 1.0) * term

    spec = ProblemSpec(p, u, grad_u, lap_u, source_f=source)
    return ManufacturedCase(spec, u, grad_u, w)


def cubic_1d_case(p: float = 2.0) -> ProblemSpec:
    """Boundary data ``g = (4x-3)(2x-1)(4x-1)/120`` on (0, 1), no source."""
    coeffs = np.array([-3.0, 22.0, -48.0, 32.0]) / 120.0
    poly = np.polynomial.Polynomial(coeffs)
    d1, d2 = poly.deriv(1), poly.deriv(2)
    return ProblemSpec(
        float(p),
        lambda x: poly(np.asarray(x)[:, 0]),
        lambda x: d1(np.asarray(x)[:, 0])[:, None],
        lambda x: d2(np.asarray(x)[:, 0]),
    )


def cosine_2d_case(m: int, p: float = 2.0) -> ProblemSpec:
    """``g = cos(m pi x) cos(m pi y) / (20 m)`` on ``[-1, 1]^2``, no source."""
    if m < 1:
        raise ValueError("m must be a positive integer")
    a = m * PI

    def g(x):
        return np.cos(a * x[:, 0]) * np.cos(a * x[:, 1]) / (20.0 * m)

    def grad_g(x):
        cx, cy = np.cos(a * x[:, 0]), np.cos(a * x[:, 1])
        sx, sy = np.sin(a * x[:, 0]), np.sin(a * x[:, 1])
        return -(PI / 20.0) * np.column_stack([sx * cy, cx * sy])

    def lap_g(x):
        return -(m * PI**2 / 10.0) * np.cos(a * x[:, 0]) * np.cos(a * x[:, 1])

    return ProblemSpec(float(p), g, grad_g, lap_g)


# --------------------------------------------------------------------- norms


def lp_norm(values, jxw, r: float) -> float:
    """``(sum |v|^r jxw)^(1/r)``, rescaled by the maximum to avoid over/underflow."""
    values = np.abs(np.asarray(values, dtype=float))
    m = values.max() if values.size else 0.0
    if m == 0.0:
        return 0.0
    return float(m * np.sum((values / m) ** r * jxw) ** (1.0 / r))


def _at_quadrature(space: FeSpace, f, rule):
    pts = space.map_points(rule.points)
    out = np.asarray(f(pts.reshape(-1, space.dim)), dtype=float)
    return out.reshape(pts.shape[:2] + out.shape[1:])


def norm_lp(fh, r: float) -> float:
    """``L^r`` norm of a discrete function."""
    rule = high_order_rule(fh.space.dim)
    return lp_norm(fh.values_at(rule.points), fh.space.jxw(rule), r)


def callback_norm_lp(space: FeSpace, f, r: float) -> float:
    """``L^r`` norm over the mesh domain of a vectorised callback."""
    rule = high_order_rule(space.dim)
    return lp_norm(_at_quadrature(space, f, rule), space.jxw(rule), r)


def error_w_lq(w_h: FeFunction, exact_w, q: float) -> float:
    """``||w - w_h||_{L^q}`` by high-order quadrature."""
    rule = high_order_rule(w_h.space.dim)
    err = _at_quadrature(w_h.space, exact_w, rule) - w_h.values_at(rule.points)
    return lp_norm(err, w_h.space.jxw(rule), q)


def error_gradu_lp(u_h: FeFunction, exact_grad_u, p: float) -> float:
    """``||grad u - grad u_h||_{L^p}`` with the Euclidean norm pointwise."""
    rule = high_order_rule(u_h.space.dim)
    err = _at_quadrature(u_h.space, exact_grad_u, rule) - u_h.grads_at(rule.points)
    return lp_norm(np.linalg.norm(err, axis=-1), u_h.space.jxw(rule), p)


def eoc(errors, hs) -> list:
    """Experimental orders between consecutive levels (``len - 1`` values)."""
    errors = [float(e) for e in errors]
    hs = [float(h) for h in hs]
    if len(errors) != len(hs) or len(errors) < 2:
        raise ValueError("need at least two (error, h) pairs of equal length")
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("mesh sizes must be strictly decreasing")
    out = []
    for (e0, e1), (h0, h1) in zip(zip(errors, errors[1:]), zip(hs, hs[1:])):
        if e1 == 0.0:
            out.append(math.inf)
        elif e0 == 0.0:
            out.append(-math.inf)
        else:
            out.append(math.log(e0 / e1) / math.log(h0 / h1))
    return out


@dataclass
class EocTable:
    p: float
    q: float
    k: int
    h: list = field(default_factory=list)
    dofs: list = field(default_factory=list)
    err_w: list = field(default_factory=list)
    err_u: list = field(default_factory=list)

    def add(self, h, dofs, err_w, err_u):
        self.h.append(float(h))
        self.dofs.append(int(dofs))
        self.err_w.append(float(err_w))
        self.err_u.append(float(err_u))

    @property
    def eoc_w(self) -> list:
        return [None] + eoc(self.err_w, self.h) if len(self.h) > 1 else [None] * len(self.h)

    @property
    def eoc_u(self) -> list:
        return [None] + eoc(self.err_u, self.h) if len(self.h) > 1 else [None] * len(self.h)

    def rows(self):
        return list(zip(self.h, self.dofs, self.err_w, self.err_u, self.eoc_w, self.eoc_u))

    def __len__(self):
        return len(self.h)


# ------------------------------------------------------- large-p diagnostics


class LaplacianSampler:
    """Pointwise ``s_h = |w_h|^(q-2) w_h``, the discrete stand-in for the Laplacian."""

    def __init__(self, w_h: FeFunction, q: float):
        self.w_h = w_h
        self.q = q

    def __call__(self, cell: int, ref_point) -> float:
        return float(s_eps(np.array([self.w_h.eval(cell, ref_point)]), self.q, 0.0)[0])

    def values_at(self, ref_points) -> np.ndarray:
        return s_eps(self.w_h.values_at(ref_points), self.q, 0.0)

    def samples_1d(self, per_cell: int = 4):
        """Ordered ``(x, s_h(x))`` at ``per_cell`` interior points of each cell."""
        space = self.w_h.space
        if space.dim != 1:
            raise ValueError("samples_1d needs a 1D space")
        ref = ((np.arange(per_cell) + 0.5) / per_cell)[:, None]
        x = space.map_points(ref)[:, :, 0].ravel()
        s = self.values_at(ref).ravel()
        order = np.argsort(x, kind="stable")
        return np.column_stack([x[order], s[order]])


def recovered_laplacian(w_h: FeFunction, q: float) -> LaplacianSampler:
    return LaplacianSampler(w_h, q)


@dataclass(frozen=True)
class BreakpointReport:
    num_sign_changes: int
    plateau_means: tuple
    plateau_relative_stddev: float
    break_location: float


def breakpoint_diagnostics_1d(samples, h: float = None, guard_cells: int = 3) -> BreakpointReport:
    """Sign-change count and plateau statistics of a 1D Laplacian profile.

    Crossings closer than two guard bands are merged into one.  Samples
    within ``guard_cells * h`` of a crossing or of the boundary are excluded
    from the plateau statistics.

    Parameters
    ----------
    samples : array_like, shape (n, 2)
        ``(x, s)`` pairs ordered by ``x``.
    h : float, optional
        Cell size; defaults to the mean sample spacing.
    """
    data = np.asarray(samples, dtype=float)
    x, s = data[:, 0], data[:, 1]
    if len(x) < 2 or np.any(np.diff(x) < 0):
        raise DiagnosticError("samples must be ordered in x")
    if h is None:
        h = (x[-1] - x[0]) / (len(x) - 1)
    guard = guard_cells * h
    lo, hi = x[0] + guard, x[-1] - guard
    inside = (x >= lo) & (x <= hi)

    crossings = []
    sign = np.sign(s)
    for i in range(len(x) - 1):
        if not (inside[i] and inside[i + 1]):
            continue
        if sign[i] * sign[i + 1] < 0:
            t = s[i] / (s[i] - s[i + 1])
            crossings.append(x[i] + t * (x[i + 1] - x[i]))
    clusters = []
    for c in crossings:
        if clusters and c - clusters[-1][-1] <= 2 * guard:
            clusters[-1].append(c)
        else:
            clusters.append([c])
    locs = [float(np.mean(c)) for c in clusters]

    usable = inside.copy()
    for c in locs:
        usable &= np.abs(x - c) > guard
    if usable.sum() < 10:
        raise DiagnosticError(f"only {int(usable.sum())} usable samples (need 10)")
    su = s[usable]
    pos, neg = su[su > 0], su[su < 0]
    groups = [g for g in (pos, neg) if len(g)]
    means = tuple(float(g.mean()) for g in groups)
    if len(means) == 1:
        means = (means[0], means[0])
    resid = np.concatenate([g - g.mean() for g in groups])
    scale = np.mean([abs(g.mean()) for g in groups])
    rel_std = float(np.sqrt(np.mean(resid**2)) / scale) if scale > 0 else math.inf
    return BreakpointReport(
        num_sign_changes=len(locs),
        plateau_means=means,
        plateau_relative_stddev=rel_std,
        break_location=locs[0] if len(locs) == 1 else (math.nan if not locs else locs[0]),
    )


def stability_margin(w_h: FeFunction, spec: ProblemSpec) -> float:
    """``||Lap g||_{L^p} - ||w_h||_{L^q}^(q-1)`` (non-negative at a discrete solution)."""
    if spec.has_source:
        raise ValueError("the stability bound is stated for the source-free problem")
    lhs = norm_lp(w_h, spec.q) ** (spec.q - 1.0)
    rhs = callback_norm_lp(w_h.space, spec.g_laplacian, spec.p)
    return rhs - lhs


def histogram_modes(values, bins: int = 60, tol: float = 0.1) -> dict:
    """Share of samples within ``tol`` (relative) of the two dominant histogram modes."""
    v = np.asarray(values, dtype=float).ravel()
    counts, edges = np.histogram(v, bins=bins)
    centres = 0.5 * (edges[:-1] + edges[1:])
    order = np.argsort(counts)[::-1]
    first = centres[order[0]]
    second = None
    for i in order[1:]:
        if abs(centres[i] - first) > tol * max(abs(first), abs(centres[i])):
            second = centres[i]
            break
    modes = [first] if second is None else [first, second]
    close = np.zeros(v.shape, dtype=bool)
    for m in modes:
        close |= np.abs(v - m) <= tol * abs(m)
    return {"modes": [float(m) for m in modes], "fraction": float(close.mean())}


def laplacian_values(w_h: FeFunction, q: float) -> tuple[np.ndarray, np.ndarray]:
    """``s_h`` and quadrature weights at high-order points on every cell."""
    rule = high_order_rule(w_h.space.dim)
    return s_eps(w_h.values_at(rule.points), q, 0.0), w_h.space.jxw(rule)


def continuation_diagnostics(w_h: FeFunction, spec: ProblemSpec) -> dict:
    """Per-exponent quantities reported by the continuation driver."""
    s, jxw = laplacian_values(w_h, spec.q)
    rule = high_order_rule(w_h.space.dim)
    wq = w_h.values_at(rule.points)
    out = {
        "p": spec.p,
        "q": spec.q,
        "s_linf": float(np.max(np.abs(wq)) ** (spec.q - 1.0)),
        "s_lp": lp_norm(s, jxw, spec.p),
        "lap_g_lp": callback_norm_lp(w_h.space, spec.g_laplacian, spec.p),
    }
    out["stability_margin"] = None if spec.has_source else stability_margin(w_h, spec)
    return out
