"""Command-line front end: ``pbilap <solve|benchmark|psweep>``.

Settings come from built-in defaults, then an optional INI file
(``--config``, sections ``[run]``, ``[newton]`` and ``[continuation]``),
then command-line flags.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, io
from .space import FeFunction
from .assembly import s_eps
from .mesh import criss_cross_mesh, metrics, refine_uniform, unit_interval_mesh
from .solver import (
    ContinuationConfig,
    ContinuationError,
    NewtonConfig,
    SolverError,
    continuation_solve,
    solve_p_bilaplacian,
)

log = logging.getLogger("pbilap")

CASES = ("manufactured_sine", "cubic_1d", "cosine_2d")
CASE_MESH = {"manufactured_sine": "criss_cross", "cubic_1d": "interval", "cosine_2d": "criss_cross"}
DEFAULT_SCHEDULES = {
    "cubic_1d": (2.0, 4.0, 12.0, 42.0, 202.0),
    "cosine_2d": (2.0, 4.0, 42.0, 68.0, 142.0),
}
DEFAULT_CASE = {"solve": "manufactured_sine", "benchmark": "manufactured_sine", "psweep": "cubic_1d"}
DEFAULT_N = {"interval": 32, "criss_cross": 16}


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    case: str
    m: int = None
    p: float = 2.0
    p_schedule: tuple = None
    k: int = 1
    n: int = None
    levels: int = None
    mesh: str = None
    ladder: str = "refine"
    boundary_projection: str = "ritz"
    out: Path = Path("pbilap_out")
    newton: NewtonConfig = field(default_factory=NewtonConfig)

    def validate(self):
        if self.command not in ("solve", "benchmark", "psweep"):
            raise UsageError(f"unknown command {self.command!r}")
        if self.case not in CASES:
            raise UsageError(f"unknown case {self.case!r}; choose from {', '.join(CASES)}")
        if self.m is not None and self.case != "cosine_2d":
            raise UsageError("--m is only meaningful for the cosine_2d case")
        if self.case == "cosine_2d" and self.m is None:
            self.m = 1
        if self.m is not None and self.m < 1:
            raise UsageError("--m must be a positive integer")
        if self.mesh is None:
            self.mesh = CASE_MESH[self.case]
        if self.mesh != CASE_MESH[self.case]:
            raise UsageError(f"case {self.case} needs mesh={CASE_MESH[self.case]}, got mesh={self.mesh}")
        if self.k not in (1, 2):
            raise UsageError("--k must be 1 or 2")
        if self.p < 2:
            raise UsageError("--p must be >= 2")
        if self.ladder not in ("refine", "regenerate"):
            raise UsageError("--ladder must be refine or regenerate")
        if self.boundary_projection not in ("ritz", "interpolate"):
            raise UsageError("--boundary-projection must be ritz or interpolate")
        if self.command == "benchmark" and self.case != "manufactured_sine":
            raise UsageError("benchmark needs the manufactured_sine case (an exact solution)")
        if self.command == "psweep":
            if self.case == "manufactured_sine":
                raise UsageError("psweep needs a homogeneous case (cubic_1d or cosine_2d)")
            if self.p_schedule is None:
                self.p_schedule = DEFAULT_SCHEDULES[self.case]
            if len(self.p_schedule) == 0:
                raise UsageError("empty p schedule")
            ps = list(self.p_schedule)
            if any(b <= a for a, b in zip(ps, ps[1:])) or ps[0] < 2:
                raise UsageError("p schedule must be increasing and start at p >= 2")
        if self.levels is None:
            self.levels = 4 if self.command == "benchmark" else 1
        if self.n is None:
            self.n = 4 if self.command == "benchmark" else DEFAULT_N[self.mesh]
        if self.n < 1 or self.levels < 1:
            raise UsageError("--n and --levels must be positive")
        return self


def _float_list(text):
    text = text.strip().strip("{}()[]")
    if not text:
        return ()
    return tuple(float(t) for t in text.replace(",", " ").split())


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pbilap", description="Mixed finite elements for the p-Bilaplacian."
    )
    parser.add_argument("command", choices=["solve", "benchmark", "psweep"])
    parser.add_argument("--config", type=Path, help="INI file with [run]/[newton]/[continuation]")
    parser.add_argument("--case", choices=CASES)
    parser.add_argument("--m", type=int, help="frequency of the cosine_2d boundary data")
    parser.add_argument("--p", type=float)
    parser.add_argument("--p-schedule", type=_float_list, dest="p_schedule")
    parser.add_argument("--k", type=int)
    parser.add_argument("--n", type=int, help="initial mesh resolution")
    parser.add_argument("--levels", type=int, help="mesh levels (uniform refinements + 1)")
    parser.add_argument("--mesh", choices=["interval", "criss_cross"])
    parser.add_argument("--ladder", choices=["refine", "regenerate"])
    parser.add_argument("--boundary-projection", choices=["ritz", "interpolate"], dest="boundary_projection")
    parser.add_argument("--out", type=Path)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser


_RUN_KEYS = {
    "case": str, "m": int, "p": float, "p_schedule": _float_list, "k": int, "n": int,
    "levels": int, "mesh": str, "ladder": str, "boundary_projection": str, "out": Path,
}
_NEWTON_KEYS = {
    "abs_tol": float, "rel_tol": float, "max_iters": int, "max_line_search_halvings": int,
    "epsilon_schedule": _float_list, "line_search": str, "armijo": float,
}


def load_config(args) -> RunConfig:
    values = {}
    newton = {}
    if args.config is not None:
        ini = configparser.ConfigParser()
        if not ini.read(args.config):
            raise UsageError(f"cannot read config file {args.config}")
        for section, keys, target in (("run", _RUN_KEYS, values), ("newton", _NEWTON_KEYS, newton)):
            if section in ini:
                for key, raw in ini[section].items():
                    if key not in keys:
                        raise UsageError(f"unknown key {key!r} in [{section}]")
                    target[key] = keys[key](raw)
        if "continuation" in ini and "p_schedule" in ini["continuation"]:
            values["p_schedule"] = _float_list(ini["continuation"]["p_schedule"])
    for key in _RUN_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    values.setdefault("case", DEFAULT_CASE[args.command])
    try:
        ncfg = NewtonConfig(**newton)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad [newton] settings: {exc}") from exc
    return RunConfig(command=args.command, newton=ncfg, **values).validate()


# ------------------------------------------------------------------ helpers


def _case_spec(cfg: RunConfig, p: float):
    if cfg.case == "manufactured_sine":
        return analysis.manufactured_sine(p)
    if cfg.case == "cubic_1d":
        return analysis.cubic_1d_case(p)
    return analysis.cosine_2d_case(cfg.m, p)


def _base_mesh(cfg: RunConfig, n=None):
    n = n or cfg.n
    if cfg.mesh == "interval":
        return unit_interval_mesh(n, 0.0, 1.0)
    return criss_cross_mesh(n, n, (-1.0, -1.0, 1.0, 1.0))


def mesh_ladder(cfg: RunConfig):
    meshes = [_base_mesh(cfg)]
    for lev in range(1, cfg.levels):
        if cfg.ladder == "refine":
            meshes.append(refine_uniform(meshes[-1]))
        else:
            meshes.append(_base_mesh(cfg, cfg.n * 2**lev))
    return meshes


def _ptag(p):
    return f"{p:g}"


def _nodal_laplacian(w, q):
    return s_eps(w.coeffs, q, 0.0)


def _dump_fields(out: Path, p, q, u, w):
    s = FeFunction(w.space, _nodal_laplacian(w, q))
    tag = _ptag(p)
    io.write_function_vtk(out / f"field_p{tag}.vtk", {"u": u, "w": w, "lap_u": s}, title=f"p={tag}")
    space = u.space
    coords = space.dof_coords
    order = np.lexsort(coords.T[::-1])
    names = ["x", "y"][: space.dim] + ["u", "w", "lap_u"]
    rows = []
    prev_x = None
    for i in order:
        if space.dim == 2 and prev_x is not None and coords[i, 0] != prev_x:
            rows.append(None)  # gnuplot block separator
        prev_x = coords[i, 0]
        rows.append(list(coords[i]) + [u.coeffs[i], w.coeffs[i], s.coeffs[i]])
    io.write_columns(out / f"field_p{tag}.dat", names, rows)


def _limit_diagnostics(w, q, dim):
    """Breakpoint statistics (1D) or histogram-mode report (2D)."""
    sampler = analysis.recovered_laplacian(w, q)
    if dim == 1:
        h = metrics(w.space.mesh).h_max
        try:
            bp = analysis.breakpoint_diagnostics_1d(sampler.samples_1d(), h=h)
        except analysis.DiagnosticError as exc:
            log.warning("breakpoint diagnostics unavailable: %s", exc)
            return {}
        return {
            "num_sign_changes": bp.num_sign_changes,
            "plateau_mean_1": bp.plateau_means[0],
            "plateau_mean_2": bp.plateau_means[1],
            "plateau_relative_stddev": bp.plateau_relative_stddev,
            "break_location": bp.break_location,
        }
    s, _ = analysis.laplacian_values(w, q)
    modes = analysis.histogram_modes(s)
    m = modes["modes"] + [None]
    return {"mode_1": m[0], "mode_2": m[1], "mode_fraction": modes["fraction"]}


def _write_dict_rows(path, rows):
    keys = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    io.write_csv(path, keys, ([r.get(k) for k in keys] for r in rows))


# ----------------------------------------------------------------- commands


def cmd_solve(cfg: RunConfig) -> int:
    cfg.out.mkdir(parents=True, exist_ok=True)
    mesh = mesh_ladder(cfg)[-1]
    case = _case_spec(cfg, cfg.p)
    spec = case.spec if isinstance(case, analysis.ManufacturedCase) else case
    u, w, rep = solve_p_bilaplacian(mesh, cfg.k, spec, cfg.newton, boundary_projection=cfg.boundary_projection)
    _dump_fields(cfg.out, cfg.p, spec.q, u, w)
    io.write_function_csv(cfg.out / f"solution_p{_ptag(cfg.p)}.csv", {"u": u, "w": w})
    io.write_report(
        cfg.out / "report.csv",
        [io.report_row(spec.p, spec.q, cfg.k, metrics(mesh).h_max, u.space.dof_count, rep)],
    )
    diag = analysis.continuation_diagnostics(w, spec)
    diag["newton_iterations"] = " ".join(str(i) for i in rep.newton_iterations)
    if isinstance(case, analysis.ManufacturedCase):
        diag["err_w_Lq"] = analysis.error_w_lq(w, case.exact_w, spec.q)
        diag["err_gradu_Lp"] = analysis.error_gradu_lp(u, case.exact_grad_u, spec.p)
    elif rep.converged:
        diag.update(_limit_diagnostics(w, spec.q, mesh.dim))
    _write_dict_rows(cfg.out / "diagnostics.csv", [diag])
    print(
        f"p={spec.p:g} k={cfg.k} dofs={u.space.dof_count} newton={rep.newton_iterations} "
        f"residual={rep.final_residual:.3e} converged={rep.converged}"
    )
    return 0 if rep.converged else 1


def _threads():
    try:
        return max(1, int(os.environ.get("PBILAP_THREADS", "1")))
    except ValueError:
        return 1


def cmd_benchmark(cfg: RunConfig) -> int:
    cfg.out.mkdir(parents=True, exist_ok=True)
    case = analysis.manufactured_sine(cfg.p)
    spec = case.spec
    meshes = mesh_ladder(cfg)

    def run(mesh):
        u, w, rep = solve_p_bilaplacian(mesh, cfg.k, spec, cfg.newton, boundary_projection=cfg.boundary_projection)
        return mesh, u, w, rep

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(run, meshes))

    table = analysis.EocTable(spec.p, spec.q, cfg.k)
    report_rows = []
    failed = False
    for mesh, u, w, rep in results:
        h = metrics(mesh).h_max
        report_rows.append(io.report_row(spec.p, spec.q, cfg.k, h, u.space.dof_count, rep))
        if not rep.converged:
            failed = True
            log.error("level h=%g did not converge; table truncated", h)
            break
        table.add(
            h,
            u.space.dof_count,
            analysis.error_w_lq(w, case.exact_w, spec.q),
            analysis.error_gradu_lp(u, case.exact_grad_u, spec.p),
        )
    stem = f"eoc_{cfg.case}_p{_ptag(spec.p)}_k{cfg.k}"
    io.write_eoc_table(cfg.out / f"{stem}.csv", table)
    io.write_columns(cfg.out / f"{stem}.dat", ["h", "err_w", "err_gradu"], zip(table.h, table.err_w, table.err_u))
    io.write_report(cfg.out / "report.csv", report_rows)
    print(f"p={spec.p:g} q={spec.q:.6g} k={cfg.k}")
    print(f"{'h':>10} {'dofs':>8} {'|w-wh|_Lq':>12} {'|grad(u-uh)|_Lp':>16} {'eoc_w':>7} {'eoc_u':>7}")
    for h, d, ew, eu, rw, ru in table.rows():
        fw = f"{rw:7.3f}" if rw is not None else " " * 7
        fu = f"{ru:7.3f}" if ru is not None else " " * 7
        print(f"{h:10.4g} {d:8d} {ew:12.4e} {eu:16.4e} {fw} {fu}")
    return 1 if failed else 0


def cmd_psweep(cfg: RunConfig) -> int:
    cfg.out.mkdir(parents=True, exist_ok=True)
    requested = tuple(cfg.p_schedule)
    # continuation always starts from the linear p = 2 problem
    schedule = requested if requested[0] == 2.0 else (2.0,) + requested
    mesh = mesh_ladder(cfg)[-1]
    base = _case_spec(cfg, 2.0)
    diag_rows, report_rows = [], []
    h = metrics(mesh).h_max

    def on_step(step):
        report_rows.append(io.report_row(step.p, step.diagnostics["q"], cfg.k, h, step.u.space.dof_count, step.report))
        if step.p not in requested:
            return
        _dump_fields(cfg.out, step.p, step.diagnostics["q"], step.u, step.w)
        row = dict(step.diagnostics)
        row["newton_iters_total"] = step.report.total_iterations
        row.update(_limit_diagnostics(step.w, step.diagnostics["q"], mesh.dim))
        diag_rows.append(row)
        log.info("p=%g done (%d Newton iterations)", step.p, step.report.total_iterations)

    status = 0
    try:
        continuation_solve(
            mesh, cfg.k, base, ContinuationConfig(schedule), cfg.newton,
            boundary_projection=cfg.boundary_projection, callback=on_step,
        )
    except ContinuationError as exc:
        log.error("%s", exc)
        status = 1
    _write_dict_rows(cfg.out / "diagnostics.csv", diag_rows)
    io.write_report(cfg.out / "report.csv", report_rows)
    for row in diag_rows:
        extra = ""
        if "num_sign_changes" in row:
            extra = f" sign_changes={row['num_sign_changes']} plateau_rel_std={row['plateau_relative_stddev']:.3g}"
        elif "mode_fraction" in row:
            extra = f" top2_mode_fraction={row['mode_fraction']:.3f}"
        print(f"p={row['p']:g} |s_h|_Lp={row['s_lp']:.6g} margin={row['stability_margin']:.3e}{extra}")
    return status


COMMANDS = {"solve": cmd_solve, "benchmark": cmd_benchmark, "psweep": cmd_psweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = load_config(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"pbilap: error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[cfg.command](cfg)
    except SolverError as exc:
        log.error("linear solver failure: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
