"""Writers for VTK legacy, CSV, gnuplot columns and MatrixMarket."""

from __future__ import annotations

import csv
import os

import numpy as np
from scipy.io import mmwrite

from .mesh import Mesh
from .space import FeFunction

VTK_CELL_TYPE = {1: 3, 2: 5}
FLOAT_FMT = "%.17g"


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return FLOAT_FMT % x
    return str(x)


def write_vtk(path, mesh: Mesh, point_data=None, title="pbilap"):
    """Legacy ASCII unstructured grid with optional per-vertex scalars."""
    point_data = point_data or {}
    nv, nc = mesh.num_vertices, mesh.num_cells
    nper = mesh.dim + 1
    pts = np.zeros((nv, 3))
    pts[:, : mesh.dim] = mesh.vertices
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 2.0\n")
        fh.write(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        np.savetxt(fh, pts, fmt=FLOAT_FMT)
        fh.write(f"CELLS {nc} {nc * (nper + 1)}\n")
        np.savetxt(fh, np.column_stack([np.full(nc, nper), mesh.cells]), fmt="%d")
        fh.write(f"CELL_TYPES {nc}\n")
        np.savetxt(fh, np.full(nc, VTK_CELL_TYPE[mesh.dim]), fmt="%d")
        if point_data:
            fh.write(f"POINT_DATA {nv}\n")
            for name, values in point_data.items():
                values = np.asarray(values, dtype=float)
                if values.shape != (nv,):
                    raise ValueError(f"point data {name!r} has shape {values.shape}, expected ({nv},)")
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                np.savetxt(fh, values, fmt=FLOAT_FMT)


def vertex_values(fh: FeFunction) -> np.ndarray:
    """Values at mesh vertices (vertex DOFs come first for both degrees)."""
    return fh.coeffs[: fh.space.mesh.num_vertices]


def write_function_vtk(path, fields: dict, title="pbilap"):
    """Write FeFunctions (all on one mesh) as vertex scalars."""
    mesh = next(iter(fields.values())).space.mesh
    write_vtk(path, mesh, {k: vertex_values(v) for k, v in fields.items()}, title)


def write_function_csv(path, fields: dict):
    """DOF coordinates followed by one column per field."""
    space = next(iter(fields.values())).space
    names = ["x", "y"][: space.dim] + list(fields)
    cols = [space.dof_coords[:, i] for i in range(space.dim)] + [f.coeffs for f in fields.values()]
    write_csv(path, names, zip(*cols))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_columns(path, header, rows):
    """Whitespace-separated columns for gnuplot; ``#`` header line."""
    with open(path, "w") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for row in rows:
            if row is None:
                fh.write("\n")
                continue
            fh.write(" ".join(_fmt(v) if v is not None else "nan" for v in row) + "\n")


REPORT_COLUMNS = ["p", "q", "k", "h_max", "dofs", "newton_iters_total", "residual", "converged", "wall_s"]


def report_row(p, q, k, h_max, dofs, report):
    return [
        p, q, k, h_max, dofs, report.total_iterations,
        report.final_residual, report.converged, report.wall_time,
    ]


def write_report(path, rows):
    write_csv(path, REPORT_COLUMNS, rows)


EOC_COLUMNS = ["h_max", "dofs", "err_w_Lq", "err_gradu_Lp", "eoc_w", "eoc_u"]


def write_eoc_table(path, table):
    write_csv(path, EOC_COLUMNS, table.rows())


def write_matrix_market(path, matrix, comment=""):
    mmwrite(os.fspath(path), matrix, comment=comment)
