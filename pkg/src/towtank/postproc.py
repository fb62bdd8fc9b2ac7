"""Hull pressure, forces and output writers (legacy VTK, CSV)."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .flow import AsymptoticFlow
from .freesurface import cell_rule, gradient_at, surface_kinematics
from .mesh import Region, SurfaceMesh
from .scenario import G


class OutputError(OSError):
    pass


@dataclass
class ForceRecord:
    t: float
    R: float
    L: float
    L0: float

    @property
    def Lstar(self):
        return (self.L - self.L0) / self.L0

    @property
    def Rstar(self):
        return self.R / self.L0


def hydrostatic_lift(rho, volume, g=G):
    return rho * g * volume


def spheroid_lift(scenario):
    """L0 = rho g V for the analytic prolate spheroid of the scenario."""
    h = scenario.hull
    volume = 4.0 / 3.0 * np.pi * 0.5 * h.length * h.radius ** 2
    return hydrostatic_lift(scenario.flow.rho, volume)


def bernoulli_pressure(points, grad_phi, dphi_dt, flow: AsymptoticFlow, t, rho=1000.0, g=G):
    """p = rho (C - dphi/dt - dphi_inf/dt - |grad phi_inf + grad phi|^2 / 2 - g z).

    ``dphi_dt`` is the Eulerian derivative, which equals the ALE one on the
    fixed hull.  C(t) is evaluated on z = 0 above each point.
    """
    points = np.asarray(points, dtype=float)
    st = flow.evaluate(points, t)
    C = flow.bernoulli_constant(points, t)
    u = st.grad + np.asarray(grad_phi)
    return rho * (C - dphi_dt - st.dphidt - 0.5 * np.sum(u * u, -1) - g * points[..., 2])


def integrate_forces(J_w, normals, pressure):
    """F = sum p n dS over quadrature points; returns (R, L) = (-F_x, F_z)."""
    F = np.einsum("mq,mq,mqd->d", J_w, pressure, normals)
    return -float(F[0]), float(F[2])


def hull_forces(tank, y, yd, t, rho=None):
    """Resistance and lift on the hull for a tank state."""
    rho = tank.scenario.flow.rho if rho is None else rho
    mesh, d = tank.mesh, tank.dofs
    phi, gam, z = tank.split(np.asarray(y, dtype=float))
    phid = tank.split(np.asarray(yd, dtype=float))[0]
    X = tank.positions(z)
    cells = mesh.cells_of(Region.HULL)
    rule = cell_rule(tank.scenario.solver.fem_order)
    Xq, J, n, gpsi = surface_kinematics(X[mesh.cells[cells]], rule)
    ids = d.cell_dofs[cells]
    raw_phi, raw_gam, raw_pd = d.P @ phi, d.P @ gam, d.P @ phid
    gphi = gradient_at(raw_phi[ids], raw_gam[ids], n, gpsi, rule.psi)
    pd = raw_pd[ids] @ rule.psi.T
    p = bernoulli_pressure(Xq, gphi, pd, tank.flow, t, rho)
    return integrate_forces(J * rule.w[None], n, p)


# ----------------------------------------------------------------------------
def _fmt(v):
    s = "%.9g" % v
    return "0" if s == "-0" else s


def write_vtk(mesh: SurfaceMesh, fields: dict, path, nodes=None, title="towtank"):
    """Legacy ASCII unstructured grid with quad cells and point data.

    Scalar fields have one value per node, vector fields (n, 3).  Hanging
    nodes are written at their constrained positions with whatever values
    the caller supplies (constrained values, when built from a DofLayout).
    """
    X = mesh.nodes if nodes is None else np.asarray(nodes)
    n = len(X)
    for name, f in fields.items():
        if len(f) != n:
            raise ValueError(f"field {name!r} has {len(f)} values, mesh has {n} nodes")
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [" ".join(_fmt(c) for c in p) for p in X]
    m = mesh.n_cells
    lines.append(f"CELLS {m} {5 * m}")
    lines += ["4 " + " ".join(str(int(i)) for i in c) for c in mesh.cells]
    lines.append(f"CELL_TYPES {m}")
    lines += ["9"] * m
    lines.append(f"CELL_DATA {m}")
    lines.append("SCALARS region int 1")
    lines.append("LOOKUP_TABLE default")
    lines += [str(int(r)) for r in mesh.region]
    if fields:
        lines.append(f"POINT_DATA {n}")
    for name, f in fields.items():
        f = np.asarray(f, dtype=float)
        if f.ndim == 1:
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [_fmt(v) for v in f]
        else:
            lines.append(f"VECTORS {name} double")
            lines += [" ".join(_fmt(c) for c in v) for v in f]
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


FORCE_HEADER = ["t", "R", "L", "Lstar", "Rstar"]


def write_force_history(records, path, append=False):
    """CSV with header t,R,L,Lstar,Rstar; with ``append`` the header is written once."""
    path = Path(path)
    new = not (append and path.exists())
    try:
        with open(path, "a" if append else "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(FORCE_HEADER)
            for r in records:
                w.writerow([_fmt(r.t), _fmt(r.R), _fmt(r.L), _fmt(r.Lstar), _fmt(r.Rstar)])
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


CYCLE_HEADER = ["cycle", "nodes", "newton_iters", "jacobians", "drag_N", "lift_N", "wall_seconds"]


def write_cycle_table(rows, path):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CYCLE_HEADER)
            for r in rows:
                w.writerow([r.cycle, r.nodes, r.newton_iters, r.jacobians, _fmt(r.drag),
                            _fmt(r.lift), "%.3f" % r.wall_seconds])
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def state_fields(tank, y, yd=None):
    """Nodal fields for VTK: eta, phi, gamma (free-surface region values win at double nodes)."""
    mesh, d = tank.mesh, tank.dofs
    phi, gam, z = tank.split(np.asarray(y, dtype=float))
    out = {}
    order = np.argsort(d.raw_region == Region.FREE_SURFACE, kind="stable")
    for name, v in (("phi", d.P @ phi), ("gamma", d.P @ gam)):
        f = np.zeros(mesh.n_nodes)
        f[d.raw_node[order]] = v[order]  # later writes (free surface) win
        out[name] = f
    X = tank.positions(z)
    eta = np.where(np.isin(np.arange(mesh.n_nodes), tank.moving_nodes), X[:, 2], 0.0)
    out["eta"] = eta
    return X, out


def ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {path}: {exc}") from exc


def second_difference_norm(mesh: SurfaceMesh, heights, region=Region.FREE_SURFACE):
    """RMS of the graph Laplacian of nodal heights over the edges of ``region``.

    Smooth waves give small values; node-to-node saw-tooth modes give values
    of the order of the saw-tooth amplitude.  ``heights`` is indexed by node.
    """
    heights = np.asarray(heights, dtype=float)
    cells = mesh.cells[mesh.cells_of(region)]
    a = cells.ravel()
    b = np.roll(cells, -1, axis=1).ravel()
    edges = np.unique(np.sort(np.column_stack([a, b]), axis=1), axis=0)
    lap = np.zeros(mesh.n_nodes)
    diff = heights[edges[:, 0]] - heights[edges[:, 1]]
    np.add.at(lap, edges[:, 0], diff)
    np.add.at(lap, edges[:, 1], -diff)
    nodes = np.unique(cells)
    return float(np.sqrt(np.mean(lap[nodes] ** 2)))
