"""Refinement cycles driven by a Kelly indicator on the free-surface elevation."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .dae import BdfIntegrator, NewtonConfig, reinit_position, steady_solve
from .dofs import DofLayout
from .mesh import Region, SurfaceMesh, _edge, refine_cells
from .quadrature import gauss_1d

log = logging.getLogger(__name__)


# ----------------------------------------------------------------------------
def _inverse_bilinear(Xc, p, iters=20):
    """Reference (u, v) of the planar point p (x, y) inside the planar cell Xc (4, 2)."""
    u = np.array([0.5, 0.5])
    for _ in range(iters):
        s, t = u
        psi = np.array([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t])
        du = np.array([-(1 - t), 1 - t, t, -t])
        dv = np.array([-(1 - s), -s, s, 1 - s])
        r = psi @ Xc - p
        Jm = np.column_stack([du @ Xc, dv @ Xc])
        step = np.linalg.solve(Jm, r)
        u = u - step
        if np.abs(step).max() < 1e-14:
            break
    return u


def _grad_xy(Xc, vals, uv):
    """Horizontal gradient of the bilinear interpolant of ``vals`` at reference point uv."""
    s, t = uv
    du = np.array([-(1 - t), 1 - t, t, -t])
    dv = np.array([-(1 - s), -s, s, 1 - s])
    Jm = np.column_stack([du @ Xc, dv @ Xc])  # d(x,y)/d(u,v)
    g_uv = np.array([du @ vals, dv @ vals])
    return np.linalg.solve(Jm.T, g_uv)


def kelly_indicator(mesh: SurfaceMesh, dofs: DofLayout, eta, region=Region.FREE_SURFACE, npts=3):
    """Per-cell (h_K / 24) * integral over the cell boundary of [d eta / d n_edge]^2.

    ``eta`` holds one value per free DOF (only entries of ``region`` are
    used).  Jumps are measured in the horizontal plane; boundary edges carry
    no jump.  Cells outside ``region`` get 0.
    """
    eta_raw = dofs.P @ np.asarray(eta, dtype=float)
    cells = mesh.cells_of(region)
    xy = mesh.nodes[:, :2]
    vals = eta_raw[dofs.cell_dofs[cells]]
    owner = {}
    for i, c in enumerate(cells):
        cv = mesh.cells[c]
        for k in range(4):
            owner.setdefault(_edge(cv[k], cv[(k + 1) % 4]), []).append(i)
    gp, gw = gauss_1d(npts)
    out = np.zeros(mesh.n_cells)
    diag = mesh.diagonals()
    for i, c in enumerate(cells):
        cv = mesh.cells[c]
        Xc = xy[cv]
        acc = 0.0
        for k in range(4):
            a, b = cv[k], cv[(k + 1) % 4]
            m = mesh.edge_mid.get(_edge(a, b))
            segs = [(a, m), (m, b)] if (m is not None and mesh.used[m] and m in mesh.hanging) else [(a, b)]
            for p, q in segs:
                partners = [j for j in owner.get(_edge(p, q), []) if j != i]
                if not partners:
                    # a half edge of a coarser neighbour
                    for h, o in ((p, q), (q, p)):
                        if h in mesh.hanging and o in mesh.hanging[h]:
                            partners = [j for j in owner.get(_edge(*mesh.hanging[h]), []) if j != i]
                if not partners:
                    continue
                j = partners[0]
                Xo = xy[mesh.cells[cells[j]]]
                e = xy[q] - xy[p]
                length = float(np.hypot(*e))
                nrm = np.array([e[1], -e[0]]) / length
                for s, w in zip(gp, gw):
                    pt = xy[p] + s * e
                    g1 = _grad_xy(Xc, vals[i], _inverse_bilinear(Xc, pt))
                    g2 = _grad_xy(Xo, vals[j], _inverse_bilinear(Xo, pt))
                    acc += w * length * float((g1 - g2) @ nrm) ** 2
        out[c] = diag[c] / 24.0 * acc
    return out


def mark_top_fraction(errors, fraction, candidates):
    """Flag ceil(fraction * len(candidates)) candidate cells with the largest errors.

    Ties go to the lowest cell id.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    candidates = np.asarray(candidates)
    errors = np.asarray(errors, dtype=float)
    count = math.ceil(round(fraction * len(candidates), 12))
    order = np.lexsort((candidates, -errors[candidates]))
    flags = np.zeros(len(errors), dtype=bool)
    flags[candidates[order[:count]]] = True
    return flags


# ----------------------------------------------------------------------------
def transfer_raw(old_mesh: SurfaceMesh, old: DofLayout, new_mesh: SurfaceMesh, new: DofLayout, raw_values):
    """Interpolate raw DOF values from ``old`` to ``new``.

    Surviving (node, region) pairs keep their value, edge midpoints take the
    mean of their edge ends and cell centres the mean of the parent cell's
    four corners (the bilinear interpolant at those points).
    """
    if new_mesh.n_nodes < old_mesh.n_nodes or not np.allclose(new_mesh.ideal[:old_mesh.n_nodes], old_mesh.ideal):
        raise ValueError("meshes are not related by refinement")
    raw_values = np.atleast_2d(np.asarray(raw_values, dtype=float).T).T  # (n_raw, k)
    lookup = {(int(n), int(r)): i for i, (n, r) in enumerate(zip(old.raw_node, old.raw_region))}
    centre_parent = {}
    kids = np.flatnonzero(new_mesh.child_slot == 0)
    for c in kids:
        centre_parent[int(new_mesh.cells[c, 2])] = int(new_mesh.parent_cell[c])
    memo = {}

    def value(node, reg):
        key = (node, reg)
        if key in memo:
            return memo[key]
        if key in lookup:
            v = raw_values[lookup[key]]
        elif node < len(new_mesh.mid_parent) and new_mesh.mid_parent[node, 0] >= 0:
            a, b = new_mesh.mid_parent[node]
            v = 0.5 * (value(int(a), reg) + value(int(b), reg))
        elif node in centre_parent:
            pc = old_mesh.cells[centre_parent[node]]
            v = 0.25 * sum(value(int(p), reg) for p in pc)
        else:
            raise ValueError(f"no transfer source for node {node} in region {reg}")
        memo[key] = v
        return v

    out = np.array([value(int(n), int(r)) for n, r in zip(new.raw_node, new.raw_region)])
    return out.reshape(len(new.raw_node), -1)


def transfer_solution(old_tank, new_tank, y, yd):
    """Carry (y, y') from one tank to a refined one; basin z is reset to the new z_ref."""
    outs = []
    for vec in (y, yd):
        phi, gam, z = old_tank.split(np.asarray(vec, dtype=float))
        raw = np.column_stack([old_tank.dofs.P @ phi, old_tank.dofs.P @ gam, old_tank.dofs.P @ z])
        new_raw = transfer_raw(old_tank.mesh, old_tank.dofs, new_tank.mesh, new_tank.dofs, raw)
        free = new_raw[new_tank.dofs.free]
        outs.append(np.concatenate([free[:, 0], free[:, 1], free[:, 2]]))
    y_new, yd_new = outs
    n = new_tank.n
    y_new[2 * n + new_tank.ba_idx] = new_tank.z_ref[new_tank.ba_idx]
    yd_new[2 * n + new_tank.ba_idx] = 0.0
    return y_new, yd_new


# ----------------------------------------------------------------------------
@dataclass
class CycleRecord:
    cycle: int
    nodes: int
    dofs: int
    newton_iters: int
    jacobians: int
    drag: float
    lift: float
    wall_seconds: float


def refine_free_surface(tank, y, fraction):
    eta = tank.split(y)[2]
    err = kelly_indicator(tank.mesh, tank.dofs, eta)
    flags = mark_top_fraction(err, fraction, tank.mesh.cells_of(Region.FREE_SURFACE))
    return refine_cells(tank.mesh, flags)


def run_cycles(scenario, n_cycles, mode="steady", mesh=None, on_cycle=None, on_step=None, config=None):
    """Solve, estimate, mark, refine and transfer, n_cycles times (plus the final solve).

    In unsteady modes the interval [0, t_end] is split into n_cycles + 1
    equal windows with a refinement pause between them.  ``on_cycle(rec,
    tank, y, yd)`` runs after each solve and ``on_step(tank, integrator)``
    after each time step.  Returns (records, tank, y, yd) for the last cycle.
    """
    from .postproc import hull_forces
    from .tank import TowingTank

    sc = scenario
    cfg = config or NewtonConfig(rtol=sc.solver.rtol, atol=sc.solver.atol, max_iter=sc.solver.max_iter)
    steady = mode == "steady"
    tank = TowingTank(sc, mesh, unsteady=not steady)
    y = tank.rest_state()
    yd = np.zeros_like(y)
    records = []
    t = 0.0
    window = sc.run.t_end / (n_cycles + 1)
    for cycle in range(n_cycles + 1):
        t0 = time.perf_counter()
        if steady:
            y, stats = steady_solve(tank, y, 0.0, cfg)
            iters, jacs = stats.iterations, stats.jacobians
        else:
            integ = BdfIntegrator(tank, y, yd, t, sc.solver.bdf_order, cfg, sc.solver.dt_min, sc.solver.dt_max)
            t_stop = t + window
            while integ.t < t_stop - 1e-12:
                integ.step(min(sc.solver.dt, t_stop - integ.t))
                if on_step is not None:
                    on_step(tank, integ)
            y, yd, t = integ.y, integ.yd, integ.t
            iters = sum(r.iterations for r in integ.records)
            jacs = integ.total_jacobians
        R, L = hull_forces(tank, y, yd, t)
        rec = CycleRecord(cycle, tank.mesh.n_nodes, tank.n, iters, jacs, R, L, time.perf_counter() - t0)
        records.append(rec)
        log.info("cycle %d nodes=%d dofs=%d newton=%d jac=%d R=%.4f L=%.4f", cycle, rec.nodes, rec.dofs,
                 iters, jacs, R, L)
        if on_cycle is not None:
            on_cycle(rec, tank, y, yd)
        if cycle == n_cycles:
            break
        new_mesh = refine_free_surface(tank, y, sc.refinement.fraction)
        new_tank = TowingTank(sc, new_mesh, unsteady=not steady, flow=tank.flow)
        y, yd = transfer_solution(tank, new_tank, y, yd)
        tank = new_tank
        if not steady:
            y, _ = reinit_position(tank, yd, y, t, cfg)
    return records, tank, y, yd
