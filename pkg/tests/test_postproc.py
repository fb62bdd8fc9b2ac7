"""Bernoulli pressure, hull forces and the VTK / CSV writers."""
import numpy as np
import pytest

from conftest import flat_patch
from towtank.dofs import assign_double_nodes
from towtank.flow import AsymptoticFlow
from towtank.freesurface import cell_rule, surface_kinematics
from towtank.geometry import Spheroid
from towtank.mesh import Region, SurfaceMesh, refine_cells
from towtank.domain import spheroid_patch
from towtank.postproc import (ForceRecord, OutputError, bernoulli_pressure, hull_forces, integrate_forces,
                              second_difference_norm, spheroid_lift, write_cycle_table, write_force_history,
                              write_vtk)
from towtank.adaptivity import CycleRecord
from towtank.scenario import Scenario

RHO = 1000.0


def spheroid_mesh(semi=(5.0, 1.0, 1.0), centre=(0.0, 0.0, -3.0), levels=4):
    nodes, cells = spheroid_patch(centre, semi)
    geo = {int(Region.HULL): Spheroid(centre, semi)}
    m = SurfaceMesh(nodes, cells, np.full(len(cells), Region.HULL), geo)
    for _ in range(levels):
        m = refine_cells(m, np.ones(m.n_cells, bool))
    return m


def quad_points(mesh, order=4):
    rule = cell_rule(order)
    X, J, n, _ = surface_kinematics(mesh.nodes[mesh.cells], rule)
    return X, J * rule.w[None], n


# --- pressure ---------------------------------------------------------------------
def test_hydrostatic_pressure_at_rest():
    p = bernoulli_pressure([[0.0, 0.0, -5.0]], np.zeros((1, 3)), 0.0, AsymptoticFlow(), 0.0, RHO)
    assert p[0] == pytest.approx(49050.0)


def test_uniform_stream_has_zero_surface_pressure():
    p = bernoulli_pressure([[3.0, 1.0, 0.0]], np.zeros((1, 3)), 0.0, AsymptoticFlow(U=4.0), 0.0, RHO)
    assert abs(p[0]) < 1e-9


def test_stagnation_pressure():
    U = 2.9714
    p = bernoulli_pressure([[0.0, 0.0, 0.0]], np.array([[-U, 0, 0]]), 0.0, AsymptoticFlow(U=U), 0.0, RHO)
    assert p[0] == pytest.approx(0.5 * RHO * U**2)


# --- forces ------------------------------------------------------------------------
def test_uniform_pressure_gives_no_net_force():
    m = spheroid_mesh(levels=3)
    _, Jw, n = quad_points(m)
    R, L = integrate_forces(Jw, n, np.full(Jw.shape, 7.5e4))
    assert abs(R) < 1e-8 * 7.5e4 * Jw.sum() and abs(L) < 1e-8 * 7.5e4 * Jw.sum()


def test_hydrostatic_spheroid_lift():
    # normals point into the body, so buoyancy comes out positive; the
    # bilinear facets lose volume at second order in the cell size
    errs = []
    for levels in (4, 5):
        m = spheroid_mesh(levels=levels)
        X, Jw, n = quad_points(m)
        R, L = integrate_forces(Jw, n, -RHO * 9.81 * X[..., 2])
        assert abs(R) < 1e-6 * L
        errs.append(abs(L / 2.0544e5 - 1))
    assert errs[1] < 1e-2
    assert errs[0] / errs[1] > 3.5


def test_spheroid_lift_of_default_hull():
    assert spheroid_lift(Scenario()) == pytest.approx(RHO * 9.81 * 4 / 3 * np.pi * 5, rel=1e-12)


def test_rest_tank_forces(coarse_tank):
    tk = coarse_tank
    from towtank.tank import TowingTank
    from conftest import coarse_scenario

    still = TowingTank(coarse_scenario(U=0.0), tk.mesh, unsteady=False)
    y = still.rest_state()
    R, L = hull_forces(still, y, np.zeros_like(y), 0.0)
    L0 = spheroid_lift(still.scenario)
    assert abs(R) < 1e-3 * L0
    # buoyancy of the faceted hull: rho g times its enclosed volume
    m = still.mesh
    hull = SurfaceMesh(m.nodes, m.cells[m.cells_of(Region.HULL)], np.full(len(m.cells_of(Region.HULL)), 1))
    X, Jw, n = quad_points(hull, order=3)
    volume = np.einsum("mq,mq,mq->", Jw, -X[..., 2], n[..., 2])
    assert L == pytest.approx(RHO * 9.81 * volume, rel=1e-10)
    assert L == pytest.approx(L0, rel=5e-2)


def test_force_record_nondimensional():
    r = ForceRecord(1.0, 20.0, 110.0, 100.0)
    assert r.Lstar == pytest.approx(0.1) and r.Rstar == pytest.approx(0.2)


# --- writers ----------------------------------------------------------------------
def test_vtk_is_deterministic(tmp_path):
    m = flat_patch(1, 1)
    write_vtk(m, {"phi": np.zeros(4)}, tmp_path / "a.vtk")
    write_vtk(m, {"phi": np.zeros(4)}, tmp_path / "b.vtk")
    a = (tmp_path / "a.vtk").read_bytes()
    assert a == (tmp_path / "b.vtk").read_bytes()
    text = a.decode()
    assert text.startswith("# vtk DataFile Version 3.0")
    assert "CELLS 1 5\n4 0 1 2 3\n" in text
    assert "SCALARS phi double 1" in text


def test_vtk_rejects_wrong_field_length(tmp_path):
    with pytest.raises(ValueError, match="phi"):
        write_vtk(flat_patch(1, 1), {"phi": np.zeros(3)}, tmp_path / "a.vtk")


def test_vtk_unwritable_path(tmp_path):
    with pytest.raises(OutputError):
        write_vtk(flat_patch(1, 1), {}, tmp_path / "missing" / "a.vtk")


def test_vtk_hanging_node_gets_constrained_value(tmp_path):
    m = refine_cells(flat_patch(2, 1), np.array([True, False]))
    d = assign_double_nodes(m)
    free_vals = np.arange(d.n_dofs, dtype=float) ** 2
    raw = d.P @ free_vals
    field = np.zeros(m.n_nodes)
    field[d.raw_node] = raw
    (h, (a, b)), = m.hanging.items()
    write_vtk(m, {"phi": field}, tmp_path / "h.vtk")
    lines = (tmp_path / "h.vtk").read_text().splitlines()
    start = lines.index("SCALARS phi double 1") + 2
    vals = np.array(lines[start:start + m.n_nodes], float)
    assert vals[h] == pytest.approx(0.5 * (vals[a] + vals[b]))


def test_force_history_header_only(tmp_path):
    p = tmp_path / "f.csv"
    write_force_history([], p)
    assert p.read_text() == "t,R,L,Lstar,Rstar\n"


def test_force_history_rest_record_and_append(tmp_path):
    p = tmp_path / "f.csv"
    write_force_history([ForceRecord(0.0, 0.0, 2.0e5, 2.0e5)], p)
    write_force_history([ForceRecord(0.1, 1.0, 2.0e5, 2.0e5)], p, append=True)
    lines = p.read_text().splitlines()
    assert lines == ["t,R,L,Lstar,Rstar", "0,0,200000,0,0", "0.1,1,200000,0,5e-06"]


def test_cycle_table(tmp_path):
    p = tmp_path / "c.csv"
    write_cycle_table([CycleRecord(0, 10, 12, 4, 1, -1.5, 2.5, 0.25)], p)
    assert p.read_text() == "cycle,nodes,newton_iters,jacobians,drag_N,lift_N,wall_seconds\n0,10,4,1,-1.5,2.5,0.250\n"


# --- roughness ------------------------------------------------------------------
def test_second_difference_norm_separates_smooth_and_sawtooth():
    m = flat_patch(8, 8)
    x, y = m.nodes[:, 0], m.nodes[:, 1]
    assert second_difference_norm(m, 0.3 + 0.1 * x - 0.2 * y) < 0.2
    smooth = second_difference_norm(m, 0.1 * np.sin(0.3 * x))
    saw = second_difference_norm(m, 0.1 * (-1.0) ** (x + y))
    assert saw > 20 * smooth
