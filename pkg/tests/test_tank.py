"""The unified towing-tank residual, its Jacobian and rest-state fixed points."""
import numpy as np
import pytest

from conftest import coarse_scenario
from towtank.dae import BdfIntegrator, NewtonConfig, reinit_position, reinit_velocity, steady_solve
from towtank.tank import GeometryError, TowingTank


@pytest.fixture(scope="module")
def still_tank():
    return TowingTank(coarse_scenario(U=0.0), unsteady=True)


def smooth_state(tank, amp=0.05, seed=0):
    """A smooth non-trivial state: wavy surface, smooth potential and flux."""
    rng = np.random.default_rng(seed)
    n = tank.n
    X = tank.mesh.nodes[tank.dofs.node]
    kx, ky = rng.uniform(0.02, 0.08, 2)
    y = tank.rest_state()
    y[:n] = 0.3 * np.sin(kx * X[:, 0]) * np.cos(ky * X[:, 1]) + 0.01 * X[:, 2]
    y[n:2 * n] = 0.1 * np.cos(kx * X[:, 0] + ky * X[:, 1])
    y[2 * n + tank.fs_idx] = amp * np.cos(kx * X[tank.fs_idx, 0]) * np.sin(ky * X[tank.fs_idx, 1] + 0.3)
    yd = np.zeros_like(y)
    yd[:n] = 0.2 * np.sin(ky * X[:, 1] + kx * X[:, 0])
    yd[2 * n + tank.fs_idx] = 0.05 * np.sin(kx * X[tank.fs_idx, 0])
    return tank.apply_fixed(y), yd


def test_rest_state_residual_vanishes(still_tank):
    tk = still_tank
    y = tk.rest_state()
    F = tk.residual(np.zeros_like(y), y, 0.0)
    assert np.abs(F).max() == 0.0


def test_basin_z_perturbation_only_moves_its_row(still_tank):
    tk = still_tank
    y = tk.rest_state()
    i = int(tk.ba_idx[len(tk.ba_idx) // 2])
    y[2 * tk.n + i] += 0.01
    F = tk.residual(np.zeros_like(y), y, 0.0)
    assert F[2 * tk.n + i] == pytest.approx(0.01)
    F[2 * tk.n + i] = 0
    assert np.abs(F).max() == 0.0


def test_constant_potential_satisfies_all_bie_rows(still_tank):
    tk = still_tank
    n = tk.n
    y = tk.rest_state()
    y[:n] = 1.0
    F = tk.residual(np.zeros_like(y), y, 0.0)
    bie = np.where(tk.dirichlet, F[n:2 * n], F[:n])
    assert np.abs(bie).max() < 1e-8


def test_inverted_surface_raises_geometry_error(still_tank):
    tk = still_tank
    y = tk.rest_state()
    # the free surface below the bottom turns the wall cells inside out
    y[2 * tk.n + tk.fs_idx] = -60.0
    with pytest.raises(GeometryError):
        tk.residual(np.zeros_like(y), y, 0.0)


def test_jacobian_columns_match_finite_differences(coarse_tank):
    tk = coarse_tank
    y, yd = smooth_state(tk)
    Jy, Jyd = tk.jacobians(yd, y, 0.0)
    act = tk.active
    rng = np.random.default_rng(7)
    cols = rng.choice(len(act), 12, replace=False)
    for j in cols:
        h = 1e-6 * (1 + abs(y[act[j]]))
        e = np.zeros(tk.size)
        e[act[j]] = h
        fd = (tk.residual(yd, y + e, 0.0) - tk.residual(yd, y - e, 0.0))[act] / (2 * h)
        assert np.abs(Jy[:, j] - fd).max() <= 1e-5 * (1 + np.abs(fd).max())
        fd_d = (tk.residual(yd + e, y, 0.0) - tk.residual(yd - e, y, 0.0))[act] / (2 * h)
        assert np.abs(Jyd[:, j].toarray().ravel() - fd_d).max() <= 1e-5 * (1 + np.abs(fd_d).max())


def test_steady_solve_at_rest_returns_rest(still_tank):
    tk = still_tank
    y, stats = steady_solve(tk, tk.rest_state())
    assert np.array_equal(y, tk.rest_state())
    assert stats.iterations == 0


def test_bdf_step_keeps_rest_state(still_tank):
    tk = still_tank
    y0 = tk.rest_state()
    integ = BdfIntegrator(tk, y0, np.zeros_like(y0))
    integ.step(0.5)
    assert np.abs(integ.y - y0).max() < 1e-12


def test_reinit_at_rest(still_tank):
    tk = still_tank
    y0 = tk.rest_state()
    y, _ = reinit_position(tk, np.zeros_like(y0), y0, 0.0)
    assert np.abs(y - y0).max() < 1e-12
    yd, y2, _ = reinit_velocity(tk, y0, 0.0, tk.differential_indices())
    assert np.abs(yd).max() < 1e-12


def test_reinit_velocity_recovers_potential_rate(still_tank):
    # a perturbed free-surface potential: consistent flux and non-zero rates
    tk = still_tank
    y = tk.rest_state()
    diff = tk.differential_indices()
    fs_phi = diff[diff < tk.n]
    X = tk.mesh.nodes[tk.dofs.node]
    k = fs_phi[np.argmin(np.linalg.norm(X[fs_phi, :2] - [40.0, 20.0], axis=1))]
    y[k] = 0.1
    cfg = NewtonConfig(rtol=1e-10, atol=1e-12)
    yd, y2, _ = reinit_velocity(tk, y, 0.0, diff, config=cfg)
    F = tk.residual(yd, y2, 0.0)
    assert np.abs(F[tk.active]).max() < 1e-8
    # the differential entries stay put, the flux responds to the new potential
    assert np.array_equal(y2[diff], y[diff])
    assert np.abs(y2[tk.n + k]) > 1e-3
    assert np.abs(yd[fs_phi]).max() > 0


def test_steady_tank_ignores_the_start_up_ramp():
    sc = coarse_scenario(Fr=0.7)
    sc.run.mode = "ramped"
    assert TowingTank(sc, unsteady=True).flow.t_ramp == sc.run.t_ramp
    assert TowingTank(sc, unsteady=False).flow.t_ramp is None
