"""Newton, BDF and the reinitialization solves on scalar probes."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from towtank.dae import (BdfIntegrator, NewtonConfig, NewtonError, ScalarSystem, newton_solve, reinit_position,
                         reinit_velocity, steady_solve)


def test_newton_square_root_converges_quadratically():
    G = lambda x: x**2 - 4
    J = lambda x: np.diag(2 * x)
    # slow_ratio = 0 refreshes the Jacobian every iteration (plain Newton)
    cfg = NewtonConfig(rtol=1e-14, atol=1e-14, slow_ratio=0.0, max_jacobians=50)
    x, stats, _ = newton_solve(G, np.array([3.0]), J, cfg)
    assert x[0] == pytest.approx(2.0, abs=1e-12)
    h = np.array(stats.history)
    # quadratic: each residual is at most a constant times the square of the previous
    ratios = h[2:] / np.maximum(h[1:-1] ** 2, 1e-300)
    assert (ratios[h[2:] > 1e-12] < 1.0).all()


def test_newton_linear_problem_takes_one_iteration():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -1.0])
    x, stats, _ = newton_solve(lambda x: A @ x - b, np.zeros(2), lambda x: A)
    assert np.allclose(A @ x, b)
    assert stats.iterations == 1
    assert stats.jacobians == 1


def test_newton_reuses_factor_for_chord_steps():
    G = lambda x: x + 0.1 * np.sin(x) - 1.0
    J = lambda x: np.diag(1 + 0.1 * np.cos(x))
    x, stats, _ = newton_solve(G, np.zeros(1), J, NewtonConfig(rtol=1e-12, atol=1e-14))
    assert abs(G(x)[0]) < 1e-12
    assert stats.jacobians == 1
    assert stats.iterations > 1


def test_newton_failure_carries_best_iterate():
    G = lambda x: np.arctan(x) + 2.0  # no root
    J = lambda x: np.diag(1 / (1 + x**2))
    with pytest.raises(NewtonError) as exc:
        newton_solve(G, np.array([0.0]), J, NewtonConfig(max_iter=5))
    assert exc.value.best is not None
    assert len(exc.value.history) >= 1


def test_newton_non_finite_initial_residual():
    with pytest.raises(NewtonError):
        newton_solve(lambda x: np.full_like(x, np.nan), np.ones(1), lambda x: np.eye(1))


def decay():
    return ScalarSystem(lambda yd, y, t: yd + y, 1)


def test_bdf1_implicit_euler_closed_form():
    integ = BdfIntegrator(decay(), [1.0], [-1.0], order=1, config=NewtonConfig(rtol=1e-14, atol=1e-15))
    integ.step(0.1)
    assert integ.y[0] == pytest.approx(1 / 1.1, rel=1e-12)


def test_bdf2_exact_for_quadratics():
    sys_ = ScalarSystem(lambda yd, y, t: yd - 2 * t, 1)
    integ = BdfIntegrator(sys_, [0.0], [0.0], config=NewtonConfig(rtol=1e-14, atol=1e-15))
    # start exactly on the trajectory y = t^2 (the BDF1 start step is not exact)
    integ.y_prev, integ.h_prev = np.array([0.0]), 0.1
    integ.y, integ.t = np.array([0.01]), 0.1
    for h in (0.1, 0.05, 0.2, 0.1):
        integ.step(h)
        assert integ.y[0] == pytest.approx(integ.t**2, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 0.3))
def test_bdf2_second_order_on_decay(dt):
    def run(h, n):
        integ = BdfIntegrator(decay(), [1.0], [-1.0], config=NewtonConfig(rtol=1e-13, atol=1e-15))
        for _ in range(n):
            integ.step(h)
        return integ.y[0]

    T = 1.0
    n = max(4, int(round(T / dt)))
    e1 = abs(run(T / n, n) - np.exp(-T))
    e2 = abs(run(T / (2 * n), 2 * n) - np.exp(-T))
    assert e2 < 0.4 * e1


def test_bdf_halves_step_on_failure():
    calls = {"n": 0}

    def F(yd, y, t):
        # refuses any step that ends beyond t = 0.06 on the first attempt
        calls["n"] += 1
        if t > 0.06 and calls["n"] < 4:
            raise ArithmeticError("inverted")
        return yd + y

    integ = BdfIntegrator(ScalarSystem(F, 1), [1.0], [-1.0], order=1, dt_min=1e-3)
    h = integ.step(0.1)
    assert h < 0.1


def test_bdf_gives_up_below_dt_min():
    def F(yd, y, t):
        raise ArithmeticError("always fails")

    integ = BdfIntegrator(ScalarSystem(F, 1), [1.0], [0.0], dt_min=0.02)
    with pytest.raises(NewtonError, match="dt_min"):
        integ.step(0.1)


def test_steady_solve_ignores_time_derivative():
    sys_ = ScalarSystem(lambda yd, y, t: 5 * yd + y**3 - 8.0, 1)
    y, _ = steady_solve(sys_, np.array([1.8]), config=NewtonConfig(rtol=1e-13, atol=1e-13, max_iter=40))
    assert y[0] == pytest.approx(2.0)


def test_reinit_position_fixed_point():
    F = lambda yd, y, t: yd + 2 * y - 1
    sys_ = ScalarSystem(F, 1)
    y_bar = np.array([0.3])
    yd_bar = np.array([1 - 2 * 0.3])
    y, stats = reinit_position(sys_, yd_bar, y_bar, 0.0)
    assert y[0] == pytest.approx(0.3)
    assert stats.iterations == 0


def test_reinit_velocity_consistent_state_gives_zero_derivative():
    # y0' = -y0 + y1, 0 = y1 - y0^2 at the equilibrium (0, 0)
    F = lambda yd, y, t: np.array([yd[0] + y[0] - y[1], y[1] - y[0] ** 2])
    yd, y, _ = reinit_velocity(ScalarSystem(F, 2), np.zeros(2), 0.0, differential=[0])
    assert np.allclose(yd, 0)


def test_reinit_velocity_solves_algebraic_part():
    F = lambda yd, y, t: np.array([yd[0] + y[0] - y[1], y[1] - y[0] ** 2])
    yd, y, _ = reinit_velocity(ScalarSystem(F, 2), np.array([0.5, 0.0]), 0.0, differential=[0],
                               config=NewtonConfig(rtol=1e-12, atol=1e-14))
    assert y[1] == pytest.approx(0.25)
    assert yd[0] == pytest.approx(-0.25)
    assert y[0] == 0.5
