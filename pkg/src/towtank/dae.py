"""Newton iterations and fixed-leading-coefficient BDF integration for F(y', y, t) = 0.

The integrator talks to a *system* object providing

* ``size`` and ``active`` (indices of the non-trivial entries of y),
* ``residual(yd, y, t)`` over the full vector,
* ``jacobians(yd, y, t)`` returning (dF/dy dense, dF/dy' sparse) on the
  active rows and columns,
* ``apply_fixed(y, t)`` setting the trivially determined entries.

``ScalarSystem`` adapts plain callables to this protocol.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)


class NewtonError(RuntimeError):
    def __init__(self, msg, best=None, history=None):
        super().__init__(msg)
        self.best = best
        self.history = history or []


@dataclass
class NewtonConfig:
    rtol: float = 1e-5
    atol: float = 1e-10
    max_iter: int = 12
    slow_ratio: float = 0.5  # refactor the Jacobian when |G| drops slower than this
    max_jacobians: int = 4


@dataclass
class NewtonStats:
    iterations: int = 0
    jacobians: int = 0
    history: list = field(default_factory=list)


class _Factor:
    """LU factors of an iteration matrix, reusable across solves (chord Newton)."""

    def __init__(self, A):
        A = A.toarray() if sp.issparse(A) else np.asarray(A)
        self.n = A.shape[0]
        if self.n:
            self.lu = sla.lu_factor(A, check_finite=False)
            d = np.abs(np.diag(self.lu[0]))
            if not np.all(np.isfinite(d)) or d.min() <= 1e-300:
                raise np.linalg.LinAlgError("singular iteration matrix")

    def solve(self, b):
        if not self.n:
            return b
        return sla.lu_solve(self.lu, b, check_finite=False)


def newton_solve(G: Callable, x0, jac: Callable, config: NewtonConfig | None = None,
                 factor: _Factor | None = None, G0_norm=None):
    """Chord Newton: reuse ``factor`` while the residual keeps dropping fast enough.

    Returns (x, stats, factor).  Converged when |G|_inf <= max(rtol |G(x0)|_inf, atol),
    or when the update no longer changes x at round-off level.
    """
    cfg = config or NewtonConfig()
    stats = NewtonStats()
    x = np.array(x0, dtype=float, copy=True)
    try:
        g = G(x)
    except (ArithmeticError, ValueError) as exc:
        raise NewtonError(f"residual failed at the initial guess: {exc}", x, []) from exc
    r = float(np.max(np.abs(g))) if len(g) else 0.0
    stats.history.append(r)
    ref = r if G0_norm is None else G0_norm
    tol = max(cfg.rtol * ref, cfg.atol)
    if not np.isfinite(r):
        raise NewtonError("residual is not finite at the initial guess", x, stats.history)
    best, best_r = x.copy(), r
    fresh = False
    while r > tol:
        if stats.iterations >= cfg.max_iter:
            raise NewtonError(f"Newton did not converge in {cfg.max_iter} iterations "
                              f"(|G| {best_r:.3e}, target {tol:.3e})", best, stats.history)
        if factor is None:
            factor = _Factor(jac(x))
            stats.jacobians += 1
            fresh = True
        dx = factor.solve(g)
        x_new = x - dx
        try:
            g_new = G(x_new)
        except (ArithmeticError, ValueError) as exc:
            # a trial point left the admissible set (e.g. an inverted cell)
            if fresh:
                raise NewtonError(f"residual failed during Newton: {exc}", best, stats.history) from exc
            factor = None
            continue
        r_new = float(np.max(np.abs(g_new)))
        stats.iterations += 1
        stats.history.append(r_new)
        log.debug("newton it=%d |G|=%.3e jac=%d", stats.iterations, r_new, stats.jacobians)
        if not np.isfinite(r_new):
            raise NewtonError("residual became non-finite", best, stats.history)
        stalled = np.max(np.abs(dx)) <= 1e-13 * (1.0 + np.max(np.abs(x)))
        if r_new > cfg.slow_ratio * r and not stalled:
            if fresh and r_new >= r:
                raise NewtonError("Newton diverged with a fresh Jacobian", best, stats.history)
            if stats.jacobians >= cfg.max_jacobians:
                raise NewtonError("too many Jacobian refreshes", best, stats.history)
            if r_new < r:
                x, g, r = x_new, g_new, r_new
            factor = None
            fresh = False
            continue
        x, g, r = x_new, g_new, r_new
        fresh = False
        if r < best_r:
            best, best_r = x.copy(), r
        if stalled:
            break
    return x, stats, factor


# ----------------------------------------------------------------------------
@dataclass
class StepRecord:
    t: float
    dt: float
    order: int
    iterations: int
    jacobians: int


class BdfIntegrator:
    """BDF1 start, BDF2 afterwards, variable step with step halving on failure."""

    def __init__(self, system, y0, yd0, t0=0.0, order=2, config: NewtonConfig | None = None,
                 dt_min=1e-4, dt_max=1.0):
        self.sys = system
        self.y = system.apply_fixed(np.asarray(y0, dtype=float), t0)
        self.yd = np.asarray(yd0, dtype=float).copy()
        self.t = float(t0)
        self.order = order
        self.cfg = config or NewtonConfig()
        self.dt_min, self.dt_max = dt_min, dt_max
        self.y_prev = None
        self.h_prev = None
        self._factor = None
        self._factor_c = None
        self.records: list[StepRecord] = []
        self.total_jacobians = 0

    def _coefficients(self, h):
        """Leading coefficient c and the history part beta with y' = c y_{n+1} + beta."""
        if self.order == 1 or self.y_prev is None:
            return 1.0 / h, -self.y / h, 1
        w = h / self.h_prev
        c = (1 + 2 * w) / ((1 + w) * h)
        beta = (-(1 + w) * self.y + w * w / (1 + w) * self.y_prev) / h
        return c, beta, 2

    def step(self, dt):
        """Advance by dt (halving on failure); returns the step actually taken."""
        h = min(dt, self.dt_max)
        while True:
            try:
                self._attempt(h)
                return h
            except NewtonError as exc:
                self._factor = None
                h *= 0.5
                log.info("step rejected at t=%.4f (%s); dt -> %.3g", self.t, exc, h)
                if h < self.dt_min:
                    raise NewtonError(f"time step fell below dt_min at t={self.t:.6g}: {exc}",
                                      exc.best, exc.history) from exc

    def _attempt(self, h):
        sys = self.sys
        act = sys.active
        c, beta, order = self._coefficients(h)
        t1 = self.t + h
        pred = sys.apply_fixed(self.y + h * self.yd, t1)

        def full(x):
            y = pred.copy()
            y[act] = x
            return y

        def G(x):
            y = full(x)
            try:
                return sys.residual(c * y + beta, y, t1)[act]
            except ArithmeticError:
                raise
            except ValueError as exc:
                raise ArithmeticError(str(exc)) from exc

        def jac(x):
            y = full(x)
            Jy, Jyd = sys.jacobians(c * y + beta, y, t1)
            return Jy + c * Jyd.toarray()

        factor = self._factor if self._factor_c is not None and np.isclose(self._factor_c, c) else None
        x, stats, factor = newton_solve(G, pred[act], jac, self.cfg, factor)
        y1 = full(x)
        self._factor, self._factor_c = factor, c
        self.total_jacobians += stats.jacobians
        self.y_prev, self.h_prev = self.y, h
        self.y, self.yd, self.t = y1, c * y1 + beta, t1
        self.records.append(StepRecord(t1, h, order, stats.iterations, stats.jacobians))
        log.info("step t=%.4f dt=%.4g order=%d newton=%d jac=%d", t1, h, order,
                 stats.iterations, stats.jacobians)


# ----------------------------------------------------------------------------
def steady_solve(system, y0, t=0.0, config: NewtonConfig | None = None):
    """Solve F(0, y, t) = 0: the unsteady residual with every time derivative pinned to zero."""
    act = system.active
    base = system.apply_fixed(np.asarray(y0, dtype=float), t)
    zero = np.zeros(system.size)

    def full(x):
        y = base.copy()
        y[act] = x
        return y

    def G(x):
        return system.residual(zero, full(x), t)[act]

    def jac(x):
        return system.jacobians(zero, full(x), t)[0]

    x, stats, _ = newton_solve(G, base[act], jac, config)
    return full(x), stats


def reinit_position(system, yd_bar, y_guess, t, config: NewtonConfig | None = None):
    """Solve F(yd_bar, y, t) = 0 for y with the time derivative held fixed."""
    act = system.active
    base = system.apply_fixed(np.asarray(y_guess, dtype=float), t)
    yd_bar = np.asarray(yd_bar, dtype=float)

    def full(x):
        y = base.copy()
        y[act] = x
        return y

    x, stats, _ = newton_solve(lambda x: system.residual(yd_bar, full(x), t)[act], base[act],
                               lambda x: system.jacobians(yd_bar, full(x), t)[0], config)
    return full(x), stats


def reinit_velocity(system, y_bar, t, differential, yd_guess=None, config: NewtonConfig | None = None):
    """Consistent y' for a given state, in the calc-IC style.

    ``differential`` lists the entries of y whose derivatives appear in F.
    Their derivatives and every other active (algebraic) entry of y are
    solved for; the differential entries of y stay at ``y_bar``.
    """
    act = system.active
    y_bar = system.apply_fixed(np.asarray(y_bar, dtype=float), t)
    differential = np.asarray(differential)
    is_diff = np.isin(act, differential)
    alg = act[~is_diff]
    yd0 = np.zeros(system.size) if yd_guess is None else np.asarray(yd_guess, dtype=float).copy()
    nd = int(is_diff.sum())

    def unpack(x):
        yd = yd0.copy()
        y = y_bar.copy()
        yd[differential] = x[:nd]
        y[alg] = x[nd:]
        return yd, y

    def G(x):
        yd, y = unpack(x)
        return system.residual(yd, y, t)[act]

    def jac(x):
        yd, y = unpack(x)
        Jy, Jyd = system.jacobians(yd, y, t)
        pos = np.searchsorted(act, differential)
        return np.hstack([Jyd[:, pos].toarray(), Jy[:, ~is_diff]])

    x0 = np.concatenate([yd0[differential], y_bar[alg]])
    x, stats, _ = newton_solve(G, x0, jac, config)
    yd, y = unpack(x)
    return yd, y, stats


# ----------------------------------------------------------------------------
class ScalarSystem:
    """Adapter for small explicit problems F(yd, y, t) (tests and probes)."""

    def __init__(self, F: Callable, n: int, eps=1e-7):
        self.F = F
        self.size = n
        self.active = np.arange(n)
        self.eps = eps

    def apply_fixed(self, y, t=0.0):
        return np.array(y, dtype=float, copy=True)

    def residual(self, yd, y, t):
        return np.atleast_1d(np.asarray(self.F(yd, y, t), dtype=float))

    def jacobians(self, yd, y, t):
        n = self.size
        Jy = np.zeros((n, n))
        Jyd = np.zeros((n, n))
        for j in range(n):
            h = self.eps * (1 + abs(y[j]))
            e = np.zeros(n)
            e[j] = h
            Jy[:, j] = (self.residual(yd, y + e, t) - self.residual(yd, y - e, t)) / (2 * h)
            Jyd[:, j] = (self.residual(yd + e, y, t) - self.residual(yd - e, y, t)) / (2 * h)
        return Jy, sp.csr_matrix(Jyd)
