"""Asymptotic (undisturbed) flow: uniform stream plus an optional Airy wave."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import G, Scenario


def airy_dispersion(k: float, h: float) -> float:
    """Angular frequency of a linear wave of wavenumber k over depth h."""
    if k <= 0 or h <= 0:
        raise ValueError("k and h must be positive")
    return float(np.sqrt(G * k * np.tanh(k * h)))


def ramp(t, t_ramp):
    """sin^2 start-up factor and its time derivative; (1, 0) once t >= t_ramp."""
    if t_ramp is None or t_ramp <= 0 or t >= t_ramp:
        return 1.0, 0.0
    if t <= 0:
        return 0.0, 0.0
    s = np.pi * t / (2 * t_ramp)
    return float(np.sin(s) ** 2), float(np.pi / (2 * t_ramp) * np.sin(2 * s))


def damping_mu(x, x_d: float, L_d: float):
    """Beach coefficient: zero inside |x| <= x_d, quadratic growth beyond."""
    x = np.asarray(x, dtype=float)
    return (np.maximum(np.abs(x) - x_d, 0.0) / L_d) ** 2


def grid_velocity(zdot, on_free_surface=True):
    """Nodes move vertically only on the free surface and are fixed elsewhere."""
    zdot = np.asarray(zdot, dtype=float)
    v = np.zeros(zdot.shape + (3,))
    if on_free_surface:
        v[..., 2] = zdot
    return v


@dataclass
class FlowState:
    phi: np.ndarray
    grad: np.ndarray
    dphidt: np.ndarray
    eta: np.ndarray
    detadt: np.ndarray


@dataclass
class AsymptoticFlow:
    """phi_inf = U x + a (omega/k) cosh(k(z+h))/sinh(kh) sin(kx - omega t), times a ramp."""

    U: float = 0.0
    a: float = 0.0
    k: float = 0.0
    h: float = 50.0
    t_ramp: float | None = None

    @classmethod
    def from_scenario(cls, sc: Scenario, ramped: bool | None = None):
        ramped = sc.run.mode == "ramped" if ramped is None else ramped
        return cls(U=sc.U, a=sc.flow.a, k=sc.k, h=sc.flow.depth,
                   t_ramp=sc.run.t_ramp if ramped else None)

    @property
    def omega(self) -> float:
        return airy_dispersion(self.k, self.h) if self.a > 0 else 0.0

    @property
    def period(self) -> float:
        return 2 * np.pi / self.omega

    def _profiles(self, z):
        """cosh(k(z+h))/sinh(kh) and sinh(k(z+h))/sinh(kh) without overflow."""
        k, h = self.k, self.h
        e1 = np.exp(k * z)  # z <= 0 on the domain, so this stays bounded
        e2 = np.exp(-2 * k * (z + h))
        d = 1.0 - np.exp(-2 * k * h)
        return e1 * (1 + e2) / d, e1 * (1 - e2) / d

    def evaluate(self, points, t: float) -> FlowState:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        x, z = p[..., 0], p[..., 2]
        r, dr = ramp(t, self.t_ramp)
        phi = self.U * x
        grad = np.zeros(p.shape)
        grad[..., 0] = self.U
        dphi = np.zeros(x.shape)
        eta = np.zeros(x.shape)
        deta = np.zeros(x.shape)
        if self.a > 0:
            w, k = self.omega, self.k
            A = self.a * w / k
            C, S = self._profiles(z)
            th = k * x - w * t
            sn, cs = np.sin(th), np.cos(th)
            phi = phi + A * C * sn
            grad[..., 0] += A * k * C * cs
            grad[..., 2] += A * k * S * sn
            dphi = -A * w * C * cs
            eta = self.a * cs
            deta = self.a * w * sn
        # ramp the whole far field
        return FlowState(phi=r * phi, grad=r * grad, dphidt=dr * phi + r * dphi,
                         eta=r * eta, detadt=dr * eta + r * deta)

    def surface_eta(self, xy, t: float):
        """(eta_inf, d eta_inf/dt) at horizontal positions."""
        p = np.zeros(np.shape(xy)[:-1] + (3,))
        p[..., :2] = np.asarray(xy)[..., :2]
        s = self.evaluate(p, t)
        return s.eta, s.detadt

    def bernoulli_constant(self, xy, t: float):
        """C(t) = dphi_inf/dt + |grad phi_inf|^2/2 + g eta_inf evaluated on z = 0."""
        p = np.zeros(np.shape(xy)[:-1] + (3,))
        p[..., :2] = np.asarray(xy)[..., :2]
        s = self.evaluate(p, t)
        return s.dphidt + 0.5 * np.sum(s.grad**2, axis=-1) + G * s.eta


def eval_asymptotic(flow: AsymptoticFlow, x, t: float):
    s = flow.evaluate(np.asarray(x, dtype=float)[None], t)
    return float(s.phi[0]), s.grad[0], float(s.dphidt[0]), float(s.eta[0]), float(s.detadt[0])
