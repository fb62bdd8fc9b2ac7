"""Analytic surface descriptors used to place refined nodes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Plane:
    point: tuple[float, float, float]
    normal: tuple[float, float, float]

    def project(self, p):
        p = np.asarray(p, dtype=float)
        n = np.asarray(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        d = (p - np.asarray(self.point, dtype=float)) @ n
        return p - np.multiply.outer(d, n)

    def normal_at(self, p):
        n = np.asarray(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        return np.broadcast_to(n, np.shape(p)).copy()


@dataclass(frozen=True)
class Spheroid:
    """Axis-aligned ellipsoid ``sum(((p - center) / semi_axes)**2) = 1``.

    ``project`` returns the closest surface point, found from the scalar
    Lagrange-multiplier equation with a safeguarded Newton iteration.
    """

    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]

    @property
    def volume(self) -> float:
        a, b, c = self.semi_axes
        return 4.0 / 3.0 * np.pi * a * b * c

    def implicit(self, p):
        q = (np.asarray(p, dtype=float) - self.center) / np.asarray(self.semi_axes)
        return np.sum(q * q, axis=-1) - 1.0

    def normal_at(self, p):
        """Unit normal pointing away from the spheroid center."""
        ax = np.asarray(self.semi_axes, dtype=float)
        g = (np.asarray(p, dtype=float) - self.center) / ax**2
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def project(self, p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        ax = np.asarray(self.semi_axes, dtype=float)
        a2 = ax**2
        q = p - np.asarray(self.center, dtype=float)
        lead = q * ax  # p_i * a_i

        def f(t):
            return np.sum((lead / (a2 + t[:, None])) ** 2, axis=1) - 1.0

        def df(t):
            return -2.0 * np.sum(lead**2 / (a2 + t[:, None]) ** 3, axis=1)

        # f is strictly decreasing on (-min(a2), inf); bracket the root there
        lo = np.full(len(q), -a2.min() * (1.0 - 1e-14))
        hi = np.maximum(np.linalg.norm(q, axis=1) * ax.max(), a2.max())
        t = np.where(f(np.zeros(len(q))) > 0, 0.5 * hi, 0.5 * lo)
        for _ in range(200):
            ft = f(t)
            lo = np.where(ft > 0, t, lo)
            hi = np.where(ft <= 0, t, hi)
            step = ft / df(t)
            tn = t - step
            bad = ~((tn > lo) & (tn < hi)) | ~np.isfinite(tn)
            tn = np.where(bad, 0.5 * (lo + hi), tn)
            if np.all(np.abs(tn - t) <= 1e-15 * (np.abs(t) + a2.max())):
                t = tn
                break
            t = tn
        out = self.center + q * a2 / (a2 + t[:, None])
        # points on a symmetry axis inside the body have no unique closest
        # point; scale radially instead
        deg = ~np.isfinite(out).all(axis=1) | (np.abs(self.implicit(out)) > 1e-8)
        if np.any(deg):
            s = np.sqrt(np.sum((q[deg] / ax) ** 2, axis=1))
            s[s == 0] = 1.0
            out[deg] = self.center + q[deg] / s[:, None]
        return out
