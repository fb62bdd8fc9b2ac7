"""Quadrature rules on the reference square [0, 1]^2."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 2) reference coordinates (u, v)
    weights: np.ndarray  # (nq,)
    kind: str = "gauss"
    order: int = 0
    singular_vertex: int | None = None

    def __len__(self):
        return len(self.weights)


def gauss_1d(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_rule(order: int) -> QuadratureRule:
    """Tensor Gauss-Legendre rule with ``order`` points per direction."""
    x, w = gauss_1d(order)
    u, v = np.meshgrid(x, x, indexing="ij")
    pts = np.column_stack([u.ravel(), v.ravel()])
    wts = np.outer(w, w).ravel()
    return QuadratureRule(pts, wts, "gauss", order)


_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def singular_rule(order: int, vertex: int) -> QuadratureRule:
    """Rule for integrands with a 1/r singularity at a corner of the square.

    The square is cut into the two triangles that have the singular corner
    as apex.  Each triangle is parameterised by a collapsed (Duffy) map of
    the unit square, whose Jacobian vanishes linearly at the apex and cancels
    the singularity, and then integrated with tensor Gauss points.
    """
    x, w = gauss_1d(order)
    s, t = np.meshgrid(x, x, indexing="ij")
    s, t = s.ravel(), t.ravel()
    ws = np.outer(w, w).ravel()
    apex = _CORNERS[vertex]
    pts, wts = [], []
    for k in (1, 2):
        b = _CORNERS[(vertex + k) % 4]
        c = _CORNERS[(vertex + k + 1) % 4]
        # p = apex + s * (b - apex + t * (c - b)), |dp/d(s,t)| = s * |(b-a) x (c-b)|
        e1 = b - apex
        e2 = c - b
        area2 = abs(e1[0] * e2[1] - e1[1] * e2[0])
        p = apex + s[:, None] * (e1 + t[:, None] * e2)
        pts.append(p)
        wts.append(ws * s * area2)
    return QuadratureRule(np.vstack(pts), np.concatenate(wts), "lachat-watson", order, vertex)


def shape_functions(u, v):
    """Bilinear shape functions and derivatives, vertex order (0,0),(1,0),(1,1),(0,1)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    psi = np.stack([(1 - u) * (1 - v), u * (1 - v), u * v, (1 - u) * v], axis=-1)
    dpu = np.stack([-(1 - v), (1 - v), v, -v], axis=-1)
    dpv = np.stack([-(1 - u), -u, u, (1 - u)], axis=-1)
    return psi, dpu, dpv
