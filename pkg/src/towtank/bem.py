"""Collocation BEM for the Laplace equation on the tank boundary.

For a collocation point x_i the boundary integral equation reads

    alpha_i phi_i + sum_j N_ij phi_j - sum_j D_ij gamma_j = 0,

with N_ij the integral of dG/dn_y psi_j and D_ij the integral of G psi_j,
G = 1 / (4 pi |y - x|).  alpha_i is taken from the rigid-mode identity
alpha_i = -sum_j N_ij (a constant potential has no flux).

Matrices are assembled per collocation *node* (double nodes share a row),
with columns over raw DOFs; ``P`` condenses hanging nodes afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.linalg as sla

from .dofs import DofLayout
from .mesh import MeshError, SurfaceMesh
from .quadrature import gauss_rule, singular_rule

FOUR_PI = 4.0 * np.pi

FAR, NEAR = 0, 1  # kinds >= 2 mean singular at vertex kind - 2


class BemError(RuntimeError):
    pass


def green_kernel(x, y, n_y, length_scale=1.0):
    """G(x, y) and dG/dn_y for the free-space Laplace Green's function."""
    r = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    d = float(np.linalg.norm(r))
    if d < 1e-14 * length_scale:
        raise BemError("collocation point coincides with integration point; use the singular rule")
    G = 1.0 / (FOUR_PI * d)
    dG = -float(np.dot(r, n_y)) / (FOUR_PI * d**3)
    return G, dG


@dataclass
class BemRules:
    far_pts: np.ndarray
    far_w: np.ndarray
    near_pts: np.ndarray
    near_w: np.ndarray
    sing_pts: np.ndarray  # (4, ns, 2)
    sing_w: np.ndarray  # (4, ns)

    @classmethod
    def build(cls, far=4, near=8, singular=6):
        f, n = gauss_rule(far), gauss_rule(near)
        s = [singular_rule(singular, k) for k in range(4)]
        return cls(f.points, f.weights, n.points, n.weights,
                   np.stack([r.points for r in s]), np.stack([r.weights for r in s]))


@dataclass
class BemMatrices:
    N: np.ndarray  # (n_rows, n_raw), rows = collocation nodes
    D: np.ndarray
    alpha: np.ndarray  # (n_rows,)

    def condensed(self, dofs: DofLayout):
        """Per-DOF matrices over free DOFs: rows repeated for double nodes."""
        N = (dofs.P.T @ self.N.T).T[dofs.dof_row]
        D = (dofs.P.T @ self.D.T).T[dofs.dof_row]
        return np.asarray(N), np.asarray(D), self.alpha[dofs.dof_row]


def rule_kinds(mesh: SurfaceMesh, coll_nodes, near_factor=2.0, nodes=None):
    """Quadrature rule per (collocation node, cell) pair."""
    X = mesh.nodes if nodes is None else nodes
    Xc = X[mesh.cells]
    cen = Xc.mean(axis=1)
    diag = np.maximum(np.linalg.norm(Xc[:, 2] - Xc[:, 0], axis=1),
                      np.linalg.norm(Xc[:, 3] - Xc[:, 1], axis=1))
    xr = X[coll_nodes]
    kind = np.zeros((len(coll_nodes), mesh.n_cells), dtype=np.int8)
    for start in range(0, len(coll_nodes), 512):
        sl = slice(start, start + 512)
        d = np.linalg.norm(xr[sl, None, :] - cen[None], axis=2)
        kind[sl][d < near_factor * diag[None]] = NEAR
    for k in range(4):
        pos = np.searchsorted(coll_nodes, mesh.cells[:, k])
        pos = np.minimum(pos, len(coll_nodes) - 1)
        hit = coll_nodes[pos] == mesh.cells[:, k]
        kind[pos[hit], np.flatnonzero(hit)] = 2 + k
    return kind


# ----------------------------------------------------------------------------
# numba kernels
@numba.njit(cache=True, fastmath=False)
def _shape(u, v, psi, dpu, dpv):
    psi[0] = (1 - u) * (1 - v)
    psi[1] = u * (1 - v)
    psi[2] = u * v
    psi[3] = (1 - u) * v
    dpu[0] = -(1 - v)
    dpu[1] = 1 - v
    dpu[2] = v
    dpu[3] = -v
    dpv[0] = -(1 - u)
    dpv[1] = -u
    dpv[2] = u
    dpv[3] = 1 - u


@numba.njit(cache=True)
def _pair(x, Xc, pts, w, outN, outD):
    psi = np.empty(4)
    dpu = np.empty(4)
    dpv = np.empty(4)
    for q in range(w.shape[0]):
        _shape(pts[q, 0], pts[q, 1], psi, dpu, dpv)
        y0 = y1 = y2 = 0.0
        a0 = a1 = a2 = 0.0
        b0 = b1 = b2 = 0.0
        for k in range(4):
            y0 += psi[k] * Xc[k, 0]
            y1 += psi[k] * Xc[k, 1]
            y2 += psi[k] * Xc[k, 2]
            a0 += dpu[k] * Xc[k, 0]
            a1 += dpu[k] * Xc[k, 1]
            a2 += dpu[k] * Xc[k, 2]
            b0 += dpv[k] * Xc[k, 0]
            b1 += dpv[k] * Xc[k, 1]
            b2 += dpv[k] * Xc[k, 2]
        c0 = a1 * b2 - a2 * b1
        c1 = a2 * b0 - a0 * b2
        c2 = a0 * b1 - a1 * b0
        J = np.sqrt(c0 * c0 + c1 * c1 + c2 * c2)
        r0 = y0 - x[0]
        r1 = y1 - x[1]
        r2 = y2 - x[2]
        rho = np.sqrt(r0 * r0 + r1 * r1 + r2 * r2)
        g = w[q] / (FOUR_PI * rho)
        dg = -(r0 * c0 + r1 * c1 + r2 * c2) * g / (rho * rho)
        gJ = g * J
        for k in range(4):
            outN[k] += dg * psi[k]
            outD[k] += gJ * psi[k]


@numba.njit(cache=True, parallel=True)
def _assemble(X, cells, cdofs, rows, kind, fp, fw, np_, nw, sp_, sw, row_dyn, cell_dyn, mode, N, D):
    """mode 0: every pair; 1: only pairs with a static row and a static cell;
    2: only pairs where the row or the cell is dynamic."""
    nr = rows.shape[0]
    nc = cells.shape[0]
    for p in numba.prange(nr):
        x = X[rows[p]]
        oN = np.empty(4)
        oD = np.empty(4)
        Xc = np.empty((4, 3))
        for c in range(nc):
            if mode != 0:
                dyn = row_dyn[p] or cell_dyn[c]
                if (mode == 1 and dyn) or (mode == 2 and not dyn):
                    continue
            for k in range(4):
                Xc[k] = X[cells[c, k]]
                oN[k] = 0.0
                oD[k] = 0.0
            kd = kind[p, c]
            if kd == 0:
                _pair(x, Xc, fp, fw, oN, oD)
            elif kd == 1:
                _pair(x, Xc, np_, nw, oN, oD)
            else:
                _pair(x, Xc, sp_[kd - 2], sw[kd - 2], oN, oD)
            for k in range(4):
                N[p, cdofs[c, k]] += oN[k]
                D[p, cdofs[c, k]] += oD[k]


@numba.njit(cache=True)
def _pair_dz(x, Xc, pts, w, phi, gam, dA, dS, dAx, dSx):
    """z-derivatives of one cell contribution to A = N phi - D gamma and S = sum N.

    dA[l], dS[l]: with respect to the z of vertex l; dAx, dSx (length 1):
    with respect to the z of the collocation point.
    """
    psi = np.empty(4)
    dpu = np.empty(4)
    dpv = np.empty(4)
    for q in range(w.shape[0]):
        _shape(pts[q, 0], pts[q, 1], psi, dpu, dpv)
        y0 = y1 = y2 = 0.0
        a0 = a1 = a2 = 0.0
        b0 = b1 = b2 = 0.0
        fphi = 0.0
        fgam = 0.0
        for k in range(4):
            y0 += psi[k] * Xc[k, 0]
            y1 += psi[k] * Xc[k, 1]
            y2 += psi[k] * Xc[k, 2]
            a0 += dpu[k] * Xc[k, 0]
            a1 += dpu[k] * Xc[k, 1]
            a2 += dpu[k] * Xc[k, 2]
            b0 += dpv[k] * Xc[k, 0]
            b1 += dpv[k] * Xc[k, 1]
            b2 += dpv[k] * Xc[k, 2]
            fphi += psi[k] * phi[k]
            fgam += psi[k] * gam[k]
        c0 = a1 * b2 - a2 * b1
        c1 = a2 * b0 - a0 * b2
        c2 = a0 * b1 - a1 * b0
        J = np.sqrt(c0 * c0 + c1 * c1 + c2 * c2)
        r0 = y0 - x[0]
        r1 = y1 - x[1]
        r2 = y2 - x[2]
        rho2 = r0 * r0 + r1 * r1 + r2 * r2
        rho = np.sqrt(rho2)
        rc = r0 * c0 + r1 * c1 + r2 * c2
        k4 = w[q] / FOUR_PI
        # fN = -k4 rc / rho^3 ; fD = k4 J / rho
        inv3 = 1.0 / (rho2 * rho)
        for l in range(4):
            # dcr = dpu_l (e_z x Xv) + dpv_l (Xu x e_z)
            dc0 = dpu[l] * (-b1) + dpv[l] * a1
            dc1 = dpu[l] * b0 + dpv[l] * (-a0)
            drc = psi[l] * c2 + r0 * dc0 + r1 * dc1
            drho = psi[l] * r2 / rho
            dJ = (c0 * dc0 + c1 * dc1) / J
            dfN = -k4 * (drc * inv3 - 3.0 * rc * inv3 * drho / rho)
            dfD = k4 * (dJ / rho - J * drho / rho2)
            dA[l] += dfN * fphi - dfD * fgam
            dS[l] += dfN
        # collocation point moves: dr = -e_z
        drc = -c2
        drho = -r2 / rho
        dfN = -k4 * (drc * inv3 - 3.0 * rc * inv3 * drho / rho)
        dfD = k4 * (-J * drho / rho2)
        dAx[0] += dfN * fphi - dfD * fgam
        dSx[0] += dfN


@numba.njit(cache=True, parallel=True)
def _z_derivs(X, cells, cdofs, rows, kind, fp, fw, np_, nw, sp_, sw,
              phi_raw, gam_raw, row_moving, cell_moving, node_col, dAn, dSn):
    """Accumulate d(A_p)/d(z_node), d(S_p)/d(z_node) for moving nodes.

    node_col maps a node id to its column in dAn/dSn (-1 if the node is fixed).
    """
    nr = rows.shape[0]
    nc = cells.shape[0]
    for p in numba.prange(nr):
        x = X[rows[p]]
        Xc = np.empty((4, 3))
        ph = np.empty(4)
        ga = np.empty(4)
        dA = np.empty(4)
        dS = np.empty(4)
        dAx = np.zeros(1)
        dSx = np.zeros(1)
        own = row_moving[p]
        for c in range(nc):
            if not (own or cell_moving[c]):
                continue
            for k in range(4):
                Xc[k] = X[cells[c, k]]
                ph[k] = phi_raw[cdofs[c, k]]
                ga[k] = gam_raw[cdofs[c, k]]
                dA[k] = 0.0
                dS[k] = 0.0
            kd = kind[p, c]
            if kd == 0:
                _pair_dz(x, Xc, fp, fw, ph, ga, dA, dS, dAx, dSx)
            elif kd == 1:
                _pair_dz(x, Xc, np_, nw, ph, ga, dA, dS, dAx, dSx)
            else:
                _pair_dz(x, Xc, sp_[kd - 2], sw[kd - 2], ph, ga, dA, dS, dAx, dSx)
            for k in range(4):
                j = node_col[cells[c, k]]
                if j >= 0:
                    dAn[p, j] += dA[k]
                    dSn[p, j] += dS[k]
        if own:
            j = node_col[rows[p]]
            dAn[p, j] += dAx[0]
            dSn[p, j] += dSx[0]


# ----------------------------------------------------------------------------
class BemAssembler:
    """Frozen quadrature selection for one mesh/layout pair."""

    def __init__(self, mesh: SurfaceMesh, dofs: DofLayout, rules: BemRules | None = None,
                 near_factor=2.0):
        self.mesh = mesh
        self.dofs = dofs
        self.rules = rules or BemRules.build()
        self.rows = np.ascontiguousarray(dofs.coll_nodes, dtype=np.int64)
        self.kind = rule_kinds(mesh, self.rows, near_factor)
        self.cells = np.ascontiguousarray(mesh.cells, dtype=np.int64)
        self.cdofs = np.ascontiguousarray(dofs.cell_dofs, dtype=np.int64)

    def _rule_args(self):
        r = self.rules
        return (r.far_pts, r.far_w, r.near_pts, r.near_w, r.sing_pts, r.sing_w)

    def check_geometry(self, X):
        J = self.mesh.min_jacobian(X)
        bad = np.flatnonzero(~(J > 0))
        if len(bad):
            raise MeshError(f"non-positive Jacobian in cell {int(bad[0])}")

    def set_moving_nodes(self, moving_nodes, X=None):
        """Cache the contributions that do not depend on the listed nodes."""
        X = np.ascontiguousarray(self.mesh.nodes if X is None else X, dtype=float)
        mov = np.zeros(len(X), dtype=bool)
        mov[np.asarray(moving_nodes, dtype=np.int64)] = True
        self._row_dyn = mov[self.rows]
        self._cell_dyn = mov[self.cells].any(axis=1)
        nr, nraw = len(self.rows), self.dofs.n_raw
        self._N0 = np.zeros((nr, nraw))
        self._D0 = np.zeros((nr, nraw))
        _assemble(X, self.cells, self.cdofs, self.rows, self.kind, *self._rule_args(),
                  self._row_dyn, self._cell_dyn, 1, self._N0, self._D0)

    def assemble(self, X=None) -> BemMatrices:
        X = np.ascontiguousarray(self.mesh.nodes if X is None else X, dtype=float)
        self.check_geometry(X)
        nr, nraw = len(self.rows), self.dofs.n_raw
        if getattr(self, "_N0", None) is None:
            N = np.zeros((nr, nraw))
            D = np.zeros((nr, nraw))
            _assemble(X, self.cells, self.cdofs, self.rows, self.kind, *self._rule_args(),
                      np.zeros(nr, dtype=np.bool_), np.zeros(len(self.cells), dtype=np.bool_), 0, N, D)
        else:
            N = self._N0.copy()
            D = self._D0.copy()
            _assemble(X, self.cells, self.cdofs, self.rows, self.kind, *self._rule_args(),
                      self._row_dyn, self._cell_dyn, 2, N, D)
        alpha = -N.sum(axis=1)
        return BemMatrices(N, D, alpha)

    def z_derivatives(self, X, phi_raw, gam_raw, moving_nodes):
        """d(N phi_raw - D gam_raw)/dz and d(rowsum N)/dz for the given nodes."""
        X = np.ascontiguousarray(X, dtype=float)
        node_col = np.full(len(X), -1, dtype=np.int64)
        node_col[moving_nodes] = np.arange(len(moving_nodes))
        row_moving = node_col[self.rows] >= 0
        cell_moving = (node_col[self.cells] >= 0).any(axis=1)
        nr = len(self.rows)
        dA = np.zeros((nr, len(moving_nodes)))
        dS = np.zeros((nr, len(moving_nodes)))
        _z_derivs(X, self.cells, self.cdofs, self.rows, self.kind, *self._rule_args(),
                  np.ascontiguousarray(phi_raw, dtype=float), np.ascontiguousarray(gam_raw, dtype=float),
                  row_moving, cell_moving, node_col, dA, dS)
        return dA, dS


def assemble_bem(mesh: SurfaceMesh, dofs: DofLayout, rules: BemRules | None = None,
                 near_factor=2.0) -> BemMatrices:
    return BemAssembler(mesh, dofs, rules, near_factor).assemble()


def solve_laplace(bem: BemMatrices, dofs: DofLayout, dirichlet_data, neumann_data, mesh=None):
    """Solve the collocated BIE with phi given on Dirichlet DOFs and gamma on Neumann DOFs.

    ``dirichlet_data`` / ``neumann_data`` are full-length arrays over free
    DOFs; only the entries of the matching partition are read.  Dirichlet
    DOFs sharing a node (an edge between two Dirichlet faces) give identical
    BIE rows.  There the full gradient is recovered from the tangential
    gradients of all faces meeting at the node (quadratic least-squares fits)
    and each gamma is set to its normal component.  ``mesh`` is needed only
    in that case.
    """
    N, D, alpha = bem.condensed(dofs)
    n = dofs.n_dofs
    dmask = dofs.dirichlet
    phi = np.where(dmask, np.asarray(dirichlet_data, dtype=float), 0.0)
    gam = np.where(dmask, 0.0, np.asarray(neumann_data, dtype=float))
    A = N.copy()
    A[np.arange(n), np.arange(n)] += alpha
    # unknowns: phi on Neumann DOFs, then gamma on Dirichlet DOFs
    unk_phi = np.flatnonzero(~dmask)
    unk_gam = np.flatnonzero(dmask)
    M = np.hstack([A[:, unk_phi], -D[:, unk_gam]])
    rhs = -(A[:, dmask] @ phi[dmask]) + D[:, ~dmask] @ gam[~dmask]
    _dirichlet_edge_rows(M, rhs, dofs, unk_phi, unk_gam, phi, mesh)
    try:
        lu, piv = sla.lu_factor(M, check_finite=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise BemError(f"singular BEM system: {exc}") from exc
    d = np.abs(np.diag(lu))
    if d.min() <= 1e-13 * d.max():
        raise BemError("singular BEM system (no Dirichlet data, or duplicated rows)")
    sol = sla.lu_solve((lu, piv), rhs)
    phi[unk_phi] = sol[: len(unk_phi)]
    gam[unk_gam] = sol[len(unk_phi):]
    return phi, gam


def quadratic_surface_gradient(mesh: SurfaceMesh, dofs: DofLayout, phi_free, dof):
    """Surface gradient of phi at a DOF from a least-squares quadratic fit.

    Uses the nodes of the DOF's region within two cell rings, expressed in
    tangent-plane coordinates; exact for quadratic data on flat faces.
    """
    phi_raw = dofs.P @ phi_free
    reg = dofs.region[dof]
    nd = dofs.node[dof]
    cells = np.flatnonzero(mesh.region == reg)
    ring = cells[(mesh.cells[cells] == nd).any(axis=1)]
    nodes1 = np.unique(mesh.cells[ring])
    ring2 = cells[np.isin(mesh.cells[cells], nodes1).any(axis=1)]
    raw = np.unique(dofs.cell_dofs[ring2])
    X = mesh.nodes
    Xc = X[mesh.cells[ring]]
    nrm = np.cross(Xc[:, 2] - Xc[:, 0], Xc[:, 3] - Xc[:, 1]).sum(axis=0)
    nrm /= np.linalg.norm(nrm)
    e1 = np.cross(nrm, [1.0, 0, 0] if abs(nrm[0]) < 0.9 else [0, 1.0, 0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(nrm, e1)
    d = X[dofs.raw_node[raw]] - X[nd]
    s, t = d @ e1, d @ e2
    h = max(np.abs(s).max(), np.abs(t).max())
    s, t = s / h, t / h
    V = np.column_stack([s, t, s * s, s * t, t * t])
    rhs = phi_raw[raw] - phi_raw[dofs.free[dof]]
    c, *_ = np.linalg.lstsq(V, rhs, rcond=None)
    return (c[0] * e1 + c[1] * e2) / h, nrm


def _dirichlet_edge_rows(M, rhs, dofs, unk_phi, unk_gam, phi, mesh):
    node = dofs.node
    dnodes = node[dofs.dirichlet]
    uniq, counts = np.unique(dnodes, return_counts=True)
    shared = uniq[counts > 1]
    if len(shared) == 0:
        return
    if mesh is None:
        raise BemError("mesh needed for Dirichlet DOFs sharing a node")
    col = np.full(dofs.n_dofs, -1)
    col[unk_gam] = len(unk_phi) + np.arange(len(unk_gam))
    for nd in shared:
        ids = np.flatnonzero((node == nd) & dofs.dirichlet)
        # stack the tangential gradients of all faces meeting here
        fits = [quadratic_surface_gradient(mesh, dofs, phi, i) for i in ids]
        rows = [np.eye(3) - np.outer(nv, nv) for _, nv in fits]
        grad = np.linalg.lstsq(np.vstack(rows), np.concatenate([g for g, _ in fits]), rcond=None)[0]
        for i, (_, nv) in zip(ids, fits):
            M[i] = 0.0
            M[i, col[i]] = 1.0
            rhs[i] = float(grad @ nv)
