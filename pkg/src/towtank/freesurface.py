"""Free-surface operators on the bilinear boundary mesh.

Everything here is evaluated at Gauss points inside the cells, where the
potential gradient and the normal are single valued.  The cell kernels work
on stacks of cells so the Jacobian code can perturb their inputs in bulk.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dofs import DofLayout
from .flow import AsymptoticFlow, damping_mu
from .mesh import Region, SurfaceMesh
from .quadrature import gauss_rule, shape_functions
from .scenario import G


@dataclass
class CellRule:
    psi: np.ndarray  # (q, 4)
    dpu: np.ndarray
    dpv: np.ndarray
    w: np.ndarray  # (q,)


def cell_rule(order=3) -> CellRule:
    r = gauss_rule(order)
    psi, dpu, dpv = shape_functions(r.points[:, 0], r.points[:, 1])
    return CellRule(psi, dpu, dpv, r.weights)


def surface_kinematics(Xc, rule: CellRule):
    """Points, area element, unit normal and surface gradients of the shape functions.

    Xc is (m, 4, 3).  Returns X (m,q,3), J (m,q), n (m,q,3), gpsi (m,q,4,3).
    """
    X = np.einsum("qk,mkd->mqd", rule.psi, Xc)
    Xu = np.einsum("qk,mkd->mqd", rule.dpu, Xc)
    Xv = np.einsum("qk,mkd->mqd", rule.dpv, Xc)
    cr = np.cross(Xu, Xv)
    J = np.linalg.norm(cr, axis=-1)
    n = cr / J[..., None]
    g11 = np.sum(Xu * Xu, -1)
    g12 = np.sum(Xu * Xv, -1)
    g22 = np.sum(Xv * Xv, -1)
    det = g11 * g22 - g12 * g12
    # contravariant tangent vectors a^1, a^2
    a1 = (g22[..., None] * Xu - g12[..., None] * Xv) / det[..., None]
    a2 = (g11[..., None] * Xv - g12[..., None] * Xu) / det[..., None]
    gpsi = (rule.dpu[None, :, :, None] * a1[:, :, None, :]
            + rule.dpv[None, :, :, None] * a2[:, :, None, :])
    return X, J, n, gpsi


def gradient_at(phi, gam, n, gpsi, psi):
    """grad phi = surface gradient of phi_h + gamma_h n at the quadrature points."""
    gs = np.einsum("mk,mqkd->mqd", phi, gpsi)
    gh = np.einsum("mk,qk->mq", gam, psi)
    return gs + gh[..., None] * n


def reconstruct_gradient(mesh: SurfaceMesh, dofs: DofLayout, phi, gam, cell, u, v, nodes=None):
    """grad phi at reference point (u, v) of one cell from free-DOF values."""
    X = mesh.nodes if nodes is None else nodes
    psi, dpu, dpv = shape_functions(np.atleast_1d(u), np.atleast_1d(v))
    rule = CellRule(psi, dpu, dpv, np.ones(1))
    _, _, n, gpsi = surface_kinematics(X[mesh.cells[cell]][None], rule)
    raw_phi = dofs.P @ np.asarray(phi, dtype=float)
    raw_gam = dofs.P @ np.asarray(gam, dtype=float)
    ids = dofs.cell_dofs[cell]
    return gradient_at(raw_phi[ids][None], raw_gam[ids][None], n, gpsi, psi)[0, 0]


# ----------------------------------------------------------------------------
@dataclass
class FsContext:
    """Everything the cell kernels need besides the per-cell unknowns."""

    flow: AsymptoticFlow
    tau: float = 0.5  # SUPG length as a fraction of the cell diagonal
    x_d: float = 50.0
    L_d: float = 100.0
    beach_strength: float = 10.0
    damping: bool = False
    g: float = G
    rule: CellRule = field(default_factory=cell_rule)


def supg_direction(v, grad_inf, grad_phi, length):
    """d = length * (grad phi_inf + grad phi - v) / |...|, zero where that velocity vanishes.

    This is the upwind orientation: the test function is shifted along the
    fluid velocity seen from the moving grid.  The opposite orientation
    amplifies the short waves it is meant to damp.
    """
    a = grad_inf + grad_phi - v
    s = np.linalg.norm(a, axis=-1)
    safe = np.where(s < 1e-12, 1.0, s)
    d = a / safe[..., None] * np.asarray(length)[..., None]
    d[s < 1e-12] = 0.0
    return d


def dynamic_local(Xc, phi, gam, zdot, ctx: FsContext, t, diag):
    """Local SUPG-weighted mass matrices and right-hand sides of the dynamic condition.

    Returns Mt (m,4,4) with Mt[c,i,j] = (psi_j, psi_i + d.grad psi_i) and
    b (m,4) with b[c,i] = (b_phidot, psi_i + d.grad psi_i).
    """
    r = ctx.rule
    X, J, n, gpsi = surface_kinematics(Xc, r)
    gphi = gradient_at(phi, gam, n, gpsi, r.psi)
    st = ctx.flow.evaluate(X, t)
    eta_inf, deta_inf = ctx.flow.surface_eta(X, t)
    zd = zdot @ r.psi.T  # (m, q)
    v = np.zeros_like(X)
    v[..., 2] = zd
    bphi = (0.5 * np.sum(gphi**2, -1) - ctx.g * (X[..., 2] - eta_inf)
            + np.sum((v - st.grad - gphi) * gphi, -1))
    if ctx.damping:
        mu = damping_mu(X[..., 0], ctx.x_d, ctx.L_d)
        bphi = bphi - ctx.beach_strength * mu * (zd - deta_inf)
    test = np.broadcast_to(r.psi[None], J.shape + (4,))
    if ctx.tau != 0:
        d = supg_direction(v, st.grad, gphi, ctx.tau * np.broadcast_to(diag[:, None], J.shape))
        test = test + np.einsum("mqd,mqkd->mqk", d, gpsi)
    wJ = J * r.w[None]
    Mt = np.einsum("mq,mqi,qj->mij", wJ, test, r.psi)
    b = np.einsum("mq,mqi,mq->mi", wJ, test, bphi)
    return Mt, b


NONPEN, ZERO_FLUX = 1, 2


def neumann_local(Xc, gam, zdot, ctx: FsContext, t, kind):
    """Local mass matrices and right-hand sides of the normal-derivative projection.

    kind per cell: 0 free surface (moving, b = (v - grad phi_inf).n), 1 fixed
    non-penetration wall (b = -grad phi_inf.n), 2 far field (b = 0).
    """
    r = ctx.rule
    X, J, n, _ = surface_kinematics(Xc, r)
    st = ctx.flow.evaluate(X, t)
    vz = zdot @ r.psi.T
    kind = np.asarray(kind)[:, None]
    bn = np.where(kind == 0, vz * n[..., 2], 0.0) - np.sum(st.grad * n, -1)
    bn = np.where(kind == ZERO_FLUX, 0.0, bn)
    wJ = J * r.w[None]
    M = np.einsum("mq,qi,qj->mij", wJ, r.psi, r.psi)
    b = np.einsum("mq,qi,mq->mi", wJ, r.psi, bn)
    return M, b


def kinematic_residuals(Xc, grad_total, zdot, rule: CellRule):
    """Kinematic condition in graph form and the non-penetration form, per quadrature point.

    grad_total (m,q,3) is grad(phi + phi_inf) at the quadrature points and
    zdot (m,4) the nodal vertical velocities.  Returns (r_graph, r_normal, n_z):
    r_graph = u_z - u_x eta_x - u_y eta_y - zdot and r_normal = (u - v).n.
    """
    X, J, n, gpsi = surface_kinematics(Xc, rule)
    Xu = np.einsum("qk,mkd->mqd", rule.dpu, Xc)
    Xv = np.einsum("qk,mkd->mqd", rule.dpv, Xc)
    # eta_x, eta_y from the chain rule on the graph z(x, y)
    det = Xu[..., 0] * Xv[..., 1] - Xu[..., 1] * Xv[..., 0]
    eta_x = (Xu[..., 2] * Xv[..., 1] - Xv[..., 2] * Xu[..., 1]) / det
    eta_y = (Xv[..., 2] * Xu[..., 0] - Xu[..., 2] * Xv[..., 0]) / det
    zd = zdot @ rule.psi.T
    u = grad_total
    r_graph = u[..., 2] - u[..., 0] * eta_x - u[..., 1] * eta_y - zd
    v = np.zeros_like(u)
    v[..., 2] = zd
    r_normal = np.sum((u - v) * n, -1)
    return r_graph, r_normal, n[..., 2]


# ----------------------------------------------------------------------------
# global assembly helpers (free-DOF level)
def _scatter(mesh, dofs, cells, Mloc, bloc):
    ids = dofs.cell_dofs[cells]
    ii = np.repeat(ids, 4, axis=1).ravel()
    jj = np.tile(ids, (1, 4)).ravel()
    Mraw = sp.csr_matrix((Mloc.ravel(), (ii, jj)), shape=(dofs.n_raw, dofs.n_raw))
    braw = np.zeros(dofs.n_raw)
    np.add.at(braw, ids.ravel(), bloc.ravel())
    P = dofs.P
    return (P.T @ Mraw @ P).tocsr(), P.T @ braw


def assemble_neumann_projection(mesh: SurfaceMesh, dofs: DofLayout, gam, zdot_nodes, ctx: FsContext,
                                t=0.0, nodes=None, regions=None):
    """(M, b) of the normal-derivative projection over all Neumann regions.

    ``regions`` maps region label to kind (0 moving free surface, 1 wall, 2
    far field); by default FREE_SURFACE, HULL/BOTTOM and FAR_FIELD.
    """
    X = mesh.nodes if nodes is None else nodes
    regions = regions or {int(Region.FREE_SURFACE): 0, int(Region.HULL): NONPEN,
                          int(Region.BOTTOM): NONPEN, int(Region.FAR_FIELD): ZERO_FLUX}
    cells = np.flatnonzero(np.isin(mesh.region, list(regions)))
    kind = np.array([regions[int(r)] for r in mesh.region[cells]])
    zd = np.asarray(zdot_nodes, dtype=float)[mesh.cells[cells]]
    M, b = neumann_local(X[mesh.cells[cells]], None, zd, ctx, t, kind)
    return _scatter(mesh, dofs, cells, M, b)


def assemble_dynamic_projection(mesh: SurfaceMesh, dofs: DofLayout, phi, gam, zdot_nodes, ctx: FsContext,
                                t=0.0, nodes=None, diag=None):
    """(M~, b~) of the SUPG-weighted dynamic condition on the free surface."""
    X = mesh.nodes if nodes is None else nodes
    cells = mesh.cells_of(Region.FREE_SURFACE)
    if diag is None:
        diag = mesh.diagonals()[cells]
    ids = dofs.cell_dofs[cells]
    ph = (dofs.P @ np.asarray(phi, dtype=float))[ids]
    ga = (dofs.P @ np.asarray(gam, dtype=float))[ids]
    zd = np.asarray(zdot_nodes, dtype=float)[mesh.cells[cells]]
    Mt, b = dynamic_local(X[mesh.cells[cells]], ph, ga, zd, ctx, t, diag)
    return _scatter(mesh, dofs, cells, Mt, b)
