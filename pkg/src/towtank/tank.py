"""The towing tank as a DAE F(y', y, t) = 0.

State layout over the free DOFs (n of them)::

    y = [phi (n) | gamma (n) | z (n)]

Residual rows, per DOF i:

* phi row: phi_i (Dirichlet, inflow) or the BIE row (everything else);
* gamma row: the BIE row (Dirichlet) or the normal-derivative projection;
* z row: the SUPG dynamic condition (free surface) or z_i - z_ref,i.

Projection rows are divided by the DOF's patch area so every block of F has
the units of its unknown; this only rescales rows.  Free-surface node
heights come from the free-surface z entries through the sparse map ``Qz``
(hanging nodes follow their parents), and the BEM matrices are rebuilt
whenever those heights change.
"""
from __future__ import annotations

import dataclasses
import hashlib

import numpy as np
import scipy.sparse as sp

from .bem import BemAssembler, BemRules
from .dofs import DofLayout, assign_double_nodes
from .domain import build_domain_mesh
from .flow import AsymptoticFlow
from .freesurface import NONPEN, ZERO_FLUX, FsContext, cell_rule, dynamic_local, neumann_local
from .mesh import MeshError, Region, SurfaceMesh
from .scenario import Scenario


class GeometryError(MeshError):
    """A trial state inverted a cell; callers treat this as a rejected step."""


def _extend_hanging(mesh: SurfaceMesh, Q: sp.csr_matrix) -> sp.csr_matrix:
    """Let hanging nodes off the free surface follow the mean of their parents."""
    Q = Q.tolil()
    for m, (a, b) in mesh.hanging.items():
        if Q.rows[m]:
            continue
        row = 0.5 * (Q.getrow(a) + Q.getrow(b))
        if row.nnz:
            Q[m] = row
    return Q.tocsr()


class TowingTank:
    def __init__(self, scenario: Scenario, mesh: SurfaceMesh | None = None, unsteady=True,
                 flow: AsymptoticFlow | None = None):
        sc = scenario
        self.scenario = sc
        self.mesh = mesh if mesh is not None else build_domain_mesh(sc)
        self.dofs: DofLayout = assign_double_nodes(self.mesh)
        s = sc.solver
        self.unsteady = unsteady
        if flow is None:
            flow = AsymptoticFlow.from_scenario(sc)
            if not unsteady:  # a steady solve is the fully started limit
                flow = dataclasses.replace(flow, t_ramp=None)
        self.flow = flow
        self.ctx = FsContext(self.flow, tau=s.tau, x_d=sc.beach.x_d, L_d=sc.beach.L_d,
                             beach_strength=sc.beach.strength, damping=unsteady,
                             rule=cell_rule(s.fem_order))
        d = self.dofs
        n = self.n = d.n_dofs
        mesh = self.mesh

        # partition masks
        self.dirichlet = d.dirichlet.copy()
        self.fs = d.fs.copy()
        self.phi_D = np.flatnonzero(self.dirichlet)
        self.phi_N = np.flatnonzero(~self.dirichlet)
        self.fs_idx = np.flatnonzero(self.fs)
        self.ba_idx = np.flatnonzero(~self.fs)
        self.z_ref = mesh.nodes[d.node, 2].copy()

        # node heights from free-surface z
        self.Qz = _extend_hanging(mesh, d.Q)
        self.moving_nodes = np.flatnonzero(np.diff(self.Qz.indptr) > 0)
        zfs = np.where(self.fs, self.z_ref, 0.0)
        self.X0 = mesh.nodes.copy()
        self.X0[:, 2] -= self.Qz @ zfs

        self.bem = BemAssembler(mesh, d, BemRules.build(s.gauss_far, s.gauss_near, s.gauss_singular),
                                s.near_factor)
        self.bem.set_moving_nodes(self.moving_nodes, mesh.nodes)
        self._bem_cache = None

        # cells carrying projections: everything except Dirichlet regions
        dreg = np.unique(d.raw_region[d.free[self.dirichlet]])
        self.fem_cells = np.flatnonzero(~np.isin(mesh.region, dreg))
        reg = mesh.region[self.fem_cells]
        self.fem_kind = np.where(reg == Region.FREE_SURFACE, 0,
                                 np.where(reg == Region.FAR_FIELD, ZERO_FLUX, NONPEN))
        self.fs_local = np.flatnonzero(self.fem_kind == 0)  # positions inside fem_cells
        self.diag = mesh.diagonals()[self.fem_cells]
        self.cdofs = d.cell_dofs[self.fem_cells]
        self.cnodes = mesh.cells[self.fem_cells]
        rule = self.ctx.rule
        Jref = neumann_local(mesh.nodes[self.cnodes], None, np.zeros((len(self.fem_cells), 4)),
                             self.ctx, 0.0, self.fem_kind)[0].sum(axis=2)
        area = np.zeros(d.n_raw)
        np.add.at(area, self.cdofs.ravel(), Jref.ravel())
        self.patch = d.P.T @ area
        self.patch[self.dirichlet] = 1.0
        if np.any(self.patch[~self.dirichlet] <= 0):
            raise MeshError("a Neumann DOF has an empty patch")
        del rule

        # active (non-trivial) entries of y: Dirichlet phi and basin z are set directly
        self.active = np.concatenate([self.phi_N, n + np.arange(n), 2 * n + self.fs_idx])
        self.n_jacobians = 0

    # ------------------------------------------------------------------
    @property
    def size(self):
        return 3 * self.n

    def split(self, y):
        n = self.n
        return y[:n], y[n:2 * n], y[2 * n:]

    def rest_state(self):
        y = np.zeros(self.size)
        y[2 * self.n:] = self.z_ref
        return y

    def apply_fixed(self, y, t=0.0):
        """Impose the trivially determined entries (Dirichlet phi, basin z)."""
        y = np.array(y, dtype=float, copy=True)
        n = self.n
        y[self.phi_D] = 0.0
        y[2 * n + self.ba_idx] = self.z_ref[self.ba_idx]
        return y

    def positions(self, z):
        X = self.X0.copy()
        X[:, 2] += self.Qz @ z
        return X

    def node_velocity(self, zdot):
        return self.Qz @ zdot

    def differential_indices(self):
        """Entries of y held fixed by reinit_velocity: phi and z of free-surface DOFs.

        Free-surface DOFs sharing a node with a Dirichlet DOF (the inflow
        waterline) are left out: there the two collocation rows of the node
        pin phi, so phi and z are algebraic.
        """
        n = self.n
        shared = np.isin(self.dofs.node, self.dofs.node[self.phi_D])
        fs = self.fs_idx[~shared[self.fs_idx]]
        return np.concatenate([fs, 2 * n + fs])

    def free_surface_elevation(self, y):
        """eta at every free-surface DOF."""
        return self.split(y)[2][self.fs_idx]

    # ------------------------------------------------------------------
    def bem_matrices(self, z):
        zk = np.ascontiguousarray(z[self.fs_idx])
        key = hashlib.sha1(zk.tobytes()).hexdigest()
        if self._bem_cache is not None and self._bem_cache[0] == key:
            return self._bem_cache[1:]
        X = self.positions(z)
        try:
            B = self.bem.assemble(X)
        except MeshError as exc:
            raise GeometryError(str(exc)) from exc
        P = self.dofs.P
        Np = np.asarray((P.T @ B.N.T).T)
        Dp = np.asarray((P.T @ B.D.T).T)
        self._bem_cache = (key, X, B, Np, Dp)
        return X, B, Np, Dp

    def _bie(self, phi, gam, z):
        X, B, Np, Dp = self.bem_matrices(z)
        row = self.dofs.dof_row
        return (Np @ phi - Dp @ gam)[row] + B.alpha[row] * phi

    def _local_inputs(self, X, phi, gam, zdot, phidot):
        P = self.dofs.P
        ids = self.cdofs
        return [(P @ phi)[ids], (P @ gam)[ids], X[self.cnodes][..., 2],
                self.node_velocity(zdot)[self.cnodes], (P @ phidot)[ids]]

    def _local(self, Xxy, inputs, t):
        """Local projection residuals (m,4) x 2 for all projection cells."""
        ph, ga, zc, zd, pd = inputs
        Xc = np.concatenate([Xxy, zc[..., None]], axis=-1)
        M, b = neumann_local(Xc, ga, zd, self.ctx, t, self.fem_kind)
        rg = np.einsum("mij,mj->mi", M, ga) - b
        rz = np.zeros_like(rg)
        f = self.fs_local
        if len(f):
            Mt, bt = dynamic_local(Xc[f], ph[f], ga[f], zd[f], self.ctx, t, self.diag[f])
            rz[f] = np.einsum("mij,mj->mi", Mt, pd[f]) - bt
        return rg, rz

    def _gather(self, rloc):
        raw = np.zeros(self.dofs.n_raw)
        np.add.at(raw, self.cdofs.ravel(), rloc.ravel())
        return self.dofs.P.T @ raw

    def residual(self, yd, y, t):
        n = self.n
        phi, gam, z = self.split(np.asarray(y, dtype=float))
        phid, _, zd = self.split(np.asarray(yd, dtype=float))
        X = self.positions(z)
        bie = self._bie(phi, gam, z)
        inputs = self._local_inputs(X, phi, gam, zd, phid)
        rg, rz = self._local(X[self.cnodes][..., :2], inputs, t)
        Fg = self._gather(rg) / self.patch
        Fz = self._gather(rz) / self.patch
        F = np.empty(3 * n)
        F[:n] = np.where(self.dirichlet, phi, bie)
        F[n:2 * n] = np.where(self.dirichlet, bie, Fg)
        F[2 * n:] = np.where(self.fs, Fz, z - self.z_ref)
        return F

    # ------------------------------------------------------------------
    def _local_jacobian(self, X, inputs, t):
        """Central differences of the local residuals w.r.t. the 20 cell inputs."""
        Xxy = X[self.cnodes][..., :2]
        stack = np.stack(inputs, axis=1)  # (m, 5, 4)
        m = len(stack)
        dg = np.zeros((m, 4, 5, 4))
        dz = np.zeros((m, 4, 5, 4))
        for s in range(5):
            if s == 4 and not len(self.fs_local):
                continue
            for l in range(4):
                base = stack[:, s, l]
                h = 1e-6 * (1.0 + np.abs(base))
                up = stack.copy()
                up[:, s, l] += h
                dn = stack.copy()
                dn[:, s, l] -= h
                gp, zp = self._local(Xxy, list(up.transpose(1, 0, 2)), t)
                gm, zm = self._local(Xxy, list(dn.transpose(1, 0, 2)), t)
                dg[:, :, s, l] = (gp - gm) / (2 * h[:, None])
                dz[:, :, s, l] = (zp - zm) / (2 * h[:, None])
        return dg, dz

    def _sparse_block(self, dloc, s):
        """Free-DOF sparse block from local derivatives w.r.t. input slot s."""
        d = self.dofs
        rows = np.repeat(self.cdofs, 4, axis=1).ravel()
        if s in (2, 3):
            cols = np.tile(self.cnodes, (1, 4)).ravel()
            right = self.Qz
            ncol = self.mesh.n_nodes
        else:
            cols = np.tile(self.cdofs, (1, 4)).ravel()
            right = d.P
            ncol = d.n_raw
        S = sp.csr_matrix((dloc[:, :, s, :].ravel(), (rows, cols)), shape=(d.n_raw, ncol))
        return (d.P.T @ S @ right).tocsr()

    def jacobians(self, yd, y, t, full=False):
        """(dF/dy, dF/dy') restricted to the active entries (or full size).

        dF/dy is dense; dF/dy' is sparse.
        """
        n = self.n
        y = np.asarray(y, dtype=float)
        yd = np.asarray(yd, dtype=float)
        phi, gam, z = self.split(y)
        phid, _, zd = self.split(yd)
        X, B, Np, Dp = self.bem_matrices(z)
        d = self.dofs
        row = d.dof_row
        self.n_jacobians += 1

        idx = np.arange(3 * n) if full else self.active
        pos = np.full(3 * n, -1)
        pos[idx] = np.arange(len(idx))
        Jy = np.zeros((len(idx), len(idx)))

        def put(rows_full, cols_full, block):
            rp, cp = pos[rows_full], pos[cols_full]
            rk, ck = rp >= 0, cp >= 0
            if rk.any() and ck.any():
                Jy[np.ix_(rp[rk], cp[ck])] = block[np.ix_(rk, ck)]

        # BIE rows: phi rows of Neumann DOFs and gamma rows of Dirichlet DOFs
        bie_dofs = np.arange(n)
        bie_rows = np.where(self.dirichlet, n + bie_dofs, bie_dofs)
        Jphi = Np[row].copy()
        Jphi[bie_dofs, bie_dofs] += B.alpha[row]
        put(bie_rows, np.arange(n), Jphi)
        put(bie_rows, n + np.arange(n), -Dp[row])
        mov = self.moving_nodes
        raw_phi, raw_gam = d.P @ phi, d.P @ gam
        dA, dS = self.bem.z_derivatives(X, raw_phi, raw_gam, mov)
        dB = dA[row] - phi[:, None] * dS[row]
        Jz = np.asarray((self.Qz[mov].T @ dB.T).T)
        put(bie_rows, 2 * n + np.arange(n), Jz)
        # trivial rows
        for i in self.phi_D:
            if pos[i] >= 0:
                Jy[pos[i], pos[i]] = 1.0
        for i in self.ba_idx:
            if pos[2 * n + i] >= 0:
                Jy[pos[2 * n + i], pos[2 * n + i]] = 1.0

        # projection rows
        inputs = self._local_inputs(X, phi, gam, zd, phid)
        dg, dz = self._local_jacobian(X, inputs, t)
        neu = np.flatnonzero(~self.dirichlet)
        scale = 1.0 / self.patch
        Jyd_rows, Jyd_cols, Jyd_vals = [], [], []
        for dloc, rsel, roff in ((dg, neu, n), (dz, self.fs_idx, 2 * n)):
            for s, coff in ((0, 0), (1, n), (2, 2 * n)):
                blk = self._sparse_block(dloc, s)[rsel]
                blk = sp.diags(scale[rsel]) @ blk
                put(roff + rsel, coff + np.arange(n), blk.toarray())
            for s, coff in ((3, 2 * n), (4, 0)):
                blk = (sp.diags(scale[rsel]) @ self._sparse_block(dloc, s)[rsel]).tocoo()
                r_full = roff + rsel[blk.row]
                c_full = coff + blk.col
                keep = (pos[r_full] >= 0) & (pos[c_full] >= 0)
                Jyd_rows.append(pos[r_full[keep]])
                Jyd_cols.append(pos[c_full[keep]])
                Jyd_vals.append(blk.data[keep])
        Jyd = sp.csr_matrix((np.concatenate(Jyd_vals), (np.concatenate(Jyd_rows), np.concatenate(Jyd_cols))),
                            shape=Jy.shape)
        return Jy, Jyd

    def jacobian(self, yd, y, t, c=0.0, full=False):
        """Dense iteration matrix dF/dy + c dF/dy'."""
        Jy, Jyd = self.jacobians(yd, y, t, full=full)
        if c:
            Jy += c * Jyd.toarray()
        return Jy
