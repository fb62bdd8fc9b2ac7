"""Quadrilateral boundary mesh with 1-irregular refinement.

Cells are bilinear quads whose vertices run counter-clockwise when seen from
outside the fluid, so ``X_u x X_v`` is the outward (from the fluid) normal.
Refinement splits a cell into four children; an edge midpoint that is a
vertex of the finer side but not of the coarser neighbour is a hanging node,
placed on the straight coarse edge so the surface stays watertight.
"""
from __future__ import annotations

from enum import IntEnum

import numpy as np

from .quadrature import shape_functions


class Region(IntEnum):
    FREE_SURFACE = 0
    HULL = 1
    BOTTOM = 2
    INFLOW = 3
    FAR_FIELD = 4


class MeshError(ValueError):
    pass


# reference coordinates of the 4 children's vertices inside the parent cell
CHILD_REF = np.array(
    [
        [[0.0, 0.0], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]],
        [[0.5, 0.0], [1.0, 0.0], [1.0, 0.5], [0.5, 0.5]],
        [[0.5, 0.5], [1.0, 0.5], [1.0, 1.0], [0.5, 1.0]],
        [[0.0, 0.5], [0.5, 0.5], [0.5, 1.0], [0.0, 1.0]],
    ]
)


def _edge(a, b):
    return (a, b) if a < b else (b, a)


def bilinear_geometry(Xc, u, v):
    """Evaluate the bilinear map of cells ``Xc`` (m, 4, 3) at points (u, v).

    Returns points, X_u, X_v (each (m, nq, 3)), the area element J (m, nq)
    and the unit normal (m, nq, 3).
    """
    psi, dpu, dpv = shape_functions(np.atleast_1d(u), np.atleast_1d(v))
    X = np.einsum("qk,mkd->mqd", psi, Xc)
    Xu = np.einsum("qk,mkd->mqd", dpu, Xc)
    Xv = np.einsum("qk,mkd->mqd", dpv, Xc)
    cr = np.cross(Xu, Xv)
    J = np.linalg.norm(cr, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = cr / J[..., None]
    return X, Xu, Xv, J, n


class SurfaceMesh:
    """Active cells of a refinement hierarchy plus the data needed to refine it."""

    def __init__(self, nodes, cells, region, geometry=None, level=None,
                 edge_mid=None, mid_parent=None, ideal=None):
        self.ideal = np.array(nodes if ideal is None else ideal, dtype=float)
        self.cells = np.asarray(cells, dtype=np.int64).reshape(-1, 4)
        self.region = np.asarray(region, dtype=np.int64)
        self.geometry = dict(geometry or {})
        self.level = (np.zeros(len(self.cells), dtype=np.int64) if level is None
                      else np.asarray(level, dtype=np.int64))
        self.edge_mid = dict(edge_mid or {})
        n = len(self.ideal)
        if mid_parent is None:
            mid_parent = np.full((n, 2), -1, dtype=np.int64)
        self.mid_parent = np.asarray(mid_parent, dtype=np.int64)
        # filled by the last refine_cells call: parent cell and child slot
        self.parent_cell = np.arange(len(self.cells))
        self.child_slot = np.full(len(self.cells), -1)
        self._finalize()

    # ------------------------------------------------------------------
    def _finalize(self):
        used = np.zeros(len(self.ideal), dtype=bool)
        used[self.cells.ravel()] = True
        self.used = used
        hanging = {}
        for c in self.cells:
            for k in range(4):
                e = _edge(c[k], c[(k + 1) % 4])
                m = self.edge_mid.get(e)
                if m is not None and used[m]:
                    hanging[m] = e
        self.hanging = dict(sorted(hanging.items()))
        nodes = self.ideal.copy()
        # resolve nested hanging nodes: parents first (they are older nodes)
        for m in sorted(self.hanging):
            a, b = self.hanging[m]
            nodes[m] = 0.5 * (nodes[a] + nodes[b])
        self.nodes = nodes

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_cells(self):
        return len(self.cells)

    def cell_vertices(self, nodes=None):
        X = self.nodes if nodes is None else nodes
        return X[self.cells]

    def copy(self):
        m = SurfaceMesh(self.ideal, self.cells, self.region, self.geometry, self.level,
                        self.edge_mid, self.mid_parent)
        return m

    def cells_of(self, regions):
        regions = np.atleast_1d(regions)
        return np.flatnonzero(np.isin(self.region, regions))

    def hanging_constraints(self):
        """List of (node, (parent_a, parent_b), (0.5, 0.5))."""
        return [(m, e, (0.5, 0.5)) for m, e in self.hanging.items()]

    # ------------------------------------------------------------------
    def edge_cells(self):
        ec = {}
        for i, c in enumerate(self.cells):
            for k in range(4):
                ec.setdefault(_edge(c[k], c[(k + 1) % 4]), []).append(i)
        return ec

    def is_one_irregular(self):
        """True when no active edge carries more than one hanging node."""
        for c in self.cells:
            for k in range(4):
                m = self.edge_mid.get(_edge(c[k], c[(k + 1) % 4]))
                if m is None or not self.used[m]:
                    continue
                for sub in (_edge(c[k], m), _edge(m, c[(k + 1) % 4])):
                    mm = self.edge_mid.get(sub)
                    if mm is not None and self.used[mm]:
                        return False
        return True

    def diagonals(self, nodes=None):
        X = self.cell_vertices(nodes)
        return np.maximum(np.linalg.norm(X[:, 2] - X[:, 0], axis=1),
                          np.linalg.norm(X[:, 3] - X[:, 1], axis=1))

    def aspect_ratios(self, nodes=None):
        X = self.cell_vertices(nodes)
        e = np.linalg.norm(X - np.roll(X, -1, axis=1), axis=2)
        return e.max(axis=1) / e.min(axis=1)

    def min_jacobian(self, nodes=None, npts=3):
        """Smallest oriented area element per cell.

        The sign is taken against the normal of the stored node positions, so a
        cell folded over by a moved geometry reports a negative value.
        """
        from .quadrature import gauss_1d
        x, _ = gauss_1d(npts)
        u, v = np.meshgrid(np.r_[0.0, x, 1.0], np.r_[0.0, x, 1.0], indexing="ij")
        u, v = u.ravel(), v.ravel()
        _, _, _, J, n = bilinear_geometry(self.cell_vertices(nodes), u, v)
        if nodes is None:
            return J.min(axis=1)
        _, _, _, _, n0 = bilinear_geometry(self.cell_vertices(), u, v)
        return (J * np.sign(np.einsum("cqd,cqd->cq", n, n0))).min(axis=1)

    def areas(self, nodes=None, order=4):
        from .quadrature import gauss_rule
        rule = gauss_rule(order)
        _, _, _, J, _ = bilinear_geometry(self.cell_vertices(nodes), rule.points[:, 0], rule.points[:, 1])
        return J @ rule.weights

    # ------------------------------------------------------------------
    def curved(self, region) -> bool:
        geo = self.geometry.get(int(region))
        return geo is not None and hasattr(geo, "semi_axes")

    def _project(self, region, p):
        if not self.curved(region):
            return p
        return self.geometry[int(region)].project(p)[0]


def cell_geometry(mesh: SurfaceMesh, cell: int, u: float, v: float):
    """Point, area element and unit normal of ``cell`` at reference (u, v)."""
    X, _, _, J, n = bilinear_geometry(mesh.nodes[mesh.cells[cell]][None], [u], [v])
    return X[0, 0], float(J[0, 0]), n[0, 0]


def _closure(mesh: SurfaceMesh, flags: np.ndarray) -> np.ndarray:
    flags = flags.copy()
    ec = mesh.edge_cells()
    mp = mesh.mid_parent
    changed = True
    while changed:
        changed = False
        for c in np.flatnonzero(flags):
            cell = mesh.cells[c]
            for k in range(4):
                a, b = cell[k], cell[(k + 1) % 4]
                big = None
                if mp[a, 0] >= 0 and b in mp[a]:
                    big = _edge(*mp[a])
                elif mp[b, 0] >= 0 and a in mp[b]:
                    big = _edge(*mp[b])
                if big is None:
                    continue
                for d in ec.get(big, ()):
                    if not flags[d]:
                        flags[d] = True
                        changed = True
    return flags


def refine_cells(mesh: SurfaceMesh, flags) -> SurfaceMesh:
    """Split flagged cells in four, cascading to keep the mesh 1-irregular."""
    flags = np.asarray(flags, dtype=bool)
    if flags.shape != (mesh.n_cells,):
        raise MeshError(f"expected {mesh.n_cells} flags, got {flags.shape}")
    if not flags.any():
        out = mesh.copy()
        return out
    flags = _closure(mesh, flags)

    ideal = [p for p in mesh.ideal]
    mid_parent = [tuple(r) for r in mesh.mid_parent]
    edge_mid = dict(mesh.edge_mid)

    def new_node(p, parent=(-1, -1)):
        ideal.append(np.asarray(p, dtype=float))
        mid_parent.append(parent)
        return len(ideal) - 1

    cells, region, level, parent, slot = [], [], [], [], []
    for c in range(mesh.n_cells):
        v = mesh.cells[c]
        r = mesh.region[c]
        if not flags[c]:
            cells.append(v)
            region.append(r)
            level.append(mesh.level[c])
            parent.append(c)
            slot.append(-1)
            continue
        mids = []
        for k in range(4):
            e = _edge(v[k], v[(k + 1) % 4])
            m = edge_mid.get(e)
            if m is None:
                p = 0.5 * (mesh.ideal[e[0]] + mesh.ideal[e[1]])
                m = new_node(mesh._project(r, p), e)
                edge_mid[e] = m
            mids.append(m)
        Pv = np.array([ideal[i] for i in v])
        Pm = np.array([ideal[i] for i in mids])
        if not mesh.curved(r):
            center = Pv.mean(axis=0)
        else:
            center = mesh._project(r, -0.25 * Pv.sum(axis=0) + 0.5 * Pm.sum(axis=0))
        ce = new_node(center)
        m01, m12, m23, m30 = mids
        kids = [(v[0], m01, ce, m30), (m01, v[1], m12, ce), (ce, m12, v[2], m23), (m30, ce, m23, v[3])]
        for s, kid in enumerate(kids):
            cells.append(kid)
            region.append(r)
            level.append(mesh.level[c] + 1)
            parent.append(c)
            slot.append(s)

    out = SurfaceMesh(np.array(ideal), np.array(cells), np.array(region), mesh.geometry,
                      np.array(level), edge_mid, np.array(mid_parent))
    out.parent_cell = np.array(parent)
    out.child_slot = np.array(slot)
    _check_children(mesh, out)
    return out


def _check_children(old: SurfaceMesh, new: SurfaceMesh):
    kids = np.flatnonzero(new.child_slot >= 0)
    if len(kids) == 0:
        return
    uv = CHILD_REF[new.child_slot[kids]].mean(axis=1)
    par = new.parent_cell[kids]
    # parent normal at the child's centre, child normal at its own centre
    Xp = old.ideal[old.cells[par]]
    _, Xu, Xv, _, _ = bilinear_geometry(Xp, [0.5], [0.5])
    psi_u = np.stack([-(1 - uv[:, 1]), 1 - uv[:, 1], uv[:, 1], -uv[:, 1]], axis=1)
    psi_v = np.stack([-(1 - uv[:, 0]), -uv[:, 0], uv[:, 0], 1 - uv[:, 0]], axis=1)
    npar = np.cross(np.einsum("mk,mkd->md", psi_u, Xp), np.einsum("mk,mkd->md", psi_v, Xp))
    _, _, _, Jc, nc = bilinear_geometry(new.ideal[new.cells[kids]], [0.5], [0.5])
    bad = (np.einsum("md,md->m", npar, nc[:, 0]) <= 0) | ~(Jc[:, 0] > 0)
    if bad.any():
        c = int(par[np.flatnonzero(bad)[0]])
        raise MeshError(f"refinement of cell {c} produced an inverted child")
