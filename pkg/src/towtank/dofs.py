"""Collocation degrees of freedom with double nodes and hanging constraints.

A *raw* DOF is a (node, region) pair for every node that is a vertex of a
cell in that region, so a node on an edge between two regions carries one
DOF per region ("double nodes") and the normal derivative may jump there.
Raw DOFs sitting on hanging nodes are eliminated through the constraint
matrix ``P`` (raw values = ``P @ free values``); the remaining free DOFs are
the unknowns and the collocation points.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Region, SurfaceMesh

DIRICHLET, NEUMANN = 0, 1
FS_CLASS, BA_CLASS = 0, 1


@dataclass
class DofLayout:
    raw_node: np.ndarray
    raw_region: np.ndarray
    cell_dofs: np.ndarray  # (n_cells, 4) raw DOF ids
    free: np.ndarray  # raw ids of free DOFs
    raw_to_free: np.ndarray  # -1 for constrained raw DOFs
    P: sp.csr_matrix  # (n_raw, n_free)
    bc: np.ndarray  # DIRICHLET / NEUMANN per free DOF
    zclass: np.ndarray  # FS_CLASS / BA_CLASS per free DOF
    coll_nodes: np.ndarray  # distinct collocation nodes
    dof_row: np.ndarray  # free DOF -> index into coll_nodes
    Q: sp.csr_matrix  # (n_nodes, n_free): free-surface z of every moving node
    moving: np.ndarray  # nodes whose z follows free-surface DOFs

    @property
    def n_dofs(self):
        return len(self.free)

    @property
    def n_raw(self):
        return len(self.raw_node)

    @property
    def node(self):
        return self.raw_node[self.free]

    @property
    def region(self):
        return self.raw_region[self.free]

    @property
    def dirichlet(self):
        return self.bc == DIRICHLET

    @property
    def neumann(self):
        return self.bc == NEUMANN

    @property
    def fs(self):
        return self.zclass == FS_CLASS

    def collocation_points(self, nodes):
        return nodes[self.node]


def assign_double_nodes(mesh: SurfaceMesh, dirichlet_regions=(Region.INFLOW,),
                        free_surface_regions=(Region.FREE_SURFACE,)) -> DofLayout:
    pairs = np.unique(np.column_stack([mesh.cells.ravel(), np.repeat(mesh.region, 4)]), axis=0)
    raw_node, raw_region = pairs[:, 0], pairs[:, 1]
    lookup = {(int(n), int(r)): i for i, (n, r) in enumerate(pairs)}
    cell_dofs = np.array([[lookup[(int(v), int(r))] for v in c]
                          for c, r in zip(mesh.cells, mesh.region)], dtype=np.int64).reshape(-1, 4)

    n_raw = len(pairs)
    hanging = np.array([int(n) in mesh.hanging for n in raw_node], dtype=bool)
    free = np.flatnonzero(~hanging)
    raw_to_free = np.full(n_raw, -1, dtype=np.int64)
    raw_to_free[free] = np.arange(len(free))

    # rows of P as {free: weight}; parents are older nodes so process by node id
    rows: dict[int, dict[int, float]] = {}
    for r in free:
        rows[int(r)] = {int(raw_to_free[r]): 1.0}
    for r in sorted(np.flatnonzero(hanging), key=lambda i: raw_node[i]):
        a, b = mesh.hanging[int(raw_node[r])]
        reg = int(raw_region[r])
        acc: dict[int, float] = {}
        for p in (a, b):
            key = (int(p), reg)
            if key not in lookup:
                raise ValueError(f"hanging node {raw_node[r]} has no parent DOF in region {reg}")
            for j, w in rows[lookup[key]].items():
                acc[j] = acc.get(j, 0.0) + 0.5 * w
        rows[int(r)] = acc
    ii, jj, ww = [], [], []
    for r in range(n_raw):
        for j, w in rows[r].items():
            ii.append(r)
            jj.append(j)
            ww.append(w)
    P = sp.csr_matrix((ww, (ii, jj)), shape=(n_raw, len(free)))

    fr_region = raw_region[free]
    bc = np.where(np.isin(fr_region, dirichlet_regions), DIRICHLET, NEUMANN)
    zclass = np.where(np.isin(fr_region, free_surface_regions), FS_CLASS, BA_CLASS)
    coll_nodes, dof_row = np.unique(raw_node[free], return_inverse=True)

    # vertical coordinate of moving nodes in terms of free-surface DOFs
    fs_raw = np.flatnonzero(np.isin(raw_region, free_surface_regions))
    moving = np.zeros(mesh.n_nodes, dtype=bool)
    moving[raw_node[fs_raw]] = True
    Praw = P[fs_raw]
    Q = sp.csr_matrix((mesh.n_nodes, len(free)))
    if len(fs_raw):
        sel = sp.csr_matrix((np.ones(len(fs_raw)), (raw_node[fs_raw], np.arange(len(fs_raw)))),
                            shape=(mesh.n_nodes, len(fs_raw)))
        Q = (sel @ Praw).tocsr()
    return DofLayout(raw_node, raw_region, cell_dofs, free, raw_to_free, P, bc, zclass,
                     coll_nodes, dof_row.ravel(), Q, moving)
