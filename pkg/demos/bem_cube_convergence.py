"""Flux recovery on the unit cube for a few harmonic potentials.

Prints the area-weighted L2 error of dphi/dn for each field and mesh, plus the
observed order between successive meshes.  The n = 32 mesh takes about half
a minute on one core; pass a smaller list on the command line to skip it:

    python3 demos/bem_cube_convergence.py 4 8 16
"""
import sys

import numpy as np

from towtank.bem import assemble_bem, solve_laplace
from towtank.domain import box_mesh
from towtank.dofs import assign_double_nodes

NORMALS = np.array([[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]], float)
FIELDS = {
    "x": (lambda X: X[:, 0], lambda X: np.column_stack([np.ones(len(X)), 0 * X[:, 0], 0 * X[:, 0]])),
    "xy": (lambda X: X[:, 0] * X[:, 1], lambda X: np.column_stack([X[:, 1], X[:, 0], 0 * X[:, 0]])),
    "x2-z2": (lambda X: X[:, 0] ** 2 - X[:, 2] ** 2,
              lambda X: np.column_stack([2 * X[:, 0], 0 * X[:, 0], -2 * X[:, 2]])),
}


def main(sizes):
    errors = {k: [] for k in FIELDS}
    for n in sizes:
        mesh = box_mesh(n=(n, n, n))
        dofs = assign_double_nodes(mesh, dirichlet_regions=tuple(range(6)))
        bem = assemble_bem(mesh, dofs)
        X = mesh.nodes[dofs.node]
        raw_w = np.zeros(dofs.n_raw)
        np.add.at(raw_w, dofs.cell_dofs, mesh.areas()[:, None] / 4.0)
        w = dofs.P.T @ raw_w
        for name, (f, grad) in FIELDS.items():
            _, gam = solve_laplace(bem, dofs, f(X), np.zeros(dofs.n_dofs), mesh=mesh)
            exact = np.sum(grad(X) * NORMALS[dofs.region], axis=1)
            errors[name].append(np.sqrt(np.sum(w * (gam - exact) ** 2)))
        print(f"n = {n:3d}  dofs = {dofs.n_dofs:6d}  " +
              "  ".join(f"{k}: {v[-1]:.3e}" for k, v in errors.items()))
    for name, e in errors.items():
        orders = [np.log2(a / b) for a, b in zip(e[:-1], e[1:]) if b > 0]
        print(f"{name:6s} orders: " + ", ".join(f"{o:.2f}" for o in orders))


if __name__ == "__main__":
    main([int(a) for a in sys.argv[1:]] or [4, 8, 16])
