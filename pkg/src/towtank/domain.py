"""Construction of the towing-tank boundary mesh and of test boxes."""
from __future__ import annotations

import numpy as np

from .geometry import Plane, Spheroid
from .mesh import Region, SurfaceMesh, bilinear_geometry, refine_cells
from .scenario import Scenario, ScenarioError

FACES = ("x0", "x1", "y0", "y1", "z0", "z1")


def box_mesh(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0), n=(2, 2, 2), labels=None):
    """Surface of an axis-aligned box, fluid inside, normals pointing out.

    ``labels`` maps face names ('x0', 'x1', 'y0', 'y1', 'z0', 'z1') to region
    ids; by default every face gets its own label 0..5 in that order.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    nx, ny, nz = (int(k) for k in np.broadcast_to(n, 3))
    labels = labels or {f: i for i, f in enumerate(FACES)}
    xs = np.linspace(lo[0], hi[0], nx + 1)
    ys = np.linspace(lo[1], hi[1], ny + 1)
    zs = np.linspace(lo[2], hi[2], nz + 1)
    index = {}
    nodes = []

    def nid(i, j, k):
        key = (i, j, k)
        if key not in index:
            index[key] = len(nodes)
            nodes.append((xs[i], ys[j], zs[k]))
        return index[key]

    cells, region = [], []

    def add(face, quads):
        for q in quads:
            cells.append([nid(*p) for p in q])
            region.append(labels[face])

    add("z1", [[(i, j, nz), (i + 1, j, nz), (i + 1, j + 1, nz), (i, j + 1, nz)]
               for j in range(ny) for i in range(nx)])
    add("z0", [[(i, j, 0), (i, j + 1, 0), (i + 1, j + 1, 0), (i + 1, j, 0)]
               for j in range(ny) for i in range(nx)])
    add("x0", [[(0, j, k), (0, j, k + 1), (0, j + 1, k + 1), (0, j + 1, k)]
               for k in range(nz) for j in range(ny)])
    add("x1", [[(nx, j, k), (nx, j + 1, k), (nx, j + 1, k + 1), (nx, j, k + 1)]
               for k in range(nz) for j in range(ny)])
    add("y0", [[(i, 0, k), (i + 1, 0, k), (i + 1, 0, k + 1), (i, 0, k + 1)]
               for k in range(nz) for i in range(nx)])
    add("y1", [[(i, ny, k), (i, ny, k + 1), (i + 1, ny, k + 1), (i + 1, ny, k)]
               for k in range(nz) for i in range(nx)])
    geometry = {}
    normals = {"x0": (-1, 0, 0), "x1": (1, 0, 0), "y0": (0, -1, 0), "y1": (0, 1, 0),
               "z0": (0, 0, -1), "z1": (0, 0, 1)}
    for f, lab in labels.items():
        p = np.where(np.array(normals[f]) > 0, hi, lo)
        geometry.setdefault(int(lab), Plane(tuple(p), normals[f]))
    return SurfaceMesh(np.array(nodes), np.array(cells), np.array(region), geometry)


def spheroid_patch(center, semi_axes):
    """Four-cell coarse mesh of a spheroid with normals pointing to its centre."""
    c = np.asarray(center, dtype=float)
    a, b, r = semi_axes
    nose = c + (-a, 0, 0)
    tail = c + (a, 0, 0)
    th = np.arange(4) * np.pi / 2
    ring = c + np.column_stack([np.zeros(4), b * np.cos(th), r * np.sin(th)])
    nodes = np.vstack([nose, tail, ring])
    cells = [[0, 2 + k, 1, 2 + (k + 1) % 4] for k in range(4)]
    return nodes, np.array(cells)


def _merge(parts):
    nodes, cells, region = [], [], []
    off = 0
    for X, C, r in parts:
        nodes.append(X)
        cells.append(C + off)
        region.append(np.full(len(C), r))
        off += len(X)
    return np.vstack(nodes), np.vstack(cells), np.concatenate(region)


def _normal_spread(mesh: SurfaceMesh, cells, geometry):
    """Largest angle (degrees) between surface normals at the corners of each cell."""
    X = mesh.nodes[mesh.cells[cells]].reshape(-1, 3)
    n = geometry.normal_at(geometry.project(X)).reshape(-1, 4, 3)
    dots = np.einsum("mid,mjd->mij", n, n)
    return np.degrees(np.arccos(np.clip(dots.min(axis=(1, 2)), -1, 1)))


def _footprint_distance(points, half_length):
    x = np.clip(points[:, 0], -half_length, half_length)
    return np.hypot(points[:, 0] - x, points[:, 1])


def build_domain_mesh(scenario: Scenario, curvature_cycles=None) -> SurfaceMesh:
    """Coarse tank boundary, refined on the hull and near its footprint."""
    sc = scenario
    if sc.hull.submergence <= sc.hull.radius:
        raise ScenarioError(
            f"hull pierces the free surface: submergence {sc.hull.submergence} "
            f"<= radius {sc.hull.radius}")
    d = sc.domain
    depth = sc.flow.depth
    lo = (sc.x_min, -sc.half_width, -depth)
    hi = (sc.x_max, sc.half_width, 0.0)
    nx = max(1, int(round((hi[0] - lo[0]) / d.fs_cell)))
    ny = max(1, int(round((hi[1] - lo[1]) / d.fs_cell)))
    nz = max(1, int(round(depth / d.wall_cell)))
    labels = {"z1": Region.FREE_SURFACE, "z0": Region.BOTTOM, "x0": Region.INFLOW,
              "x1": Region.FAR_FIELD, "y0": Region.FAR_FIELD, "y1": Region.FAR_FIELD}
    box = box_mesh(lo, hi, (nx, ny, nz), labels)
    center = (0.0, 0.0, -sc.hull.submergence)
    axes = (0.5 * sc.hull.length, sc.hull.radius, sc.hull.radius)
    hn, hc = spheroid_patch(center, axes)
    nodes, cells, region = _merge([(box.ideal, box.cells, box.region), (hn, hc, Region.HULL)])
    geometry = {int(Region.HULL): Spheroid(center, axes),
                int(Region.BOTTOM): Plane((0, 0, -depth), (0, 0, -1)),
                int(Region.INFLOW): Plane((lo[0], 0, 0), (-1, 0, 0)),
                int(Region.FREE_SURFACE): None}
    mesh = SurfaceMesh(nodes, cells, region, geometry)

    # hull: curvature driven cycles
    cycles = sc.mesh.curvature_cycles if curvature_cycles is None else curvature_cycles
    for _ in range(cycles):
        hull = mesh.cells_of(Region.HULL)
        flag_h = (_normal_spread(mesh, hull, mesh.geometry[int(Region.HULL)]) > sc.mesh.curvature_angle) | (
            mesh.diagonals()[hull] > sc.mesh.max_diagonal)
        if not flag_h.any():
            break
        flags = np.zeros(mesh.n_cells, dtype=bool)
        flags[hull[flag_h]] = True
        mesh = refine_cells(mesh, flags)

    # free surface: graded refinement towards the hull footprint
    for _ in range(12):
        fs = mesh.cells_of(Region.FREE_SURFACE)
        cen = mesh.nodes[mesh.cells[fs]].mean(axis=1)
        dist = _footprint_distance(cen, 0.5 * sc.hull.length)
        target = d.fs_min_cell * np.sqrt(2) + d.fs_grading * dist
        flag_f = mesh.diagonals()[fs] > target
        if not flag_f.any():
            break
        flags = np.zeros(mesh.n_cells, dtype=bool)
        flags[fs[flag_f]] = True
        mesh = refine_cells(mesh, flags)

    # aspect-ratio smoothing
    for _ in range(sc.mesh.aspect_cycles):
        bad = mesh.aspect_ratios() > sc.mesh.aspect_ratio
        if not bad.any():
            break
        mesh = refine_cells(mesh, bad)
    return mesh
