"""Collocation BEM: kernel, matrices, rigid-mode identity and harmonic oracles."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from towtank.bem import BemAssembler, BemError, assemble_bem, green_kernel, quadratic_surface_gradient, solve_laplace
from towtank.domain import box_mesh
from towtank.dofs import assign_double_nodes

FACE_NORMALS = np.array([[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]], float)


def cube(n, dirichlet=tuple(range(6))):
    m = box_mesh(n=(n, n, n))
    d = assign_double_nodes(m, dirichlet_regions=dirichlet)
    return m, d


@pytest.fixture(scope="module")
def cube4():
    m, d = cube(4)
    return m, d, assemble_bem(m, d)


# --- kernel ---------------------------------------------------------------
def test_green_kernel_unit_distance():
    G, _ = green_kernel([0, 0, 0], [1, 0, 0], [0, 0, 1])
    assert G == pytest.approx(1 / (4 * np.pi))
    assert G == pytest.approx(0.0795775, abs=1e-7)


def test_green_kernel_half_distance():
    assert green_kernel([0, 0, 0], [0, 0.5, 0], [1, 0, 0])[0] == pytest.approx(1 / (2 * np.pi))


def test_green_kernel_normal_derivative():
    _, dG = green_kernel([0, 0, 0], [1, 0, 0], [1, 0, 0])
    assert dG == pytest.approx(-1 / (4 * np.pi))


def test_green_kernel_coincident_points():
    with pytest.raises(BemError):
        green_kernel([1, 2, 3], [1, 2, 3], [0, 0, 1])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_green_kernel_gradient_matches_finite_differences(x, y):
    x, y = np.array(x), np.array(y)
    if np.linalg.norm(y - x) < 0.2:
        return
    n = np.array([0.3, -0.5, 0.8]) / np.linalg.norm([0.3, -0.5, 0.8])
    h = 1e-6
    fd = (green_kernel(x, y + h * n, n)[0] - green_kernel(x, y - h * n, n)[0]) / (2 * h)
    assert green_kernel(x, y, n)[1] == pytest.approx(fd, rel=1e-6, abs=1e-10)


# --- matrices -------------------------------------------------------------
def test_alpha_face_and_corner(cube4):
    m, d, B = cube4
    X = m.nodes[d.coll_nodes]
    on_bound = np.isclose(X, 0) | np.isclose(X, 1)
    k = on_bound.sum(axis=1)
    assert np.allclose(B.alpha[k == 1], 0.5, atol=2e-3)
    assert np.allclose(B.alpha[k == 3], 0.125, atol=2e-3)
    assert np.allclose(B.alpha[k == 2], 0.25, atol=2e-3)


def test_rigid_mode_identity_per_row(cube4):
    m, d, B = cube4
    N, D, alpha = B.condensed(d)
    resid = alpha + N.sum(axis=1)
    assert np.abs(resid).max() <= 1e-8 * np.abs(N).sum(axis=1).max()


def test_single_layer_is_positive(cube4):
    # the single-layer kernel is positive, so every row sum of D is too
    m, d, B = cube4
    assert (B.D.sum(axis=1) > 0).all()


def test_linear_field_consistency(cube4):
    # [DERIVED] alpha phi + N phi - D dphi/dn vanishes up to quadrature error for phi = x
    m, d, B = cube4
    N, D, alpha = B.condensed(d)
    X = m.nodes[d.node]
    g = FACE_NORMALS[d.region][:, 0]
    r = alpha * X[:, 0] + N @ X[:, 0] - D @ g
    assert np.abs(r).max() < 1e-6


def test_incremental_assembly_matches_full():
    m, d = cube(3)
    A = BemAssembler(m, d)
    X = m.nodes.copy()
    top = np.flatnonzero(np.isclose(X[:, 2], 1.0))
    X[top, 2] += 0.05 * np.sin(3 * X[top, 0]) * np.sin(2 * X[top, 1])
    full = BemAssembler(m, d).assemble(X)
    A.set_moving_nodes(top, m.nodes)
    inc = A.assemble(X)
    assert np.allclose(inc.N, full.N, atol=1e-13)
    assert np.allclose(inc.D, full.D, atol=1e-13)


def test_assembly_rejects_inverted_cell():
    from towtank.mesh import MeshError

    m, d = cube(2)
    X = m.nodes.copy()
    c = m.cells[0]
    X[c[0]], X[c[2]] = X[c[2]].copy(), X[c[0]].copy()
    with pytest.raises(MeshError, match="cell"):
        BemAssembler(m, d).assemble(X)


def test_z_derivatives_match_finite_differences():
    m, d = cube(2)
    A = BemAssembler(m, d)
    top = np.flatnonzero(np.isclose(m.nodes[:, 2], 1.0))
    rng = np.random.default_rng(3)
    phi = rng.normal(size=d.n_raw)
    gam = rng.normal(size=d.n_raw)
    X = m.nodes.copy()
    dA, dS = A.z_derivatives(X, phi, gam, top)
    h = 1e-6
    for j, node in enumerate(top[:4]):
        Xp, Xm = X.copy(), X.copy()
        Xp[node, 2] += h
        Xm[node, 2] -= h
        Bp, Bm = A.assemble(Xp), A.assemble(Xm)
        fd = ((Bp.N @ phi - Bp.D @ gam) - (Bm.N @ phi - Bm.D @ gam)) / (2 * h)
        fd_s = (Bp.N.sum(1) - Bm.N.sum(1)) / (2 * h)
        assert np.allclose(dA[:, j], fd, atol=1e-6)
        assert np.allclose(dS[:, j], fd_s, atol=1e-6)


# --- solve ----------------------------------------------------------------
def test_constant_dirichlet_gives_zero_flux(cube4):
    m, d, B = cube4
    phi, gam = solve_laplace(B, d, np.ones(d.n_dofs), np.zeros(d.n_dofs), mesh=m)
    assert np.abs(gam).max() < 1e-8


def test_linear_dirichlet_recovers_normal_component(cube4):
    m, d, B = cube4
    X = m.nodes[d.node]
    phi, gam = solve_laplace(B, d, X[:, 0], np.zeros(d.n_dofs), mesh=m)
    exact = FACE_NORMALS[d.region][:, 0]
    assert np.abs(gam - exact).max() < 1e-6


def test_mixed_problem_recovers_potential():
    # Dirichlet phi = x on x = 0, Neumann n_x elsewhere
    errs = []
    for n in (2, 4):
        m, d = cube(n, dirichlet=(0,))
        B = assemble_bem(m, d)
        X = m.nodes[d.node]
        g = FACE_NORMALS[d.region][:, 0]
        phi, gam = solve_laplace(B, d, X[:, 0], g, mesh=m)
        errs.append(np.abs(phi - X[:, 0]).max())
    assert errs[-1] < 1e-5


def test_quadratic_field_error_decreases():
    errs = []
    for n in (2, 4):
        m, d = cube(n)
        B = assemble_bem(m, d)
        X = m.nodes[d.node]
        f = X[:, 0] ** 2 - X[:, 2] ** 2
        grad = np.column_stack([2 * X[:, 0], 0 * X[:, 0], -2 * X[:, 2]])
        _, gam = solve_laplace(B, d, f, np.zeros(d.n_dofs), mesh=m)
        errs.append(np.abs(gam - (grad * FACE_NORMALS[d.region]).sum(1)).max())
    assert errs[1] < errs[0]


def test_all_neumann_problem_is_singular():
    m, d = cube(2, dirichlet=())
    B = assemble_bem(m, d)
    with pytest.raises(BemError):
        solve_laplace(B, d, np.zeros(d.n_dofs), np.zeros(d.n_dofs), mesh=m)


def test_quadratic_surface_gradient_exact_for_quadratics():
    m, d = cube(4)
    X = m.nodes[d.node]
    f = X[:, 0] * X[:, 1] + 0.5 * X[:, 1] ** 2
    dof = int(np.flatnonzero((d.region == 5) & np.all(np.isclose(X, [0.5, 0.5, 1.0]), axis=1))[0])
    g, n = quadratic_surface_gradient(m, d, f, dof)
    assert np.allclose(np.abs(n), [0, 0, 1])
    assert np.allclose(g, [0.5, 1.0, 0.0], atol=1e-10)
