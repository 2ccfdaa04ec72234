import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from memfem.assembly import assemble_B, assemble_C
from memfem.checks import random_polynomial_field
from memfem.elements import (
    REF_VERTICES,
    FunctionSpacePair,
    canonical_interpolation,
    eval_dg_basis,
    eval_rt_basis,
    l2_projection,
    piola_map,
)
from memfem.mesh import build_structured
from memfem.quadrature import triangle_rule

GAUSS_X, GAUSS_W = np.polynomial.legendre.leggauss(8)
GAUSS_X = 0.5 * (GAUSS_X + 1.0)
GAUSS_W = 0.5 * GAUSS_W


def ref_edge(k):
    a = REF_VERTICES[(k + 1) % 3]
    b = REF_VERTICES[(k + 2) % 3]
    return a, b


def eval_in_cell(space, coeffs, cell, x, y):
    """RT field of ``coeffs`` restricted to ``cell`` at physical points."""
    ref = space.to_reference(np.full(len(x), cell), x, y)
    v, d = eval_rt_basis(space.order, ref)
    pv, _ = piola_map(space.jacobians[cell], v, d)
    local = coeffs[space.cell_sigma_dofs[cell]] * space.cell_sigma_signs[cell]
    return np.einsum("nbc,b->nc", pv, local)


@pytest.mark.parametrize("order, M", [(1, 2), (1, 4), (2, 2), (2, 4)])
def test_dof_counts(spaces, order, M):
    s = spaces(M, order)
    E, T = s.mesh.n_edges, s.mesh.n_triangles
    if order == 1:
        assert (s.sigma_dofs, s.u_dofs) == (E, T)
    else:
        assert (s.sigma_dofs, s.u_dofs) == (2 * E + 2 * T, 3 * T)


def test_bad_order():
    with pytest.raises(ValueError):
        FunctionSpacePair(build_structured(2), 3)


def test_rt0_hypotenuse_basis():
    # local edge 0 runs from vertex (1,0) to (0,1)
    v, _ = eval_rt_basis(1, np.array([[0.0, 0.0]]))
    np.testing.assert_allclose(v[0, 0], [0.0, 0.0], atol=1e-15)
    n = np.array([1.0, 1.0]) / np.sqrt(2)
    a, b = ref_edge(0)
    pts = a + GAUSS_X[:, None] * (b - a)
    vals, _ = eval_rt_basis(1, pts)
    trace = vals[:, 0] @ n
    np.testing.assert_allclose(trace, trace[0], atol=1e-14)
    # the constant trace integrates to one over the edge of length sqrt 2
    assert abs(np.sqrt(2) * GAUSS_W @ trace - 1.0) < 1e-13


def test_rt_basis_dual_to_edge_moments():
    for order in (1, 2):
        nb = 3 if order == 1 else 8
        D = np.zeros((nb, nb))
        for k in range(3):
            a, b = ref_edge(k)
            d = b - a
            L = np.hypot(*d)
            n = np.array([d[1], -d[0]]) / L
            vals, _ = eval_rt_basis(order, a + GAUSS_X[:, None] * d)
            trace = vals @ n
            q = [np.ones_like(GAUSS_X), 2 * GAUSS_X - 1][:order]
            for j, qj in enumerate(q):
                D[order * k + j] = L * (GAUSS_W * qj) @ trace
        if order == 2:
            r = triangle_rule(6)
            vals, _ = eval_rt_basis(2, r.points)
            D[6:] = np.einsum("q,qbc->cb", r.weights, vals)
        np.testing.assert_allclose(D, np.eye(nb), atol=1e-13)


def test_rt0_divergences_constant(rng):
    pts = rng.random((20, 2))
    pts = pts[pts.sum(axis=1) <= 1]
    _, d = eval_rt_basis(1, pts)
    np.testing.assert_allclose(d.sum(axis=1), d[0].sum(), atol=1e-13)


@pytest.mark.parametrize("order", [1, 2])
def test_rt_divergence_matches_finite_differences(order, rng):
    pts = rng.random((10, 2)) * 0.45 + 0.05
    h = 1e-6
    dx = (eval_rt_basis(order, pts + [h, 0])[0] - eval_rt_basis(order, pts - [h, 0])[0]) / (2 * h)
    dy = (eval_rt_basis(order, pts + [0, h])[0] - eval_rt_basis(order, pts - [0, h])[0]) / (2 * h)
    _, d = eval_rt_basis(order, pts)
    np.testing.assert_allclose(dx[..., 0] + dy[..., 1], d, atol=1e-6)


def test_rt1_edge_traces_span_linears():
    for k in range(3):
        a, b = ref_edge(k)
        d = b - a
        n = np.array([d[1], -d[0]]) / np.hypot(*d)
        s = np.array([0.2, 0.7])
        vals, _ = eval_rt_basis(2, a + s[:, None] * d)
        trace = vals[:, [2 * k, 2 * k + 1]] @ n
        assert abs(np.linalg.det(trace)) > 1e-8


def test_piola_identity_and_translation():
    v = np.array([[0.3, -0.7]])
    d = np.array([1.3])
    pv, pd = piola_map(np.eye(2), v, d)
    np.testing.assert_array_equal(pv, v)
    np.testing.assert_array_equal(pd, d)


def test_piola_scaling_matches_analytic_divergence(rng):
    # physical field F(x) = J vhat(x / h) / det J on the triangle scaled by h
    h = 0.25
    J = h * np.eye(2)
    x = rng.random((6, 2)) * 0.4 * h + 0.05 * h
    vals, divs = eval_rt_basis(2, x / h)
    pv, pd = piola_map(J, vals, divs)
    np.testing.assert_allclose(pv, vals / h, atol=1e-14)
    eps = 1e-7
    Fx = lambda p: piola_map(J, *eval_rt_basis(2, p / h))[0]
    fd = (Fx(x + [eps, 0])[..., 0] - Fx(x - [eps, 0])[..., 0]
          + Fx(x + [0, eps])[..., 1] - Fx(x - [0, eps])[..., 1]) / (2 * eps)
    np.testing.assert_allclose(pd, fd, rtol=1e-5, atol=1e-5)
    np.testing.assert_allclose(pd, divs / h**2, atol=1e-12)


def test_piola_rejects_degenerate():
    with pytest.raises(ValueError):
        piola_map(np.array([[1.0, 2.0], [0.5, 1.0]]), np.zeros(2), np.zeros(()))
    with pytest.raises(ValueError):
        piola_map(np.array([[0.0, 1.0], [1.0, 0.0]]), np.zeros(2), np.zeros(()))


@pytest.mark.parametrize("order", [1, 2])
def test_normal_trace_continuity(spaces, order, rng):
    s = spaces(4, order)
    m = s.mesh
    coeffs = rng.standard_normal(s.sigma_dofs)
    normals = m.edge_normals()
    shared = np.flatnonzero((m.edge_to_triangles >= 0).all(axis=1))
    t = np.array([0.15, 0.5, 0.85])
    for e in shared:
        a, b = m.vertices[m.edges[e]]
        p = a + t[:, None] * (b - a)
        t0, t1 = m.edge_to_triangles[e]
        v0 = eval_in_cell(s, coeffs, t0, p[:, 0], p[:, 1]) @ normals[e]
        v1 = eval_in_cell(s, coeffs, t1, p[:, 0], p[:, 1]) @ normals[e]
        np.testing.assert_allclose(v0, v1, atol=1e-12)


@pytest.mark.parametrize("order", [1, 2])
def test_shared_edge_dofs_used_twice(spaces, order):
    s = spaces(4, order)
    m = s.mesh
    for e in range(m.n_edges):
        for dof in s.edge_dofs(np.array([e])):
            refs = np.argwhere(s.cell_sigma_dofs == dof)
            assert len(refs) == (m.edge_to_triangles[e] >= 0).sum()


def test_edge_signs_opposite_on_shared_edges(spaces):
    s = spaces(4, 1)
    m = s.mesh
    for e in np.flatnonzero((m.edge_to_triangles >= 0).all(axis=1)):
        signs = []
        for t in m.edge_to_triangles[e]:
            k = list(m.triangle_edges[t]).index(e)
            # local edges run counter-clockwise, so the local normal is outward
            n_out = m.outward_normal(e, t)
            signs.append(s.edge_signs[t, k] * np.sign(n_out @ m.edge_normals()[e]))
        assert signs[0] == signs[1]


@pytest.mark.parametrize("order", [1, 2])
def test_interpolation_idempotent(spaces, order, rng):
    s = spaces(4, order)
    coeffs = rng.standard_normal(s.sigma_dofs)
    again = canonical_interpolation(s, s.sigma_field(coeffs))
    np.testing.assert_allclose(again, coeffs, atol=1e-12)


def test_constant_field_exact_rt0(spaces):
    s = spaces(4, 1)
    tau = lambda x, y: np.stack(np.broadcast_arrays(np.ones_like(x), np.zeros_like(x)), axis=-1)
    coeffs = canonical_interpolation(s, tau)
    r = triangle_rule(4)
    vals = s.eval_sigma(coeffs, r.points)
    np.testing.assert_allclose(vals[..., 0], 1.0, atol=1e-13)
    np.testing.assert_allclose(vals[..., 1], 0.0, atol=1e-13)


@pytest.mark.parametrize("order", [1, 2])
def test_commuting_diagram_x2y(spaces, order):
    s = spaces(4, order)
    tau = lambda x, y: np.stack([x**2 * y, -x * y**2], axis=-1)
    div = lambda x, y: 2 * x * y - 2 * x * y + 0 * x
    B, C = assemble_B(s), assemble_C(s).tocsc()
    lhs = spla.spsolve(C, B @ canonical_interpolation(s, tau))
    np.testing.assert_allclose(lhs, l2_projection(s, div), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2]), st.sampled_from([2, 4]))
def test_commuting_diagram_random_cubics(seed, order, M):
    s = FunctionSpacePair(build_structured(M), order)
    tau, div = random_polynomial_field(np.random.default_rng(seed))
    lhs = spla.spsolve(assemble_C(s).tocsc(), assemble_B(s) @ canonical_interpolation(s, tau))
    assert np.abs(lhs - l2_projection(s, div)).max() <= 1e-11


@pytest.mark.parametrize("order", [1, 2])
def test_facet_and_interior_moments_vanish(spaces, order, rng):
    s = spaces(4, order)
    m = s.mesh
    tau, _ = random_polynomial_field(rng)
    coeffs = canonical_interpolation(s, tau)
    edges = np.arange(m.n_edges)
    cells = m.edge_to_triangles[:, 0]

    def residual_flux(pts, normals):
        out = np.einsum("eqc,eqc->eq", tau(pts[..., 0], pts[..., 1]), normals)
        for e in edges:
            out[e] -= eval_in_cell(s, coeffs, cells[e], pts[e, :, 0], pts[e, :, 1]) @ normals[e, 0]
        return out

    assert np.abs(s.edge_moments(edges, residual_flux)).max() <= 1e-12
    if order == 2:
        r = triangle_rule(8)
        pts = s.physical_points(r.points)
        d = tau(pts[..., 0], pts[..., 1]) - s.eval_sigma(coeffs, r.points)
        assert np.abs(np.einsum("q,tqc->tc", r.weights, d)).max() <= 1e-12


def test_l2_projection_piecewise_constant(spaces, rng):
    s = spaces(4, 1)
    vals = rng.standard_normal(s.mesh.n_triangles)
    m = s.mesh
    v = lambda x, y: vals[m.locate(x.ravel(), y.ravel())].reshape(x.shape)
    # quadrature points are interior, so locate is unambiguous
    np.testing.assert_allclose(l2_projection(s, v), vals, atol=1e-13)


def test_l2_projection_linear_exact(spaces):
    s = spaces(4, 2)
    coeffs = l2_projection(s, lambda x, y: x + y)
    r = triangle_rule(3)
    pts = s.physical_points(r.points)
    np.testing.assert_allclose(s.eval_u(coeffs, r.points), pts[..., 0] + pts[..., 1], atol=1e-13)


def projection_error(space, v, degree=10):
    r = triangle_rule(degree)
    pts = space.physical_points(r.points)
    e = space.eval_u(l2_projection(space, v), r.points) - v(pts[..., 0], pts[..., 1])
    return np.sqrt(np.sum(r.weights[None] * space.dets[:, None] * e**2))


def test_l2_projection_first_order(spaces):
    v = lambda x, y: np.sin(np.pi * x)
    ratio = projection_error(spaces(8, 1), v) / projection_error(spaces(16, 1), v)
    assert abs(np.log2(ratio) - 1.0) < 0.1


def test_l2_projection_orthogonality(spaces, rng):
    s = spaces(2, 2)
    v = lambda x, y: np.exp(x) * np.cos(3 * y)
    coeffs = l2_projection(s, v)
    r = triangle_rule(10)
    pts = s.physical_points(r.points)
    resid = v(pts[..., 0], pts[..., 1]) - s.eval_u(coeffs, r.points)
    phi = eval_dg_basis(2, r.points)
    np.testing.assert_allclose(np.einsum("q,tq,qi->ti", r.weights, resid, phi), 0, atol=1e-14)


def interpolation_error(space, tau):
    r = triangle_rule(10)
    pts = space.physical_points(r.points)
    e = space.eval_sigma(canonical_interpolation(space, tau), r.points) - tau(pts[..., 0], pts[..., 1])
    return np.sqrt(np.sum(r.weights[None] * space.dets[:, None] * np.sum(e**2, axis=-1)))


@pytest.mark.slow
@pytest.mark.parametrize("order", [1, 2])
def test_interpolation_rate(spaces, order):
    tau = lambda x, y: np.stack([np.sin(np.pi * x) * np.cos(y), np.exp(x * y)], axis=-1)
    rate = np.log2(interpolation_error(spaces(32, order), tau) / interpolation_error(spaces(64, order), tau))
    assert abs(rate - order) <= 0.2
