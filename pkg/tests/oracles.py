"""Brute-force reference computations shared by the tests."""

import numpy as np

from memfem.elements import eval_rt_basis, piola_map

_g, _w = np.polynomial.legendre.leggauss(7)
GAUSS_X = 0.5 * (_g + 1.0)
GAUSS_W = 0.5 * _w


def duffy_rule():
    """Collapsed tensor Gauss rule on the reference triangle (degree 13)."""
    xi, eta = np.meshgrid(GAUSS_X, GAUSS_X, indexing="ij")
    w = np.outer(GAUSS_W, GAUSS_W) * (1.0 - xi)
    pts = np.column_stack([(xi).ravel(), ((1.0 - xi) * eta).ravel()])
    return pts, w.ravel()


def rt_field_in_cell(space, coeffs, cell, x, y):
    """RT field and divergence of global ``coeffs`` restricted to ``cell``."""
    ref = space.to_reference(np.full(len(x), cell), x, y)
    v, d = eval_rt_basis(space.order, ref)
    pv, pd = piola_map(space.jacobians[cell], v, d)
    local = coeffs[space.cell_sigma_dofs[cell]] * space.cell_sigma_signs[cell]
    return np.einsum("nbc,b->nc", pv, local), pd @ local


def dg_in_cell(space, coeffs, cell, x, y):
    ref = space.to_reference(np.full(len(x), cell), x, y)
    c = coeffs[space.cell_u_dofs[cell]]
    if space.order == 1:
        return np.full(len(x), c[0])
    return c[0] + c[1] * ref[:, 0] + c[2] * ref[:, 1]


def dense_forms(space, kappa=1.0, K=np.inf):
    """Dense ``A``, ``B``, ``C`` from unit coefficient vectors, cell by cell."""
    mesh = space.mesh
    ns, nu = space.sigma_dofs, space.u_dofs
    A = np.zeros((ns, ns))
    B = np.zeros((nu, ns))
    C = np.zeros((nu, nu))
    pts, w = duffy_rule()
    eye_s, eye_u = np.eye(ns), np.eye(nu)
    for c in range(mesh.n_triangles):
        phys = space.origins[c] + pts @ space.jacobians[c].T
        wc = w * space.dets[c]
        x, y = phys[:, 0], phys[:, 1]
        sdofs = space.cell_sigma_dofs[c]
        udofs = space.cell_u_dofs[c]
        sv = {j: rt_field_in_cell(space, eye_s[j], c, x, y) for j in sdofs}
        uv = {j: dg_in_cell(space, eye_u[j], c, x, y) for j in udofs}
        for i in sdofs:
            for j in sdofs:
                A[i, j] += wc @ np.sum(sv[i][0] * sv[j][0], axis=1) / kappa
            for k in udofs:
                B[k, i] += wc @ (uv[k] * sv[i][1])
        for k in udofs:
            for m in udofs:
                C[k, m] += wc @ (uv[k] * uv[m])
    if np.isfinite(K):
        from memfem.mesh import EdgeTag

        normals = mesh.edge_normals()
        for e in mesh.edges_with_tag(EdgeTag.INTERFACE):
            a, b = mesh.vertices[mesh.edges[e]]
            p = a + GAUSS_X[:, None] * (b - a)
            L = np.linalg.norm(b - a)
            cell = mesh.edge_to_triangles[e, 0]
            dofs = space.cell_sigma_dofs[cell]
            tr = {j: rt_field_in_cell(space, eye_s[j], cell, p[:, 0], p[:, 1])[0] @ normals[e] for j in dofs}
            for i in dofs:
                for j in dofs:
                    A[i, j] += L * GAUSS_W @ (tr[i] * tr[j]) / K
    return A, B, C
