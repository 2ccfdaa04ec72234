"""Raviart-Thomas / discontinuous Galerkin pairs on triangles.

The RT space of index ``l`` (``l = 1`` lowest order, ``l = 2`` next) pairs
with piecewise polynomials of degree ``l - 1``.  Degrees of freedom are
integral moments:

* edge moments ``int_F tau . n_F q ds`` against ``q in {1, 2s - 1}``
  (``P_{l-1}`` on the edge, ``s`` the global edge parameter from the
  lower to the higher vertex index);
* for ``l = 2``, two interior moments per triangle, the reference-cell
  moments ``int_That tau_hat dx`` of the Piola pull-back.

Global basis functions restricted to a cell are ``sign * Piola(phi_hat)``
with the reference nodal basis ``phi_hat``.  Only the constant edge moment
needs a sign, because reversing an edge flips both the normal and the odd
edge polynomial.
"""

from __future__ import annotations

from functools import cached_property, lru_cache
from typing import Callable

import numpy as np

from .mesh import Mesh
from .quadrature import edge_rule, triangle_rule

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

# rules used for DOF functionals, interpolation and projection of smooth data
MAX_EDGE = 11
MAX_TRIANGLE = 10

VectorField = Callable[[np.ndarray, np.ndarray], np.ndarray]
ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]


def check_order(order: int) -> int:
    if order not in (1, 2):
        raise ValueError(f"space order l must be 1 or 2, got {order}")
    return order


def n_rt_local(order: int) -> int:
    return 3 if order == 1 else 8


def n_dg_local(order: int) -> int:
    return 1 if order == 1 else 3


def edge_polynomials(order: int, s: np.ndarray) -> np.ndarray:
    """Edge test polynomials, shape ``(len(s), order)``."""
    s = np.asarray(s, dtype=float)
    if order == 1:
        return np.ones((len(s), 1))
    return np.column_stack([np.ones_like(s), 2.0 * s - 1.0])


def _spanning_set(order: int, pts: np.ndarray):
    """Monomial spanning set of the reference RT space: values and divergences."""
    x, y = pts[:, 0], pts[:, 1]
    one, zero = np.ones_like(x), np.zeros_like(x)
    if order == 1:
        vals = [(one, zero), (zero, one), (x, y)]
        divs = [zero, zero, 2 * one]
    else:
        vals = [
            (one, zero), (zero, one),
            (x, zero), (zero, x),
            (y, zero), (zero, y),
            (x * x, x * y), (x * y, y * y),
        ]
        divs = [zero, zero, one, zero, zero, one, 3 * x, 3 * y]
    v = np.stack([np.stack(c, axis=-1) for c in vals], axis=1)
    return v, np.stack(divs, axis=1)


def _local_dof_matrix(order: int, field_values: Callable) -> np.ndarray:
    """Apply the local DOF functionals of the reference cell to a family of fields.

    ``field_values(pts)`` returns values of shape ``(n, nf, 2)``.  Result has
    shape ``(ndof, nf)``.
    """
    erule = edge_rule(MAX_EDGE)
    rows = []
    for k in range(3):
        a = REF_VERTICES[(k + 1) % 3]
        b = REF_VERTICES[(k + 2) % 3]
        d = b - a
        length = np.hypot(*d)
        normal = np.array([d[1], -d[0]]) / length
        pts = a + erule.points[:, None] * d
        vals = field_values(pts) @ normal
        q = edge_polynomials(order, erule.points)
        rows.append(length * np.einsum("q,qj,qf->jf", erule.weights, q, vals))
    if order == 2:
        trule = triangle_rule(MAX_TRIANGLE)
        vals = field_values(trule.points)
        rows.append(np.einsum("q,qfc->cf", trule.weights, vals))
    return np.vstack(rows)


@lru_cache(maxsize=None)
def _rt_coefficients(order: int) -> np.ndarray:
    D = _local_dof_matrix(order, lambda p: _spanning_set(order, p)[0])
    C = np.linalg.inv(D)
    C.flags.writeable = False
    return C


def eval_rt_basis(order: int, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reference RT nodal basis at ``points`` (inside the reference triangle).

    Returns values of shape ``(n, nb, 2)`` and divergences of shape ``(n, nb)``
    with ``nb = 3`` for ``l = 1`` and ``nb = 8`` for ``l = 2``.  Behaviour
    outside the closed reference triangle is not defined.
    """
    check_order(order)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    v, d = _spanning_set(order, pts)
    C = _rt_coefficients(order)
    return np.einsum("nmc,mj->njc", v, C), d @ C


def eval_dg_basis(order: int, points: np.ndarray) -> np.ndarray:
    """Reference DG basis ``{1}`` or ``{1, x, y}``, shape ``(n, nb)``."""
    check_order(order)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if order == 1:
        return np.ones((len(pts), 1))
    return np.column_stack([np.ones(len(pts)), pts[:, 0], pts[:, 1]])


def piola_map(
    jacobian: np.ndarray, ref_value: np.ndarray, ref_div: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Contravariant Piola transform ``J v / det J``, ``div / det J``.

    ``jacobian`` has shape ``(..., 2, 2)``; ``ref_value`` ``(..., 2)`` and
    ``ref_div`` ``(...)`` must broadcast against its leading dimensions.
    """
    J = np.asarray(jacobian, dtype=float)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(det <= 0):
        raise ValueError("degenerate or inverted triangle: det J <= 0")
    v = np.einsum("...ij,...j->...i", J, ref_value) / det[..., None]
    return v, np.asarray(ref_div) / det


class FunctionSpacePair:
    """RT space of index ``order`` and its matching DG space on ``mesh``."""

    def __init__(self, mesh: Mesh, order: int):
        self.mesh = mesh
        self.order = check_order(order)
        E, T = mesh.n_edges, mesh.n_triangles
        l = order

        self.n_rt_local = n_rt_local(l)
        self.n_dg_local = n_dg_local(l)
        self.edge_dof_offsets = l * np.arange(E)
        self.interior_dof_offsets = l * E + 2 * np.arange(T) if l == 2 else None
        self.sigma_dofs = l * E + (2 * T if l == 2 else 0)
        self.u_dofs = self.n_dg_local * T

        tri = mesh.triangles
        # +1 where local edge k (vertex k+1 -> k+2) follows the global orientation
        forward = tri[:, [1, 2, 0]] < tri[:, [2, 0, 1]]
        self.edge_signs = np.where(forward, 1, -1)

        dofs = np.empty((T, self.n_rt_local), dtype=np.int64)
        signs = np.ones((T, self.n_rt_local))
        te = mesh.triangle_edges
        for k in range(3):
            for j in range(l):
                dofs[:, l * k + j] = l * te[:, k] + j
            signs[:, l * k] = self.edge_signs[:, k]
        if l == 2:
            dofs[:, 6] = self.interior_dof_offsets
            dofs[:, 7] = self.interior_dof_offsets + 1
        self.cell_sigma_dofs = dofs
        self.cell_sigma_signs = signs
        self.cell_u_dofs = (
            self.n_dg_local * np.arange(T)[:, None] + np.arange(self.n_dg_local)
        )

        p = mesh.vertices[tri]
        self.origins = p[:, 0]
        J = np.empty((T, 2, 2))
        J[:, :, 0] = p[:, 1] - p[:, 0]
        J[:, :, 1] = p[:, 2] - p[:, 0]
        self.jacobians = J
        self.dets = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        if np.any(self.dets <= 0):
            raise ValueError("mesh contains degenerate or clockwise triangles")

    def __repr__(self) -> str:
        return (
            f"FunctionSpacePair(M={self.mesh.M}, l={self.order}, "
            f"sigma_dofs={self.sigma_dofs}, u_dofs={self.u_dofs})"
        )

    def edge_dofs(self, edges: np.ndarray) -> np.ndarray:
        """Global RT DOFs living on the given edges, flattened edge-major."""
        edges = np.asarray(edges, dtype=np.int64)
        return (self.order * edges[:, None] + np.arange(self.order)).ravel()

    def physical_points(self, ref_points: np.ndarray) -> np.ndarray:
        """Images of reference points in every cell, shape ``(T, n, 2)``."""
        return self.origins[:, None, :] + np.einsum(
            "tij,nj->tni", self.jacobians, np.atleast_2d(ref_points)
        )

    def rt_basis_at(self, ref_points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Signed, Piola-mapped local RT basis: ``(T, n, nb, 2)`` and ``(T, n, nb)``."""
        v, d = eval_rt_basis(self.order, ref_points)
        J = self.jacobians[:, None, None]
        phys_v, phys_d = piola_map(J, v[None], d[None])
        s = self.cell_sigma_signs[:, None, :]
        return phys_v * s[..., None], phys_d * s

    def eval_sigma(self, coeffs: np.ndarray, ref_points: np.ndarray) -> np.ndarray:
        """RT field values at mapped reference points, shape ``(T, n, 2)``."""
        v, _ = self.rt_basis_at(ref_points)
        local = np.asarray(coeffs)[self.cell_sigma_dofs]
        return np.einsum("tnbc,tb->tnc", v, local)

    def eval_div_sigma(self, coeffs: np.ndarray, ref_points: np.ndarray) -> np.ndarray:
        _, d = self.rt_basis_at(ref_points)
        return np.einsum("tnb,tb->tn", d, np.asarray(coeffs)[self.cell_sigma_dofs])

    def eval_u(self, coeffs: np.ndarray, ref_points: np.ndarray) -> np.ndarray:
        """DG field values at mapped reference points, shape ``(T, n)``."""
        phi = eval_dg_basis(self.order, ref_points)
        return np.asarray(coeffs)[self.cell_u_dofs] @ phi.T

    def edge_moments(self, edges: np.ndarray, normal_flux: Callable) -> np.ndarray:
        """Global edge-moment DOF values of a normal flux.

        ``normal_flux(points, normals)`` receives ``(ne, nq, 2)`` physical
        points and the matching global edge normals and returns ``(ne, nq)``
        values of ``tau . n_F``.  Returns ``(ne, l)``.
        """
        mesh = self.mesh
        edges = np.asarray(edges, dtype=np.int64)
        rule = edge_rule(MAX_EDGE)
        a = mesh.vertices[mesh.edges[edges, 0]]
        b = mesh.vertices[mesh.edges[edges, 1]]
        pts = a[:, None, :] + rule.points[None, :, None] * (b - a)[:, None, :]
        normals = np.broadcast_to(mesh.edge_normals()[edges][:, None, :], pts.shape)
        flux = normal_flux(pts, normals)
        q = edge_polynomials(self.order, rule.points)
        lengths = mesh.edge_lengths()[edges]
        return lengths[:, None] * np.einsum("q,qj,eq->ej", rule.weights, q, flux)

    def to_reference(self, cells: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Reference coordinates of physical points in the given cells."""
        d = np.stack([x, y], axis=-1) - self.origins[cells]
        return np.linalg.solve(self.jacobians[cells], d[..., None])[..., 0]

    def sigma_field(self, coeffs: np.ndarray) -> VectorField:
        """Pointwise evaluator ``(x, y) -> (..., 2)`` of an RT coefficient vector."""
        coeffs = np.asarray(coeffs)

        def field(x, y):
            x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
            shape = x.shape
            x, y = x.ravel(), y.ravel()
            cells = self.mesh.locate(x, y)
            ref = self.to_reference(cells, x, y)
            v, d = eval_rt_basis(self.order, ref)
            pv, _ = piola_map(self.jacobians[cells][:, None], v, d)
            local = coeffs[self.cell_sigma_dofs[cells]] * self.cell_sigma_signs[cells]
            return np.einsum("nbc,nb->nc", pv, local).reshape(shape + (2,))

        return field

    @cached_property
    def dg_reference_mass(self) -> np.ndarray:
        rule = triangle_rule(2)
        phi = eval_dg_basis(self.order, rule.points)
        return np.einsum("q,qi,qj->ij", rule.weights, phi, phi)


def canonical_interpolation(space: FunctionSpacePair, tau: VectorField) -> np.ndarray:
    """Canonical RT interpolant of a vector field.

    ``tau(x, y)`` is vectorised and returns an array with a trailing axis of
    length 2.  Edge moments of ``tau - Pi tau`` vanish against ``P_{l-1}(F)``
    and, for ``l = 2``, so do the interior moments against constant vectors.
    """
    mesh = space.mesh
    coeffs = np.zeros(space.sigma_dofs)
    edges = np.arange(mesh.n_edges)

    def flux(pts, normals):
        v = np.asarray(tau(pts[..., 0], pts[..., 1]))
        return np.einsum("eqc,eqc->eq", v, normals)

    coeffs[space.edge_dofs(edges)] = space.edge_moments(edges, flux).ravel()

    if space.order == 2:
        rule = triangle_rule(MAX_TRIANGLE)
        pts = space.physical_points(rule.points)
        v = np.asarray(tau(pts[..., 0], pts[..., 1]))
        # int_T tau dx = det J * sum w tau; pull back with J^{-1}
        integral = space.dets[:, None] * np.einsum("q,tqc->tc", rule.weights, v)
        ref_moment = np.linalg.solve(space.jacobians, integral[..., None])[..., 0]
        coeffs[space.cell_sigma_dofs[:, 6]] = ref_moment[:, 0]
        coeffs[space.cell_sigma_dofs[:, 7]] = ref_moment[:, 1]
    return coeffs


def l2_projection(space: FunctionSpacePair, v: ScalarField, degree: int = MAX_TRIANGLE) -> np.ndarray:
    """Cell-wise L2 projection of a scalar field onto the DG space."""
    rule = triangle_rule(degree)
    pts = space.physical_points(rule.points)
    vals = np.asarray(v(pts[..., 0], pts[..., 1]), dtype=float)
    phi = eval_dg_basis(space.order, rule.points)
    rhs = np.einsum("q,qi,tq->ti", rule.weights, phi, vals)
    # det J cancels between the cell mass matrix and the load vector
    local = np.linalg.solve(space.dg_reference_mass, rhs.T).T
    out = np.empty(space.u_dofs)
    out[space.cell_u_dofs] = local
    return out
