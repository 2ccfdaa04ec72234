"""Assembly of the mixed forms a, b, c, the reaction form d and boundary data.

For species ``i`` the discrete system reads

    a_i(sigma, tau) - b(tau, u) = -<g_i, tau . n>_{Gamma_D}
    b(sigma, v) + c(du/dt, v) - d_i(u, v) = (s_i, v)

with ``a_i(sigma, tau) = (sigma, tau) / kappa_i + <sigma . n, tau . n>_Gamma / K_i``.
Dirichlet data is natural, the normal flux on the Neumann edges is an
essential constraint on RT degrees of freedom.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .elements import FunctionSpacePair, eval_dg_basis, eval_rt_basis, piola_map
from .mesh import EdgeTag
from .quadrature import edge_rule, triangle_rule

REACTION_DEGREE = 8
DATA_DEGREE = 8

# g(t, x, y) -> values
SpaceTimeField = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
# flux(t, x, y, nx, ny) -> outward normal flux sigma . n
FluxField = Callable[[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Reaction:
    """Reaction terms ``f(u)`` for ``N`` species.

    ``f`` maps an array of shape ``(N, ...)`` to the same shape; ``jacobian``
    maps it to ``(N, N, ...)`` with ``jacobian(u)[i, j] = df_i / du_j``.
    """

    N: int
    f: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    name: str = "reaction"

    def lipschitz(self, radius: float, samples: int = 21) -> float:
        """Bound on ``|f(u) - f(w)| / |u - w|`` over the max-norm ball of ``radius``.

        Maximum spectral norm of the Jacobian over a tensor grid that contains
        the corners of the cube.
        """
        g = np.linspace(-radius, radius, samples)
        pts = np.stack(np.meshgrid(*([g] * self.N), indexing="ij")).reshape(self.N, -1)
        J = np.moveaxis(self.jacobian(pts), -1, 0)
        return float(np.linalg.norm(J, 2, axis=(1, 2)).max())


def zero_reaction(N: int) -> Reaction:
    return Reaction(
        N,
        lambda u: np.zeros_like(u),
        lambda u: np.zeros((N,) + u.shape),
        name="zero",
    )


def linear_reaction(L: float, N: int) -> Reaction:
    """``f_i(u) = L * u_i``."""

    def jac(u):
        J = np.zeros((N,) + u.shape)
        for i in range(N):
            J[i, i] = L
        return J

    return Reaction(N, lambda u: L * np.asarray(u), jac, name=f"linear(L={L})")


def monomial_reaction(exponents: Sequence[Sequence[int]]) -> Reaction:
    """``f_i(u) = prod_j u_j ** exponents[i][j]``."""
    P = np.asarray(exponents, dtype=int)
    N = P.shape[0]
    if P.shape != (N, N):
        raise ValueError("exponents must form an N x N table")

    def f(u):
        u = np.asarray(u, dtype=float)
        out = np.ones_like(u)
        for i, j in itertools.product(range(N), range(N)):
            if P[i, j]:
                out[i] = out[i] * u[j] ** P[i, j]
        return out

    def jac(u):
        u = np.asarray(u, dtype=float)
        J = np.zeros((N,) + u.shape)
        for i, k in itertools.product(range(N), range(N)):
            if P[i, k] == 0:
                continue
            term = P[i, k] * u[k] ** (P[i, k] - 1)
            for j in range(N):
                if j != k and P[i, j]:
                    term = term * u[j] ** P[i, j]
            J[i, k] = term
        return J

    return Reaction(N, f, jac, name=f"monomial({P.tolist()})")


@dataclass
class ProblemConfig:
    """Coefficients, reaction and data of a reaction-diffusion system.

    ``step_check`` controls what happens when ``L_estimate * dt >= 2``:
    ``"error"`` raises, ``"warn"`` emits a warning, ``"off"`` ignores it.
    """

    N: int
    kappa: Sequence[float]
    K: Sequence[float]
    reaction: Reaction
    L_estimate: float
    dirichlet: Sequence[SpaceTimeField | None] | None = None
    neumann: Sequence[FluxField | None] | None = None
    source: Sequence[SpaceTimeField | None] | None = None
    step_check: str = "error"

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        self.kappa = [float(k) for k in self.kappa]
        self.K = [float(k) for k in self.K]
        if len(self.kappa) != self.N or len(self.K) != self.N:
            raise ValueError("kappa and K need one entry per species")
        if min(self.kappa) <= 0 or min(self.K) <= 0:
            raise ValueError("kappa_i and K_i must be positive")
        if not self.L_estimate > 0:
            raise ValueError("L_estimate must be positive")
        if self.reaction.N != self.N:
            raise ValueError("reaction species count does not match N")
        if self.step_check not in ("error", "warn", "off"):
            raise ValueError(f"unknown step_check policy {self.step_check!r}")
        for name in ("dirichlet", "neumann", "source"):
            data = getattr(self, name)
            if data is None:
                setattr(self, name, [None] * self.N)
            elif len(data) != self.N:
                raise ValueError(f"{name} needs one entry per species")


@dataclass(eq=False)
class AssembledOperators:
    space: FunctionSpacePair
    A: list[sp.csr_matrix]
    B: sp.csr_matrix
    C: sp.csr_matrix
    neumann_dofs: np.ndarray
    constraints: list[tuple[int, int]] = field(default_factory=list)

    @property
    def N(self) -> int:
        return len(self.A)


def _scatter(rows, cols, vals, shape) -> sp.csr_matrix:
    m = sp.coo_matrix(
        (np.ravel(vals), (np.ravel(rows), np.ravel(cols))), shape=shape
    ).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return m


def assemble_rt_mass(space: FunctionSpacePair, kappa: float = 1.0) -> sp.csr_matrix:
    """``(tau, eta) / kappa`` over all cells."""
    rule = triangle_rule(2 * space.order)
    v, _ = space.rt_basis_at(rule.points)
    local = np.einsum("q,tqic,tqjc->tij", rule.weights, v, v)
    local *= space.dets[:, None, None] / kappa
    dofs = space.cell_sigma_dofs
    n = space.n_rt_local
    rows = np.repeat(dofs, n, axis=1)
    cols = np.tile(dofs, (1, n))
    return _scatter(rows, cols, local, (space.sigma_dofs, space.sigma_dofs))


def assemble_interface(space: FunctionSpacePair, K: float) -> sp.csr_matrix:
    """``<tau . n, eta . n>_Gamma / K`` from the normal traces on interface edges."""
    mesh = space.mesh
    shape = (space.sigma_dofs, space.sigma_dofs)
    edges = mesh.edges_with_tag(EdgeTag.INTERFACE)
    if np.isinf(K) or len(edges) == 0:
        return sp.csr_matrix(shape)
    l = space.order
    rule = edge_rule(2 * l)
    cells = mesh.edge_to_triangles[edges, 0]
    k = np.argmax(mesh.triangle_edges[cells] == edges[:, None], axis=1)
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    a = ref[(k + 1) % 3]
    b = ref[(k + 2) % 3]
    pts = a[:, None] + rule.points[None, :, None] * (b - a)[:, None]

    local_idx = l * k[:, None] + np.arange(l)
    normals = mesh.edge_normals()[edges]
    lengths = mesh.edge_lengths()[edges]
    traces = np.empty((len(edges), len(rule), l))
    for e in range(len(edges)):
        v, d = eval_rt_basis(l, pts[e])
        pv, _ = piola_map(space.jacobians[cells[e]], v, d)
        signs = space.cell_sigma_signs[cells[e], local_idx[e]]
        traces[e] = (pv[:, local_idx[e]] @ normals[e]) * signs
    local = np.einsum("q,eqi,eqj->eij", rule.weights, traces, traces)
    local *= lengths[:, None, None] / K
    dofs = space.cell_sigma_dofs[cells[:, None], local_idx]
    rows = np.repeat(dofs, l, axis=1)
    cols = np.tile(dofs, (1, l))
    return _scatter(rows, cols, local, shape)


def assemble_A(space: FunctionSpacePair, kappa_i: float, K_i: float) -> sp.csr_matrix:
    """``a_i``; pass ``K_i = np.inf`` to drop the interface term."""
    A = assemble_rt_mass(space, kappa_i) + assemble_interface(space, K_i)
    A = A.tocsr()
    A.sort_indices()
    return A


def assemble_B(space: FunctionSpacePair) -> sp.csr_matrix:
    """``B[v, tau] = (v, div tau)``."""
    rule = triangle_rule(max(1, 2 * space.order - 2))
    _, d = space.rt_basis_at(rule.points)
    phi = eval_dg_basis(space.order, rule.points)
    # det J cancels against the 1/det J of the Piola divergence
    local = np.einsum("q,qi,tqj->tij", rule.weights, phi, d * space.dets[:, None, None])
    rows = np.repeat(space.cell_u_dofs, space.n_rt_local, axis=1)
    cols = np.tile(space.cell_sigma_dofs, (1, space.n_dg_local))
    return _scatter(rows, cols, local, (space.u_dofs, space.sigma_dofs))


def assemble_C(space: FunctionSpacePair) -> sp.csr_matrix:
    """Block-diagonal DG mass matrix."""
    local = space.dets[:, None, None] * space.dg_reference_mass[None]
    n = space.n_dg_local
    rows = np.repeat(space.cell_u_dofs, n, axis=1)
    cols = np.tile(space.cell_u_dofs, (1, n))
    return _scatter(rows, cols, local, (space.u_dofs, space.u_dofs))


def assemble_d(space: FunctionSpacePair, reaction: Reaction, u_coeffs: np.ndarray) -> np.ndarray:
    """Load vectors ``(f_i(u), v)`` for all species, shape ``(N, u_dofs)``."""
    u_coeffs = np.asarray(u_coeffs, dtype=float)
    if u_coeffs.shape != (reaction.N, space.u_dofs):
        raise ValueError(
            f"u_coeffs must have shape {(reaction.N, space.u_dofs)}, got {u_coeffs.shape}"
        )
    rule = triangle_rule(REACTION_DEGREE)
    phi = eval_dg_basis(space.order, rule.points)
    vals = u_coeffs[:, space.cell_u_dofs] @ phi.T
    with np.errstate(over="ignore", invalid="ignore"):
        fv = reaction.f(vals)
    bad = ~np.isfinite(fv)
    if bad.any():
        cell = int(np.argwhere(bad)[0][1])
        mag = float(np.abs(vals[:, cell]).max())
        raise FloatingPointError(
            f"non-finite reaction value in cell {cell} (max |u| there = {mag:.3e})"
        )
    local = np.einsum("q,qj,ntq->ntj", rule.weights, phi, fv) * space.dets[None, :, None]
    out = np.zeros((reaction.N, space.u_dofs))
    out[:, space.cell_u_dofs] = local
    return out


def assemble_source_rhs(space: FunctionSpacePair, s: SpaceTimeField | None, t: float) -> np.ndarray:
    """``(s(t), v)`` for one species."""
    out = np.zeros(space.u_dofs)
    if s is None:
        return out
    rule = triangle_rule(DATA_DEGREE)
    pts = space.physical_points(rule.points)
    vals = s(t, pts[..., 0], pts[..., 1])
    phi = eval_dg_basis(space.order, rule.points)
    local = np.einsum("q,qj,tq->tj", rule.weights, phi, vals) * space.dets[:, None]
    out[space.cell_u_dofs] = local
    return out


def assemble_dirichlet_rhs(space: FunctionSpacePair, g: SpaceTimeField | None, t: float) -> np.ndarray:
    """``-<g(t), tau . n>`` over the Dirichlet edges, ``n`` the outward normal."""
    out = np.zeros(space.sigma_dofs)
    if g is None:
        return out
    mesh = space.mesh
    edges = mesh.edges_with_tag(EdgeTag.DIRICHLET)
    if len(edges) == 0:
        return out
    outward = _outward_sign(space, edges)

    # the edge moment of the outward trace against q_j measures the DOF j
    def flux(pts, normals):
        return g(t, pts[..., 0], pts[..., 1])

    moments = space.edge_moments(edges, flux)
    # <g, phi_j . n_out> = outward_sign * int g * (phi_j . n_F); phi_j . n_F = G^{-1} q
    G_inv = _edge_gram_inverse(space, edges)
    vals = -outward[:, None] * np.einsum("eij,ej->ei", G_inv, moments)
    out[space.edge_dofs(edges)] = vals.ravel()
    return out


def _outward_sign(space: FunctionSpacePair, edges: np.ndarray) -> np.ndarray:
    """+1 where the global edge normal points out of the domain."""
    mesh = space.mesh
    n = mesh.edge_normals()[edges]
    mid = 0.5 * (mesh.vertices[mesh.edges[edges, 0]] + mesh.vertices[mesh.edges[edges, 1]])
    inward = mesh.vertices[mesh.triangles[mesh.edge_to_triangles[edges, 0]]].mean(axis=1) - mid
    return np.where(np.einsum("ec,ec->e", n, inward) < 0, 1.0, -1.0)


def _edge_gram_inverse(space: FunctionSpacePair, edges: np.ndarray) -> np.ndarray:
    """Inverse Gram matrices of the edge polynomials, ``(ne, l, l)``.

    The normal trace of an edge basis function is ``G^{-1} q`` because its
    moments against ``q`` are the unit vectors.
    """
    lengths = space.mesh.edge_lengths()[edges]
    ref = np.diag([1.0, 3.0][: space.order])
    return ref[None] / lengths[:, None, None]


def neumann_dofs(space: FunctionSpacePair) -> np.ndarray:
    return space.edge_dofs(space.mesh.edges_with_tag(EdgeTag.NEUMANN))


def neumann_values(space: FunctionSpacePair, flux: FluxField | None, t: float) -> np.ndarray:
    """Edge-moment values of the prescribed outward flux at the Neumann DOFs."""
    edges = space.mesh.edges_with_tag(EdgeTag.NEUMANN)
    if flux is None or len(edges) == 0:
        return np.zeros(len(edges) * space.order)
    outward = _outward_sign(space, edges)

    def normal_flux(pts, normals):
        n_out = normals * outward[:, None, None]
        f = flux(t, pts[..., 0], pts[..., 1], n_out[..., 0], n_out[..., 1])
        return f * outward[:, None]

    return space.edge_moments(edges, normal_flux).ravel()


def constraint_lift(matrix: sp.spmatrix, dofs: np.ndarray) -> tuple[sp.csr_matrix, sp.csc_matrix]:
    """Split off essential DOFs.

    Returns the matrix with the constrained rows and columns replaced by the
    identity, and the removed columns (rows of constrained DOFs zeroed) that
    carry prescribed values to the right-hand side.
    """
    n = matrix.shape[0]
    dofs = np.asarray(dofs, dtype=np.int64)
    keep = np.ones(n)
    keep[dofs] = 0.0
    D = sp.diags(keep)
    cols = (D @ matrix.tocsc()[:, dofs]).tocsc()
    mask = np.zeros(n)
    mask[dofs] = 1.0
    out = (D @ matrix @ D + sp.diags(mask)).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return out, cols


def apply_neumann_constraints(
    matrix: sp.spmatrix, rhs: np.ndarray, dofs: np.ndarray, values: np.ndarray
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Fix ``x[dofs] = values``: columns moved to the rhs, rows become identity."""
    out, cols = constraint_lift(matrix, dofs)
    r = np.asarray(rhs, dtype=float) - cols @ values
    r[dofs] = values
    return out, r


def assemble_operators(space: FunctionSpacePair, config: ProblemConfig) -> AssembledOperators:
    A = [assemble_A(space, config.kappa[i], config.K[i]) for i in range(config.N)]
    nd = neumann_dofs(space)
    return AssembledOperators(
        space=space,
        A=A,
        B=assemble_B(space),
        C=assemble_C(space),
        neumann_dofs=nd,
        constraints=[(int(j), i) for i in range(config.N) for j in nd],
    )


def dump_matrix(path, matrix: sp.spmatrix) -> None:
    """Write a matrix in MatrixMarket coordinate format."""
    from scipy.io import mmwrite

    mmwrite(str(path), sp.coo_matrix(matrix))
