"""Sparse LU for the per-species saddle-point blocks ``[A, -B^T; B, (2/dt) C]``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import AssembledOperators, constraint_lift

RESIDUAL_TOL = 1e-10


class SingularSystemError(RuntimeError):
    pass


class ResidualError(RuntimeError):
    pass


def block_matrix(A: sp.spmatrix, B: sp.spmatrix, C: sp.spmatrix, dt: float) -> sp.csr_matrix:
    """Monolithic Crank-Nicolson block over ``(sigma, u)`` unknowns."""
    M = sp.bmat([[A, -B.T], [B, (2.0 / dt) * C]], format="csr")
    M.sort_indices()
    return M


@dataclass(eq=False)
class BlockSystem:
    matrix: sp.csr_matrix
    lift: sp.csc_matrix
    dofs: np.ndarray
    n_sigma: int
    n_u: int
    dt: float
    lu: spla.SuperLU

    @property
    def size(self) -> int:
        return self.n_sigma + self.n_u


def factor(matrix: sp.spmatrix, dofs: np.ndarray, n_sigma: int, n_u: int, dt: float) -> BlockSystem:
    constrained, lift = constraint_lift(matrix, dofs)
    try:
        lu = spla.splu(constrained.tocsc(), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularSystemError(f"block factorisation failed: {exc}") from exc
    return BlockSystem(constrained, lift, np.asarray(dofs), n_sigma, n_u, dt, lu)


def build_and_factor(operators: AssembledOperators, dt: float, species: int) -> BlockSystem:
    """Factor the constrained block of one species once for a fixed ``dt``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    M = block_matrix(operators.A[species], operators.B, operators.C, dt)
    return factor(
        M, operators.neumann_dofs, operators.space.sigma_dofs, operators.space.u_dofs, dt
    )


def solve(system: BlockSystem, rhs: np.ndarray, values: np.ndarray | None = None) -> np.ndarray:
    """Solve with the cached factorisation.

    ``rhs`` is the unconstrained right-hand side; ``values`` are the prescribed
    constrained DOFs (zero if omitted).
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (system.size,):
        raise ValueError(f"rhs has shape {rhs.shape}, expected ({system.size},)")
    r = rhs.copy()
    if len(system.dofs):
        if values is None:
            values = np.zeros(len(system.dofs))
        r -= system.lift @ values
        r[system.dofs] = values
    norm = np.linalg.norm(r)
    if norm == 0.0:
        return np.zeros_like(r)
    x = system.lu.solve(r)
    res = np.linalg.norm(system.matrix @ x - r) / norm
    if not res <= RESIDUAL_TOL:
        raise ResidualError(f"relative residual {res:.3e} exceeds {RESIDUAL_TOL:.0e}")
    return x
