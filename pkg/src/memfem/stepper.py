"""Crank-Nicolson time stepping with a Picard (fixed-point) inner loop.

One step from ``(sigma^k, u^k)`` solves, per species,

    A (s^k + s^{k+1}) / 2 - B^T (u^k + u^{k+1}) / 2 = (F(t_k) + F(t_{k+1})) / 2
    B (s^k + s^{k+1}) / 2 + C (u^{k+1} - u^k) / dt
        - (d(u^k) + d(u^{k+1})) / 2 = (S(t_k) + S(t_{k+1})) / 2

where ``F`` is the Dirichlet load and ``S`` the source load.  The reaction at
the new level is frozen at the previous Picard iterate, so every iterate is
a solve with the same factorised block ``[A, -B^T; B, (2/dt) C]``.
Increments are measured in ``|(tau, v)|^2 = dt a(tau, tau) + 2 |v|^2``, the
norm in which the iteration map contracts with factor ``L dt / 2``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from . import linsolve
from .assembly import (
    AssembledOperators,
    ProblemConfig,
    apply_neumann_constraints,
    assemble_d,
    assemble_dirichlet_rhs,
    assemble_source_rhs,
    neumann_values,
)
from .elements import FunctionSpacePair, l2_projection

log = logging.getLogger(__name__)


class StepSizeError(ValueError):
    """``L_estimate * dt >= 2``: the fixed-point map is not known to contract."""


class PicardConvergenceError(RuntimeError):
    pass


class PicardDivergenceError(PicardConvergenceError):
    pass


@dataclass
class StateVector:
    t: float
    sigma: np.ndarray
    u: np.ndarray

    def copy(self) -> "StateVector":
        return StateVector(self.t, self.sigma.copy(), self.u.copy())


@dataclass
class PicardReport:
    iterations: int
    final_increment: float
    contraction_ratios: list[float] = field(default_factory=list)
    increments: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class PicardOptions:
    tol_rel: float = 1e-10
    tol_abs: float = 1e-14
    max_iter: int = 50
    # "explicit": first solve without the new-level reaction; "previous": with d(u^k)
    seed: str = "explicit"
    # consecutive ratios >= 1 that flag divergence
    divergence_window: int = 3


def l2_norm(operators: AssembledOperators, u: np.ndarray) -> float:
    return float(np.sqrt(u @ (operators.C @ u)))


def phi_norm(operators: AssembledOperators, dt: float, dsigma: np.ndarray, du: np.ndarray) -> float:
    """``(dt a(dsigma, dsigma) + 2 |du|^2)^(1/2)`` summed over species."""
    total = 0.0
    for i, A in enumerate(operators.A):
        total += dt * dsigma[i] @ (A @ dsigma[i]) + 2.0 * du[i] @ (operators.C @ du[i])
    return float(np.sqrt(max(total, 0.0)))


def check_step_size(config: ProblemConfig, dt: float) -> None:
    if config.step_check == "off" or config.L_estimate * dt < 2.0:
        return
    msg = (
        f"L_estimate * dt = {config.L_estimate * dt:.3g} >= 2; the Picard map is "
        "not guaranteed to contract"
    )
    if config.step_check == "error":
        raise StepSizeError(msg + " (set step_check='warn' to proceed)")
    warnings.warn(msg, RuntimeWarning, stacklevel=3)


def initial_data(
    operators: AssembledOperators,
    config: ProblemConfig,
    u0: Sequence[Callable],
    t0: float = 0.0,
) -> StateVector:
    """``u_h^0 = P_h u(0)`` and ``sigma_h^0`` from ``A s - B^T u_h^0 = F(t0)``."""
    space = operators.space
    sigma = np.zeros((config.N, space.sigma_dofs))
    u = np.zeros((config.N, space.u_dofs))
    for i in range(config.N):
        if u0[i] is not None:
            u[i] = l2_projection(space, u0[i])
        rhs = operators.B.T @ u[i] + assemble_dirichlet_rhs(space, config.dirichlet[i], t0)
        values = neumann_values(space, config.neumann[i], t0)
        A, r = apply_neumann_constraints(operators.A[i], rhs, operators.neumann_dofs, values)
        sigma[i] = spla.splu(A.tocsc()).solve(r)
    return StateVector(t0, sigma, u)


class Discretization:
    """Space, configuration and operators, with block factorisations cached by ``dt``."""

    def __init__(self, space: FunctionSpacePair, config: ProblemConfig, operators: AssembledOperators | None = None):
        from .assembly import assemble_operators

        self.space = space
        self.config = config
        self.operators = operators or assemble_operators(space, config)
        self._systems: dict[float, list[linsolve.BlockSystem]] = {}

    def systems(self, dt: float) -> list[linsolve.BlockSystem]:
        if dt not in self._systems:
            self._systems[dt] = [
                linsolve.build_and_factor(self.operators, dt, i) for i in range(self.config.N)
            ]
        return self._systems[dt]


@dataclass
class _StepData:
    base: list[np.ndarray]
    values: list[np.ndarray]


def _step_data(operators, config, state, dt, t1) -> tuple[_StepData, np.ndarray]:
    space = operators.space
    t0 = state.t
    dk = assemble_d(space, config.reaction, state.u)
    base, values = [], []
    for i in range(config.N):
        A = operators.A[i]
        r_sigma = (
            -(A @ state.sigma[i])
            + operators.B.T @ state.u[i]
            + assemble_dirichlet_rhs(space, config.dirichlet[i], t0)
            + assemble_dirichlet_rhs(space, config.dirichlet[i], t1)
        )
        r_u = (
            -(operators.B @ state.sigma[i])
            + (2.0 / dt) * (operators.C @ state.u[i])
            + dk[i]
            + assemble_source_rhs(space, config.source[i], t0)
            + assemble_source_rhs(space, config.source[i], t1)
        )
        base.append(np.concatenate([r_sigma, r_u]))
        values.append(neumann_values(space, config.neumann[i], t1))
    return _StepData(base, values), dk


def _solve_all(systems, data: _StepData, d_new: np.ndarray | None, ns: int):
    sigma, u = [], []
    for i, system in enumerate(systems):
        rhs = data.base[i].copy()
        if d_new is not None:
            rhs[ns:] += d_new[i]
        x = linsolve.solve(system, rhs, data.values[i])
        sigma.append(x[:ns])
        u.append(x[ns:])
    return np.array(sigma), np.array(u)


def cn_step(
    systems: Sequence[linsolve.BlockSystem],
    operators: AssembledOperators,
    config: ProblemConfig,
    state: StateVector,
    dt: float,
    options: PicardOptions | None = None,
    seed: str | np.ndarray | None = None,
    t_next: float | None = None,
) -> tuple[StateVector, PicardReport]:
    """Advance one Crank-Nicolson step with Picard iteration.

    ``seed`` overrides ``options.seed``; it may also be an array of shape
    ``(N, u_dofs)`` used as the initial guess for ``u^{k+1}``.
    """
    options = options or PicardOptions()
    check_step_size(config, dt)
    space = operators.space
    ns = space.sigma_dofs
    t1 = state.t + dt if t_next is None else t_next
    data, dk = _step_data(operators, config, state, dt, t1)

    seed = options.seed if seed is None else seed
    if isinstance(seed, str):
        if seed == "explicit":
            d_seed = None
        elif seed == "previous":
            d_seed = dk
        else:
            raise ValueError(f"unknown Picard seed {seed!r}")
    else:
        d_seed = assemble_d(space, config.reaction, np.asarray(seed))
    sigma, u = _solve_all(systems, data, d_seed, ns)

    report = PicardReport(0, np.inf)
    first = None
    above = 0
    for m in range(1, options.max_iter + 1):
        d_new = assemble_d(space, config.reaction, u)
        sigma_n, u_n = _solve_all(systems, data, d_new, ns)
        if not (np.all(np.isfinite(sigma_n)) and np.all(np.isfinite(u_n))):
            raise FloatingPointError(f"non-finite Picard iterate at t={t1:.6g}, iteration {m}")
        inc = phi_norm(operators, dt, sigma_n - sigma, u_n - u)
        sigma, u = sigma_n, u_n
        if report.increments:
            prev = report.increments[-1]
            ratio = inc / prev if prev > 0 else 0.0
            report.contraction_ratios.append(ratio)
            above = above + 1 if ratio >= 1.0 else 0
        report.increments.append(inc)
        report.iterations = m
        report.final_increment = inc
        if first is None:
            first = inc
        if inc <= options.tol_rel * first + options.tol_abs:
            break
        if above >= options.divergence_window:
            raise PicardDivergenceError(
                f"Picard iteration diverges at t={t1:.6g}: last ratios "
                f"{report.contraction_ratios[-options.divergence_window:]}"
            )
    else:
        last = report.contraction_ratios[-1] if report.contraction_ratios else float("nan")
        raise PicardConvergenceError(
            f"Picard iteration did not converge in {options.max_iter} iterations at "
            f"t={t1:.6g} (increment {report.final_increment:.3e}, last ratio {last:.3f})"
        )
    return StateVector(t1, sigma, u), report


def run(
    disc: Discretization,
    T: float,
    dt: float,
    initial: StateVector,
    observer: Callable[[int, float, StateVector, PicardReport], None] | None = None,
    options: PicardOptions | None = None,
) -> StateVector:
    """March from ``initial.t`` over ``T / dt`` Crank-Nicolson steps."""
    if T == 0:
        return initial
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-12 * max(1.0, T):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    systems = disc.systems(dt)
    state = initial
    t0 = initial.t
    for k in range(1, n + 1):
        state, report = cn_step(
            systems, disc.operators, disc.config, state, dt, options, t_next=t0 + k * dt
        )
        log.debug("step %d t=%.6g picard=%d", k, state.t, report.iterations)
        if observer is not None:
            observer(k, state.t, state, report)
    return state


def scheme_residual(
    operators: AssembledOperators,
    config: ProblemConfig,
    old: StateVector,
    new: StateVector,
) -> tuple[float, float, float]:
    """Residuals of both Crank-Nicolson equations for an accepted step.

    Returns max-abs residuals of the flux and balance equations over their
    unconstrained rows (i.e. tested against every free basis function) and
    the max deviation of the constrained DOFs from their prescribed values.
    """
    space = operators.space
    dt = new.t - old.t
    t0, t1 = old.t, new.t
    d0 = assemble_d(space, config.reaction, old.u)
    d1 = assemble_d(space, config.reaction, new.u)
    free = np.ones(space.sigma_dofs, dtype=bool)
    free[operators.neumann_dofs] = False
    r1 = r2 = rc = 0.0
    for i in range(config.N):
        s_avg = 0.5 * (old.sigma[i] + new.sigma[i])
        u_avg = 0.5 * (old.u[i] + new.u[i])
        F = 0.5 * (
            assemble_dirichlet_rhs(space, config.dirichlet[i], t0)
            + assemble_dirichlet_rhs(space, config.dirichlet[i], t1)
        )
        S = 0.5 * (
            assemble_source_rhs(space, config.source[i], t0)
            + assemble_source_rhs(space, config.source[i], t1)
        )
        res1 = operators.A[i] @ s_avg - operators.B.T @ u_avg - F
        res2 = (
            operators.B @ s_avg
            + operators.C @ (new.u[i] - old.u[i]) / dt
            - 0.5 * (d0[i] + d1[i])
            - S
        )
        r1 = max(r1, float(np.abs(res1[free]).max(initial=0.0)))
        r2 = max(r2, float(np.abs(res2).max(initial=0.0)))
        vals = neumann_values(space, config.neumann[i], t1)
        if len(vals):
            rc = max(rc, float(np.abs(new.sigma[i][operators.neumann_dofs] - vals).max()))
    return r1, r2, rc
