"""Self-checks run by ``memfem check``.

Each check returns a :class:`CheckResult`; they are quick desk-scale versions
of the invariants the test-suite covers in full.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import ProblemConfig, assemble_B, assemble_C, linear_reaction, zero_reaction
from .elements import FunctionSpacePair, canonical_interpolation, l2_projection
from .mesh import build_structured
from .mms import ManufacturedSolution, derive_membrane_constants, make_config
from .quadrature import MAX_EDGE_DEGREE, MAX_TRIANGLE_DEGREE, edge_rule, triangle_rule
from .stepper import (
    Discretization,
    PicardOptions,
    StateVector,
    cn_step,
    initial_data,
    l2_norm,
    run,
    scheme_residual,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def random_polynomial_field(rng: np.random.Generator, degree: int = 3):
    """Random vector polynomial of total degree ``<= degree`` and its divergence."""
    terms = [(a, b) for a in range(degree + 1) for b in range(degree + 1 - a)]
    cx = rng.standard_normal(len(terms))
    cy = rng.standard_normal(len(terms))

    def tau(x, y):
        vx = sum(c * x**a * y**b for c, (a, b) in zip(cx, terms))
        vy = sum(c * x**a * y**b for c, (a, b) in zip(cy, terms))
        return np.stack(np.broadcast_arrays(vx, vy), axis=-1)

    def div(x, y):
        dx = sum(c * a * x ** max(a - 1, 0) * y**b for c, (a, b) in zip(cx, terms) if a)
        dy = sum(c * b * x**a * y ** max(b - 1, 0) for c, (a, b) in zip(cy, terms) if b)
        return np.broadcast_to(dx + dy + 0.0 * x, np.shape(x))

    return tau, div


def check_quadrature() -> CheckResult:
    worst = 0.0
    for d in range(1, MAX_TRIANGLE_DEGREE + 1):
        r = triangle_rule(d)
        for a in range(d + 1):
            for b in range(d + 1 - a):
                exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
                got = r.weights @ (r.points[:, 0] ** a * r.points[:, 1] ** b)
                worst = max(worst, abs(got - exact))
    for d in range(1, MAX_EDGE_DEGREE + 1):
        r = edge_rule(d)
        for a in range(d + 1):
            worst = max(worst, abs(r.weights @ r.points**a - 1.0 / (a + 1)))
    return CheckResult("quadrature exactness", worst <= 1e-13, f"max error {worst:.2e}")


def check_commuting_diagram(n_fields: int = 5, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for order in (1, 2):
        for M in (2, 4):
            space = FunctionSpacePair(build_structured(M), order)
            B = assemble_B(space)
            C = assemble_C(space).tocsc()
            for _ in range(n_fields):
                tau, div = random_polynomial_field(rng)
                lhs = spla.spsolve(C, B @ canonical_interpolation(space, tau))
                worst = max(worst, np.abs(lhs - l2_projection(space, div)).max())
    return CheckResult("commuting diagram", worst <= 1e-11, f"max discrepancy {worst:.2e}")


def check_inf_sup() -> CheckResult:
    bad = []
    for order in (1, 2):
        for M in (2, 4):
            space = FunctionSpacePair(build_structured(M), order)
            rank = np.linalg.matrix_rank(assemble_B(space).toarray())
            if rank != space.u_dofs:
                bad.append((order, M, rank, space.u_dofs))
    return CheckResult("div surjectivity", not bad, "rank(B) = dim V_h" if not bad else str(bad))


def _homogeneous_config(reaction, L: float) -> ProblemConfig:
    return ProblemConfig(N=2, kappa=(1.0, 1.0), K=(0.9, 0.5), reaction=reaction,
                         L_estimate=L, step_check="off")


def check_energy_decay(n_states: int = 3, steps: int = 20, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    config = _homogeneous_config(zero_reaction(2), 1.0)
    space = FunctionSpacePair(build_structured(4), 1)
    disc = Discretization(space, config)
    worst = -np.inf
    for dt in (0.5, 0.1, 0.01):
        for _ in range(n_states):
            u = rng.standard_normal((2, space.u_dofs))
            state = initial_data(disc.operators, config, [None, None])
            state = StateVector(0.0, state.sigma, u)
            norms = [math.hypot(*(l2_norm(disc.operators, ui) for ui in u))]
            run(disc, steps * dt, dt, state,
                lambda k, t, s, r: norms.append(math.hypot(*(l2_norm(disc.operators, ui) for ui in s.u))))
            worst = max(worst, np.max(np.diff(norms)))
    return CheckResult("CN energy decay", worst <= 1e-14, f"max norm increase {worst:.2e}")


def check_contraction(seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    space = FunctionSpacePair(build_structured(4), 1)
    dt = 0.1
    worst = 0.0
    for Ldt in (0.5, 1.0, 1.9):
        L = Ldt / dt
        config = _homogeneous_config(linear_reaction(L, 2), L)
        disc = Discretization(space, config)
        state = StateVector(0.0, np.zeros((2, space.sigma_dofs)), rng.standard_normal((2, space.u_dofs)))
        _, rep = cn_step(disc.systems(dt), disc.operators, config, state, dt,
                         PicardOptions(max_iter=500))
        worst = max(worst, max(rep.contraction_ratios) / (Ldt / 2))
    return CheckResult("Picard contraction", worst <= 1.1, f"max ratio / (L dt / 2) = {worst:.3f}")


def check_interface(seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    exact = ManufacturedSolution()
    K = derive_membrane_constants(exact)
    y, t = rng.random(100), rng.random(100)
    worst = max(
        np.abs(exact.interface_flux(i, t, y) - K[i] * exact.jump(i, t, y)).max() for i in range(2)
    )
    return CheckResult("MMS interface compatibility", worst <= 1e-12,
                       f"K = ({K[0]:.6f}, {K[1]:.6f}), max mismatch {worst:.2e}")


def check_scheme_residual(M: int = 4) -> CheckResult:
    config, exact = make_config(step_check="off")
    space = FunctionSpacePair(build_structured(M), 1)
    disc = Discretization(space, config)
    state = initial_data(disc.operators, config, [exact.initial_u(i) for i in range(2)])
    worst = [0.0]
    prev = [state]

    def obs(k, t, s, r):
        worst[0] = max(worst[0], *scheme_residual(disc.operators, config, prev[0], s))
        prev[0] = s

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        run(disc, 0.5, 1.0 / M, state, obs)
    return CheckResult("CN scheme residual", worst[0] <= 1e-8, f"max residual {worst[0]:.2e}")


ALL_CHECKS = (
    check_quadrature,
    check_commuting_diagram,
    check_inf_sup,
    check_energy_decay,
    check_contraction,
    check_interface,
    check_scheme_residual,
)


def run_checks() -> list[CheckResult]:
    return [check() for check in ALL_CHECKS]
