"""Two-species manufactured solution with a membrane at x = 1/2.

On each side ``u_i = phi(x, t) * ut_i(x, y)`` with
``phi = 1 + cos(t) (x - 1/2)^2`` and

    ut_1 = sin(pi x / 3) + [1 if x > 1/2] + (x - 1/2)^2 * Y(y)
    ut_2 = cos(pi x / 3) - [1 if x > 1/2] + 2 (x - 1/2)^2 * Y(y)

where ``Y(y) = y (1 - y)`` on the left and ``sin(pi y)`` on the right.  The
reactions are ``f_1 = u_1^2 u_2^3`` and ``f_2 = u_1^3 u_2^3``.  Fluxes are
``sigma_i = -kappa_i grad u_i``; the membrane permeabilities follow from
``sigma_i . n = K_i (u_i|+ - u_i|-)`` with ``n = (-1, 0)``.
"""

from __future__ import annotations

import numpy as np

from .assembly import ProblemConfig, monomial_reaction

PI3 = np.pi / 3.0
EXPONENTS = ((2, 3), (3, 3))
# scale of the (x - 1/2)^2 Y(y) term, per species
AMPLITUDE = (1.0, 2.0)
# jump of ut_i across the membrane, ut_+ - ut_-
OFFSET = (1.0, -1.0)

# max spectral norm of the reaction Jacobian along the exact solution for
# t in [0, 0.5] is 16.70; rounded up
L_ESTIMATE = 17.0
T_DEFAULT = 0.5


class ManufacturedSolution:
    """Closed-form fields of the two-species membrane problem."""

    N = 2

    def __init__(self, kappa=(1.0, 1.0)):
        self.kappa = tuple(float(k) for k in kappa)
        self.reaction = monomial_reaction(EXPONENTS)

    @staticmethod
    def _plus(x, side):
        if side is None:
            return np.asarray(x) >= 0.5
        if side not in ("+", "-"):
            raise ValueError(f"side must be '+', '-' or None, got {side!r}")
        return np.full(np.shape(x), side == "+")

    def _tilde(self, i, x, y, side=None):
        """ut_i and its derivatives ``(v, v_x, v_xx, v_y, v_yy)``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        plus = self._plus(x, side)
        c = AMPLITUDE[i]
        if i == 0:
            A = np.sin(PI3 * x) + np.where(plus, OFFSET[0], 0.0)
            Ax = PI3 * np.cos(PI3 * x)
            Axx = -PI3**2 * np.sin(PI3 * x)
        else:
            A = np.cos(PI3 * x) + np.where(plus, OFFSET[1], 0.0)
            Ax = -PI3 * np.sin(PI3 * x)
            Axx = -PI3**2 * np.cos(PI3 * x)
        Y = np.where(plus, np.sin(np.pi * y), y * (1.0 - y))
        Yy = np.where(plus, np.pi * np.cos(np.pi * y), 1.0 - 2.0 * y)
        Yyy = np.where(plus, -np.pi**2 * np.sin(np.pi * y), -2.0)
        q = (x - 0.5) ** 2
        qx = 2.0 * (x - 0.5)
        return A + c * q * Y, Ax + c * qx * Y, Axx + 2.0 * c * Y, c * q * Yy, c * q * Yyy

    @staticmethod
    def _phi(t, x):
        """phi and ``(phi_x, phi_xx, phi_t)``."""
        d = np.asarray(x, dtype=float) - 0.5
        ct = np.cos(t)
        return 1.0 + ct * d**2, 2.0 * ct * d, 2.0 * ct * np.ones_like(d), -np.sin(t) * d**2

    def u(self, i, t, x, y, side=None):
        return self._phi(t, x)[0] * self._tilde(i, x, y, side)[0]

    def grad_u(self, i, t, x, y, side=None):
        v, vx, _, vy, _ = self._tilde(i, x, y, side)
        p, px, _, _ = self._phi(t, x)
        return np.stack(np.broadcast_arrays(px * v + p * vx, p * vy), axis=-1)

    def laplace_u(self, i, t, x, y, side=None):
        v, vx, vxx, _, vyy = self._tilde(i, x, y, side)
        p, px, pxx, _ = self._phi(t, x)
        return pxx * v + 2.0 * px * vx + p * vxx + p * vyy

    def du_dt(self, i, t, x, y, side=None):
        return self._phi(t, x)[3] * self._tilde(i, x, y, side)[0]

    def sigma(self, i, t, x, y, side=None):
        return -self.kappa[i] * self.grad_u(i, t, x, y, side)

    def div_sigma(self, i, t, x, y, side=None):
        return -self.kappa[i] * self.laplace_u(i, t, x, y, side)

    def eval(self, field: str, i: int, t, x, y, side=None):
        """Evaluate ``u``, ``sigma``, ``du_dt`` or ``div_sigma`` of species ``i``.

        The side of the membrane follows from ``x`` unless ``side`` is given.
        """
        fn = {
            "u": self.u,
            "sigma": self.sigma,
            "du_dt": self.du_dt,
            "div_sigma": self.div_sigma,
        }[field]
        return fn(i, t, x, y, side)

    def reaction_values(self, t, x, y, side=None):
        u = np.stack([self.u(i, t, x, y, side) for i in range(self.N)])
        return self.reaction.f(u)

    def source(self, i, t, x, y, side=None):
        """``du_i/dt + div sigma_i - f_i(u)``."""
        return (
            self.du_dt(i, t, x, y, side)
            + self.div_sigma(i, t, x, y, side)
            - self.reaction_values(t, x, y, side)[i]
        )

    def jump(self, i, t, y):
        """``u_i|+ - u_i|-`` on the membrane."""
        t, y = np.broadcast_arrays(np.asarray(t, float), np.asarray(y, float))
        x = np.full_like(y, 0.5)
        return self.u(i, t, x, y, "+") - self.u(i, t, x, y, "-")

    def interface_flux(self, i, t, y, side="+"):
        """``sigma_i . n`` on the membrane, ``n = (-1, 0)``, from one side's formula."""
        t, y = np.broadcast_arrays(np.asarray(t, float), np.asarray(y, float))
        return -self.sigma(i, t, np.full_like(y, 0.5), y, side)[..., 0]

    def dirichlet(self, i):
        return lambda t, x, y: self.u(i, t, x, y)

    def neumann(self, i):
        def flux(t, x, y, nx, ny):
            s = self.sigma(i, t, x, y)
            return s[..., 0] * nx + s[..., 1] * ny

        return flux

    def source_field(self, i):
        return lambda t, x, y: self.source(i, t, x, y)

    def initial_u(self, i):
        return lambda x, y: self.u(i, 0.0, x, y)

    def lipschitz_along_solution(self, T: float = T_DEFAULT, n: int = 101) -> float:
        """Max spectral norm of the reaction Jacobian on a sample of ``[0, T] x Omega``."""
        g = np.linspace(0.0, 1.0, n)
        x, y, t = np.meshgrid(g, g, np.linspace(0.0, T, 11), indexing="ij")
        u = np.stack([self.u(i, t, x, y) for i in range(self.N)]).reshape(self.N, -1)
        J = np.moveaxis(self.reaction.jacobian(u), -1, 0)
        return float(np.linalg.norm(J, 2, axis=(1, 2)).max())


def derive_membrane_constants(exact: ManufacturedSolution | None = None, tol: float = 1e-12):
    """``K_i = (sigma_i . n) / (u_i|+ - u_i|-)`` on the membrane.

    The quotient is sampled on a 10 x 10 grid in ``(y, t)`` and must be
    constant there.
    """
    exact = exact or ManufacturedSolution()
    y, t = np.meshgrid(np.linspace(0.0, 1.0, 10), np.linspace(0.0, 1.0, 10))
    out = []
    for i in range(exact.N):
        q = exact.interface_flux(i, t, y) / exact.jump(i, t, y)
        if np.ptp(q) > tol:
            raise ValueError(
                f"membrane quotient for species {i + 1} varies by {np.ptp(q):.3e}; "
                "the manufactured fields are inconsistent"
            )
        out.append(float(np.mean(q)))
    return tuple(out)


def make_config(
    kappa=(1.0, 1.0),
    K=None,
    L_estimate: float = L_ESTIMATE,
    step_check: str = "warn",
) -> tuple[ProblemConfig, ManufacturedSolution]:
    """Problem configuration of the manufactured two-species system.

    ``step_check`` defaults to ``"warn"``: with ``L = 17`` the coarse steps
    ``dt = 1/4, 1/8`` of the convergence sweep exceed ``L dt < 2``.
    """
    exact = ManufacturedSolution(kappa)
    if K is None:
        K = derive_membrane_constants(exact)
    config = ProblemConfig(
        N=2,
        kappa=kappa,
        K=K,
        reaction=exact.reaction,
        L_estimate=L_estimate,
        dirichlet=[exact.dirichlet(i) for i in range(2)],
        neumann=[exact.neumann(i) for i in range(2)],
        source=[exact.source_field(i) for i in range(2)],
        step_check=step_check,
    )
    return config, exact
