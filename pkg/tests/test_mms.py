import numpy as np
import pytest

from memfem.mms import (
    L_ESTIMATE,
    ManufacturedSolution,
    derive_membrane_constants,
    make_config,
)

EX = ManufacturedSolution()
H = 1e-5


def samples(rng, n=50, side=None):
    t = rng.uniform(0, 1, n)
    y = rng.uniform(0, 1, n)
    if side == "+":
        x = rng.uniform(0.5 + 1e-3, 1, n)
    elif side == "-":
        x = rng.uniform(0, 0.5 - 1e-3, n)
    else:
        x = np.where(rng.random(n) < 0.5, rng.uniform(0, 0.499, n), rng.uniform(0.501, 1, n))
    return t, x, y


def test_u1_at_membrane_centre():
    assert EX.u(0, 0.0, 0.5, 0.5, side="-") == pytest.approx(0.5, abs=1e-15)
    assert EX.eval("u", 0, 0.0, 0.5, 0.5, side="-") == pytest.approx(0.5, abs=1e-15)


def test_jumps(rng):
    t, _, y = samples(rng)
    np.testing.assert_allclose(EX.jump(0, t, y), 1.0, atol=1e-14)
    np.testing.assert_allclose(EX.jump(1, t, y), -1.0, atol=1e-14)


def test_membrane_constants():
    K1, K2 = derive_membrane_constants()
    assert K1 == pytest.approx(np.pi / 3 * np.cos(np.pi / 6), abs=1e-14)
    assert K2 == pytest.approx(np.pi / 6, abs=1e-14)
    assert abs(K1 - 0.906899682) < 1e-9 and abs(K2 - 0.523598776) < 1e-9


def test_membrane_quotient_constant(rng):
    K = derive_membrane_constants()
    t, _, y = samples(rng, 100)
    for i in range(2):
        q = EX.interface_flux(i, t, y) / EX.jump(i, t, y)
        assert np.std(q) <= 1e-13
        np.testing.assert_allclose(EX.interface_flux(i, t, y), K[i] * EX.jump(i, t, y), atol=1e-12)


def test_normal_trace_continuous_across_membrane(rng):
    t, _, y = samples(rng, 100)
    for i in range(2):
        np.testing.assert_allclose(
            EX.interface_flux(i, t, y, "+"), EX.interface_flux(i, t, y, "-"), atol=1e-12
        )


def test_inconsistent_fields_rejected():
    class Broken(ManufacturedSolution):
        def interface_flux(self, i, t, y, side="+"):
            return super().interface_flux(i, t, y, side) + 1e-6 * y

    with pytest.raises(ValueError, match="species 1"):
        derive_membrane_constants(Broken())


@pytest.mark.parametrize("side", ["+", "-"])
@pytest.mark.parametrize("i", [0, 1])
def test_derivatives_match_finite_differences(rng, side, i):
    t, x, y = samples(rng, side=side)
    u = lambda t, x, y: EX.u(i, t, x, y, side)
    dt = (u(t + H, x, y) - u(t - H, x, y)) / (2 * H)
    np.testing.assert_allclose(EX.du_dt(i, t, x, y, side), dt, atol=1e-6)
    gx = (u(t, x + H, y) - u(t, x - H, y)) / (2 * H)
    gy = (u(t, x, y + H) - u(t, x, y - H)) / (2 * H)
    np.testing.assert_allclose(EX.grad_u(i, t, x, y, side), np.stack([gx, gy], -1), atol=1e-6)
    s = lambda x, y: EX.sigma(i, t, x, y, side)
    div = (s(x + H, y)[..., 0] - s(x - H, y)[..., 0] + s(x, y + H)[..., 1] - s(x, y - H)[..., 1]) / (2 * H)
    np.testing.assert_allclose(EX.div_sigma(i, t, x, y, side), div, atol=1e-6)


def test_source_residual_with_finite_differences(rng):
    t, x, y = samples(rng, 100)
    for i in range(2):
        u = lambda t, x, y: EX.u(i, t, x, y)
        dudt = (u(t + H, x, y) - u(t - H, x, y)) / (2 * H)
        # div sigma = -laplace u, from second differences of u
        h = 1e-4
        lap = (u(t, x + h, y) + u(t, x - h, y) + u(t, x, y + h) + u(t, x, y - h) - 4 * u(t, x, y)) / h**2
        f = EX.reaction.f(np.stack([EX.u(0, t, x, y), EX.u(1, t, x, y)]))[i]
        resid = dudt - lap - f - EX.source(i, t, x, y)
        assert np.abs(resid).max() <= 1e-5
        # analytic terms close the balance to rounding
        exact = EX.du_dt(i, t, x, y) + EX.div_sigma(i, t, x, y) - f - EX.source(i, t, x, y)
        assert np.abs(exact).max() <= 1e-12


def test_source_special_cases(rng):
    _, x, y = samples(rng)
    for i in range(2):
        f0 = EX.reaction_values(0.0, x, y)[i]
        np.testing.assert_allclose(EX.source(i, 0.0, x, y), EX.div_sigma(i, 0.0, x, y) - f0, atol=1e-14)
        t = rng.uniform(0, 1, len(y))
        xm = np.full_like(y, 0.5)
        for side in "+-":
            fg = EX.reaction_values(t, xm, y, side)[i]
            np.testing.assert_allclose(
                EX.source(i, t, xm, y, side), EX.div_sigma(i, t, xm, y, side) - fg, atol=1e-14
            )


def test_boundary_data(rng):
    t, x, _ = samples(rng)
    phi = 1 + np.cos(t) * (x - 0.5) ** 2
    # the offset term of the plus side survives at y = 0
    expected = phi * (np.sin(np.pi * x / 3) + (x >= 0.5))
    np.testing.assert_allclose(EX.dirichlet(0)(t, x, 0 * x), expected, atol=1e-15)
    y = rng.uniform(0, 1, 20)
    t = rng.uniform(0, 1, 20)
    flux = EX.neumann(0)(t, 0 * y, y, -1 + 0 * y, 0 * y)
    np.testing.assert_allclose(flux, EX.grad_u(0, t, 0 * y, y)[..., 0], atol=1e-15)
    # corner values agree between the y = 0 and x = 0 evaluations
    assert EX.dirichlet(1)(0.3, np.array([0.0]), np.array([0.0]))[0] == pytest.approx(
        EX.u(1, 0.3, 0.0, 0.0, side="-")
    )


def test_side_validation():
    with pytest.raises(ValueError):
        EX.u(0, 0.0, 0.5, 0.5, side="left")


def test_lipschitz_estimate_covers_solution():
    L = EX.lipschitz_along_solution(0.5)
    assert 16.0 < L < L_ESTIMATE


def test_make_config():
    cfg, ex = make_config()
    assert cfg.N == 2 and cfg.kappa == [1.0, 1.0] and cfg.step_check == "warn"
    np.testing.assert_allclose(cfg.K, derive_membrane_constants())
    cfg, _ = make_config(K=(2.0, 3.0), L_estimate=5.0, step_check="error")
    assert cfg.K == [2.0, 3.0] and cfg.L_estimate == 5.0


def test_kappa_scales_flux():
    ex = ManufacturedSolution(kappa=(2.0, 0.5))
    np.testing.assert_allclose(ex.sigma(0, 0.1, 0.3, 0.4), 2.0 * EX.sigma(0, 0.1, 0.3, 0.4))
    K = derive_membrane_constants(ex)
    np.testing.assert_allclose(K, [2.0 * np.pi / 3 * np.cos(np.pi / 6), 0.5 * np.pi / 6])
