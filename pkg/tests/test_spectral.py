import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from scbf.spectral import (
    FluidParams,
    GridMismatchError,
    GridSpec,
    PhysicalField,
    SpectralField,
    convective,
    dealias,
    drift,
    forchheimer,
    forchheimer_gateaux,
    galerkin_project,
    inner,
    leray_project,
    norms,
    random_field,
    stokes_apply,
    to_physical,
    to_spectral,
    trilinear,
)

from .conftest import random_fields


def field_from(grid, fn):
    return dealias(to_spectral(PhysicalField.from_function(grid, fn)))


def shear(grid):
    return field_from(grid, lambda x, y: (np.sin(y), 0 * x))


class TestGrid:
    def test_retained_set_for_n32(self, grid):
        # |k_i| < (2/3) * 16 keeps |k_i| <= 10
        assert grid.cutoff == 10
        assert grid.mask.sum() == 21 * 11
        assert len(grid.pair_order) == (21 * 21 - 1) // 2

    def test_rejects_odd_size(self):
        with pytest.raises(ValueError):
            GridSpec(31)

    def test_padded_size(self, grid):
        assert grid.physical_size(3) == 64
        assert grid.physical_size(5) == 96
        assert grid.physical_size(2.5) == 32

    def test_round_trip(self, grid, rng):
        u = random_field(grid, rng)
        back = to_spectral(to_physical(u))
        np.testing.assert_allclose(back.coeffs, u.coeffs, atol=1e-14)

    def test_full_coeffs_are_hermitian(self, grid, rng):
        full = random_field(grid, rng).full_coeffs()
        flipped = np.conj(np.roll(full[:, ::-1, ::-1], 1, axis=(1, 2)))
        np.testing.assert_allclose(full, flipped, atol=1e-15)

    def test_field_shape_checked(self, grid, small_grid):
        with pytest.raises(GridMismatchError):
            SpectralField(grid, np.zeros(small_grid.spectral_shape))

    def test_grid_mismatch_in_arithmetic(self, grid, small_grid):
        with pytest.raises(GridMismatchError):
            SpectralField.zeros(grid) + SpectralField.zeros(small_grid)


class TestProjection:
    def test_idempotent(self, grid, rng):
        raw = SpectralField(grid, grid.to_spectral(rng.standard_normal((2, 32, 32))))
        once = leray_project(raw)
        np.testing.assert_allclose(leray_project(once).coeffs, once.coeffs, rtol=0, atol=1e-15)

    def test_divergence_free(self, grid, rng):
        raw = SpectralField(grid, grid.to_spectral(rng.standard_normal((2, 32, 32))))
        assert leray_project(raw).divergence_residual() < 1e-13

    def test_gradient_field_removed(self, grid):
        # grad(cos x cos 2y) projects to zero
        grad = field_from(grid, lambda x, y: (-np.sin(x) * np.cos(2 * y), -2 * np.cos(x) * np.sin(2 * y)))
        assert np.abs(leray_project(grad).coeffs).max() < 1e-15

    def test_mean_pinned(self, grid):
        const = field_from(grid, lambda x, y: (1.0 + 0 * x, 2.0 + 0 * y))
        assert np.abs(leray_project(const).coeffs).max() == 0.0

    def test_dealias_drops_high_modes(self, grid):
        u = to_spectral(PhysicalField.from_function(grid, lambda x, y: (np.sin(12 * y), 0 * x)))
        assert np.abs(u.coeffs).max() == pytest.approx(0.5)
        assert np.abs(dealias(u).coeffs).max() < 1e-14

    @given(st.integers(0, 2**32 - 1))
    def test_projection_is_contraction(self, seed):
        g = GridSpec(16)
        raw = SpectralField(g, g.to_spectral(np.random.default_rng(seed).standard_normal((2, 16, 16))))
        assert inner(leray_project(raw), leray_project(raw)) <= inner(raw, raw) * (1 + 1e-14)


class TestNorms:
    def test_zero_field(self, grid):
        assert norms(SpectralField.zeros(grid)) == {"h": 0.0, "v": 0.0, "lp": 0.0}

    def test_shear_norms(self, grid):
        y = sp.symbols("y")
        l4_exact = float(2 * sp.pi * sp.integrate(sp.sin(y) ** 4, (y, 0, 2 * sp.pi)))
        assert l4_exact == pytest.approx(1.5 * math.pi**2, rel=1e-15)
        got = norms(shear(grid), r=3)
        assert got["h"] ** 2 == pytest.approx(2 * math.pi**2, rel=1e-14)
        assert got["v"] ** 2 == pytest.approx(2 * math.pi**2, rel=1e-14)
        assert got["lp"] ** 4 == pytest.approx(l4_exact, rel=1e-14)

    def test_stokes_eigenvalue(self, grid):
        u = field_from(grid, lambda x, y: (np.sin(3 * y), 0 * x))
        np.testing.assert_allclose(stokes_apply(u).coeffs, 9 * u.coeffs, atol=1e-14)


class TestConvection:
    def test_zero_advector(self, grid, rng):
        v, w = random_fields(grid, rng, 2)
        assert trilinear(SpectralField.zeros(grid), v, w) == 0.0

    def test_b_u_v_v_vanishes(self, grid, rng):
        u, v = random_fields(grid, rng, 2)
        assert abs(trilinear(u, v, v)) < 1e-14

    def test_skew_symmetry(self, grid, rng):
        for u, v, w in zip(*(random_fields(grid, rng, 5, 3.0) for _ in range(3))):
            assert abs(trilinear(u, v, w) + trilinear(u, w, v)) < 1e-12

    def test_shear_is_steady(self, grid):
        # (sin y, 0) . grad (sin y, 0) = 0 pointwise
        assert np.abs(convective(shear(grid), shear(grid)).coeffs).max() < 1e-16

    def test_pairing_matches_trilinear(self, grid, rng):
        u, v, w = random_fields(grid, rng, 3)
        assert inner(convective(u, v), w) == pytest.approx(trilinear(u, v, w), abs=1e-13)

    @given(st.integers(0, 2**32 - 1))
    def test_skew_symmetry_property(self, seed):
        g = GridSpec(16)
        u, v, w = random_fields(g, np.random.default_rng(seed), 3, 2.0)
        scale = math.prod(norms(f)["v"] for f in (u, v, w)) + 1
        assert abs(trilinear(u, v, w) + trilinear(u, w, v)) <= 1e-10 * scale


class TestForchheimer:
    def test_zero(self, grid):
        assert np.abs(forchheimer(SpectralField.zeros(grid), 3).coeffs).max() == 0.0

    def test_linear_case_is_identity(self, grid, rng):
        u = random_field(grid, rng)
        np.testing.assert_allclose(forchheimer(u, 1, project=False).coeffs, u.coeffs, atol=1e-15)
        np.testing.assert_allclose(forchheimer(u, 1).coeffs, u.coeffs, atol=1e-15)

    @pytest.mark.parametrize("r", [3, 5])
    def test_duality_against_grid_sum(self, grid, rng, r):
        u = random_field(grid, rng, 2.0)
        size = grid.physical_size(r)
        phys = grid.to_physical(u.coeffs, size)
        grid_sum = np.sum(np.sum(phys**2, axis=0) ** ((r + 1) / 2)) * (2 * np.pi / size) ** 2
        pairing = inner(forchheimer(u, r, project=False), u)
        assert pairing == pytest.approx(grid_sum, rel=1e-13)

    def test_rejects_small_exponent(self, grid):
        with pytest.raises(ValueError):
            forchheimer(SpectralField.zeros(grid), 0.5)

    def test_gateaux_linear_case(self, grid, rng):
        u, v = random_fields(grid, rng, 2)
        np.testing.assert_allclose(forchheimer_gateaux(u, v, 1).coeffs, v.coeffs, atol=1e-15)

    def test_gateaux_zero_branch(self, grid, rng):
        (v,) = random_fields(grid, rng, 1)
        assert np.abs(forchheimer_gateaux(SpectralField.zeros(grid), v, 2).coeffs).max() == 0.0

    @pytest.mark.parametrize("r", [3, 5])
    def test_gateaux_centered_difference(self, grid, rng, r):
        u, v = random_fields(grid, rng, 2)
        deriv = forchheimer_gateaux(u, v, r)
        errs = []
        for eps in (1e-2, 5e-3):
            fd = (forchheimer(u + eps * v, r) - forchheimer(u - eps * v, r)) * (0.5 / eps)
            errs.append(norms(fd - deriv)["h"])
        # second order: halving eps quarters the error
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


class TestDrift:
    def test_zero(self, grid):
        p = FluidParams(1.0, 0.1, 1.0, 3)
        assert np.abs(drift(SpectralField.zeros(grid), p).coeffs).max() == 0.0

    def test_darcy_only(self, grid, rng):
        (u,) = random_fields(grid, rng, 1)
        p = FluidParams.unchecked(0.0, 0.7, 0.0, 3)
        np.testing.assert_allclose(drift(u, p).coeffs, (convective(u, u) + 0.7 * u).coeffs, atol=1e-15)

    @pytest.mark.parametrize("r", [3, 5])
    def test_coercivity_identity(self, grid, rng, r):
        (u,) = random_fields(grid, rng, 1, 2.0)
        p = FluidParams(0.5, 0.2, 1.5, r)
        n = norms(u, r)
        expected = p.mu * n["v"] ** 2 + p.alpha * n["h"] ** 2 + p.beta * n["lp"] ** (r + 1)
        assert inner(drift(u, p), u) == pytest.approx(expected, rel=1e-12)

    def test_params_validated(self):
        with pytest.raises(ValueError):
            FluidParams(0.0, 0.1, 1.0)
        with pytest.raises(ValueError):
            FluidParams(1.0, -0.1, 1.0)
        with pytest.raises(ValueError):
            FluidParams(1.0, 0.1, 1.0, 0.5)

    def test_critical_flag(self):
        assert FluidParams(1.0, 0.0, 0.5, 3).critical_ok is True
        assert FluidParams(1.0, 0.0, 0.4, 3).critical_ok is False
        assert FluidParams(1.0, 0.0, 0.4, 5).critical_ok is None


class TestGalerkin:
    def test_all_modes_is_identity(self, grid, rng):
        u = random_field(grid, rng)
        np.testing.assert_array_equal(galerkin_project(u, len(grid.pair_order)).coeffs, u.coeffs)

    def test_rejects_nonpositive(self, grid):
        with pytest.raises(ValueError):
            galerkin_project(SpectralField.zeros(grid), 0)

    def test_rejects_too_many(self, grid):
        with pytest.raises(ValueError):
            galerkin_project(SpectralField.zeros(grid), len(grid.pair_order) + 1)

    def test_lowest_shell_survives(self, grid):
        two = field_from(grid, lambda x, y: (np.sin(y) + np.sin(2 * y), 0 * x))
        one = field_from(grid, lambda x, y: (np.sin(y), 0 * x))
        np.testing.assert_allclose(galerkin_project(two, 1).coeffs, one.coeffs, atol=1e-15)

    def test_tie_break_is_lexicographic(self, grid):
        assert grid.pair_order[:4] == [(0, 1), (1, 0), (-1, 1), (1, 1)]

    @given(st.integers(0, 2**32 - 1), st.integers(1, 50))
    def test_idempotent_contraction(self, seed, m):
        g = GridSpec(16)
        u = random_field(g, np.random.default_rng(seed))
        once = galerkin_project(u, m)
        np.testing.assert_array_equal(galerkin_project(once, m).coeffs, once.coeffs)
        assert norms(once)["h"] <= norms(u)["h"] * (1 + 1e-15)
