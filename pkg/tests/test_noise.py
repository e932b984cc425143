import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scbf.noise import (
    BrownianPath,
    NoiseModel,
    WZLevel,
    apply_g,
    correction_tr,
    correction_tr_summed,
    dg_apply,
    hypothesis_audit,
    is_dyadic,
    mode_shapes,
    sample_path,
    wz_derivative,
    wz_table,
)
from scbf.spectral import GridSpec, SpectralField, inner, norms, random_field

WEIGHTS = (0.4, 0.3, 0.2, 0.15, 0.1, 0.08, 0.06, 0.05)


def models(grid, weights=WEIGHTS):
    return [getattr(NoiseModel, fam)(grid, weights) for fam in ("additive", "diagonal_linear", "affine")]


class TestShapes:
    def test_orthonormal(self, grid):
        shapes = mode_shapes(grid, 12)
        gram = np.array([[grid.inner(a, b) for b in shapes] for a in shapes])
        np.testing.assert_allclose(gram, np.eye(12), atol=1e-14)

    def test_divergence_free(self, grid):
        for s in mode_shapes(grid, 12):
            assert np.abs(grid.divergence(s)).max() < 1e-15

    def test_too_many_modes(self, small_grid):
        with pytest.raises(ValueError):
            mode_shapes(small_grid, 2 * len(small_grid.pair_order) + 1)


class TestModel:
    def test_unknown_family(self, grid):
        with pytest.raises(ValueError):
            NoiseModel(grid, "multiplicative", WEIGHTS)

    def test_zero_noise_vector(self, grid, rng):
        u = random_field(grid, rng)
        for model in models(grid):
            assert np.abs(apply_g(model, u, np.zeros(8)).coeffs).max() == 0.0

    def test_wrong_noise_length(self, grid, rng):
        with pytest.raises(ValueError):
            apply_g(models(grid)[1], random_field(grid, rng), np.zeros(3))

    def test_additive_ignores_state(self, grid, rng):
        model = models(grid)[0]
        z = rng.standard_normal(8)
        a = apply_g(model, random_field(grid, rng), z)
        b = apply_g(model, SpectralField.zeros(grid), z)
        np.testing.assert_array_equal(a.coeffs, b.coeffs)

    def test_two_mode_correction(self, grid, rng):
        # q = (1, 1/2): Tr_2(u) = (1 + 1/4) u
        model = NoiseModel.diagonal_linear(grid, (1.0, 0.5))
        u = random_field(grid, rng)
        np.testing.assert_allclose(correction_tr(model, u, 2).coeffs, 1.25 * u.coeffs, atol=1e-15)

    def test_additive_correction_is_zero(self, grid, rng):
        u = random_field(grid, rng)
        assert np.abs(correction_tr(models(grid)[0], u, 8).coeffs).max() == 0.0

    @pytest.mark.parametrize("family", ["additive", "diagonal_linear", "affine"])
    @pytest.mark.parametrize("n", [1, 4, 8])
    def test_closed_form_matches_sum(self, grid, rng, family, n):
        model = getattr(NoiseModel, family)(grid, WEIGHTS)
        u = random_field(grid, rng, 3.0)
        diff = correction_tr(model, u, n) - correction_tr_summed(model, u, n)
        assert np.abs(diff.coeffs).max() <= 1e-12

    def test_correction_level_range(self, grid, rng):
        model = models(grid)[1]
        with pytest.raises(ValueError):
            correction_tr(model, random_field(grid, rng), 9)
        with pytest.raises(ValueError):
            correction_tr(model, random_field(grid, rng), 0)

    @pytest.mark.parametrize("family", ["additive", "diagonal_linear", "affine"])
    def test_dg_finite_difference(self, grid, rng, family):
        model = getattr(NoiseModel, family)(grid, WEIGHTS)
        u, h = random_field(grid, rng), random_field(grid, rng)
        eps = 1e-3
        for k in (1, 5, 8):
            plus = SpectralField(grid, model.g_component((u + eps * h).coeffs, k - 1))
            minus = SpectralField(grid, model.g_component((u - eps * h).coeffs, k - 1))
            fd = (plus - minus) * (0.5 / eps)
            assert np.abs((fd - dg_apply(model, u, k, h)).coeffs).max() <= 1e-10

    def test_dg_index_is_one_based(self, grid, rng):
        model = models(grid)[1]
        u = random_field(grid, rng)
        with pytest.raises(IndexError):
            dg_apply(model, u, 0, u)
        with pytest.raises(IndexError):
            dg_apply(model, u, 9, u)

    def test_hilbert_schmidt_diagonal(self, grid, rng):
        model = models(grid)[1]
        u = random_field(grid, rng, 2.0)
        assert model.hilbert_schmidt_sq(u.coeffs) == pytest.approx(model.trace * 4.0, rel=1e-13)

    def test_trace(self, grid):
        assert models(grid)[0].trace == pytest.approx(sum(q * q for q in WEIGHTS), rel=1e-15)

    @pytest.mark.parametrize("family", ["additive", "diagonal_linear", "affine"])
    def test_audit_passes(self, grid, family):
        report = hypothesis_audit(getattr(NoiseModel, family)(grid, WEIGHTS), sample_count=200)
        assert report.ok, report.violations

    def test_audit_detects_understated_constant(self, grid):
        model = NoiseModel.diagonal_linear(grid, WEIGHTS)
        object.__setattr__(model, "hyp", type(model.hyp)(L1=1e-3, L2=model.hyp.L2, rho=model.hyp.rho))
        assert "growth" in hypothesis_audit(model, sample_count=20).violations

    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
    def test_correction_monotone_in_state(self, seed, scale):
        g = GridSpec(16)
        model = NoiseModel.affine(g, WEIGHTS)
        rng = np.random.default_rng(seed)
        u, v = random_field(g, rng, scale), random_field(g, rng)
        # Tr_n is a u + b with a = sum q^2, so the difference is a (u - v)
        d = correction_tr(model, u, 8) - correction_tr(model, v, 8)
        assert inner(d, u - v) == pytest.approx(model.trace * norms(u - v)["h"] ** 2, rel=1e-12)


class TestBrownianPath:
    def test_deterministic(self):
        a = sample_path(7, 0.5, 6, 3)
        b = sample_path(7, 0.5, 6, 3)
        np.testing.assert_array_equal(a.increments, b.increments)

    def test_seeds_differ(self):
        assert not np.array_equal(sample_path(7, 0.5, 6, 3).increments, sample_path(8, 0.5, 6, 3).increments)

    def test_refinement_is_consistent(self):
        coarse = sample_path(3, 0.5, 5, 2)
        fine = sample_path(3, 0.5, 9, 2)
        np.testing.assert_allclose(fine.level_increments(5), coarse.increments, atol=1e-14)

    def test_adding_modes_keeps_old_ones(self):
        np.testing.assert_array_equal(sample_path(3, 0.5, 5, 4).increments[:2], sample_path(3, 0.5, 5, 2).increments)

    def test_values_start_at_zero(self):
        path = sample_path(1, 1.0, 4, 2)
        vals = path.values()
        assert vals.shape == (2, 17)
        assert np.all(vals[:, 0] == 0.0)
        np.testing.assert_allclose(vals[:, -1], path.increments.sum(axis=1), atol=1e-15)

    def test_quadratic_variation_band(self):
        level = 14
        path = sample_path(11, 1.0, level, 4)
        s2 = np.mean(path.increments**2, axis=1)
        band = 5 * math.sqrt(2 / 2**level)
        assert np.all(np.abs(s2 / (1.0 / 2**level) - 1) <= band)

    def test_bad_sizes(self):
        with pytest.raises(ValueError):
            sample_path(0, 0.5, 0, 1)
        with pytest.raises(ValueError):
            sample_path(-1, 0.5, 3, 1)

    def test_level_out_of_range(self):
        with pytest.raises(ValueError):
            sample_path(0, 0.5, 3, 1).level_increments(4)

    def test_dump_round_trip(self, tmp_path):
        path = sample_path(2**40 + 5, 0.5, 6, 3)
        target = tmp_path / "path.bin"
        path.dump(target)
        back = BrownianPath.load(target)
        assert (back.seed, back.max_level, back.k_dim, back.t_horizon) == (path.seed, 6, 3, 0.5)
        np.testing.assert_array_equal(back.increments, path.increments)
        assert target.stat().st_size == 36 + 8 * 3 * 64

    def test_load_rejects_garbage(self, tmp_path):
        target = tmp_path / "junk.bin"
        target.write_bytes(b"X" * 64)
        with pytest.raises(ValueError):
            BrownianPath.load(target)

    def test_dyadic_check(self):
        assert is_dyadic(0.5) and is_dyadic(3.0) and is_dyadic(0.375)
        assert not is_dyadic(0.1) and not is_dyadic(0.0) and not is_dyadic(-0.5)


class TestWongZakai:
    def test_first_cell_is_zero(self):
        table = wz_table(sample_path(4, 0.5, 6, 8), WZLevel(3, 0.5))
        assert np.all(table[0] == 0.0)

    def test_lagged_quotient(self):
        # three directions, T = 1, n = 2: sigma = 1/4, row 2 = (w(1/4) - w(0)) ... row j uses cell j-1
        path = sample_path(9, 1.0, 4, 3)
        table = wz_table(path, WZLevel(2, 1.0))
        vals = path.values(2)
        for j in range(1, 4):
            np.testing.assert_allclose(table[j, :2], (vals[:2, j] - vals[:2, j - 1]) / 0.25, atol=1e-13)
        assert np.all(table[:, 2] == 0.0)

    def test_integral_is_lagged_path(self):
        path = sample_path(5, 0.5, 8, 8)
        lvl = WZLevel(4, 0.5)
        integral = wz_table(path, lvl).sum(axis=0) * lvl.sigma
        np.testing.assert_allclose(integral[:4], path.values(4)[:4, -2], atol=1e-13)

    def test_adapted(self):
        # modifying the path after t must not change the derivative before t + sigma
        path = sample_path(5, 0.5, 6, 8)
        lvl = WZLevel(3, 0.5)
        tampered = path.increments.copy()
        tampered[:, 32:] += 1.0
        other = BrownianPath(0.5, 6, 8, 5, tampered)
        a, b = wz_table(path, lvl), wz_table(other, lvl)
        np.testing.assert_array_equal(a[:5], b[:5])
        assert not np.array_equal(a[5:], b[5:])

    def test_derivative_lookup(self):
        path = sample_path(5, 0.5, 6, 8)
        lvl = WZLevel(3, 0.5)
        table = wz_table(path, lvl)
        np.testing.assert_array_equal(wz_derivative(path, lvl, 0.2), table[3])
        end = wz_derivative(path, lvl, 0.5)
        np.testing.assert_allclose(end[:3], path.level_increments(3)[:3, -1] / lvl.sigma)
        with pytest.raises(ValueError):
            wz_derivative(path, lvl, 0.6)

    def test_level_checks(self):
        path = sample_path(5, 0.5, 4, 3)
        with pytest.raises(ValueError):
            wz_table(path, WZLevel(5, 0.5))
        with pytest.raises(ValueError):
            wz_table(path, WZLevel(4, 0.5))
        with pytest.raises(ValueError):
            wz_table(path, WZLevel(2, 1.0))
        with pytest.raises(ValueError):
            WZLevel(0, 0.5)
        with pytest.raises(ValueError):
            WZLevel(2, 0.1)
