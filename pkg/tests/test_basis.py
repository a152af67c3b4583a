import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import ndtri
from scipy.stats import norm

from quantclim.basis import (
    CovariateBox,
    InvalidScaleError,
    KnotGrid,
    ModelForm,
    ModelSpec,
    QuantileCoeffs,
    basis_eval,
    check_positive_scales,
    density_eval,
    piece_mass,
    piecewise_params,
    quantile_eval,
    sample_one,
)

GRID = KnotGrid(4)


def branch_table_basis(tau, knots):
    """Independent oracle: evaluate the two-branch definition literally,
    with the upper middle branch anchored at the interval's left knot."""
    L = len(knots) - 1
    out = np.zeros(L)
    for i in range(L):
        k0, k1 = knots[i], knots[i + 1]
        if k0 < 0.5:
            if tau < k0:
                out[i] = ndtri(k0) - ndtri(k1)
            elif tau < k1:
                out[i] = ndtri(tau) - ndtri(k1)
            else:
                out[i] = 0.0
        else:
            if tau < k0:
                out[i] = 0.0
            elif tau < k1:
                out[i] = ndtri(tau) - ndtri(k0)
            else:
                out[i] = ndtri(k1) - ndtri(k0)
    return out


def reduced_coeffs(theta_t=0.0, theta_soi=0.0, theta_sigma=1.0, betas=None,
                   L=4, k=4, include_soi=True):
    spec = ModelSpec(form=ModelForm.REDUCED_SIGMA, n_pieces=L, k=k, include_soi=include_soi)
    b = np.zeros(spec.n_beta) if betas is None else np.asarray(betas, dtype=float)
    thetas = np.zeros((L, spec.n_theta))
    thetas[:, spec.theta_slots.index("t")] = theta_t
    if include_soi:
        thetas[:, spec.theta_slots.index("soi")] = theta_soi
    thetas[:, spec.theta_slots.index("sigma")] = theta_sigma
    return QuantileCoeffs(b, thetas, spec)


def random_valid_coeffs(rng, L=4, k=2):
    """Random coefficients guaranteed positive over the default box."""
    spec = ModelSpec(form=ModelForm.REDUCED_SIGMA, n_pieces=L, k=k, include_soi=True)
    betas = rng.normal(0.0, 2.0, size=spec.n_beta)
    thetas = np.zeros((L, spec.n_theta))
    thetas[:, spec.theta_slots.index("sigma")] = rng.uniform(0.5, 2.0, size=L)
    thetas[:, spec.theta_slots.index("t")] = rng.uniform(-0.2, 0.4, size=L)
    thetas[:, spec.theta_slots.index("soi")] = rng.uniform(-0.05, 0.05, size=L)
    return QuantileCoeffs(betas, thetas, spec)


class TestBasisEval:
    def test_all_zero_at_median(self):
        np.testing.assert_allclose(basis_eval(0.5, GRID), np.zeros(4), atol=1e-14)

    def test_matches_branch_table_oracle_on_grid(self):
        knots = GRID.knots
        for tau in np.arange(0.01, 0.999, 0.01):
            np.testing.assert_allclose(basis_eval(tau, GRID),
                                       branch_table_basis(tau, knots), atol=1e-12)

    def test_tau_01_values(self):
        vals = basis_eval(0.1, GRID)
        assert vals[0] == pytest.approx(ndtri(0.1) - ndtri(0.25), abs=1e-12)  # ~ -0.6071
        assert vals[1] == pytest.approx(ndtri(0.25) - ndtri(0.5), abs=1e-12)
        assert vals[2] == 0.0 and vals[3] == 0.0

    def test_upper_tail_saturation(self):
        vals = basis_eval(1.0 - 1e-12, GRID)
        assert vals[3] > 6.0  # grows like ndtri(tau)
        assert vals[0] == 0.0 and vals[1] == 0.0
        assert vals[2] == pytest.approx(ndtri(0.75) - ndtri(0.5), abs=1e-12)

    def test_continuity_at_knots(self):
        eps = 1e-10
        for kappa in (0.25, 0.5, 0.75):
            left = basis_eval(kappa - eps, GRID)
            right = basis_eval(kappa + eps, GRID)
            np.testing.assert_allclose(left, right, atol=1e-8)

    def test_printed_upper_branch_is_discontinuous(self):
        # Regression guard for the deliberate anchor correction: anchoring the
        # upper middle branch at the *right* knot (as printed) jumps at the
        # left knot and is nonzero at the median.
        def printed_b3(tau):  # piece with knots [0.5, 0.75]
            if tau < 0.5:
                return 0.0
            if tau < 0.75:
                return ndtri(tau) - ndtri(0.75)
            return ndtri(0.75) - ndtri(0.5)

        jump = printed_b3(0.5 + 1e-12) - printed_b3(0.5 - 1e-12)
        assert abs(jump) > 0.5  # discontinuous
        assert printed_b3(0.5) != 0.0
        # the corrected form has neither defect
        assert basis_eval(0.5, GRID)[2] == 0.0

    def test_domain_errors(self):
        for bad in (0.0, 1.0, -0.2, 1.3):
            with pytest.raises(ValueError):
                basis_eval(bad, GRID)

    def test_odd_l_rejected_single_piece_allowed(self):
        with pytest.raises(ValueError):
            KnotGrid(3)
        assert KnotGrid(1).n_pieces == 1
        np.testing.assert_allclose(basis_eval(0.3, KnotGrid(1)), [ndtri(0.3)])


class TestQuantileEval:
    def test_median_equals_location(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            coeffs = random_valid_coeffs(rng)
            t, d, soi, sd = rng.uniform(0, 1), int(rng.integers(1, 366)), 0.0, rng.uniform(0.5, 3)
            mu = coeffs.spec.location_design(np.float64(t), d, soi) @ coeffs.betas
            q = quantile_eval(coeffs, coeffs.spec.grid, 0.5, t, d, soi, sd)
            assert q == pytest.approx(float(mu), abs=1e-10)

    def test_single_piece_collapse_matches_normal_quantiles(self):
        coeffs = reduced_coeffs(theta_sigma=1.0)
        for tau in (0.1, 0.3, 0.7, 0.9):
            q = quantile_eval(coeffs, GRID, tau, 0.5, 100, 0.0, 2.0)
            assert q == pytest.approx(2.0 * ndtri(tau), abs=1e-12)  # N(0, 4) quantile

    def test_monotone_in_tau_for_random_draws(self):
        rng = np.random.default_rng(17)
        taus = np.linspace(0.01, 0.99, 99)
        for _ in range(1000):
            coeffs = random_valid_coeffs(rng)
            t, d = rng.uniform(0, 1), int(rng.integers(1, 366))
            sd = rng.uniform(0.5, 3.0)
            q = quantile_eval(coeffs, coeffs.spec.grid, taus, t, d, 0.0, sd)
            assert np.all(np.diff(q) >= -1e-12)

    def test_invalid_scale_raises(self):
        coeffs = reduced_coeffs(theta_t=-1.0, theta_sigma=0.0)
        with pytest.raises(InvalidScaleError):
            quantile_eval(coeffs, GRID, 0.5, 1.0, 100, 0.0, 1.0)


class TestPiecewiseParams:
    def test_collapse_fixture_centers_and_scales(self):
        coeffs = reduced_coeffs(theta_sigma=1.0)
        pq = piecewise_params(coeffs, GRID, 0.3, 50, 0.0, 2.0)
        np.testing.assert_allclose(pq.a, np.zeros(4), atol=1e-12)
        np.testing.assert_allclose(pq.sigma, np.full(4, 2.0), atol=1e-12)

    def test_piecewise_form_matches_quantile_eval(self):
        rng = np.random.default_rng(23)
        taus = np.linspace(0.01, 0.99, 99)
        for _ in range(20):
            coeffs = random_valid_coeffs(rng)
            t, d, sd = rng.uniform(0, 1), int(rng.integers(1, 366)), rng.uniform(0.5, 3)
            pq = piecewise_params(coeffs, coeffs.spec.grid, t, d, 0.0, sd)
            direct = quantile_eval(coeffs, coeffs.spec.grid, taus, t, d, 0.0, sd)
            pieces = np.searchsorted(coeffs.spec.grid.knots, taus, side="right") - 1
            via_pieces = pq.a[pieces] + pq.sigma[pieces] * ndtri(taus)
            np.testing.assert_allclose(via_pieces, direct, atol=1e-10)

    def test_breaks_nondecreasing_random(self):
        rng = np.random.default_rng(29)
        for _ in range(1000):
            coeffs = random_valid_coeffs(rng)
            pq = piecewise_params(coeffs, coeffs.spec.grid, rng.uniform(0, 1),
                                  int(rng.integers(1, 366)), 0.0, rng.uniform(0.5, 3))
            finite = pq.breaks[1:-1]
            assert np.all(np.diff(finite) >= -1e-12)
            assert pq.breaks[0] == -np.inf and pq.breaks[-1] == np.inf


class TestDensity:
    def test_collapse_fixture_pdf_at_zero(self):
        coeffs = reduced_coeffs(theta_sigma=1.0)
        pq = piecewise_params(coeffs, GRID, 0.3, 50, 0.0, 2.0)
        assert density_eval(pq, 0.0) == pytest.approx(1.0 / (2.0 * np.sqrt(2 * np.pi)), abs=1e-14)

    def test_integrates_to_one_by_quadrature(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            coeffs = random_valid_coeffs(rng)
            pq = piecewise_params(coeffs, coeffs.spec.grid, rng.uniform(0, 1),
                                  int(rng.integers(1, 366)), 0.0, rng.uniform(0.5, 3))
            smax = pq.sigma.max()
            lo = pq.breaks[1] - 40 * smax
            hi = pq.breaks[-2] + 40 * smax
            cuts = [lo, *pq.breaks[1:-1], hi]
            total = sum(quad(lambda y: density_eval(pq, y), a, b, limit=200)[0]
                        for a, b in zip(cuts[:-1], cuts[1:]))
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_each_piece_carries_equal_mass(self):
        rng = np.random.default_rng(37)
        for _ in range(200):
            coeffs = random_valid_coeffs(rng)
            pq = piecewise_params(coeffs, coeffs.spec.grid, rng.uniform(0, 1),
                                  int(rng.integers(1, 366)), 0.0, rng.uniform(0.5, 3))
            np.testing.assert_allclose(piece_mass(pq), np.full(4, 0.25), atol=1e-10)

    def test_value_at_interior_break_uses_lower_piece(self):
        # left-open right-closed: a value exactly at a break belongs to the
        # piece below it
        rng = np.random.default_rng(41)
        coeffs = random_valid_coeffs(rng)
        pq = piecewise_params(coeffs, coeffs.spec.grid, 0.4, 123, 0.0, 1.5)
        y = pq.breaks[2]  # boundary between pieces 1 and 2
        expected = norm.pdf(y, loc=pq.a[1], scale=pq.sigma[1])
        assert np.isfinite(density_eval(pq, y))
        assert density_eval(pq, y) == pytest.approx(expected, rel=1e-12)


class TestSampleOne:
    def test_median_maps_to_location(self):
        rng = np.random.default_rng(43)
        coeffs = random_valid_coeffs(rng)
        t, d, sd = 0.7, 200, 1.2
        mu = coeffs.spec.location_design(np.float64(t), d, 0.0) @ coeffs.betas
        pq = piecewise_params(coeffs, coeffs.spec.grid, t, d, 0.0, sd)
        assert sample_one(pq, 0.5) == pytest.approx(float(mu), abs=1e-12)

    def test_empirical_quartile_matches_break(self):
        rng = np.random.default_rng(47)
        coeffs = random_valid_coeffs(rng)
        pq = piecewise_params(coeffs, coeffs.spec.grid, 0.2, 10, 0.0, 2.0)
        n = 10**6
        u = rng.uniform(size=n)
        draws = sample_one(pq, u)
        emp = np.quantile(draws, 0.25)
        # MC standard error of an empirical quantile via the density at it
        se = np.sqrt(0.25 * 0.75 / n) / density_eval(pq, pq.breaks[1])
        assert abs(emp - pq.breaks[1]) < 3 * se

    def test_continuity_across_knots(self):
        rng = np.random.default_rng(53)
        coeffs = random_valid_coeffs(rng)
        pq = piecewise_params(coeffs, coeffs.spec.grid, 0.9, 300, 0.0, 1.1)
        eps = 1e-13
        for kappa in (0.25, 0.5, 0.75):
            below = sample_one(pq, kappa - eps)
            above = sample_one(pq, kappa + eps)
            assert below == pytest.approx(above, abs=1e-9)

    def test_u_bounds_rejected(self):
        coeffs = reduced_coeffs()
        pq = piecewise_params(coeffs, GRID, 0.5, 1, 0.0, 1.0)
        for bad in (0.0, 1.0):
            with pytest.raises(ValueError):
                sample_one(pq, bad)


class TestCheckPositiveScales:
    def test_positive_on_box_passes(self):
        coeffs = reduced_coeffs(theta_sigma=1.0)
        box = CovariateBox(t_range=(0, 1), soi_range=(0, 0), sigma_range=(0.5, 5.0))
        assert check_positive_scales(coeffs, GRID, box).ok

    def test_sign_flip_fails_with_vertex_witness(self):
        coeffs = reduced_coeffs(theta_t=-1.0, theta_sigma=0.0)
        box = CovariateBox(t_range=(0, 1), soi_range=(0, 0), sigma_range=(0.5, 5.0))
        result = check_positive_scales(coeffs, GRID, box)
        assert not result.ok
        assert result.witness["t"] == 1.0

    def test_vertex_minimum_matches_dense_grid_oracle(self):
        rng = np.random.default_rng(59)
        spec = ModelSpec(form=ModelForm.REDUCED_SIGMA, n_pieces=4, k=2, include_soi=True)
        box = CovariateBox(t_range=(0, 1), soi_range=(-2, 2), sigma_range=(0.5, 3.0))
        grids = [np.linspace(*box.t_range, 100), np.linspace(*box.soi_range, 100),
                 np.linspace(*box.sigma_range, 100)]
        tt, xx, ss = np.meshgrid(*grids, indexing="ij")
        for _ in range(20):
            thetas = rng.normal(0, 1, size=(4, spec.n_theta))
            coeffs = QuantileCoeffs(np.zeros(spec.n_beta), thetas, spec)
            result = check_positive_scales(coeffs, spec.grid, box)
            dense_min = np.inf
            for l in range(4):
                vals = thetas[l, 0] * tt + thetas[l, 1] * xx + thetas[l, 2] * ss
                dense_min = min(dense_min, float(vals.min()))
            assert result.min_value == pytest.approx(dense_min, abs=1e-9)
            assert result.ok == (dense_min > 0)


class TestGaussianDegenerateConfig:
    def test_single_piece_location_scale_model(self):
        # L=1 with location b0 + b1*t and scale th0 + th1*t reproduces the
        # plain Gaussian location-scale quantile function.
        spec = ModelSpec(form=ModelForm.FULL, n_pieces=1, k=0, include_soi=False)
        b0, b1, th0, th1 = 3.0, 1.5, 2.0, 0.5
        coeffs = QuantileCoeffs(np.array([b0, b1]),
                                np.array([[th0, th1]]), spec)
        grid = KnotGrid(1)
        for t in (0.0, 0.3, 0.8, 1.0):
            for tau in (0.05, 0.25, 0.5, 0.9):
                q = quantile_eval(coeffs, grid, tau, t, 100, 0.0, None)
                expected = (b0 + b1 * t) + (th0 + th1 * t) * ndtri(tau)
                assert q == pytest.approx(expected, abs=1e-10)
        pq = piecewise_params(coeffs, grid, 0.4, 100, 0.0, None)
        assert piece_mass(pq)[0] == pytest.approx(1.0, abs=1e-12)
        assert density_eval(pq, 3.0) == pytest.approx(
            norm.pdf(3.0, loc=b0 + 0.4 * b1, scale=th0 + 0.4 * th1), rel=1e-12)
