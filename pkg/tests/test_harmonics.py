import numpy as np
import pytest

from quantclim.harmonics import FourierCoeffs, fourier_design_row, fourier_eval


class TestFourierEval:
    def test_zero_coefficients_give_zero(self):
        coeffs = FourierCoeffs.zeros(4)
        for d in (1, 100, 365):
            assert fourier_eval(d, coeffs) == 0.0

    def test_full_period_cosine(self):
        coeffs = FourierCoeffs(a=[0.0], b=[1.0])
        assert fourier_eval(365, coeffs) == pytest.approx(1.0, abs=1e-12)

    def test_k4_value_against_direct_summation(self):
        # frozen from an independent term-by-term summation
        coeffs = FourierCoeffs(a=[0.3, -0.1, 0.05, 0.02], b=[1.2, 0.4, -0.2, 0.1])
        assert fourier_eval(100, coeffs) == pytest.approx(-0.2743640751308813, abs=1e-12)

    def test_out_of_range_day_rejected(self):
        coeffs = FourierCoeffs.zeros(2)
        with pytest.raises(ValueError):
            fourier_eval(0, coeffs)
        with pytest.raises(ValueError):
            fourier_eval(366, coeffs)


class TestDesignRow:
    def test_dot_product_matches_eval(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            k = int(rng.integers(1, 6))
            coeffs = FourierCoeffs(a=rng.standard_normal(k), b=rng.standard_normal(k))
            d = int(rng.integers(1, 366))
            row = fourier_design_row(d, k)
            assert row @ coeffs.as_vector() == pytest.approx(fourier_eval(d, coeffs), abs=1e-12)

    def test_first_entry_is_fundamental_sine(self):
        d = 91
        row = fourier_design_row(d, 1)
        assert row[0] == pytest.approx(np.sin(2 * np.pi * d / 365))
        assert row[1] == pytest.approx(np.cos(2 * np.pi * d / 365))

    def test_orthogonality_of_fundamental_pair(self):
        days = np.arange(1, 366)
        rows = fourier_design_row(days, 1)
        assert abs(float(rows[:, 0] @ rows[:, 1])) < 1e-9

    def test_vectorized_shape(self):
        days = np.arange(1, 366)
        assert fourier_design_row(days, 3).shape == (365, 6)
        assert fourier_design_row(days, 0).shape == (365, 0)


class TestProperties:
    def test_periodicity_365(self):
        rng = np.random.default_rng(3)
        coeffs = FourierCoeffs(a=rng.standard_normal(4), b=rng.standard_normal(4))
        for d in (1, 45, 200, 365):
            angles = 2 * np.pi * np.arange(1, 5) * (d + 365) / 365.0
            wrapped = float(np.sin(angles) @ coeffs.a + np.cos(angles) @ coeffs.b)
            assert fourier_eval(d, coeffs) == pytest.approx(wrapped, abs=1e-12)

    def test_linearity_in_coefficients(self):
        rng = np.random.default_rng(11)
        c1 = FourierCoeffs(a=rng.standard_normal(3), b=rng.standard_normal(3))
        c2 = FourierCoeffs(a=rng.standard_normal(3), b=rng.standard_normal(3))
        csum = FourierCoeffs(a=c1.a + c2.a, b=c1.b + c2.b)
        for d in (17, 182, 301):
            assert fourier_eval(d, csum) == pytest.approx(
                fourier_eval(d, c1) + fourier_eval(d, c2), abs=1e-12)

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError):
            FourierCoeffs(a=[1.0, 2.0], b=[1.0])
