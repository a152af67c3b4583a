"""Truncated Fourier series over the 365-day year.

Every seasonal term in the package (mean, variance and quantile models) is a
linear combination of sin(2*pi*j*d/365) and cos(2*pi*j*d/365), j = 1..k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_day_of_year

PERIOD = 365.0


@dataclass(frozen=True)
class FourierCoeffs:
    """Order-k harmonic coefficients: ``a`` for sines, ``b`` for cosines."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", np.atleast_1d(np.asarray(self.a, dtype=float)))
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))
        if self.a.shape != self.b.shape or self.a.ndim != 1:
            raise ValueError("a and b must be 1-D arrays of the same length")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise ValueError("harmonic coefficients must be finite")

    @property
    def k(self) -> int:
        return self.a.size

    @classmethod
    def zeros(cls, k: int) -> "FourierCoeffs":
        return cls(a=np.zeros(k), b=np.zeros(k))

    def as_vector(self) -> np.ndarray:
        """Concatenated (a, b), matching fourier_design_row ordering."""
        return np.concatenate([self.a, self.b])


def fourier_design_row(d, k: int) -> np.ndarray:
    """Design entries [sin_1..sin_k, cos_1..cos_k] at day-of-year ``d``.

    ``d`` may be a scalar or array; the result has a trailing axis of length
    2k such that ``row @ coeffs.as_vector() == fourier_eval(d, coeffs)``.
    """
    d = check_day_of_year(d)
    if k < 0:
        raise ValueError("order k must be >= 0")
    d = np.asarray(d, dtype=float)
    if k == 0:
        return np.zeros(d.shape + (0,))
    angles = (2.0 * np.pi / PERIOD) * d[..., None] * np.arange(1, k + 1)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def fourier_eval(d, coeffs: FourierCoeffs):
    """Value of the truncated series at day-of-year ``d`` (scalar or array)."""
    if coeffs.k == 0:
        d = check_day_of_year(d)
        out = np.zeros(np.shape(d))
        return out if out.ndim else 0.0
    out = fourier_design_row(d, coeffs.k) @ coeffs.as_vector()
    return out if out.ndim else float(out)
