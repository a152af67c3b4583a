"""Piecewise-Gaussian quantile machinery.

A response's quantile function is built from basis functions B_l(tau) that
are clipped, shifted copies of the standard-normal quantile transform on a
grid of equally spaced knots.  On each knot interval the quantile function
is therefore linear in Phi^{-1}(tau), which yields a closed-form piecewise
normal density where piece l carries probability mass 1/L.

The published two-branch basis definition anchors the upper middle branch at
the interval's *right* knot, which breaks continuity at the left knot and
makes B_l(0.5) nonzero.  We anchor at the left knot instead; this restores
continuity, makes every B_l vanish at the median, and preserves the identity
q(0.5) = location.  See tests for a demonstration of the discontinuity of
the uncorrected form.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .harmonics import fourier_design_row, fourier_eval, FourierCoeffs
from .validation import check_in_open_unit_interval

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class InvalidScaleError(ValueError):
    """A piece scale sigma_l is non-positive at some covariate point."""


@dataclass(frozen=True)
class KnotGrid:
    """Equally spaced knots 0 = kappa_1 < ... < kappa_{L+1} = 1.

    L must be even so that 0.5 is a knot (both basis branches pivot on the
    median).  L = 1 is allowed as the degenerate single-piece configuration
    where B_1(tau) = Phi^{-1}(tau) and the model is Gaussian.
    """

    n_pieces: int

    def __post_init__(self):
        if self.n_pieces < 1:
            raise ValueError("need at least one piece")
        if self.n_pieces != 1 and self.n_pieces % 2 != 0:
            raise ValueError("the number of pieces must be even (or exactly 1)")

    @property
    def knots(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_pieces + 1)

    @property
    def interior_knots(self) -> np.ndarray:
        return self.knots[1:-1]

    @property
    def interior_z(self) -> np.ndarray:
        """Phi^{-1} at the interior knots."""
        return ndtri(self.interior_knots)


DEFAULT_GRID = KnotGrid(4)


class ModelForm(enum.Enum):
    """Which covariates drive the piece scales sigma_l(s, t)."""

    FULL = "full"  # intercept + t + (soi) + seasonal harmonics
    REDUCED_SIGMA = "reduced_sigma"  # t + (soi) + fitted seasonal sd


@dataclass(frozen=True)
class ModelSpec:
    """Covariate layout of the quantile model.

    ``k`` is the harmonic order of the location part (and of the scale part
    in the FULL form).  ``include_soi`` toggles the climate-index column;
    ``reduced_intercept`` optionally restores an intercept in the reduced
    scale form, which the printed reduced model omits.
    """

    form: ModelForm = ModelForm.REDUCED_SIGMA
    n_pieces: int = 4
    k: int = 4
    include_soi: bool = True
    reduced_intercept: bool = False

    @property
    def grid(self) -> KnotGrid:
        return KnotGrid(self.n_pieces)

    @property
    def beta_slots(self) -> tuple[str, ...]:
        slots = ["const", "t"]
        if self.include_soi:
            slots.append("soi")
        slots += [f"sin{j}" for j in range(1, self.k + 1)]
        slots += [f"cos{j}" for j in range(1, self.k + 1)]
        return tuple(slots)

    @property
    def theta_slots(self) -> tuple[str, ...]:
        if self.form is ModelForm.FULL:
            return self.beta_slots
        slots = ["const"] if self.reduced_intercept else []
        slots.append("t")
        if self.include_soi:
            slots.append("soi")
        slots.append("sigma")
        return tuple(slots)

    @property
    def n_beta(self) -> int:
        return len(self.beta_slots)

    @property
    def n_theta(self) -> int:
        return len(self.theta_slots)

    def location_design(self, t_norm, d, soi=0.0) -> np.ndarray:
        """Rows multiplying the location coefficients, shape (..., n_beta)."""
        t_norm = np.asarray(t_norm, dtype=float)
        cols = [np.ones(t_norm.shape), t_norm]
        if self.include_soi:
            cols.append(np.broadcast_to(np.asarray(soi, dtype=float), t_norm.shape))
        rows = np.stack(np.broadcast_arrays(*cols), axis=-1)
        if self.k > 0:
            four = np.broadcast_to(
                fourier_design_row(d, self.k), t_norm.shape + (2 * self.k,)
            )
            rows = np.concatenate([rows, four], axis=-1)
        return rows

    def scale_design(self, t_norm, d, soi=0.0, sigma_d=None) -> np.ndarray:
        """Rows multiplying each piece's scale coefficients, shape (..., n_theta)."""
        if self.form is ModelForm.FULL:
            return self.location_design(t_norm, d, soi)
        if sigma_d is None:
            raise ValueError("the reduced form needs the fitted seasonal sd sigma_d")
        t_norm = np.asarray(t_norm, dtype=float)
        cols = []
        if self.reduced_intercept:
            cols.append(np.ones(t_norm.shape))
        cols.append(t_norm)
        if self.include_soi:
            cols.append(np.broadcast_to(np.asarray(soi, dtype=float), t_norm.shape))
        cols.append(np.broadcast_to(np.asarray(sigma_d, dtype=float), t_norm.shape))
        return np.stack(np.broadcast_arrays(*cols), axis=-1)


@dataclass
class QuantileCoeffs:
    """One station's coefficient blocks.

    ``betas`` (length n_beta) drives the location; row l of ``thetas``
    (n_pieces x n_theta) drives the scale of piece l.
    """

    betas: np.ndarray
    thetas: np.ndarray
    spec: ModelSpec

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=float)
        self.thetas = np.asarray(self.thetas, dtype=float)
        expect_b = (self.spec.n_beta,)
        expect_t = (self.spec.n_pieces, self.spec.n_theta)
        if self.betas.shape != expect_b:
            raise ValueError(f"betas must have shape {expect_b}, got {self.betas.shape}")
        if self.thetas.shape != expect_t:
            raise ValueError(f"thetas must have shape {expect_t}, got {self.thetas.shape}")


@dataclass
class PiecewiseQuantile:
    """Piece centers/scales and the response values at the knots.

    ``breaks[l]`` is the quantile value at knot l; the first and last entries
    are -inf/+inf sentinels.  Piece l covers the left-open, right-closed
    interval (breaks[l], breaks[l+1]].
    """

    a: np.ndarray
    sigma: np.ndarray
    breaks: np.ndarray
    grid: KnotGrid

    def __post_init__(self):
        L = self.grid.n_pieces
        self.a = np.asarray(self.a, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.breaks = np.asarray(self.breaks, dtype=float)
        if self.a.shape != (L,) or self.sigma.shape != (L,) or self.breaks.shape != (L + 1,):
            raise ValueError("inconsistent piecewise-quantile shapes")
        if np.any(self.sigma <= 0):
            raise InvalidScaleError("piece scales must be strictly positive")
        if np.any(np.diff(self.breaks) < 0):
            raise ValueError("break points must be nondecreasing")


def basis_eval(tau, grid: KnotGrid = DEFAULT_GRID) -> np.ndarray:
    """Basis values B_l(tau), continuity-corrected; shape (..., L).

    Every B_l is continuous, nondecreasing, and zero at tau = 0.5.  Pieces
    below the median saturate at 0 above their interval; pieces above the
    median saturate at a positive constant.
    """
    tau = np.asarray(check_in_open_unit_interval(tau, "tau"), dtype=float)
    L = grid.n_pieces
    if L == 1:
        return ndtri(tau)[..., None]
    knots = grid.knots
    z_tau = ndtri(tau)
    out = np.empty(tau.shape + (L,))
    for i in range(L):
        k0, k1 = knots[i], knots[i + 1]
        if k0 < 0.5:
            # active on [k0, k1), saturated at a negative constant below k0
            low = (ndtri(k0) if i > 0 else -np.inf) - ndtri(k1)
            mid = z_tau - ndtri(k1)
            out[..., i] = np.where(tau < k0, low, np.where(tau < k1, mid, 0.0))
        else:
            # active on [k0, k1), saturated at a positive constant above k1
            high = (ndtri(k1) if i < L - 1 else np.inf) - ndtri(k0)
            mid = z_tau - ndtri(k0)
            out[..., i] = np.where(tau < k0, 0.0, np.where(tau < k1, mid, high))
    return out


def interior_basis_matrix(grid: KnotGrid) -> np.ndarray:
    """B_l evaluated at the interior knots; shape (L, L-1)."""
    if grid.n_pieces == 1:
        return np.zeros((1, 0))
    return basis_eval(grid.interior_knots, grid).T


def location_scale(coeffs: QuantileCoeffs, t_norm, d, soi=0.0, sigma_d=None):
    """Location mu_t and per-piece scales sigma_l at one covariate point."""
    spec = coeffs.spec
    mu = float(spec.location_design(np.asarray(t_norm, dtype=float), d, soi) @ coeffs.betas)
    row = spec.scale_design(np.asarray(t_norm, dtype=float), d, soi, sigma_d)
    sig = coeffs.thetas @ np.asarray(row, dtype=float)
    return mu, sig


def quantile_eval(coeffs: QuantileCoeffs, grid: KnotGrid, tau, t_norm, d,
                  soi=0.0, sigma_d=None):
    """Quantile q(tau) at one covariate point; ``tau`` may be an array."""
    mu, sig = location_scale(coeffs, t_norm, d, soi, sigma_d)
    if np.any(sig <= 0):
        raise InvalidScaleError(f"non-positive piece scale at t={t_norm}, d={d}")
    out = mu + basis_eval(tau, grid) @ sig
    return out if np.ndim(out) else float(out)


def piecewise_from_location_scale(mu: float, sig: np.ndarray, grid: KnotGrid) -> PiecewiseQuantile:
    """Assemble centers, scales and knot values from (mu, sigma_l)."""
    sig = np.asarray(sig, dtype=float)
    if np.any(sig <= 0):
        raise InvalidScaleError("non-positive piece scale")
    L = grid.n_pieces
    if L == 1:
        return PiecewiseQuantile(a=np.array([mu]), sigma=sig,
                                 breaks=np.array([-np.inf, np.inf]), grid=grid)
    z_int = grid.interior_z
    q_int = mu + interior_basis_matrix(grid).T @ sig  # quantile at interior knots
    knots = grid.knots
    a = np.empty(L)
    for i in range(L):
        if knots[i] < 0.5:
            a[i] = q_int[i] - sig[i] * z_int[i]  # anchored at the right knot
        else:
            a[i] = q_int[i - 1] - sig[i] * z_int[i - 1]  # anchored at the left knot
    breaks = np.concatenate([[-np.inf], q_int, [np.inf]])
    return PiecewiseQuantile(a=a, sigma=sig, breaks=breaks, grid=grid)


def piecewise_params(coeffs: QuantileCoeffs, grid: KnotGrid, t_norm, d,
                     soi=0.0, sigma_d=None) -> PiecewiseQuantile:
    """Piecewise representation of the quantile function at one point."""
    mu, sig = location_scale(coeffs, t_norm, d, soi, sigma_d)
    return piecewise_from_location_scale(mu, sig, grid)


def _piece_of_y(pq: PiecewiseQuantile, y: np.ndarray) -> np.ndarray:
    # (breaks[l], breaks[l+1]] convention: a value sitting exactly on an
    # interior break belongs to the lower piece.
    return np.clip(np.searchsorted(pq.breaks, y, side="left") - 1, 0, pq.grid.n_pieces - 1)


def _piece_of_u(grid: KnotGrid, u: np.ndarray) -> np.ndarray:
    # [kappa_l, kappa_{l+1}) convention in quantile-level space.
    return np.clip(np.searchsorted(grid.knots, u, side="right") - 1, 0, grid.n_pieces - 1)


def density_eval(pq: PiecewiseQuantile, y):
    """Closed-form piecewise normal density at ``y`` (scalar or array)."""
    y = np.asarray(y, dtype=float)
    piece = _piece_of_y(pq, y)
    a, s = pq.a[piece], pq.sigma[piece]
    out = np.exp(-0.5 * ((y - a) / s) ** 2) / (s * np.sqrt(2.0 * np.pi))
    return out if out.ndim else float(out)


def log_density_eval(pq: PiecewiseQuantile, y):
    y = np.asarray(y, dtype=float)
    piece = _piece_of_y(pq, y)
    a, s = pq.a[piece], pq.sigma[piece]
    out = -np.log(s) - 0.5 * ((y - a) / s) ** 2 - _LOG_SQRT_2PI
    return out if out.ndim else float(out)


def sample_one(pq: PiecewiseQuantile, u):
    """Map uniform levels through the quantile function: a_l + sigma_l*Phi^{-1}(u)."""
    u = np.asarray(check_in_open_unit_interval(u, "u"), dtype=float)
    piece = _piece_of_u(pq.grid, u)
    out = pq.a[piece] + pq.sigma[piece] * ndtri(u)
    return out if out.ndim else float(out)


def piece_mass(pq: PiecewiseQuantile) -> np.ndarray:
    """Probability mass inside each piece; equals 1/L for equal knots."""
    lo = ndtr((pq.breaks[:-1] - pq.a) / pq.sigma)
    hi = ndtr((pq.breaks[1:] - pq.a) / pq.sigma)
    return hi - lo


@dataclass(frozen=True)
class CovariateBox:
    """Axis-aligned covariate ranges the scale positivity must hold on."""

    t_range: tuple[float, float] = (0.0, 1.0)
    soi_range: tuple[float, float] = (0.0, 0.0)
    sigma_range: tuple[float, float] | None = None
    days: np.ndarray = field(default_factory=lambda: np.arange(1, 366))


@dataclass
class ScaleCheck:
    """Outcome of a positivity check, with a failing vertex as witness."""

    ok: bool
    min_value: float
    piece: int | None = None
    witness: dict | None = None

    def __bool__(self) -> bool:
        return self.ok


def check_positive_scales(coeffs: QuantileCoeffs, grid: KnotGrid, box: CovariateBox) -> ScaleCheck:
    """Verify sigma_l > 0 for every piece over the whole covariate box.

    The scales are affine in (t, soi, sigma_d), so the box minimum is attained
    at a vertex; the harmonic part of the FULL form is minimized by scanning
    all 365 days.  Returns the most negative vertex as a witness on failure.
    """
    spec = coeffs.spec
    best = ScaleCheck(ok=True, min_value=np.inf)
    corners_t = np.array(box.t_range)
    corners_x = np.array(box.soi_range) if spec.include_soi else np.array([0.0])
    for l in range(spec.n_pieces):
        theta = coeffs.thetas[l]
        slots = dict(zip(spec.theta_slots, theta))
        if spec.form is ModelForm.FULL:
            fcoef = FourierCoeffs(a=theta[spec.theta_slots.index("sin1"):][: spec.k],
                                  b=theta[spec.theta_slots.index("cos1"):][: spec.k]) \
                if spec.k > 0 else FourierCoeffs.zeros(0)
            seasonal = fourier_eval(box.days, fcoef) if spec.k > 0 else np.zeros(box.days.shape)
            d_star = int(box.days[np.argmin(seasonal)]) if spec.k > 0 else int(box.days[0])
            base = slots["const"] + (np.min(seasonal) if spec.k > 0 else 0.0)
            for t in corners_t:
                for x in corners_x:
                    val = base + slots["t"] * t + slots.get("soi", 0.0) * x
                    if val < best.min_value:
                        best = ScaleCheck(ok=val > 0, min_value=float(val), piece=l,
                                          witness={"t": float(t), "soi": float(x), "d": d_star})
        else:
            if box.sigma_range is None:
                raise ValueError("reduced form positivity needs sigma_range")
            for t in corners_t:
                for x in corners_x:
                    for sd in box.sigma_range:
                        val = slots.get("const", 0.0) + slots["t"] * t \
                            + slots.get("soi", 0.0) * x + slots["sigma"] * sd
                        if val < best.min_value:
                            best = ScaleCheck(ok=val > 0, min_value=float(val), piece=l,
                                              witness={"t": float(t), "soi": float(x),
                                                       "sigma_d": float(sd)})
    best.ok = best.min_value > 0
    return best


def min_scales_reduced(thetas: np.ndarray, vertex_rows: np.ndarray) -> np.ndarray:
    """Minimum of thetas @ row over precomputed vertex rows.

    ``thetas`` has shape (..., L, n_theta) and ``vertex_rows`` shape
    (n_vertex, n_theta); returns the per-piece minima, shape (..., L).
    Used by the sampler's fast in-loop positivity check.
    """
    vals = thetas @ vertex_rows.T  # (..., L, n_vertex)
    return vals.min(axis=-1)
