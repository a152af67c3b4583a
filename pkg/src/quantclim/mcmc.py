"""Metropolis-within-Gibbs inference for the spatio-temporal quantile model.

Coefficient fields (one value per station) get blockwise Gaussian random-walk
updates against the piecewise likelihood and their GP priors; GP means get
Gaussian random walks and sills/ranges log-scale walks; the latent AR(1)
copula path gets single-site updates swept in a checkerboard pattern.
Proposal scales adapt during burn-in (Robbins-Monro on the log scale) and
are frozen afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from sklearn.base import BaseEstimator

from .basis import (
    CovariateBox,
    KnotGrid,
    ModelForm,
    ModelSpec,
    QuantileCoeffs,
    basis_eval,
    interior_basis_matrix,
)
from .harmonics import fourier_design_row
from .spatial import GPHyperParams, HyperPrior, exp_cov_matrix, pairwise_distances
from .stations import CovariateSeries, StationSeries, time_index

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class InitializationError(RuntimeError):
    """The chain could not be started from a finite log-posterior."""


@dataclass
class ChainConfig:
    """Sampler settings; burn-in must be shorter than the chain."""

    n_iter: int = 4000
    n_burn: int = 1000
    thin: int = 5
    seed: int = 0
    target_accept: float = 0.35
    coef_scale: float = 0.05
    hyper_scale: float = 0.3
    latent_scale: float = 1.0

    def __post_init__(self):
        if not (0 < self.n_burn < self.n_iter):
            raise ValueError("need 0 < n_burn < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


@dataclass
class LatentCopula:
    """AR(1) latent Gaussian path with spatially correlated innovations."""

    psi_v: float
    psi_w: float
    v: np.ndarray  # (stations, time)

    def __post_init__(self):
        if not abs(self.psi_v) < 1.0:
            raise ValueError("|psi_v| must be < 1")
        if self.psi_w <= 0.0:
            raise ValueError("psi_w must be positive")


def simulate_latent(psi_v: float, psi_w: float, locations, n_steps: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Simulate the latent path; every v_t(s) is marginally N(0, 1)."""
    if not abs(psi_v) < 1.0:
        raise ValueError("|psi_v| must be < 1")
    loc = np.atleast_2d(np.asarray(locations, dtype=float))
    n_s = loc.shape[0]
    cov = exp_cov_matrix(loc, GPHyperParams(mean=0.0, sill=1.0, corr_range=psi_w),
                         nugget=1e-10)
    chol = np.linalg.cholesky(cov)
    w = chol @ rng.standard_normal((n_s, n_steps))
    v = np.empty((n_s, n_steps))
    v[:, 0] = w[:, 0]
    damp = np.sqrt(1.0 - psi_v**2)
    for t in range(1, n_steps):
        v[:, t] = psi_v * v[:, t - 1] + damp * w[:, t]
    return v


@dataclass
class QuantileDataset:
    """Stacked observations with precomputed design rows.

    Rows are sorted by (station, raw day); ``slices[s]`` selects station s.
    ``obs_col`` is each row's 0-based column in the full latent time grid.
    """

    y: np.ndarray
    station_idx: np.ndarray
    t_norm: np.ndarray
    d: np.ndarray
    soi: np.ndarray
    sigma_d_obs: np.ndarray | None
    mu_design: np.ndarray
    sc_design: np.ndarray
    obs_col: np.ndarray
    n_time: int
    station_ids: tuple[str, ...]
    locations: np.ndarray
    slices: tuple[slice, ...]
    spec: ModelSpec
    t_range: tuple[float, float]
    soi_range: tuple[float, float]
    sigma_ranges: np.ndarray | None  # (stations, 2)
    window_years: int

    @property
    def n_obs(self) -> int:
        return self.y.size

    @property
    def n_stations(self) -> int:
        return len(self.station_ids)

    @property
    def grid(self) -> KnotGrid:
        return self.spec.grid

    def covariate_box(self, station: int) -> CovariateBox:
        sigma_range = None
        if self.sigma_ranges is not None:
            sigma_range = (float(self.sigma_ranges[station, 0]),
                           float(self.sigma_ranges[station, 1]))
        return CovariateBox(t_range=self.t_range, soi_range=self.soi_range,
                            sigma_range=sigma_range)

    def station_coeffs(self, betas: np.ndarray, thetas: np.ndarray, station: int) -> QuantileCoeffs:
        return QuantileCoeffs(betas=betas[station], thetas=thetas[station], spec=self.spec)


def build_dataset(
    series_list: list[StationSeries],
    spec: ModelSpec,
    sigma_d: dict[str, np.ndarray] | None = None,
    soi: CovariateSeries | None = None,
    window: tuple[int, int] | None = None,
    season_day_set: np.ndarray | None = None,
) -> QuantileDataset:
    """Assemble the stacked fitting arrays from per-station series.

    ``sigma_d`` maps station id to its fitted 365-day seasonal sd (required
    by the reduced model form).  ``season_day_set`` optionally restricts the
    likelihood to a subset of days-of-year.
    """
    if not series_list:
        raise ValueError("need at least one station series")
    if spec.form is ModelForm.REDUCED_SIGMA and sigma_d is None:
        raise ValueError("the reduced model form requires per-station sigma_d vectors")
    if window is None:
        window = (min(s.start_year for s in series_list),
                  max(s.end_year for s in series_list))
    n_time = (window[1] - window[0] + 1) * 365

    keep_days = None
    if season_day_set is not None:
        keep_days = np.zeros(366, dtype=bool)
        keep_days[np.asarray(season_day_set, dtype=int)] = True

    ys, sids, ts, ds, sois, sigs, cols = [], [], [], [], [], [], []
    station_ids, locations, slices, sigma_ranges = [], [], [], []
    start = 0
    for s_idx, series in enumerate(series_list):
        ti = time_index(series, window)
        obs = series.mask.ravel().copy()
        if keep_days is not None:
            obs &= keep_days[ti.d]
        y = series.values.ravel()[obs]
        ys.append(y)
        sids.append(np.full(y.size, s_idx))
        ts.append(ti.t_norm[obs])
        ds.append(ti.d[obs])
        cols.append(ti.t_raw[obs] - 1)
        sois.append(soi.aligned_to(series).ravel()[obs] if soi is not None else np.zeros(y.size))
        if sigma_d is not None:
            vec = np.asarray(sigma_d[series.meta.station_id], dtype=float)
            if vec.shape != (365,) or np.any(vec <= 0):
                raise ValueError(f"sigma_d for {series.meta.station_id!r} must be 365 positive values")
            svals = vec[ti.d[obs] - 1]
            sigs.append(svals)
            sigma_ranges.append((float(svals.min()) if svals.size else float(vec.min()),
                                 float(svals.max()) if svals.size else float(vec.max())))
        station_ids.append(series.meta.station_id)
        locations.append((series.meta.lat, series.meta.lon))
        slices.append(slice(start, start + y.size))
        start += y.size

    y = np.concatenate(ys)
    t = np.concatenate(ts)
    d = np.concatenate(ds).astype(int)
    x = np.concatenate(sois)
    sig_obs = np.concatenate(sigs) if sigs else None
    mu_design = spec.location_design(t, d, x)
    sc_design = spec.scale_design(t, d, x, sig_obs if sig_obs is not None else None) \
        if spec.form is ModelForm.REDUCED_SIGMA else spec.location_design(t, d, x)

    def _range(arr, fallback):
        return (float(arr.min()), float(arr.max())) if arr.size else fallback

    return QuantileDataset(
        y=y,
        station_idx=np.concatenate(sids).astype(int),
        t_norm=t,
        d=d,
        soi=x,
        sigma_d_obs=sig_obs,
        mu_design=mu_design,
        sc_design=sc_design,
        obs_col=np.concatenate(cols).astype(int),
        n_time=n_time,
        station_ids=tuple(station_ids),
        locations=np.asarray(locations, dtype=float),
        slices=tuple(slices),
        spec=spec,
        t_range=_range(t, (0.0, 1.0)),
        soi_range=_range(x, (0.0, 0.0)),
        sigma_ranges=np.asarray(sigma_ranges) if sigma_ranges else None,
        window_years=window[1] - window[0] + 1,
    )


def _anchor_layout(grid: KnotGrid) -> tuple[np.ndarray, np.ndarray]:
    """Interior-knot index and Phi^{-1} value anchoring each piece's center."""
    L = grid.n_pieces
    if L == 1:
        return np.zeros(1, dtype=int), np.zeros(1)
    knots = grid.knots
    idx = np.array([i if knots[i] < 0.5 else i - 1 for i in range(L)], dtype=int)
    return idx, grid.interior_z[idx]


class _PieceLayout:
    """Precomputed geometry shared by every likelihood evaluation."""

    def __init__(self, grid: KnotGrid, n_obs: int):
        self.grid = grid
        self.B_int = np.ascontiguousarray(interior_basis_matrix(grid))
        self.anchor_idx, self.z_anchor = _anchor_layout(grid)
        self.rows = np.arange(n_obs)
        self.int_knots = grid.interior_knots


try:  # compiled delta kernels for the sampler's inner loop; numpy fallback below
    from numba import njit as _njit

    # Both kernels return the log-likelihood CHANGE of a proposal relative to
    # the cached per-row contributions (squared standardized residual ``r2``
    # and ``log sigma_piece``), writing the candidate caches into the *_out
    # scratch buffers.  Logs are only recomputed where a row's piece or piece
    # scale actually changed.

    @_njit(cache=True)
    def _dll_mu_shift(y, q_int, sig, dmu, anchor_idx, z_anchor, use_u,
                      piece_old, r2_old, logsp_old,
                      piece_out, r2_out, logsp_out):  # pragma: no cover - compiled
        n, L = sig.shape
        dll = 0.0
        for i in range(n):
            if use_u:
                p = piece_old[i]
            else:
                p = 0
                for j in range(L - 1):
                    if y[i] > q_int[i, j] + dmu[i]:
                        p += 1
            sp = sig[i, p]
            ap = q_int[i, anchor_idx[p]] + dmu[i] - sp * z_anchor[p]
            r = (y[i] - ap) / sp
            r2 = r * r
            lsp = logsp_old[i] if p == piece_old[i] else np.log(sp)
            dll += (logsp_old[i] - lsp) + 0.5 * (r2_old[i] - r2)
            piece_out[i] = p
            r2_out[i] = r2
            logsp_out[i] = lsp
        return dll

    @_njit(cache=True)
    def _dll_sig_col(y, q_int, sig, dsig, col, b_row, anchor_idx, z_anchor, use_u,
                     piece_old, r2_old, logsp_old,
                     piece_out, r2_out, logsp_out):  # pragma: no cover - compiled
        n, L = sig.shape
        dll = 0.0
        for i in range(n):
            if use_u:
                p = piece_old[i]
            else:
                p = 0
                for j in range(L - 1):
                    if y[i] > q_int[i, j] + dsig[i] * b_row[j]:
                        p += 1
            sp = sig[i, p]
            if p == col:
                sp += dsig[i]
            ap = q_int[i, anchor_idx[p]] + dsig[i] * b_row[anchor_idx[p]] - sp * z_anchor[p]
            r = (y[i] - ap) / sp
            r2 = r * r
            if p == piece_old[i] and p != col:
                lsp = logsp_old[i]
            else:
                lsp = np.log(sp)
            dll += (logsp_old[i] - lsp) + 0.5 * (r2_old[i] - r2)
            piece_out[i] = p
            r2_out[i] = r2
            logsp_out[i] = lsp
        return dll

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def log_likelihood(dataset: QuantileDataset, betas: np.ndarray, thetas: np.ndarray,
                   u: np.ndarray | None = None) -> float:
    """Total log-likelihood computed from scratch.

    With ``u`` given (one level per observation) each observation's piece is
    selected in quantile-level space; otherwise the marginal piecewise form
    selects the piece containing the observed value.
    """
    mu = np.einsum("nk,nk->n", dataset.mu_design, betas[dataset.station_idx])
    sig = np.einsum("nk,nlk->nl", dataset.sc_design, thetas[dataset.station_idx])
    if np.any(sig <= 0):
        return -np.inf
    return _piecewise_loglik(dataset, mu, sig, u)[0]


def _piecewise_loglik(dataset: QuantileDataset, mu, sig, u=None, layout: _PieceLayout | None = None):
    """Log-likelihood plus the per-observation piece geometry used by updates."""
    if layout is None:
        layout = _PieceLayout(dataset.grid, dataset.n_obs)
    L = layout.grid.n_pieces
    n = dataset.n_obs
    if L == 1:
        a = mu[:, None]
        piece = np.zeros(n, dtype=int)
        ap, sp = mu, sig[:, 0]
    else:
        q_int = sig @ layout.B_int
        q_int += mu[:, None]
        a = q_int[:, layout.anchor_idx] - sig * layout.z_anchor
        if u is not None:
            piece = (u[:, None] >= layout.int_knots).sum(axis=1)
        else:
            piece = (dataset.y[:, None] > q_int).sum(axis=1)
        ap = a[layout.rows, piece]
        sp = sig[layout.rows, piece]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        r = (dataset.y - ap) / sp
        ll = float(-np.log(sp).sum() - 0.5 * (r @ r) - n * _LOG_SQRT_2PI)
    return ll, a, piece


@dataclass
class ChainState:
    """Live sampler state: coefficient fields, hyperparameters, latent path."""

    betas: np.ndarray  # (stations, n_beta)
    thetas: np.ndarray  # (stations, L, n_theta)
    beta_mean: np.ndarray
    beta_sill: np.ndarray
    beta_range: np.ndarray
    theta_mean: np.ndarray  # (L, n_theta)
    theta_sill: np.ndarray  # (n_theta,)
    theta_range: np.ndarray  # (n_theta,)
    copula: LatentCopula | None
    log_post: float = np.nan


@dataclass
class PosteriorSample:
    iteration: int
    betas: np.ndarray
    thetas: np.ndarray
    beta_mean: np.ndarray
    beta_sill: np.ndarray
    beta_range: np.ndarray
    theta_mean: np.ndarray
    theta_sill: np.ndarray
    theta_range: np.ndarray
    psi_v: float | None
    psi_w: float | None
    log_post: float


@dataclass
class TrendSummary:
    """Posterior curves of the time coefficient of each quantile level."""

    station_ids: tuple[str, ...]
    tau: np.ndarray
    mean: np.ndarray  # (stations, n_tau)
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class PosteriorSummary:
    trend: TrendSummary
    acceptance: dict[str, float]
    n_samples: int


@dataclass
class ChainResult:
    samples: list[PosteriorSample]
    summary: PosteriorSummary
    dataset: QuantileDataset
    config: ChainConfig


def trend_curves(betas_draws: np.ndarray, thetas_draws: np.ndarray, spec: ModelSpec,
                 tau_grid: np.ndarray) -> np.ndarray:
    """Trend-coefficient curves per draw: (draws, stations, n_tau)."""
    tau_grid = np.asarray(tau_grid, dtype=float)
    if tau_grid.size == 0:
        raise ValueError("tau grid must be nonempty")
    jb = spec.beta_slots.index("t")
    jt = spec.theta_slots.index("t")
    bmat = basis_eval(tau_grid, spec.grid)  # (n_tau, L)
    return betas_draws[:, :, jb, None] + np.einsum("msl,tl->mst",
                                                   thetas_draws[:, :, :, jt], bmat)


def posterior_quantiles(samples: list[PosteriorSample], spec: ModelSpec, station: int,
                        tau: float, t_norm, d, soi=0.0, sigma_d=None, ci: float = 0.95):
    """Posterior mean/sd/credible band of q(tau) at requested covariate points.

    Returns a dict of arrays aligned to the input points.
    """
    if not samples:
        raise ValueError("need at least one retained sample")
    from .simulate import quantile_surface  # local import to avoid a cycle

    t_norm = np.atleast_1d(np.asarray(t_norm, dtype=float))
    draws = np.stack([
        quantile_surface(QuantileCoeffs(smp.betas[station], smp.thetas[station], spec),
                         (tau,), t_norm, d, soi, sigma_d)[:, 0]
        for smp in samples])
    alpha = 0.5 * (1.0 - ci)
    return {
        "mean": draws.mean(axis=0),
        "sd": draws.std(axis=0, ddof=1) if draws.shape[0] > 1 else np.zeros(draws.shape[1]),
        "lower": np.quantile(draws, alpha, axis=0),
        "upper": np.quantile(draws, 1.0 - alpha, axis=0),
    }


def trend_summary(samples: list[PosteriorSample], tau_grid, spec: ModelSpec,
                  station_ids: tuple[str, ...], ci: float = 0.95) -> TrendSummary:
    """Pointwise posterior mean/sd and credible band of the trend curves."""
    if not samples:
        raise ValueError("need at least one retained sample")
    tau_grid = np.asarray(tau_grid, dtype=float)
    betas = np.stack([s.betas for s in samples])
    thetas = np.stack([s.thetas for s in samples])
    curves = trend_curves(betas, thetas, spec, tau_grid)
    alpha = 0.5 * (1.0 - ci)
    return TrendSummary(
        station_ids=station_ids,
        tau=tau_grid,
        mean=curves.mean(axis=0),
        sd=curves.std(axis=0, ddof=1) if curves.shape[0] > 1 else np.zeros(curves.shape[1:]),
        lower=np.quantile(curves, alpha, axis=0),
        upper=np.quantile(curves, 1.0 - alpha, axis=0),
    )


class _BlockScale:
    """Robbins-Monro adapted proposal scale for one Metropolis block."""

    def __init__(self, scale: float, target: float):
        self.log_scale = np.log(scale) if scale > 0 else -np.inf
        self.target = target
        self.proposed = 0
        self.accepted = 0

    @property
    def scale(self) -> float:
        return float(np.exp(self.log_scale))

    def register(self, accepted: bool, adapting: bool, step: int):
        self.register_bulk(int(accepted), 1, adapting, step)

    def register_bulk(self, n_accepted: int, n_proposed: int, adapting: bool, step: int):
        if n_proposed == 0:
            return
        self.proposed += n_proposed
        self.accepted += n_accepted
        if adapting and np.isfinite(self.log_scale):
            gamma = (step + 1) ** -0.6
            self.log_scale += gamma * (n_accepted / n_proposed - self.target)

    @property
    def rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0


class QuantileGibbsSampler:
    """One chain of the spatio-temporal quantile model."""

    def __init__(self, dataset: QuantileDataset, config: ChainConfig,
                 prior: HyperPrior | None = None, copula: bool = False,
                 nugget: float | None = None):
        self.data = dataset
        self.config = config
        self.prior = prior or HyperPrior()
        self.use_copula = copula
        self.rng = np.random.default_rng(config.seed)
        self.spec = dataset.spec
        self.grid = dataset.grid
        self.L = self.grid.n_pieces
        self._B_int = interior_basis_matrix(self.grid)
        self._anchor_idx, self._z_anchor = _anchor_layout(self.grid)
        self._nugget = nugget
        self._fourier_cols = np.array(
            [i for i, s in enumerate(self.spec.theta_slots) if s.startswith(("sin", "cos"))],
            dtype=int)
        self._day_design = fourier_design_row(np.arange(1, 366), self.spec.k) \
            if self._fourier_cols.size else None
        self._layout = _PieceLayout(self.grid, dataset.n_obs)
        self._b_rows = [np.ascontiguousarray(self._layout.B_int[l])
                        for l in range(self.L)] if self.L > 1 else []
        self._tbar = float(dataset.t_norm.mean()) if dataset.n_obs else 0.5
        slots = self.spec.theta_slots
        if self.spec.form is ModelForm.REDUCED_SIGMA:
            ja, jb = slots.index("t"), slots.index("sigma")
            comp = np.zeros(dataset.n_stations)
            for s in range(dataset.n_stations):
                sl = dataset.slices[s]
                sd = dataset.sigma_d_obs[sl]
                den = float(sd @ sd)
                comp[s] = float(dataset.t_norm[sl] @ sd) / den if den > 0 else 0.0
            self._theta_ridge = (ja, jb, comp)
        elif "const" in slots and "t" in slots:
            self._theta_ridge = (slots.index("t"), slots.index("const"), self._tbar)
        else:
            self._theta_ridge = None
        self._dist = pairwise_distances(dataset.locations)
        self._prior_cache: dict[str, tuple] = {}
        self._init_state()
        self._init_scales()
        self._sweep = 0

    # ------------------------------------------------------------------
    # initialization
    # ------------------------------------------------------------------

    def _init_state(self):
        data = self.data
        S, nb, nt, L = data.n_stations, self.spec.n_beta, self.spec.n_theta, self.L
        betas = np.zeros((S, nb))
        resid_sd = np.ones(S)
        for s in range(S):
            sl = data.slices[s]
            X, y = data.mu_design[sl], data.y[sl]
            if y.size >= nb:
                coef, *_ = np.linalg.lstsq(X, y, rcond=None)
                betas[s] = coef
                resid = y - X @ coef
                if resid.size > 1:
                    resid_sd[s] = max(float(np.std(resid, ddof=1)), 0.1)
        thetas = np.zeros((S, L, nt))
        if self.spec.form is ModelForm.REDUCED_SIGMA:
            thetas[:, :, self.spec.theta_slots.index("sigma")] = 1.0
        else:
            thetas[:, :, self.spec.theta_slots.index("const")] = resid_sd[:, None]

        med = self.prior.medians()
        self.state = ChainState(
            betas=betas,
            thetas=thetas,
            beta_mean=betas.mean(axis=0),
            beta_sill=np.full(nb, med.sill),
            beta_range=np.full(nb, med.corr_range),
            theta_mean=thetas.mean(axis=0),
            theta_sill=np.full(nt, med.sill),
            theta_range=np.full(nt, med.corr_range),
            copula=None,
        )
        if self.use_copula:
            v = np.zeros((data.n_stations, data.n_time))
            self.state.copula = LatentCopula(psi_v=0.2, psi_w=med.corr_range, v=v)

        self._init_scale_guard()
        if np.any(self._min_scales() <= 0):
            raise InitializationError("initial piece scales are not positive over the data box")
        self._refresh_caches()
        if not np.isfinite(self.state.log_post):
            raise InitializationError(
                f"non-finite log-posterior at initialization (loglik={self._loglik})")

    def _init_scales(self):
        cfg = self.config
        self.scales: dict[str, _BlockScale] = {}
        for j, name in enumerate(self.spec.beta_slots):
            self.scales[f"beta:{name}"] = _BlockScale(cfg.coef_scale, cfg.target_accept)
        self.scales["beta:ridge"] = _BlockScale(cfg.coef_scale, cfg.target_accept)
        for l in range(self.L):
            for name in self.spec.theta_slots:
                self.scales[f"theta:{l}:{name}"] = _BlockScale(cfg.coef_scale, cfg.target_accept)
            if self._theta_ridge is not None:
                self.scales[f"theta:{l}:ridge"] = _BlockScale(cfg.coef_scale, cfg.target_accept)
        for kind in ("mean", "sill", "range"):
            for j, name in enumerate(self.spec.beta_slots):
                self.scales[f"hyper:{kind}:beta:{name}"] = _BlockScale(cfg.hyper_scale, cfg.target_accept)
            for j, name in enumerate(self.spec.theta_slots):
                self.scales[f"hyper:{kind}:theta:{name}"] = _BlockScale(cfg.hyper_scale, cfg.target_accept)
        if self.use_copula:
            self.scales["latent"] = _BlockScale(cfg.latent_scale, cfg.target_accept)
            self.scales["copula:psi_v"] = _BlockScale(0.1, cfg.target_accept)
            self.scales["copula:psi_w"] = _BlockScale(0.3, cfg.target_accept)

    # ------------------------------------------------------------------
    # positivity guard over the covariate box
    # ------------------------------------------------------------------

    def _init_scale_guard(self):
        data, spec = self.data, self.spec
        S, L = data.n_stations, self.L
        if spec.form is ModelForm.REDUCED_SIGMA:
            rows = []
            for s in range(S):
                box = data.covariate_box(s)
                combos = [(t, x, sd)
                          for t in box.t_range
                          for x in (box.soi_range if spec.include_soi else [0.0])
                          for sd in box.sigma_range]
                vrows = []
                for t, x, sd in combos:
                    row = []
                    if spec.reduced_intercept:
                        row.append(1.0)
                    row.append(t)
                    if spec.include_soi:
                        row.append(x)
                    row.append(sd)
                    vrows.append(row)
                rows.append(vrows)
            self._vertex_rows = np.asarray(rows)  # (S, n_vertex, n_theta)
        else:
            combos = [(1.0, t, x) for t in data.t_range
                      for x in (data.soi_range if spec.include_soi else [0.0])]
            self._corner_rows = np.asarray(combos)[:, : (3 if spec.include_soi else 2)]

    def _min_scales(self, thetas: np.ndarray | None = None) -> np.ndarray:
        """Per-(station, piece) scale minima over the covariate box."""
        thetas = self.state.thetas if thetas is None else thetas
        if self.spec.form is ModelForm.REDUCED_SIGMA:
            vals = np.einsum("sln,svn->slv", thetas, self._vertex_rows)
            return vals.min(axis=2)
        base_cols = [self.spec.theta_slots.index("const"), self.spec.theta_slots.index("t")]
        if self.spec.include_soi:
            base_cols.append(self.spec.theta_slots.index("soi"))
        base = thetas[:, :, base_cols] @ self._corner_rows.T  # (S, L, n_corner)
        mins = base.min(axis=2)
        if self._fourier_cols.size:
            seasonal = np.einsum("dk,slk->sld", self._day_design,
                                 thetas[:, :, self._fourier_cols])
            mins = mins + seasonal.min(axis=2)
        return mins

    def _min_scales_piece(self, theta_piece: np.ndarray) -> np.ndarray:
        """Box minima for one piece's (stations, n_theta) coefficient block."""
        if self.spec.form is ModelForm.REDUCED_SIGMA:
            return np.einsum("sn,svn->sv", theta_piece, self._vertex_rows).min(axis=1)
        base_cols = [self.spec.theta_slots.index("const"), self.spec.theta_slots.index("t")]
        if self.spec.include_soi:
            base_cols.append(self.spec.theta_slots.index("soi"))
        mins = (theta_piece[:, base_cols] @ self._corner_rows.T).min(axis=1)
        if self._fourier_cols.size:
            mins = mins + (self._day_design @ theta_piece[:, self._fourier_cols].T).min(axis=0)
        return mins

    # ------------------------------------------------------------------
    # cached log-posterior pieces
    # ------------------------------------------------------------------

    def _refresh_caches(self):
        data, st = self.data, self.state
        self._mu = np.einsum("nk,nk->n", data.mu_design, st.betas[data.station_idx])
        self._sig = np.einsum("nk,nlk->nl", data.sc_design, st.thetas[data.station_idx])
        if self.use_copula:
            self._u = ndtr(st.copula.v[data.station_idx, data.obs_col])
            self._setup_copula_matrices()
        else:
            self._u = None
        self._loglik, a, piece = _piecewise_loglik(data, self._mu, self._sig,
                                                    self._u, self._layout)
        self._q_int = self._mu[:, None] + self._sig @ self._layout.B_int \
            if self.L > 1 else None
        self._a = a if self.use_copula else None
        self._piece = piece.astype(np.int64)
        rows = self._layout.rows
        sp = self._sig[rows, self._piece]
        ap = a[rows, self._piece]
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            self._r2 = ((data.y - ap) / sp) ** 2
            self._logsp = np.log(sp)
        self._piece_scratch = np.empty_like(self._piece)
        self._r2_scratch = np.empty_like(self._r2)
        self._logsp_scratch = np.empty_like(self._logsp)
        self._beta_prior = np.array([self._field_logpdf_beta(j) for j in range(self.spec.n_beta)])
        self._theta_prior = np.array([[self._field_logpdf_theta(l, j)
                                       for j in range(self.spec.n_theta)]
                                      for l in range(self.L)])
        self._hyper_prior = self._hyper_logprior()
        self._latent_prior = self._latent_logpdf() if self.use_copula else 0.0
        st.log_post = (self._loglik + self._beta_prior.sum() + self._theta_prior.sum()
                       + self._hyper_prior + self._latent_prior)

    def recompute_log_post(self) -> float:
        """From-scratch log-posterior; must match the tracked value."""
        mu_cache, sig_cache = self._mu, self._sig
        tracked = self.state.log_post
        self._refresh_caches()
        assert np.allclose(self._mu, mu_cache) and np.allclose(self._sig, sig_cache)
        return self.state.log_post

    def _prior_matrices(self, sill: float, corr_range: float, key: str):
        """Cached (precision, logdet) of the field prior covariance.

        With the default sill-proportional nugget the covariance scales
        linearly in the sill, so sill-only queries rescale the cached entry
        instead of refactorizing.
        """
        cached = self._prior_cache.get(key)
        if cached is not None:
            c_sill, c_range, c_prec, c_logdet = cached
            if c_range == corr_range:
                if c_sill == sill:
                    return c_prec, c_logdet
                if self._nugget is None:
                    ratio = sill / c_sill
                    n = self._dist.shape[0]
                    return c_prec / ratio, c_logdet + n * np.log(ratio)
        nug = self._nugget if self._nugget is not None else 1e-8 * sill
        cov = sill * np.exp(-self._dist / corr_range) + nug * np.eye(self._dist.shape[0])
        chol = np.linalg.cholesky(cov)
        prec = np.linalg.inv(cov)
        logdet = 2.0 * float(np.log(np.diag(chol)).sum())
        self._prior_cache[key] = (sill, corr_range, prec, logdet)
        return prec, logdet

    def _field_logpdf(self, values, mean, sill, corr_range, key: str) -> float:
        prec, logdet = self._prior_matrices(sill, corr_range, key)
        r = values - mean
        return float(-0.5 * (r @ (prec @ r) + logdet + r.size * np.log(2.0 * np.pi)))

    def _field_logpdf_beta(self, j: int) -> float:
        st = self.state
        return self._field_logpdf(st.betas[:, j], st.beta_mean[j], st.beta_sill[j],
                                  st.beta_range[j], f"b{j}")

    def _field_logpdf_theta(self, l: int, j: int) -> float:
        st = self.state
        return self._field_logpdf(st.thetas[:, l, j], st.theta_mean[l, j],
                                  st.theta_sill[j], st.theta_range[j], f"t{j}")

    def _hyper_logprior(self) -> float:
        st = self.state
        total = 0.0
        for j in range(self.spec.n_beta):
            total += self.prior.log_density(GPHyperParams(st.beta_mean[j], st.beta_sill[j],
                                                          st.beta_range[j]))
        for j in range(self.spec.n_theta):
            # one sill/range shared across pieces; means enter per piece
            total += self.prior.log_density(GPHyperParams(0.0, st.theta_sill[j],
                                                          st.theta_range[j]))
            total += float(np.sum(-0.5 * (st.theta_mean[:, j] / self.prior.mean_sd) ** 2
                                  - np.log(self.prior.mean_sd) - 0.5 * np.log(2 * np.pi)))
        if self.use_copula:
            cop = self.state.copula
            lo, hi = self.prior.range_bounds
            if not (lo <= cop.psi_w <= hi) or not abs(cop.psi_v) < 1:
                return -np.inf
            total += -np.log(hi - lo) - np.log(2.0)  # uniform psi_w, uniform psi_v on (-1,1)
        return total

    # ------------------------------------------------------------------
    # copula path machinery
    # ------------------------------------------------------------------

    def _setup_copula_matrices(self):
        cop = self.state.copula
        cov = exp_cov_matrix(self.data.locations,
                             GPHyperParams(mean=0.0, sill=1.0, corr_range=cop.psi_w),
                             nugget=1e-10)
        self._cw_chol = np.linalg.cholesky(cov)
        self._cw_prec = np.linalg.inv(cov)
        self._cw_logdet = 2.0 * np.sum(np.log(np.diag(self._cw_chol)))
        self._resid = self._path_resid(cop.v, cop.psi_v)
        self._prec_resid = self._cw_prec @ self._resid

    @staticmethod
    def _path_resid(v: np.ndarray, psi_v: float) -> np.ndarray:
        resid = v.copy()
        resid[:, 1:] -= psi_v * v[:, :-1]
        return resid

    def _latent_logpdf(self, resid: np.ndarray | None = None, psi_v: float | None = None,
                       prec: np.ndarray | None = None, logdet: float | None = None) -> float:
        cop = self.state.copula
        psi_v = cop.psi_v if psi_v is None else psi_v
        resid = self._resid if resid is None else resid
        prec = self._cw_prec if prec is None else prec
        logdet = self._cw_logdet if logdet is None else logdet
        S, T = resid.shape
        one_m = 1.0 - psi_v**2
        quad = float(np.sum(resid[:, :1] * (prec @ resid[:, :1])))
        quad += float(np.sum(resid[:, 1:] * (prec @ resid[:, 1:]))) / one_m
        logdets = T * logdet + (T - 1) * S * np.log(one_m)
        return -0.5 * (quad + logdets + S * T * np.log(2.0 * np.pi))

    # ------------------------------------------------------------------
    # update blocks
    # ------------------------------------------------------------------

    def _swap_obs_caches(self):
        self._piece, self._piece_scratch = self._piece_scratch, self._piece
        self._r2, self._r2_scratch = self._r2_scratch, self._r2
        self._logsp, self._logsp_scratch = self._logsp_scratch, self._logsp

    def _dll_numpy(self, cand_mu, cand_sig) -> float:
        """Numpy fallback: candidate caches into scratch, return the delta."""
        data, lay = self.data, self._layout
        ll, a, piece = _piecewise_loglik(data, cand_mu, cand_sig, self._u, lay)
        sp = cand_sig[lay.rows, piece] if self.L > 1 else cand_sig[:, 0]
        ap = a[lay.rows, piece] if self.L > 1 else cand_mu
        self._piece_scratch = piece.astype(np.int64)
        self._r2_scratch = ((data.y - ap) / sp) ** 2
        self._logsp_scratch = np.log(sp)
        return ll - self._loglik

    def _dll_for_mu_shift(self, dmu: np.ndarray) -> float:
        """Log-likelihood change when the location shifts by dmu per row."""
        lay = self._layout
        if _HAVE_NUMBA and self.L > 1:
            return float(_dll_mu_shift(self.data.y, self._q_int, self._sig, dmu,
                                       lay.anchor_idx, lay.z_anchor, self.use_copula,
                                       self._piece, self._r2, self._logsp,
                                       self._piece_scratch, self._r2_scratch,
                                       self._logsp_scratch))
        return self._dll_numpy(self._mu + dmu, self._sig)

    def _dll_for_sig_col(self, dsig: np.ndarray, col: int) -> float:
        """Log-likelihood change when scale column ``col`` shifts by dsig."""
        lay = self._layout
        if _HAVE_NUMBA and self.L > 1:
            return float(_dll_sig_col(self.data.y, self._q_int, self._sig, dsig, col,
                                      self._b_rows[col], lay.anchor_idx, lay.z_anchor,
                                      self.use_copula,
                                      self._piece, self._r2, self._logsp,
                                      self._piece_scratch, self._r2_scratch,
                                      self._logsp_scratch))
        cand_sig = self._sig.copy()
        cand_sig[:, col] += dsig
        return self._dll_numpy(self._mu, cand_sig)

    def update_coefficients(self, adapting: bool = False):
        """Random-walk Metropolis on every coefficient field."""
        data, st = self.data, self.state
        sidx = data.station_idx
        for j, name in enumerate(self.spec.beta_slots):
            block = self.scales[f"beta:{name}"]
            delta = block.scale * self.rng.standard_normal(data.n_stations)
            cand_field = st.betas[:, j] + delta
            dmu = data.mu_design[:, j] * delta[sidx]
            dll = self._dll_for_mu_shift(dmu)
            cand_prior = self._field_logpdf(cand_field, st.beta_mean[j], st.beta_sill[j],
                                            st.beta_range[j], f"b{j}")
            ratio = dll + cand_prior - self._beta_prior[j]
            accepted = np.log(self.rng.uniform()) < ratio
            if accepted:
                st.betas[:, j] = cand_field
                self._mu += dmu
                if self.L > 1:
                    self._q_int += dmu[:, None]
                self._loglik += dll
                self._swap_obs_caches()
                if self.use_copula:
                    self._a += dmu[:, None]
                self._beta_prior[j] = cand_prior
                st.log_post += ratio
            block.register(accepted, adapting, self._sweep)

        for l in range(self.L):
            for j, name in enumerate(self.spec.theta_slots):
                block = self.scales[f"theta:{l}:{name}"]
                delta = block.scale * self.rng.standard_normal(data.n_stations)
                cand_piece = st.thetas[:, l, :].copy()
                cand_piece[:, j] += delta
                if np.any(self._min_scales_piece(cand_piece) <= 0):
                    block.register(False, adapting, self._sweep)
                    continue
                dsig = data.sc_design[:, j] * delta[sidx]
                dll = self._dll_for_sig_col(dsig, l)
                cand_prior = self._field_logpdf(cand_piece[:, j], st.theta_mean[l, j],
                                                st.theta_sill[j], st.theta_range[j], f"t{j}")
                ratio = dll + cand_prior - self._theta_prior[l, j]
                accepted = np.log(self.rng.uniform()) < ratio
                if accepted:
                    st.thetas[:, l, j] = cand_piece[:, j]
                    self._sig[:, l] += dsig
                    if self.L > 1:
                        self._q_int += dsig[:, None] * self._b_rows[l][None, :]
                        if self.use_copula:
                            self._a = self._q_int[:, self._layout.anchor_idx] \
                                - self._sig * self._layout.z_anchor
                    self._loglik += dll
                    self._swap_obs_caches()
                    self._theta_prior[l, j] = cand_prior
                    st.log_post += ratio
                block.register(accepted, adapting, self._sweep)

        self._update_ridges(adapting)

    def _update_ridges(self, adapting: bool):
        """Extra Metropolis moves along the sampler's slow ridges.

        The intercept and time columns (and, in the reduced form, the time
        and seasonal-sd columns) are strongly collinear, so per-slot walks
        diffuse slowly along the correlated direction.  These moves shift a
        pair of slots along the least-squares compensation direction, which
        leaves the fitted values nearly unchanged and mixes the ridge.
        """
        data, st = self.data, self.state
        sidx = data.station_idx

        jc, jt = 0, 1  # const and t slots of the location design
        block = self.scales["beta:ridge"]
        delta = block.scale * self.rng.standard_normal(data.n_stations)
        dmu = (data.mu_design[:, jt] - self._tbar * data.mu_design[:, jc]) * delta[sidx]
        cand_t = st.betas[:, jt] + delta
        cand_c = st.betas[:, jc] - self._tbar * delta
        dll = self._dll_for_mu_shift(dmu)
        prior_t = self._field_logpdf(cand_t, st.beta_mean[jt], st.beta_sill[jt],
                                     st.beta_range[jt], f"b{jt}")
        prior_c = self._field_logpdf(cand_c, st.beta_mean[jc], st.beta_sill[jc],
                                     st.beta_range[jc], f"b{jc}")
        ratio = dll + prior_t - self._beta_prior[jt] + prior_c - self._beta_prior[jc]
        accepted = np.log(self.rng.uniform()) < ratio
        if accepted:
            st.betas[:, jt] = cand_t
            st.betas[:, jc] = cand_c
            self._mu += dmu
            if self.L > 1:
                self._q_int += dmu[:, None]
            self._loglik += dll
            self._swap_obs_caches()
            if self.use_copula:
                self._a += dmu[:, None]
            self._beta_prior[jt] = prior_t
            self._beta_prior[jc] = prior_c
            st.log_post += ratio
        block.register(accepted, adapting, self._sweep)

        if self._theta_ridge is None:
            return
        ja, jb, comp = self._theta_ridge  # shift slot ja, compensate slot jb
        for l in range(self.L):
            block = self.scales[f"theta:{l}:ridge"]
            delta = block.scale * self.rng.standard_normal(data.n_stations)
            cand_piece = st.thetas[:, l, :].copy()
            cand_piece[:, ja] += delta
            cand_piece[:, jb] -= comp * delta
            if np.any(self._min_scales_piece(cand_piece) <= 0):
                block.register(False, adapting, self._sweep)
                continue
            dsig = (data.sc_design[:, ja] - comp[sidx] * data.sc_design[:, jb]
                    if isinstance(comp, np.ndarray)
                    else data.sc_design[:, ja] - comp * data.sc_design[:, jb]) * delta[sidx]
            dll = self._dll_for_sig_col(dsig, l)
            prior_a = self._field_logpdf(cand_piece[:, ja], st.theta_mean[l, ja],
                                         st.theta_sill[ja], st.theta_range[ja], f"t{ja}")
            prior_b = self._field_logpdf(cand_piece[:, jb], st.theta_mean[l, jb],
                                         st.theta_sill[jb], st.theta_range[jb], f"t{jb}")
            ratio = (dll + prior_a - self._theta_prior[l, ja]
                     + prior_b - self._theta_prior[l, jb])
            accepted = np.log(self.rng.uniform()) < ratio
            if accepted:
                st.thetas[:, l, :] = cand_piece
                self._sig[:, l] += dsig
                if self.L > 1:
                    self._q_int += dsig[:, None] * self._b_rows[l][None, :]
                    if self.use_copula:
                        self._a = self._q_int[:, self._layout.anchor_idx] \
                            - self._sig * self._layout.z_anchor
                self._loglik += dll
                self._swap_obs_caches()
                self._theta_prior[l, ja] = prior_a
                self._theta_prior[l, jb] = prior_b
                st.log_post += ratio
            block.register(accepted, adapting, self._sweep)

    def _mean_logprior(self, mean: float) -> float:
        return float(-0.5 * (mean / self.prior.mean_sd) ** 2)

    def update_hyperparams(self, adapting: bool = False):
        """Metropolis updates of field means, sills, ranges and copula params."""
        st = self.state
        lo, hi = self.prior.range_bounds

        for j, name in enumerate(self.spec.beta_slots):
            for kind in ("mean", "sill", "range"):
                block = self.scales[f"hyper:{kind}:beta:{name}"]
                mean, sill, corr = st.beta_mean[j], st.beta_sill[j], st.beta_range[j]
                jac = 0.0
                if kind == "mean":
                    cand = (mean + block.scale * self.rng.standard_normal(), sill, corr)
                    prior_delta = self._mean_logprior(cand[0]) - self._mean_logprior(mean)
                elif kind == "sill":
                    cand = (mean, sill * np.exp(block.scale * self.rng.standard_normal()), corr)
                    jac = np.log(cand[1] / sill)
                    prior_delta = -0.5 * ((cand[1] / self.prior.sill_scale) ** 2
                                          - (sill / self.prior.sill_scale) ** 2)
                else:
                    cand = (mean, sill, corr * np.exp(block.scale * self.rng.standard_normal()))
                    jac = np.log(cand[2] / corr)
                    prior_delta = 0.0
                    if not (lo <= cand[2] <= hi):
                        block.register(False, adapting, self._sweep)
                        continue
                cand_lp = self._field_logpdf(st.betas[:, j], *cand, f"b{j}")
                delta_post = cand_lp - self._beta_prior[j] + prior_delta
                accepted = np.log(self.rng.uniform()) < delta_post + jac
                if accepted:
                    st.beta_mean[j], st.beta_sill[j], st.beta_range[j] = cand
                    self._beta_prior[j] = cand_lp
                    st.log_post += delta_post
                block.register(accepted, adapting, self._sweep)

        for j, name in enumerate(self.spec.theta_slots):
            # means are per piece; sill/range shared across pieces
            for l in range(self.L):
                block = self.scales[f"hyper:mean:theta:{name}"]
                cand_mean = st.theta_mean[l, j] + block.scale * self.rng.standard_normal()
                cand_lp = self._field_logpdf(st.thetas[:, l, j], cand_mean,
                                             st.theta_sill[j], st.theta_range[j], f"t{j}")
                ratio = (cand_lp - self._theta_prior[l, j]
                         + self._mean_logprior(cand_mean) - self._mean_logprior(st.theta_mean[l, j]))
                accepted = np.log(self.rng.uniform()) < ratio
                if accepted:
                    st.theta_mean[l, j] = cand_mean
                    self._theta_prior[l, j] = cand_lp
                    st.log_post += ratio
                block.register(accepted, adapting, self._sweep)
            for kind in ("sill", "range"):
                block = self.scales[f"hyper:{kind}:theta:{name}"]
                step = np.exp(block.scale * self.rng.standard_normal())
                if kind == "sill":
                    cand_sill, cand_range = st.theta_sill[j] * step, st.theta_range[j]
                    prior_delta = -0.5 * ((cand_sill / self.prior.sill_scale) ** 2
                                          - (st.theta_sill[j] / self.prior.sill_scale) ** 2)
                else:
                    cand_sill, cand_range = st.theta_sill[j], st.theta_range[j] * step
                    if not (lo <= cand_range <= hi):
                        block.register(False, adapting, self._sweep)
                        continue
                    prior_delta = 0.0
                cand_lps = np.array([self._field_logpdf(st.thetas[:, l, j], st.theta_mean[l, j],
                                                        cand_sill, cand_range, f"t{j}")
                                     for l in range(self.L)])
                delta_post = cand_lps.sum() - self._theta_prior[:, j].sum() + prior_delta
                accepted = np.log(self.rng.uniform()) < delta_post + np.log(step)
                if accepted:
                    st.theta_sill[j], st.theta_range[j] = cand_sill, cand_range
                    self._theta_prior[:, j] = cand_lps
                    st.log_post += delta_post
                block.register(accepted, adapting, self._sweep)

        if self.use_copula:
            self._update_copula_params(adapting)

    def _update_copula_params(self, adapting: bool):
        st = self.state
        cop = st.copula
        lo, hi = self.prior.range_bounds

        block = self.scales["copula:psi_v"]
        cand_psi = cop.psi_v + block.scale * self.rng.standard_normal()
        if abs(cand_psi) < 1.0:
            cand_resid = self._path_resid(cop.v, cand_psi)
            cand_lp = self._latent_logpdf(resid=cand_resid, psi_v=cand_psi)
            ratio = cand_lp - self._latent_prior
            accepted = np.log(self.rng.uniform()) < ratio
            if accepted:
                cop.psi_v = float(cand_psi)
                self._resid = cand_resid
                self._prec_resid = self._cw_prec @ cand_resid
                self._latent_prior = cand_lp
                st.log_post += ratio
        else:
            accepted = False
        block.register(accepted, adapting, self._sweep)

        block = self.scales["copula:psi_w"]
        step = np.exp(block.scale * self.rng.standard_normal())
        cand_w = cop.psi_w * step
        if lo <= cand_w <= hi:
            cov = exp_cov_matrix(self.data.locations,
                                 GPHyperParams(mean=0.0, sill=1.0, corr_range=cand_w),
                                 nugget=1e-10)
            cand_chol = np.linalg.cholesky(cov)
            cand_prec = np.linalg.inv(cov)
            cand_logdet = 2.0 * np.sum(np.log(np.diag(cand_chol)))
            cand_lp = self._latent_logpdf(prec=cand_prec, logdet=cand_logdet)
            delta_post = cand_lp - self._latent_prior
            accepted = np.log(self.rng.uniform()) < delta_post + np.log(step)
            if accepted:
                cop.psi_w = float(cand_w)
                self._cw_chol, self._cw_prec, self._cw_logdet = cand_chol, cand_prec, cand_logdet
                self._prec_resid = cand_prec @ self._resid
                self._latent_prior = cand_lp
                st.log_post += delta_post
        else:
            accepted = False
        block.register(accepted, adapting, self._sweep)

    def update_latent(self, adapting: bool = False):
        """Single-site Metropolis over the latent path, checkerboard sweep.

        For one station, sites of equal time parity are conditionally
        independent given the rest, so each parity class updates in a single
        vectorized pass.
        """
        if not self.use_copula:
            return
        data, st = self.data, self.state
        cop = st.copula
        T = data.n_time
        block = self.scales["latent"]
        one_m = 1.0 - cop.psi_v**2
        prec = self._cw_prec
        n_prop = 0
        n_acc = 0

        for s in range(data.n_stations):
            p_ss = prec[s, s]
            rows_all = np.arange(data.n_obs)[data.station_idx == s]
            cols_of_rows = data.obs_col[rows_all]
            for parity in (0, 1):
                cols = np.arange(parity, T, 2)
                delta = block.scale * self.rng.standard_normal(cols.size)
                c_t = np.where(cols == 0, 1.0, 1.0 / one_m)
                d_prior = -c_t * (delta * self._prec_resid[s, cols] + 0.5 * delta**2 * p_ss)
                nxt = cols + 1
                has_next = nxt < T
                d_prior[has_next] += (cop.psi_v * delta[has_next] * self._prec_resid[s, nxt[has_next]]
                                      - 0.5 * cop.psi_v**2 * delta[has_next] ** 2 * p_ss) / one_m

                d_ll = np.zeros(cols.size)
                sel = (cols_of_rows % 2) == parity
                rows = rows_all[sel]
                if rows.size:
                    pos = (cols_of_rows[sel] - parity) // 2
                    v_old = cop.v[s, cols_of_rows[sel]]
                    u_new = ndtr(v_old + delta[pos])
                    piece_new = (u_new[:, None] >= self._layout.int_knots).sum(axis=1) \
                        if self.L > 1 else np.zeros(rows.size, dtype=int)
                    a_new = self._a[rows, piece_new]
                    s_new = self._sig[rows, piece_new]
                    a_old = self._a[rows, self._piece[rows]]
                    s_old = self._sig[rows, self._piece[rows]]
                    y = data.y[rows]
                    d_ll[pos] = (-np.log(s_new) - 0.5 * ((y - a_new) / s_new) ** 2
                                 + np.log(s_old) + 0.5 * ((y - a_old) / s_old) ** 2)

                accept = np.log(self.rng.uniform(size=cols.size)) < d_prior + d_ll
                n_prop += cols.size
                n_acc += int(accept.sum())
                if not np.any(accept):
                    continue
                acc_cols = cols[accept]
                acc_delta = delta[accept]
                cop.v[s, acc_cols] += acc_delta
                # residual columns t and t+1 change
                self._resid[s, acc_cols] += acc_delta
                self._prec_resid[:, acc_cols] += prec[:, [s]] * acc_delta
                nxt_cols = acc_cols + 1
                ok = nxt_cols < T
                if np.any(ok):
                    self._resid[s, nxt_cols[ok]] -= cop.psi_v * acc_delta[ok]
                    self._prec_resid[:, nxt_cols[ok]] -= prec[:, [s]] * (cop.psi_v * acc_delta[ok])
                self._latent_prior += float(d_prior[accept].sum())
                self._loglik += float(d_ll[accept].sum())
                st.log_post += float((d_prior + d_ll)[accept].sum())
                if rows.size:
                    acc_rows_mask = accept[pos]
                    upd_rows = rows[acc_rows_mask]
                    if upd_rows.size:
                        self._u[upd_rows] = u_new[acc_rows_mask]
                        self._piece[upd_rows] = piece_new[acc_rows_mask]
                        sp = s_new[acc_rows_mask]
                        self._r2[upd_rows] = ((data.y[upd_rows] - a_new[acc_rows_mask]) / sp) ** 2
                        self._logsp[upd_rows] = np.log(sp)

        block.register_bulk(n_acc, n_prop, adapting, self._sweep)

    # ------------------------------------------------------------------
    # main loop
    # ------------------------------------------------------------------

    def run(self, tau_grid=(0.1, 0.5, 0.9)) -> ChainResult:
        cfg = self.config
        kept: list[PosteriorSample] = []
        for it in range(cfg.n_iter):
            self._sweep = it
            adapting = it < cfg.n_burn
            if it == cfg.n_burn:
                self._refresh_caches()  # flush incremental rounding before sampling
            self.update_coefficients(adapting)
            self.update_hyperparams(adapting)
            self.update_latent(adapting)
            if it >= cfg.n_burn and (it - cfg.n_burn) % cfg.thin == 0:
                st = self.state
                kept.append(PosteriorSample(
                    iteration=it,
                    betas=st.betas.copy(),
                    thetas=st.thetas.copy(),
                    beta_mean=st.beta_mean.copy(),
                    beta_sill=st.beta_sill.copy(),
                    beta_range=st.beta_range.copy(),
                    theta_mean=st.theta_mean.copy(),
                    theta_sill=st.theta_sill.copy(),
                    theta_range=st.theta_range.copy(),
                    psi_v=st.copula.psi_v if st.copula else None,
                    psi_w=st.copula.psi_w if st.copula else None,
                    log_post=float(st.log_post),
                ))
        acceptance = {name: blk.rate for name, blk in self.scales.items()}
        summary = PosteriorSummary(
            trend=trend_summary(kept, np.asarray(tau_grid, dtype=float), self.spec,
                                self.data.station_ids),
            acceptance=acceptance,
            n_samples=len(kept),
        )
        return ChainResult(samples=kept, summary=summary, dataset=self.data, config=cfg)


def run_chain(dataset: QuantileDataset, config: ChainConfig,
              prior: HyperPrior | None = None, copula: bool = False,
              tau_grid=(0.1, 0.5, 0.9)) -> ChainResult:
    """Run one seeded chain end to end; deterministic given the config seed."""
    sampler = QuantileGibbsSampler(dataset, config, prior=prior, copula=copula)
    return sampler.run(tau_grid)


class SpatioTemporalQuantileModel(BaseEstimator):
    """Estimator facade: fit the quantile model by MCMC, summarize trends."""

    def __init__(self, model_form: str = "reduced_sigma", n_pieces: int = 4, k: int = 4,
                 include_soi: bool = False, n_iter: int = 4000, n_burn: int = 1000,
                 thin: int = 5, seed: int = 0, target_accept: float = 0.35,
                 copula: bool = False, tau_grid: tuple[float, ...] = (0.1, 0.5, 0.9)):
        self.model_form = model_form
        self.n_pieces = n_pieces
        self.k = k
        self.include_soi = include_soi
        self.n_iter = n_iter
        self.n_burn = n_burn
        self.thin = thin
        self.seed = seed
        self.target_accept = target_accept
        self.copula = copula
        self.tau_grid = tau_grid

    def _spec(self) -> ModelSpec:
        return ModelSpec(form=ModelForm(self.model_form), n_pieces=self.n_pieces,
                         k=self.k, include_soi=self.include_soi)

    def fit(self, series_list: list[StationSeries],
            sigma_d: dict[str, np.ndarray] | None = None,
            soi: CovariateSeries | None = None,
            window: tuple[int, int] | None = None,
            season_day_set=None):
        from .variance import SeasonalVarianceModel

        spec = self._spec()
        if spec.form is ModelForm.REDUCED_SIGMA and sigma_d is None:
            sigma_d = {s.meta.station_id: SeasonalVarianceModel(k=self.k).fit(s).sigma_
                       for s in series_list}
        dataset = build_dataset(series_list, spec, sigma_d=sigma_d, soi=soi,
                                window=window, season_day_set=season_day_set)
        config = ChainConfig(n_iter=self.n_iter, n_burn=self.n_burn, thin=self.thin,
                             seed=self.seed, target_accept=self.target_accept)
        self.result_ = run_chain(dataset, config, copula=self.copula, tau_grid=self.tau_grid)
        self.summary_ = self.result_.summary
        self.dataset_ = dataset
        return self

    def trend_curve(self, tau_grid=None) -> TrendSummary:
        if not hasattr(self, "result_"):
            raise RuntimeError("call fit() first")
        taus = np.asarray(tau_grid if tau_grid is not None else self.tau_grid, dtype=float)
        return trend_summary(self.result_.samples, taus, self.dataset_.spec,
                             self.dataset_.station_ids)
