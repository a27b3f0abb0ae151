"""Cross-fitted debiased estimation of worst-case risk under declared shifts.

For a shift level alpha in [0, 1) the estimand is the expected loss on the
worst (1-alpha)-subsample: the subpopulation of that proportion, selected on
the mutable/immutable columns with the immutable marginal held fixed, that
maximizes expected loss. Estimation cross-fits two nuisance functions per
fold (the conditional expected loss mu and its conditional alpha-quantile
eta over the immutable columns), then combines plug-in and residual terms
so that first-order nuisance error cancels. When every mutable column is
discrete, a small uniform noise term smooths the conditional quantile at a
bias cost bounded by the noise width.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .data import EvaluationFrame
from .errors import (
    ConfigError,
    DegenerateQuantileWarning,
    DimensionMismatch,
    DiscreteMutablesWarning,
    DomainError,
    InsufficientData,
)
from .learners import (
    KernelRidgeLearner,
    SplineBasisConfig,
    SplineQuantileLearner,
    TuningGrid,
    default_tuning_grid,
)

NOISE_STREAM_SALT = 0x6E6F6973  # keeps noise draws independent of fold shuffling
DEFAULT_DISCRETE_EPSILON = 1e-5


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings for one worst-case estimation run."""

    alpha: float
    k_folds: int = 5
    discrete_noise_epsilon: float | None = None  # None resolves by W discreteness
    ci_level: float = 0.95
    seed: int = 0
    tuning: TuningGrid | None = None
    spline: SplineBasisConfig = field(default_factory=SplineBasisConfig)
    max_support: int | None = 4096

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.k_folds < 2:
            raise ConfigError("k_folds must be >= 2")
        if not 0.0 < self.ci_level < 1.0:
            raise ConfigError("ci_level must lie in (0, 1)")
        if self.discrete_noise_epsilon is not None and self.discrete_noise_epsilon < 0.0:
            raise ConfigError("discrete_noise_epsilon must be >= 0")


@dataclass(frozen=True)
class NuisanceFit:
    """Fitted nuisance pair for one fold, trained on out-of-fold rows only."""

    fold_index: int
    mu_model: object
    eta_model: object
    noise_draws: np.ndarray  # uniform draws for this fold's rows; empty when eps=0


@dataclass(frozen=True)
class WorstCaseEstimate:
    """Point estimate with variance, CI and per-row worst-subsample members."""

    alpha: float
    r_hat: float
    sigma2_hat: float
    ci: tuple[float, float]
    h_indicators: np.ndarray
    mu_hat: np.ndarray
    eta_hat: np.ndarray
    psi_values: np.ndarray
    epsilon_used: float
    nuisance_fits: tuple[NuisanceFit, ...] = ()

    @property
    def subsample_size(self) -> int:
        return int(self.h_indicators.sum())


@dataclass(frozen=True)
class RiskCurve:
    """Worst-case estimates over an increasing alpha grid (shared folds/noise)."""

    alpha_grid: tuple[float, ...]
    estimates: tuple[WorstCaseEstimate, ...]
    reports: tuple = ()
    comparison_curves: dict | None = None


# --------------------------------------------------------------------------
# elementary operations
# --------------------------------------------------------------------------


def dual_objective(mu, eta, weights, alpha: float) -> float:
    """Weighted dual value sum_i w_i * [ (mu_i - eta_i)_+ / (1-alpha) + eta_i ]."""
    mu = np.asarray(mu, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if not (len(mu) == len(eta) == len(w)):
        raise DimensionMismatch("mu, eta and weights must share a length")
    if not 0.0 <= alpha < 1.0:
        raise DomainError("alpha must lie in [0, 1)")
    if abs(w.sum() - 1.0) > 1e-8:
        raise DomainError("weights must sum to 1")
    ramp = np.maximum(mu - eta, 0.0)
    return float(np.sum(w * (ramp / (1.0 - alpha) + eta)))


def score_psi(loss, mu, eta, alpha: float, r) -> np.ndarray | float:
    """Orthogonal score: (ramp + [mu>=eta]*(loss-mu)) / (1-alpha) + eta - r."""
    loss = np.asarray(loss, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    ramp = np.maximum(mu - eta, 0.0)
    inside = (mu >= eta).astype(np.float64)
    out = (ramp + inside * (loss - mu)) / (1.0 - alpha) + eta - r
    return float(out) if out.ndim == 0 else out


def estimate_variance(psi_values, fold_id=None) -> float:
    """Cross-fold average of per-fold mean squared scores.

    Without fold labels the scores are treated as a single fold, making this
    the plain mean of squares.
    """
    psi = np.asarray(psi_values, dtype=np.float64)
    if len(psi) == 0:
        raise DimensionMismatch("need at least one score")
    if fold_id is None:
        return float(np.mean(psi * psi))
    fold_id = np.asarray(fold_id)
    means = [float(np.mean(psi[fold_id == k] ** 2)) for k in np.unique(fold_id)]
    return float(np.mean(means))


def confidence_interval(r_hat: float, sigma2_hat: float, n: int, ci_level: float) -> tuple[float, float]:
    """Normal-approximation interval r_hat +/- z * sqrt(sigma2/n)."""
    if sigma2_hat < 0.0 or n < 1 or not 0.0 < ci_level < 1.0:
        raise DomainError("need sigma2 >= 0, n >= 1 and ci_level in (0, 1)")
    z = float(ndtri(0.5 * (1.0 + ci_level)))
    half = z * float(np.sqrt(sigma2_hat / n))
    return (r_hat - half, r_hat + half)


# --------------------------------------------------------------------------
# cross-fitting machinery
# --------------------------------------------------------------------------


def _is_discrete(col: np.ndarray) -> bool:
    return bool(np.all(col == np.round(col)))


def resolve_epsilon(config: EstimatorConfig, frame: EvaluationFrame) -> float:
    """Apply the discrete-W defaulting rule and emit the mandatory warning.

    Explicit values win. With no value configured, any integer-valued mutable
    column triggers the default noise width; otherwise no noise is added.
    Setting zero noise while every mutable column is discrete leaves the
    conditional quantile ill-defined, which is warned about but permitted.
    """
    discrete = [_is_discrete(frame.w_block[:, j]) for j in range(frame.w_block.shape[1])]
    if config.discrete_noise_epsilon is not None:
        eps = float(config.discrete_noise_epsilon)
        if eps == 0.0 and discrete and all(discrete):
            warnings.warn(
                "every mutable column is discrete and noise is disabled; "
                "conditional quantiles of the loss regression are ill-defined",
                DiscreteMutablesWarning,
                stacklevel=2,
            )
        return eps
    return DEFAULT_DISCRETE_EPSILON if any(discrete) else 0.0


def _noise_draws(seed: int, n: int, epsilon: float) -> np.ndarray:
    if epsilon == 0.0:
        return np.zeros(n)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, NOISE_STREAM_SALT])))
    return rng.random(n) * epsilon


@dataclass(frozen=True)
class _FoldFit:
    fold: int
    in_idx: np.ndarray
    out_idx: np.ndarray
    mu_model: object
    mu_out: np.ndarray
    mu_in: np.ndarray


@dataclass(frozen=True)
class _CrossFit:
    epsilon: float
    noise: np.ndarray
    folds: tuple[_FoldFit, ...]


def _validate(frame: EvaluationFrame, config: EstimatorConfig) -> None:
    if frame.k_folds != config.k_folds:
        raise ConfigError(f"frame has {frame.k_folds} folds but config expects {config.k_folds}")
    if frame.n_rows < 2 * config.k_folds:
        raise InsufficientData(f"need at least {2 * config.k_folds} rows for {config.k_folds} folds")


def _default_mu_learner(frame: EvaluationFrame, config: EstimatorConfig) -> KernelRidgeLearner:
    d = frame.w_block.shape[1] + frame.z_block.shape[1]
    grid = config.tuning or default_tuning_grid(d, seed=config.seed)
    return KernelRidgeLearner(grid=grid, max_support=config.max_support, seed=config.seed)


def _default_eta_learner(frame: EvaluationFrame, config: EstimatorConfig) -> SplineQuantileLearner:
    grid = config.tuning or default_tuning_grid(max(frame.z_block.shape[1], 1), seed=config.seed)
    return SplineQuantileLearner(
        spline_config=config.spline, grid=grid, names=frame.z_names, seed=config.seed
    )


def _map_folds(worker, k_folds: int, threads: int):
    if threads <= 1:
        return [worker(k) for k in range(k_folds)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, range(k_folds)))


def _prepare(frame, config, mu_learner, threads: int) -> _CrossFit:
    epsilon = resolve_epsilon(config, frame)
    noise = _noise_draws(config.seed, frame.n_rows, epsilon)
    features = frame.features_wz()
    learner = mu_learner if mu_learner is not None else _default_mu_learner(frame, config)

    def fit_fold(k: int) -> _FoldFit:
        out = np.nonzero(frame.fold_id != k)[0]
        inn = np.nonzero(frame.fold_id == k)[0]
        if len(out) == 0 or len(inn) == 0:
            raise InsufficientData(f"fold {k} leaves an empty split")
        model = learner.fit(features[out], frame.losses[out])
        return _FoldFit(
            fold=k,
            in_idx=inn,
            out_idx=out,
            mu_model=model,
            mu_out=np.asarray(model.predict(features[out]), dtype=np.float64),
            mu_in=np.asarray(model.predict(features[inn]), dtype=np.float64),
        )

    folds = tuple(_map_folds(fit_fold, config.k_folds, threads))
    return _CrossFit(epsilon=epsilon, noise=noise, folds=folds)


def _alpha_zero(frame: EvaluationFrame, config: EstimatorConfig) -> WorstCaseEstimate:
    # no shift: the worst-case subsample is the full dataset and no nuisance
    # fit is needed; the score reduces to the centered loss
    losses = frame.losses
    r_hat = float(np.mean(losses))
    psi = losses - r_hat
    sigma2 = float(np.mean(psi * psi))
    return WorstCaseEstimate(
        alpha=0.0,
        r_hat=r_hat,
        sigma2_hat=sigma2,
        ci=confidence_interval(r_hat, sigma2, len(losses), config.ci_level),
        h_indicators=np.ones(len(losses), dtype=np.int8),
        mu_hat=losses.copy(),
        eta_hat=losses.copy(),
        psi_values=psi,
        epsilon_used=0.0,
    )


def _estimate_at(frame, config, prep: _CrossFit, alpha: float, eta_learner, threads: int) -> WorstCaseEstimate:
    n = frame.n_rows
    learner = eta_learner if eta_learner is not None else _default_eta_learner(frame, config)
    eps = prep.epsilon
    one_minus = 1.0 - alpha

    def fit_fold(ff: _FoldFit) -> tuple[_FoldFit, np.ndarray, NuisanceFit]:
        targets = ff.mu_out + prep.noise[ff.out_idx] if eps > 0.0 else ff.mu_out
        if eps == 0.0 and np.ptp(ff.mu_out) == 0.0:
            warnings.warn(
                f"fold {ff.fold}: fitted conditional loss is constant with no noise; "
                "its conditional quantile is degenerate",
                DegenerateQuantileWarning,
                stacklevel=2,
            )
        eta_model = learner.fit(frame.z_block[ff.out_idx], targets, alpha)
        eta_in = np.asarray(eta_model.predict(frame.z_block[ff.in_idx]), dtype=np.float64)
        fit = NuisanceFit(
            fold_index=ff.fold,
            mu_model=ff.mu_model,
            eta_model=eta_model,
            noise_draws=prep.noise[ff.in_idx] if eps > 0.0 else np.empty(0),
        )
        return ff, eta_in, fit

    results = _map_folds(lambda k: fit_fold(prep.folds[k]), config.k_folds, threads)

    mu_hat = np.empty(n)
    eta_hat = np.empty(n)
    h = np.zeros(n, dtype=np.int8)
    terms = np.empty(n)
    fold_means = np.empty(config.k_folds)
    fits = tuple(fit for _, _, fit in results)
    for ff, eta_in, _fit in results:
        idx = ff.in_idx
        mu_hat[idx] = ff.mu_in
        eta_hat[idx] = eta_in
        mu_tilde = ff.mu_in + prep.noise[idx] if eps > 0.0 else ff.mu_in
        inside = mu_tilde >= eta_in
        h[idx] = inside
        ramp = np.maximum(mu_tilde - eta_in, 0.0)
        resid = inside * (frame.losses[idx] - ff.mu_in)
        terms[idx] = (ramp + resid) / one_minus + eta_in
        fold_means[ff.fold] = float(np.mean(terms[idx]))

    r_hat = float(np.mean(fold_means))
    psi = terms - r_hat
    sigma2 = float(np.mean([np.mean(psi[frame.fold_id == k] ** 2) for k in range(config.k_folds)]))
    return WorstCaseEstimate(
        alpha=alpha,
        r_hat=r_hat,
        sigma2_hat=sigma2,
        ci=confidence_interval(r_hat, sigma2, n, config.ci_level),
        h_indicators=h,
        mu_hat=mu_hat,
        eta_hat=eta_hat,
        psi_values=psi,
        epsilon_used=eps,
        nuisance_fits=fits,
    )


def estimate_worst_case(
    frame: EvaluationFrame,
    config: EstimatorConfig,
    mu_learner=None,
    eta_learner=None,
    threads: int = 1,
) -> WorstCaseEstimate:
    """Run the cross-fitted worst-case risk estimator at config.alpha.

    ``mu_learner`` (fit(features, targets) -> model) and ``eta_learner``
    (fit(z_block, values, alpha) -> model) replace the default kernel-ridge /
    spline-quantile pair when given; fitted models only ever see out-of-fold
    rows. alpha=0 bypasses nuisance fitting entirely: the estimate is the
    plain mean loss with the loss variance.
    """
    _validate(frame, config)
    if config.alpha == 0.0:
        return _alpha_zero(frame, config)
    prep = _prepare(frame, config, mu_learner, threads)
    return _estimate_at(frame, config, prep, config.alpha, eta_learner, threads)


def risk_curve(
    frame: EvaluationFrame,
    alpha_grid,
    config: EstimatorConfig,
    mu_learner=None,
    eta_learner=None,
    threads: int = 1,
) -> RiskCurve:
    """One estimate per grid point, sharing folds, noise and the mu fits.

    The conditional-loss models do not depend on alpha and are fit once per
    fold; the conditional quantile refits at every grid point.
    """
    grid = tuple(float(a) for a in alpha_grid)
    if not grid:
        raise ConfigError("alpha grid must be non-empty")
    if any(not 0.0 <= a < 1.0 for a in grid):
        raise ConfigError("alpha grid values must lie in [0, 1)")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("alpha grid must be strictly increasing")
    _validate(frame, config)

    prep = None
    estimates = []
    for a in grid:
        if a == 0.0:
            estimates.append(_alpha_zero(frame, config))
            continue
        if prep is None:
            prep = _prepare(frame, config, mu_learner, threads)
        estimates.append(_estimate_at(frame, config, prep, a, eta_learner, threads))
    return RiskCurve(alpha_grid=grid, estimates=tuple(estimates))
