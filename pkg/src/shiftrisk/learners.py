"""Nuisance learners: RBF kernel ridge regression and spline quantile regression.

Both learners sit behind a two-method contract (fit -> model, model.predict)
so alternatives can be plugged into the cross-fitting estimator. The defaults
here are the reference pair: kernel ridge for the conditional expected loss
and l2-penalized pinball regression on a spline basis for its conditional
quantile.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import _kernels as kernels
from .data import assign_folds
from .errors import (
    ConfigError,
    ConvergenceWarning,
    DegenerateColumnWarning,
    DimensionMismatch,
    SingularSystem,
)

# --------------------------------------------------------------------------
# kernel ridge regression
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelRidgeModel:
    """Dual-form RBF kernel ridge fit on standardized features."""

    support_points: np.ndarray
    dual_weights: np.ndarray
    bandwidth_gamma: float
    ridge_lambda: float
    feature_mean: np.ndarray
    feature_scale: np.ndarray

    def predict(self, features) -> np.ndarray:
        return predict_kernel_ridge(self, features)


def _standardize_stats(x: np.ndarray):
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0.0, scale, 1.0)
    return mean, scale


def fit_kernel_ridge(
    features,
    targets,
    gamma: float,
    ridge_lambda: float,
    max_support: int | None = None,
    seed: int = 0,
) -> KernelRidgeModel:
    """Solve (K + lambda*n*I) a = y on standardized features.

    Duplicate feature rows are collapsed into an equivalent (and exact)
    m x m system over the distinct rows, which makes fits on low-cardinality
    discrete features cheap at any sample size. When ``max_support`` is set
    and fewer than n rows, the fit runs on a seeded uniform row subsample.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(targets, dtype=np.float64).ravel()
    if x.shape[0] != len(y):
        raise DimensionMismatch(f"{x.shape[0]} feature rows vs {len(y)} targets")
    if len(y) < 1:
        raise DimensionMismatch("kernel ridge needs at least one row")
    if gamma <= 0.0:
        raise ConfigError("bandwidth gamma must be positive")
    if ridge_lambda < 0.0:
        raise ConfigError("ridge lambda must be non-negative")

    mean, scale = _standardize_stats(x)
    xs = (x - mean) / scale
    if max_support is not None and len(y) > max_support:
        rng = np.random.Generator(np.random.PCG64(seed))
        keep = np.sort(rng.choice(len(y), size=max_support, replace=False))
        xs, y = xs[keep], y[keep]
    n = len(y)

    if ridge_lambda > 0.0:
        uniq, inverse, counts = _distinct_rows(xs)
        if len(uniq) < n:
            gram = kernels.rbf_gram(uniq, uniq, gamma)
            lhs = ridge_lambda * n * np.eye(len(uniq)) + counts[:, None] * gram
            rhs = np.bincount(inverse, weights=y, minlength=len(uniq))
            weights = _solve(lhs, rhs)
            return KernelRidgeModel(uniq, weights, gamma, ridge_lambda, mean, scale)

    gram = kernels.rbf_gram(xs, xs, gamma)
    lhs = gram + ridge_lambda * n * np.eye(n)
    weights = _solve(lhs, y)
    return KernelRidgeModel(xs.copy(), weights, gamma, ridge_lambda, mean, scale)


def _distinct_rows(xs: np.ndarray):
    """np.unique(axis=0) with a faster per-column code path for coarse columns."""
    per_col = []
    total_bits = 0
    for j in range(xs.shape[1]):
        levels, codes = np.unique(xs[:, j], return_inverse=True)
        width = max(int(len(levels) - 1).bit_length(), 1)
        if len(levels) > 4096:
            break
        per_col.append((codes.astype(np.int64), width))
        total_bits += width
    if len(per_col) < xs.shape[1] or total_bits > 62 or not per_col:
        return np.unique(xs, axis=0, return_inverse=True, return_counts=True)
    combined = np.zeros(len(xs), dtype=np.int64)
    for codes, width in per_col:
        combined = (combined << width) | codes
    _, first, inverse, counts = np.unique(combined, return_index=True, return_inverse=True, return_counts=True)
    return xs[first], inverse, counts


def _solve(lhs, rhs) -> np.ndarray:
    try:
        out = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"regularized kernel solve failed: {exc}") from None
    if not np.all(np.isfinite(out)):
        raise SingularSystem("regularized kernel solve produced non-finite weights")
    return out


def predict_kernel_ridge(model: KernelRidgeModel, features) -> np.ndarray:
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[0] == 0:
        return np.zeros(0)
    if x.shape[1] != model.support_points.shape[1]:
        raise DimensionMismatch(
            f"{x.shape[1]} feature columns vs {model.support_points.shape[1]} at fit time"
        )
    xs = (x - model.feature_mean) / model.feature_scale
    return kernels.rbf_gram(xs, model.support_points, model.bandwidth_gamma) @ model.dual_weights


# --------------------------------------------------------------------------
# spline basis
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SplineBasisConfig:
    degree: int = 3
    knots_per_column: int = 5
    interaction_columns: tuple[str, ...] = ()

    def __post_init__(self):
        if self.degree < 1:
            raise ConfigError("spline degree must be >= 1")
        if self.knots_per_column < 0:
            raise ConfigError("knots_per_column must be >= 0")


@dataclass(frozen=True)
class _ColumnPlan:
    name: str
    mode: str  # "spline" or "passthrough"
    knots: np.ndarray | None = None
    degenerate: bool = False


@dataclass(frozen=True)
class SplineBasis:
    """Fitted basis expansion: per-column plans plus interaction layout."""

    config: SplineBasisConfig
    column_names: tuple[str, ...]
    plans: tuple[_ColumnPlan, ...]
    n_columns: int
    # (indicator design column, base design column) pairs appended as products
    interaction_pairs: tuple[tuple[int, int], ...] = ()

    def transform(self, z_block) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z_block, dtype=np.float64))
        if z.shape[1] != len(self.plans):
            raise DimensionMismatch(f"{z.shape[1]} z columns vs {len(self.plans)} at fit time")
        n = z.shape[0]
        blocks = [np.ones((n, 1))]
        for j, plan in enumerate(self.plans):
            if plan.mode == "passthrough":
                blocks.append(z[:, j : j + 1])
            else:
                blocks.append(kernels.bspline_design(np.ascontiguousarray(z[:, j]), plan.knots, self.config.degree))
        design = np.hstack(blocks)
        if self.interaction_pairs:
            inter = np.empty((n, len(self.interaction_pairs)))
            for k, (ind, base) in enumerate(self.interaction_pairs):
                inter[:, k] = design[:, ind] * design[:, base]
            design = np.hstack([design, inter])
        return design


def build_spline_basis(z_block, config: SplineBasisConfig | None = None, names=None):
    """Fit quantile-knot spline plans per numeric column and expand.

    Binary (0/1) columns pass through untouched; constant columns pass
    through with a degenerate-column warning. Columns listed in
    ``config.interaction_columns`` must be passthrough indicators and have
    their products with every other non-intercept term appended.

    Returns (design matrix, fitted SplineBasis). Column 0 of the design is
    always the intercept; with no z columns the design is intercept-only.
    """
    config = config or SplineBasisConfig()
    z = np.atleast_2d(np.asarray(z_block, dtype=np.float64))
    if z.ndim != 2:
        raise DimensionMismatch("z block must be a 2-d array")
    n, d = z.shape
    if names is None:
        names = tuple(f"z{j}" for j in range(d))
    names = tuple(names)
    if len(names) != d:
        raise DimensionMismatch(f"{len(names)} names for {d} z columns")
    unknown = sorted(set(config.interaction_columns) - set(names))
    if unknown:
        raise ConfigError(f"interaction columns {unknown} not among z columns")

    plans = []
    col_start = {}
    col_width = {}
    next_col = 1  # 0 is the intercept
    for j in range(d):
        vals = z[:, j]
        distinct = np.unique(vals)
        if len(distinct) == 1:
            warnings.warn(
                f"z column {names[j]!r} is constant; passing through unsplined",
                DegenerateColumnWarning,
                stacklevel=2,
            )
            plan = _ColumnPlan(names[j], "passthrough", degenerate=True)
            width = 1
        elif np.all(np.isin(distinct, (0.0, 1.0))):
            plan = _ColumnPlan(names[j], "passthrough")
            width = 1
        else:
            k = config.knots_per_column
            qs = np.arange(1, k + 1) / (k + 1)
            interior = np.unique(np.quantile(vals, qs)) if k > 0 else np.empty(0)
            lo, hi = distinct[0], distinct[-1]
            interior = interior[(interior > lo) & (interior < hi)]
            degree = config.degree
            knots = np.concatenate([np.full(degree + 1, lo), interior, np.full(degree + 1, hi)])
            plan = _ColumnPlan(names[j], "spline", knots=knots)
            width = len(interior) + degree + 1
        plans.append(plan)
        col_start[names[j]] = next_col
        col_width[names[j]] = width
        next_col += width

    pairs = []
    for src in config.interaction_columns:
        plan = plans[names.index(src)]
        if plan.mode != "passthrough":
            raise ConfigError(f"interaction column {src!r} must be a binary indicator")
        ind_col = col_start[src]
        for other in names:
            if other == src:
                continue
            for c in range(col_start[other], col_start[other] + col_width[other]):
                pairs.append((ind_col, c))

    basis = SplineBasis(
        config=config,
        column_names=names,
        plans=tuple(plans),
        n_columns=next_col + len(pairs),
        interaction_pairs=tuple(pairs),
    )
    return basis.transform(z), basis


# --------------------------------------------------------------------------
# quantile regression
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QuantileModel:
    """Linear pinball-loss fit over a (possibly spline-expanded) design."""

    coefficients: np.ndarray
    quantile_level: float
    ridge_lambda: float
    basis: SplineBasis | None = None
    converged: bool = True
    n_iter: int = 0

    def predict(self, z_block) -> np.ndarray:
        return predict_quantile(self, z_block)


def empirical_quantile(values, alpha: float) -> float:
    """Left-endpoint (inverted-CDF) empirical quantile; alpha=0 gives the minimum."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if alpha <= 0.0:
        return float(v[0])
    k = int(np.ceil(len(v) * alpha))
    return float(v[max(k - 1, 0)])


def _pinball_objective(design, y, beta, alpha, lam):
    r = y - design @ beta
    pen = lam * float(beta[1:] @ beta[1:])
    return kernels.pinball_sum(r, alpha) + pen


def fit_quantile_regression(
    design,
    targets,
    quantile_level: float,
    ridge_lambda: float,
    basis: SplineBasis | None = None,
    tol: float = 1e-8,
    max_iter: int = 10000,
) -> QuantileModel:
    """Minimize sum_i rho_alpha(y_i - d_i . beta) + lambda * ||beta[1:]||^2.

    The first design column must be the all-ones intercept; it is the only
    unpenalized coefficient. Optimization runs smoothed-pinball passes with a
    shrinking smoothing bandwidth, then exact cyclic coordinate refinement on
    the true objective until the relative improvement per sweep drops below
    ``tol``. Flat optima resolve deterministically: a bounded flat interval
    in any coordinate returns its smallest endpoint, and the alpha=0 interval
    (unbounded below) returns its finite endpoint.
    """
    x = np.ascontiguousarray(design, dtype=np.float64)
    y = np.ascontiguousarray(targets, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != len(y):
        raise DimensionMismatch(f"design {x.shape} vs {len(y)} targets")
    if not np.all(x[:, 0] == 1.0):
        raise DimensionMismatch("first design column must be the all-ones intercept")
    if not 0.0 <= quantile_level < 1.0:
        raise ConfigError("quantile level must lie in [0, 1)")
    if ridge_lambda < 0.0:
        raise ConfigError("ridge lambda must be non-negative")
    n, p = x.shape
    alpha, lam = float(quantile_level), float(ridge_lambda)

    beta = np.zeros(p)
    beta[0] = empirical_quantile(y, alpha)
    spread = float(y.max() - y.min())

    if spread == 0.0:
        return QuantileModel(beta, alpha, lam, basis, converged=True, n_iter=0)

    state = _QuantileState(x, y, alpha, lam, beta, max_iter)
    if p > 1:
        # joint smoothed passes matter only when coordinates couple
        scale = max(float(y.std()), 1e-12 * (1.0 + abs(float(y.mean()))))
        stalled_levels = 0
        for level in range(7):
            h = 0.5 * scale * 0.1**level
            before = state.objective
            state.smooth_pass(h)
            if level >= 2:  # exact sweeps add little while smoothing is coarse
                state.refine(0.1 * tol, max_sweeps=25)
            if before - state.objective <= tol * max(1.0, abs(state.objective)):
                stalled_levels += 1
                if stalled_levels >= 2 and level >= 3:
                    break
            else:
                stalled_levels = 0
            if state.iterations >= max_iter:
                break
    converged = state.refine(tol, max_sweeps=200)
    if not converged:
        warnings.warn(
            f"quantile regression stopped after {state.iterations} iterations before reaching tolerance",
            ConvergenceWarning,
            stacklevel=2,
        )
    return QuantileModel(state.beta.copy(), alpha, lam, basis, converged=converged, n_iter=state.iterations)


class _QuantileState:
    """Shared optimizer state: smoothed joint passes + exact coordinate sweeps.

    Refinement runs last at every smoothing level, so the returned point is
    always a coordinate-wise exact minimizer with the documented tie-breaks.
    """

    def __init__(self, x, y, alpha, lam, beta, max_iter):
        self.x, self.y, self.alpha, self.lam = x, y, alpha, lam
        self.max_iter = max_iter
        self.iterations = 0
        n, p = x.shape
        self.penalty_mask = np.ones(p)
        self.penalty_mask[0] = 0.0
        self.cols = []
        for j in range(p):
            nz = np.nonzero(x[:, j])[0]
            self.cols.append((nz, np.ascontiguousarray(x[nz, j])))
        # prediction-preserving directions (design null space): sliding along
        # them changes only the penalty, so it can be minimized in closed form
        self.null_dirs = np.zeros((p, 0))
        if lam > 0.0 and p > 1:
            evals, evecs = np.linalg.eigh(x.T @ x)
            null = evals <= 1e-10 * max(float(evals[-1]), 1.0)
            if null.any():
                self.null_dirs = evecs[:, null]
        self.beta = beta
        self.resid = y - x @ beta
        self.objective = self._objective(beta)
        self.dirty = True  # true when the point moved since the last sweep
        self.last_refine_converged = None

    def _objective(self, b):
        return kernels.pinball_sum(self.y - self.x @ b, self.alpha) + self.lam * float(b[1:] @ b[1:])

    def _accept(self, b):
        obj = self._objective(b)
        if np.all(np.isfinite(b)) and obj < self.objective:
            self.beta = b.copy()
            self.resid = self.y - self.x @ b
            self.objective = obj
            self.dirty = True

    def smooth_pass(self, h):
        x, y, alpha, lam = self.x, self.y, self.alpha, self.lam

        def fg(b):
            r = y - x @ b
            loss, grad_r = kernels.smoothed_pinball(r, alpha, h)
            loss += lam * float(b[1:] @ b[1:])
            grad = -(x.T @ grad_r) + 2.0 * lam * self.penalty_mask * b
            return loss, grad

        res = minimize(fg, self.beta, jac=True, method="L-BFGS-B", options={"maxiter": 60, "gtol": 1e-12})
        self.iterations += int(res.nit)
        self._accept(res.x)

    def _slide_null(self):
        """Minimize the penalty along prediction-preserving directions exactly."""
        beta = self.beta
        for k in range(self.null_dirs.shape[1]):
            v = self.null_dirs[:, k]
            denom = float(v[1:] @ v[1:])
            if denom > 0.0:
                beta += (-float(v[1:] @ beta[1:]) / denom) * v

    def refine(self, tol, max_sweeps: int) -> bool:
        """Exact cyclic coordinate sweeps until the improvement drops below tol."""
        if not self.dirty and self.last_refine_converged:
            return True
        alpha, lam = self.alpha, self.lam
        beta, r = self.beta, self.resid
        for _ in range(max_sweeps):
            if self.iterations >= self.max_iter:
                return False
            prev = self.objective
            for j in range(len(self.cols)):
                nz, xj = self.cols[j]
                lam_j = 0.0 if j == 0 else lam
                if len(nz) == 0:
                    if lam_j > 0.0:
                        beta[j] = 0.0
                    continue
                c = r[nz] + xj * beta[j]
                t = kernels.pinball_coord_argmin(c, xj, alpha, lam_j)
                r[nz] = c - xj * t
                beta[j] = t
                self.iterations += 1
            if self.null_dirs.shape[1]:
                self._slide_null()
            self.objective = kernels.pinball_sum(r, alpha) + lam * float(beta[1:] @ beta[1:])
            if prev - self.objective <= tol * max(1.0, abs(self.objective)):
                self.dirty = False
                self.last_refine_converged = True
                return True
        self.dirty = False
        self.last_refine_converged = False
        return False


def predict_quantile(model: QuantileModel, z_block) -> np.ndarray:
    """Expand with the stored basis (if any) and apply the coefficients."""
    if model.basis is not None:
        design = model.basis.transform(z_block)
    else:
        design = np.atleast_2d(np.asarray(z_block, dtype=np.float64))
    if design.shape[1] != len(model.coefficients):
        raise DimensionMismatch(f"{design.shape[1]} design columns vs {len(model.coefficients)} coefficients")
    return design @ model.coefficients


# --------------------------------------------------------------------------
# hyperparameter tuning
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TuningGrid:
    """Candidate grids for the nested inner cross-validation search."""

    gammas: tuple[float, ...] = ()
    ridge_lambdas: tuple[float, ...] = ()
    quantile_lambdas: tuple[float, ...] = ()
    inner_folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.inner_folds < 2:
            raise ConfigError("inner_folds must be >= 2")


def default_tuning_grid(n_features: int, seed: int = 0) -> TuningGrid:
    d = max(n_features, 1)
    return TuningGrid(
        gammas=tuple(g / d for g in (0.01, 0.1, 1.0, 10.0)),
        ridge_lambdas=(1e-4, 1e-2, 1.0, 1e2),
        quantile_lambdas=(1e-4, 1e-2, 1.0, 1e2),
        inner_folds=5,
        seed=seed,
    )


@dataclass(frozen=True)
class TunedParams:
    gamma: float | None
    ridge_lambda: float | None
    quantile_lambda: float | None
    score: float


def tune_hyperparameters(features, targets, grid: TuningGrid, objective, max_support=None) -> TunedParams:
    """Exhaustive grid search scored by mean held-out loss on inner folds.

    ``objective`` is either "mse" (kernel ridge over gammas x ridge_lambdas)
    or ("pinball", alpha) (quantile regression over quantile_lambdas, where
    ``features`` is the ready design matrix). Ties break toward larger
    regularization, then larger bandwidth. Candidates whose fits raise are
    scored +inf.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(targets, dtype=np.float64).ravel()
    n = len(y)
    if n < 2 * grid.inner_folds:
        raise ConfigError(f"tuning needs n >= 2*inner_folds, got n={n}")
    folds = assign_folds(n, grid.inner_folds, grid.seed).fold_id

    if objective == "mse":
        if not grid.gammas or not grid.ridge_lambdas:
            raise ConfigError("mse tuning needs non-empty gamma and ridge grids")
        candidates = [(g, l) for g in grid.gammas for l in grid.ridge_lambdas]
        scored = []
        for g, l in candidates:
            losses = []
            try:
                for f in range(grid.inner_folds):
                    tr, te = folds != f, folds == f
                    model = fit_kernel_ridge(x[tr], y[tr], g, l, max_support=max_support, seed=grid.seed)
                    pred = model.predict(x[te])
                    losses.append(float(np.mean((pred - y[te]) ** 2)))
                score = float(np.mean(losses))
            except Exception:
                score = np.inf
            scored.append((score, -l, -g, g, l))
        scored.sort()
        _, _, _, g, l = scored[0]
        return TunedParams(gamma=g, ridge_lambda=l, quantile_lambda=None, score=scored[0][0])

    if isinstance(objective, tuple) and objective[0] == "pinball":
        alpha = float(objective[1])
        if not grid.quantile_lambdas:
            raise ConfigError("pinball tuning needs a non-empty quantile lambda grid")
        scored = []
        for l in grid.quantile_lambdas:
            losses = []
            try:
                for f in range(grid.inner_folds):
                    tr, te = folds != f, folds == f
                    model = fit_quantile_regression(x[tr], y[tr], alpha, l)
                    resid = y[te] - x[te] @ model.coefficients
                    losses.append(kernels.pinball_sum(resid, alpha) / max(int(te.sum()), 1))
                score = float(np.mean(losses))
            except Exception:
                score = np.inf
            scored.append((score, -l, l))
        scored.sort()
        return TunedParams(gamma=None, ridge_lambda=None, quantile_lambda=scored[0][2], score=scored[0][0])

    raise ConfigError(f"unknown tuning objective {objective!r}")


# --------------------------------------------------------------------------
# pluggable learner facades used by the cross-fitting estimator
# --------------------------------------------------------------------------


class KernelRidgeLearner:
    """Default conditional-expected-loss learner (optionally self-tuning)."""

    def __init__(self, grid: TuningGrid | None = None, max_support: int | None = None, seed: int = 0):
        self.grid = grid
        self.max_support = max_support
        self.seed = seed

    def fit(self, features, targets) -> KernelRidgeModel:
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        grid = self.grid or default_tuning_grid(x.shape[1], seed=self.seed)
        if len(grid.gammas) == 1 and len(grid.ridge_lambdas) == 1:
            gamma, lam = grid.gammas[0], grid.ridge_lambdas[0]
        else:
            params = tune_hyperparameters(x, targets, grid, "mse", max_support=self.max_support)
            gamma, lam = params.gamma, params.ridge_lambda
        return fit_kernel_ridge(x, targets, gamma, lam, max_support=self.max_support, seed=self.seed)


class SplineQuantileLearner:
    """Default conditional-quantile learner over the immutable-column basis."""

    def __init__(
        self,
        spline_config: SplineBasisConfig | None = None,
        grid: TuningGrid | None = None,
        names=None,
        seed: int = 0,
    ):
        self.spline_config = spline_config or SplineBasisConfig()
        self.grid = grid
        self.names = names
        self.seed = seed

    def fit(self, z_block, targets, quantile_level: float) -> QuantileModel:
        design, basis = build_spline_basis(z_block, self.spline_config, names=self.names)
        grid = self.grid or default_tuning_grid(max(design.shape[1] - 1, 1), seed=self.seed)
        if len(grid.quantile_lambdas) == 1:
            lam = grid.quantile_lambdas[0]
        else:
            params = tune_hyperparameters(design, targets, grid, ("pinball", quantile_level))
            lam = params.quantile_lambda
        return fit_quantile_regression(design, targets, quantile_level, lam, basis=basis)
