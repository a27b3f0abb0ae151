"""Exact ground truth on discrete instances plus synthetic data generators.

A DiscreteInstance fixes a joint distribution over low-cardinality (w, z)
cells together with the true conditional expected loss per cell. On such
instances the worst-case risk has a closed form (greedy fractional selection
per stratum), its dual has a breakpoint form, and the uniform-noise variant
integrates in closed form. These exact values anchor the acceptance suite.

All sampling uses a seeded 64-bit PCG64 generator; normal draws go through
the inverse normal CDF of that generator's uniforms so datasets are
reproducible from the documented seed alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtri

from .data import CATEGORICAL, NUMERIC, TabularDataset
from .errors import ConfigError, DomainError

_UNIFORM_LO = 1e-300
_UNIFORM_HI = 1.0 - 1e-16


def _seeded_uniforms(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.clip(rng.random(n), _UNIFORM_LO, _UNIFORM_HI)


def seeded_normals(seed_or_rng, n: int) -> np.ndarray:
    """Standard normals via the inverse-CDF transform of PCG64 uniforms."""
    rng = (
        seed_or_rng
        if isinstance(seed_or_rng, np.random.Generator)
        else np.random.Generator(np.random.PCG64(seed_or_rng))
    )
    return ndtri(_seeded_uniforms(rng, n))


# --------------------------------------------------------------------------
# discrete instances
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteInstance:
    """Finite (w, z) distribution with known conditional expected losses.

    joint_pmf and mu_table are (n_w, n_z) arrays indexed by level position.
    loss_noise controls how observable losses are sampled around mu:
    "auto" (Bernoulli when mu fits in [0, 1], else Normal(mu, 0.1)),
    "bernoulli", "point", or ("normal", sd).
    """

    w_levels: tuple[int, ...]
    z_levels: tuple[int, ...]
    joint_pmf: np.ndarray
    mu_table: np.ndarray
    loss_noise: object = "auto"

    def __post_init__(self):
        pmf = np.asarray(self.joint_pmf, dtype=np.float64)
        mu = np.asarray(self.mu_table, dtype=np.float64)
        shape = (len(self.w_levels), len(self.z_levels))
        if pmf.shape != shape or mu.shape != shape:
            raise ConfigError(f"pmf/mu must have shape {shape}")
        if pmf.min() < 0.0 or abs(pmf.sum() - 1.0) > 1e-12:
            raise ConfigError("joint pmf must be non-negative and sum to 1")
        if np.any(pmf.sum(axis=0) <= 0.0):
            raise ConfigError("every z level needs positive marginal mass")
        object.__setattr__(self, "joint_pmf", pmf)
        object.__setattr__(self, "mu_table", mu)

    @property
    def z_marginal(self) -> np.ndarray:
        return self.joint_pmf.sum(axis=0)

    def conditional_w_given_z(self, j: int) -> np.ndarray:
        return self.joint_pmf[:, j] / self.z_marginal[j]


def _stratum_tail_selection(mu: np.ndarray, cond: np.ndarray, alpha: float):
    """Greedy fractional top-(1-alpha) selection by mu within one stratum.

    Returns (stratum average of selected mu, per-cell inclusion fractions).
    """
    target = 1.0 - alpha
    order = np.argsort(-mu, kind="stable")
    frac = np.zeros(len(mu))
    remaining = target
    total = 0.0
    for i in order:
        if remaining <= 0.0:
            break
        take = min(remaining, cond[i])
        if cond[i] > 0.0:
            frac[i] = take / cond[i]
        total += take * mu[i]
        remaining -= take
    return total / target, frac


def exact_worst_case_discrete(instance: DiscreteInstance, alpha: float, return_fractions: bool = False):
    """Exact primal optimum: per-z greedy inclusion of the highest-mu cells.

    Fractional membership at the boundary cell is allowed (the selection
    function maps into [0, 1]), which is where the optimum lands whenever the
    (1-alpha) mass cuts through a cell.
    """
    if not 0.0 <= alpha < 1.0:
        raise DomainError("alpha must lie in [0, 1)")
    pz = instance.z_marginal
    value = 0.0
    fractions = np.zeros_like(instance.joint_pmf)
    for j in range(len(instance.z_levels)):
        avg, frac = _stratum_tail_selection(instance.mu_table[:, j], instance.conditional_w_given_z(j), alpha)
        value += pz[j] * avg
        fractions[:, j] = frac
    if return_fractions:
        return float(value), fractions
    return float(value)


def exact_dual_check(instance: DiscreteInstance, alpha: float) -> tuple[float, float]:
    """Primal enumeration and dual breakpoint minimization, returned together.

    The per-stratum dual objective is convex piecewise linear in the
    threshold, so its minimum sits on a breakpoint (a mu value).
    """
    primal = exact_worst_case_discrete(instance, alpha)
    pz = instance.z_marginal
    dual = 0.0
    for j in range(len(instance.z_levels)):
        mu = instance.mu_table[:, j]
        cond = instance.conditional_w_given_z(j)
        best = np.inf
        for eta in np.unique(mu):
            val = float(np.sum(cond * np.maximum(mu - eta, 0.0))) / (1.0 - alpha) + eta
            best = min(best, val)
        dual += pz[j] * best
    return primal, float(dual)


def _stratum_noise_threshold(mu: np.ndarray, cond: np.ndarray, alpha: float, epsilon: float) -> float:
    """Exact alpha-quantile of the mixture of uniform blocks [mu, mu+eps]."""
    if epsilon == 0.0:
        order = np.argsort(mu, kind="stable")
        cum = 0.0
        for i in order:
            cum += cond[i]
            if cum >= alpha - 1e-12:
                return float(mu[i])
        return float(mu[order[-1]])
    target = 1.0 - alpha

    def upper_mass(t: float) -> float:
        return float(np.sum(cond * np.clip((mu + epsilon - t) / epsilon, 0.0, 1.0)))

    bps = np.unique(np.concatenate([mu, mu + epsilon]))
    if target >= 1.0:
        return float(bps[0])
    for i in range(len(bps) - 1):
        hi_mass, lo_mass = upper_mass(bps[i]), upper_mass(bps[i + 1])
        if hi_mass >= target >= lo_mass:
            if hi_mass == lo_mass:
                return float(bps[i])
            return float(bps[i] + (hi_mass - target) * (bps[i + 1] - bps[i]) / (hi_mass - lo_mass))
    return float(bps[-1])


def _stratum_noisy_tail(mu: np.ndarray, cond: np.ndarray, alpha: float, epsilon: float) -> float:
    """Exact stratum average of mu + U over the worst (1-alpha) tail."""
    if epsilon == 0.0:
        avg, _ = _stratum_tail_selection(mu, cond, alpha)
        return avg
    t = _stratum_noise_threshold(mu, cond, alpha, epsilon)
    total = 0.0
    for m, p in zip(mu, cond):
        if t <= m:
            total += p * (m + 0.5 * epsilon)
        elif t < m + epsilon:
            mass = p * (m + epsilon - t) / epsilon
            total += mass * 0.5 * (t + m + epsilon)
    return total / (1.0 - alpha)


def exact_noisy_worst_case(instance: DiscreteInstance, alpha: float, epsilon: float) -> float:
    """Exact worst-case risk after adding independent Unif(0, eps) to mu.

    Each (w, z) cell contributes a uniform block of conditional mass on
    [mu, mu + eps]; the per-stratum threshold is the exact alpha-quantile of
    that mixture and the tail expectation integrates in closed form.
    """
    if not 0.0 <= alpha < 1.0:
        raise DomainError("alpha must lie in [0, 1)")
    if epsilon < 0.0:
        raise DomainError("epsilon must be >= 0")
    pz = instance.z_marginal
    value = 0.0
    for j in range(len(instance.z_levels)):
        value += pz[j] * _stratum_noisy_tail(
            instance.mu_table[:, j], instance.conditional_w_given_z(j), alpha, epsilon
        )
    return float(value)


def merge_immutable_into_mutable(instance: DiscreteInstance) -> DiscreteInstance:
    """Flatten (w, z) cells into a single mutable variable (one z stratum).

    The result drops the per-stratum constraint, i.e. it is the unconstrained
    (marginal shift) variant of the same distribution.
    """
    n_cells = len(instance.w_levels) * len(instance.z_levels)
    return DiscreteInstance(
        w_levels=tuple(range(n_cells)),
        z_levels=(0,),
        joint_pmf=instance.joint_pmf.reshape(-1, 1).copy(),
        mu_table=instance.mu_table.reshape(-1, 1).copy(),
        loss_noise=instance.loss_noise,
    )


def sample_discrete_instance(instance: DiscreteInstance, n: int, seed: int) -> TabularDataset:
    """Draw n iid rows, emitting categorical w/z codes and an observed loss.

    Cells are indexed w-major; losses follow instance.loss_noise around the
    per-cell conditional mean so the mean table stays the exact truth.
    """
    if n < 1:
        raise ConfigError("need n >= 1")
    noise = instance.loss_noise
    mu = instance.mu_table
    if noise == "auto":
        noise = "bernoulli" if (mu.min() >= 0.0 and mu.max() <= 1.0) else ("normal", 0.1)
    if noise == "bernoulli" and (mu.min() < 0.0 or mu.max() > 1.0):
        raise ConfigError("bernoulli loss noise needs mu in [0, 1]")

    rng = np.random.Generator(np.random.PCG64(seed))
    n_z = len(instance.z_levels)
    cells = rng.choice(mu.size, size=n, p=instance.joint_pmf.ravel())
    wi, zi = cells // n_z, cells % n_z
    mu_row = mu[wi, zi]
    if noise == "point":
        loss = mu_row.astype(np.float64)
    elif noise == "bernoulli":
        loss = (_seeded_uniforms(rng, n) < mu_row).astype(np.float64)
    else:
        kind, sd = noise
        if kind != "normal":
            raise ConfigError(f"unknown loss noise {noise!r}")
        loss = mu_row + sd * ndtri(_seeded_uniforms(rng, n))
    w_codes = np.asarray(instance.w_levels, dtype=np.int64)[wi]
    z_codes = np.asarray(instance.z_levels, dtype=np.int64)[zi]
    return TabularDataset(
        column_names=("w", "z", "loss"),
        columns=(w_codes, z_codes, loss),
        kinds=(CATEGORICAL, CATEGORICAL, NUMERIC),
    )


# --------------------------------------------------------------------------
# toy generator with a sinusoidal boundary
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ToySineConfig:
    """Two standard-normal features, label [x1 > sin(2 x2)], logistic scorer."""

    n: int
    seed: int
    classifier: tuple[float, float, float] = (0.0, 2.5, -0.75)
    clip_epsilon: float = 1e-12

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("need n >= 1")


def generate_toy_sine(config: ToySineConfig) -> TabularDataset:
    """Sample the toy distribution and score it with the supplied linear model.

    Emits x1, x2, the binary label y, the logistic prediction and its
    cross-entropy loss.
    """
    rng = np.random.Generator(np.random.PCG64(config.seed))
    x1 = seeded_normals(rng, config.n)
    x2 = seeded_normals(rng, config.n)
    y = (x1 > np.sin(2.0 * x2)).astype(np.int64)
    b0, b1, b2 = config.classifier
    pred = expit(b0 + b1 * x1 + b2 * x2)
    p_pos = np.clip(pred, config.clip_epsilon, 1.0 - config.clip_epsilon)
    p_neg = np.clip(1.0 - pred, config.clip_epsilon, 1.0 - config.clip_epsilon)
    loss = -(y * np.log(p_pos) + (1 - y) * np.log(p_neg))
    return TabularDataset(
        column_names=("x1", "x2", "y", "prediction", "loss"),
        columns=(x1, x2, y, pred, loss),
        kinds=(NUMERIC, NUMERIC, CATEGORICAL, NUMERIC, NUMERIC),
    )


# --------------------------------------------------------------------------
# shift-level / divergence-radius mapping
# --------------------------------------------------------------------------


def rho_from_alpha(alpha: float) -> float:
    """Divergence-ball radius equivalent to a subsample proportion: ln 1/(1-a)."""
    if not 0.0 <= alpha < 1.0:
        raise DomainError("alpha must lie in [0, 1)")
    return float(-np.log1p(-alpha))


def alpha_from_rho(rho: float) -> float:
    """Inverse mapping alpha = 1 - exp(-rho)."""
    if rho < 0.0:
        raise DomainError("rho must be >= 0")
    return float(-np.expm1(-rho))


# --------------------------------------------------------------------------
# oracle nuisance learners (exact plug-ins for validation runs)
# --------------------------------------------------------------------------


def _decode_levels(block: np.ndarray, levels: tuple[int, ...]) -> np.ndarray:
    """Map one-hot rows back to level positions (argmax over the block)."""
    if block.shape[1] != len(levels):
        raise ConfigError(f"one-hot block has {block.shape[1]} columns for {len(levels)} levels")
    return np.argmax(block, axis=1)


class OracleMuLearner:
    """Exact conditional expected loss for frames built as W={w}, Z={z}.

    Expects the frame's feature layout: one-hot w block (all instance levels
    observed) followed by the one-hot z block, or an empty z block when the
    instance has a single stratum.
    """

    def __init__(self, instance: DiscreteInstance):
        self.instance = instance

    def fit(self, features, targets):
        return _OracleMuModel(self.instance)


class _OracleMuModel:
    def __init__(self, instance: DiscreteInstance):
        self.instance = instance

    def predict(self, features) -> np.ndarray:
        inst = self.instance
        n_w, n_z = len(inst.w_levels), len(inst.z_levels)
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        wi = _decode_levels(features[:, :n_w], inst.w_levels)
        if features.shape[1] == n_w:
            if n_z != 1:
                raise ConfigError("frame has no z block but the instance has several strata")
            zi = np.zeros(len(features), dtype=np.int64)
        else:
            zi = _decode_levels(features[:, n_w:], inst.z_levels)
        return inst.mu_table[wi, zi]


class OracleEtaLearner:
    """Exact per-stratum selection threshold for the (possibly noisy) mixture.

    With epsilon > 0 the threshold is the alpha-quantile of the uniform-block
    mixture of mu + U given z; with epsilon = 0 it is the alpha-quantile of
    the discrete conditional distribution of mu given z. The epsilon passed
    here must match the estimator's resolved value.
    """

    def __init__(self, instance: DiscreteInstance, epsilon: float):
        self.instance = instance
        self.epsilon = float(epsilon)

    def fit(self, z_block, values, quantile_level: float):
        inst = self.instance
        thresholds = np.array(
            [
                _stratum_noise_threshold(
                    inst.mu_table[:, j], inst.conditional_w_given_z(j), quantile_level, self.epsilon
                )
                for j in range(len(inst.z_levels))
            ]
        )
        return _OracleEtaModel(inst, thresholds)


class _OracleEtaModel:
    def __init__(self, instance: DiscreteInstance, thresholds: np.ndarray):
        self.instance = instance
        self.thresholds = thresholds

    def predict(self, z_block) -> np.ndarray:
        z_block = np.atleast_2d(np.asarray(z_block, dtype=np.float64))
        if z_block.shape[1] == 0:
            if len(self.instance.z_levels) != 1:
                raise ConfigError("frame has no z block but the instance has several strata")
            return np.full(z_block.shape[0], self.thresholds[0])
        zi = _decode_levels(z_block, self.instance.z_levels)
        return self.thresholds[zi]


# --------------------------------------------------------------------------
# bundled instances and random instance generation
# --------------------------------------------------------------------------


def _lattice_instance() -> DiscreteInstance:
    pz = np.array([0.45, 0.35, 0.20])
    cond = np.array(
        [
            [0.40, 0.25, 0.30],
            [0.30, 0.35, 0.30],
            [0.20, 0.25, 0.25],
            [0.10, 0.15, 0.15],
        ]
    )
    mu = np.array(
        [
            [0.10, 0.15, 0.05],
            [0.30, 0.40, 0.25],
            [0.55, 0.65, 0.50],
            [0.80, 0.90, 0.75],
        ]
    )
    return DiscreteInstance(
        w_levels=(0, 1, 2, 3),
        z_levels=(0, 1, 2),
        joint_pmf=cond * pz[None, :],
        mu_table=mu,
    )


BUNDLED_INSTANCES = {
    "two-point": DiscreteInstance(
        w_levels=(0, 1),
        z_levels=(0,),
        joint_pmf=np.array([[0.5], [0.5]]),
        mu_table=np.array([[0.2], [0.8]]),
    ),
    "two-strata": DiscreteInstance(
        w_levels=(0, 1),
        z_levels=(0, 1),
        joint_pmf=np.array([[0.25, 0.25], [0.25, 0.25]]),
        mu_table=np.array([[0.0, 0.4], [1.0, 0.6]]),
    ),
    "lattice": _lattice_instance(),
}


def bundled_instance(name: str) -> DiscreteInstance:
    try:
        return BUNDLED_INSTANCES[name]
    except KeyError:
        raise ConfigError(
            f"unknown instance {name!r}; bundled: {sorted(BUNDLED_INSTANCES)}"
        ) from None


def random_instance(seed: int, max_w: int = 4, max_z: int = 3) -> DiscreteInstance:
    """Seeded random instance with floored cell masses and mu in [0.05, 0.95]."""
    rng = np.random.Generator(np.random.PCG64(seed))
    n_w = int(rng.integers(2, max_w + 1))
    n_z = int(rng.integers(1, max_z + 1))
    pmf = rng.random((n_w, n_z)) + 0.15
    pmf /= pmf.sum()
    mu = 0.05 + 0.9 * rng.random((n_w, n_z))
    return DiscreteInstance(
        w_levels=tuple(range(n_w)),
        z_levels=tuple(range(n_z)),
        joint_pmf=pmf,
        mu_table=mu,
    )
