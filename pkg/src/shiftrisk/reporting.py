"""Config-driven analysis runs, subsample characterization and report files.

An analysis is fully described by one declarative YAML file (dataset schema,
partition, loss, alpha grid, estimator settings, report options). Running it
produces machine-readable artifacts: results.json, curve.csv, h_indicators.csv
and tidy per-figure plot CSVs. Outputs are deterministic for a fixed config
and seed, independent of the thread count.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy.stats import wasserstein_distance

from .data import (
    EvaluationFrame,
    LossSpec,
    VariablePartition,
    assign_folds,
    build_frame,
    compute_losses,
    load_dataset,
)
from .errors import ConfigError, DomainError, EmptySubsample
from .estimator import EstimatorConfig, RiskCurve, WorstCaseEstimate, risk_curve
from .learners import SplineBasisConfig, TuningGrid

RESULTS_SCHEMA_VERSION = 1


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportOptions:
    characterize: bool = True
    outcome_column: str = "loss"
    comparison_loss_columns: tuple[str, ...] = ()


@dataclass(frozen=True)
class EstimatorSettings:
    """Estimator block of an analysis config (alpha comes from the grid)."""

    k_folds: int = 5
    seed: int = 0
    epsilon: float | None = None
    ci_level: float = 0.95
    max_support: int | None = 4096
    stratify_by_label: bool = False
    tuning: TuningGrid | None = None
    spline: SplineBasisConfig = field(default_factory=SplineBasisConfig)

    def to_estimator_config(self, alpha: float) -> EstimatorConfig:
        return EstimatorConfig(
            alpha=alpha,
            k_folds=self.k_folds,
            discrete_noise_epsilon=self.epsilon,
            ci_level=self.ci_level,
            seed=self.seed,
            tuning=self.tuning,
            spline=self.spline,
            max_support=self.max_support,
        )


@dataclass(frozen=True)
class AnalysisConfig:
    dataset_path: str
    schema: dict[str, str]
    partition: VariablePartition
    loss: LossSpec
    alpha_grid: tuple[float, ...]
    estimator: EstimatorSettings = field(default_factory=EstimatorSettings)
    report: ReportOptions = field(default_factory=ReportOptions)
    output_dir: str = "shiftrisk-out"

    def validate(self) -> None:
        """Cheap structural checks; runs before any data is read or fit."""
        names = set(self.schema)
        w, z, v = set(self.partition.mutable_w), set(self.partition.immutable_z), set(self.partition.dependent_v)
        if not w:
            raise ConfigError("partition: mutable set W must be non-empty")
        for a_name, a, b_name, b in (("W", w, "Z", z), ("W", w, "V", v), ("Z", z, "V", v)):
            overlap = sorted(a & b)
            if overlap:
                raise ConfigError(f"partition: {a_name} and {b_name} overlap on columns {overlap}")
        missing = sorted((w | z | v) - names)
        if missing:
            raise ConfigError(f"partition names {missing} not in the schema")
        for col in (self.loss.prediction_column, self.loss.label_column, self.loss.loss_column):
            if col is not None and col not in names:
                raise ConfigError(f"loss column {col!r} not in the schema")
        if not self.alpha_grid:
            raise ConfigError("alpha_grid must be non-empty")
        if any(not 0.0 <= a < 1.0 for a in self.alpha_grid):
            raise ConfigError("alpha_grid values must lie in [0, 1)")
        if any(b <= a for a, b in zip(self.alpha_grid, self.alpha_grid[1:])):
            raise ConfigError("alpha_grid must be strictly increasing")
        if self.report.outcome_column != "loss" and self.report.outcome_column not in names:
            raise ConfigError(f"outcome column {self.report.outcome_column!r} not in the schema")
        for col in self.report.comparison_loss_columns:
            if col not in names:
                raise ConfigError(f"comparison column {col!r} not in the schema")
        if self.estimator.stratify_by_label and self.loss.label_column is None:
            raise ConfigError("stratified folds need a label column in the loss spec")
        # range checks shared with the estimator
        self.estimator.to_estimator_config(alpha=self.alpha_grid[-1])


def _expect_mapping(obj, where: str) -> dict:
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be a mapping")
    return obj


def _check_keys(raw: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys {unknown} in {where}")


def load_analysis_config(
    path,
    out: str | None = None,
    seed: int | None = None,
    alpha_grid=None,
    base_dir: str | None = None,
) -> AnalysisConfig:
    """Parse a YAML analysis config, applying CLI overrides.

    Relative dataset/output paths resolve against the config file directory.
    """
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    raw = _expect_mapping(raw, "config")
    _check_keys(raw, {"dataset", "partition", "loss", "alpha_grid", "estimator", "report", "output_dir"}, "config")
    base = base_dir if base_dir is not None else os.path.dirname(os.path.abspath(path))

    ds = _expect_mapping(raw.get("dataset"), "dataset")
    _check_keys(ds, {"path", "schema"}, "dataset")
    if "path" not in ds or "schema" not in ds:
        raise ConfigError("dataset needs 'path' and 'schema'")
    schema = {str(k): str(v) for k, v in _expect_mapping(ds["schema"], "dataset.schema").items()}
    dataset_path = ds["path"]
    if not os.path.isabs(dataset_path):
        dataset_path = os.path.normpath(os.path.join(base, dataset_path))

    part = _expect_mapping(raw.get("partition"), "partition")
    _check_keys(part, {"mutable", "immutable", "dependent"}, "partition")
    partition = VariablePartition(
        mutable_w=tuple(part.get("mutable") or ()),
        immutable_z=tuple(part.get("immutable") or ()),
        dependent_v=tuple(part.get("dependent") or ()),
    )

    lo = _expect_mapping(raw.get("loss"), "loss")
    _check_keys(lo, {"kind", "prediction_column", "label_column", "loss_column", "clip_epsilon"}, "loss")
    if "kind" not in lo:
        raise ConfigError("loss needs a 'kind'")
    loss = LossSpec(
        kind=lo["kind"],
        prediction_column=lo.get("prediction_column"),
        label_column=lo.get("label_column"),
        loss_column=lo.get("loss_column"),
        clip_epsilon=float(lo.get("clip_epsilon", 1e-12)),
    )

    grid = alpha_grid if alpha_grid is not None else raw.get("alpha_grid")
    if grid is None:
        raise ConfigError("config needs an alpha_grid")
    grid = tuple(float(a) for a in grid)

    est = _expect_mapping(raw.get("estimator"), "estimator")
    _check_keys(
        est,
        {"k_folds", "seed", "epsilon", "ci_level", "max_support", "stratify_by_label", "tuning", "spline"},
        "estimator",
    )
    tuning = None
    if est.get("tuning") is not None:
        tu = _expect_mapping(est["tuning"], "estimator.tuning")
        _check_keys(tu, {"gammas", "ridge_lambdas", "quantile_lambdas", "inner_folds", "tuning_seed"}, "estimator.tuning")
        tuning = TuningGrid(
            gammas=tuple(float(g) for g in (tu.get("gammas") or ())),
            ridge_lambdas=tuple(float(v) for v in (tu.get("ridge_lambdas") or ())),
            quantile_lambdas=tuple(float(v) for v in (tu.get("quantile_lambdas") or ())),
            inner_folds=int(tu.get("inner_folds", 5)),
            seed=int(tu.get("tuning_seed", est.get("seed", 0))),
        )
    spline = SplineBasisConfig()
    if est.get("spline") is not None:
        sp = _expect_mapping(est["spline"], "estimator.spline")
        _check_keys(sp, {"degree", "knots_per_column", "interaction_columns"}, "estimator.spline")
        spline = SplineBasisConfig(
            degree=int(sp.get("degree", 3)),
            knots_per_column=int(sp.get("knots_per_column", 5)),
            interaction_columns=tuple(sp.get("interaction_columns") or ()),
        )
    eps = est.get("epsilon")
    settings = EstimatorSettings(
        k_folds=int(est.get("k_folds", 5)),
        seed=int(seed if seed is not None else est.get("seed", 0)),
        epsilon=None if eps is None else float(eps),
        ci_level=float(est.get("ci_level", 0.95)),
        max_support=None if est.get("max_support", 4096) is None else int(est.get("max_support", 4096)),
        stratify_by_label=bool(est.get("stratify_by_label", False)),
        tuning=tuning,
        spline=spline,
    )

    rep = _expect_mapping(raw.get("report"), "report")
    _check_keys(rep, {"characterize", "outcome_column", "comparison_loss_columns"}, "report")
    report = ReportOptions(
        characterize=bool(rep.get("characterize", True)),
        outcome_column=str(rep.get("outcome_column", "loss")),
        comparison_loss_columns=tuple(rep.get("comparison_loss_columns") or ()),
    )

    output_dir = out if out is not None else raw.get("output_dir", "shiftrisk-out")
    if not os.path.isabs(output_dir):
        output_dir = os.path.normpath(os.path.join(base, output_dir))

    return AnalysisConfig(
        dataset_path=dataset_path,
        schema=schema,
        partition=partition,
        loss=loss,
        alpha_grid=grid,
        estimator=settings,
        report=report,
        output_dir=output_dir,
    )


# --------------------------------------------------------------------------
# subsample characterization
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SubsampleReport:
    """Composition of one worst-case subsample versus the full sample."""

    alpha: float
    subsample_size: int
    mutable_rates: dict[str, tuple[float, float]]  # name -> (inside, outside)
    immutable_marginal_distance: dict[str, float]  # source z column -> distance
    within_subsample_correlations: dict[str, float | None]
    undefined_correlations: tuple[str, ...] = ()


def _resolve_outcome(frame: EvaluationFrame, outcome) -> np.ndarray:
    if isinstance(outcome, str):
        return np.asarray(frame.column_values(outcome), dtype=np.float64)
    values = np.asarray(outcome, dtype=np.float64)
    if len(values) != frame.n_rows:
        raise DomainError("outcome values must have one entry per row")
    return values


def characterize_subsample(frame: EvaluationFrame, h_indicators, outcome, alpha: float = float("nan")) -> SubsampleReport:
    """Mutable rates, immutable marginal distances and within-subsample correlations.

    ``outcome`` is a frame column name (expanded W/Z names or "loss") or a
    value array. Numeric immutable marginals are compared by 1-Wasserstein
    distance, categorical ones by total variation over their one-hot levels.
    Correlations are flagged undefined when either side is constant inside
    the subsample.
    """
    h = np.asarray(h_indicators).astype(bool)
    if len(h) != frame.n_rows:
        raise DomainError("h indicators must have one entry per row")
    if not h.any():
        raise EmptySubsample("worst-case subsample is empty")
    outcome_values = _resolve_outcome(frame, outcome)

    rates: dict[str, tuple[float, float]] = {}
    for j, name in enumerate(frame.w_names):
        col = frame.w_block[:, j]
        inside = float(col[h].mean())
        outside = float(col[~h].mean()) if (~h).any() else float("nan")
        rates[name] = (inside, outside)

    distances: dict[str, float] = {}
    for group in frame.z_groups:
        if group.categorical:
            block = frame.z_block[:, list(group.indices)]
            dist = 0.5 * float(np.abs(block[h].mean(axis=0) - block.mean(axis=0)).sum())
        else:
            col = frame.z_block[:, group.indices[0]]
            dist = float(wasserstein_distance(col[h], col))
        distances[group.source] = dist

    corrs: dict[str, float | None] = {}
    undefined: list[str] = []
    out_in = outcome_values[h]
    for j, name in enumerate(frame.w_names):
        col = frame.w_block[h, j]
        if np.ptp(col) == 0.0 or np.ptp(out_in) == 0.0:
            corrs[name] = None
            undefined.append(name)
        else:
            corrs[name] = float(np.corrcoef(col, out_in)[0, 1])

    return SubsampleReport(
        alpha=float(alpha),
        subsample_size=int(h.sum()),
        mutable_rates=rates,
        immutable_marginal_distance=distances,
        within_subsample_correlations=corrs,
        undefined_correlations=tuple(undefined),
    )


def compare_on_subsamples(frame: EvaluationFrame, h_indicators, alternative_loss) -> float:
    """Mean of an alternative loss over the rows the subsample selects."""
    h = np.asarray(h_indicators).astype(bool)
    if not h.any():
        raise EmptySubsample("worst-case subsample is empty")
    values = _resolve_outcome(frame, alternative_loss)
    if not np.all(np.isfinite(values)):
        raise DomainError("alternative loss values must be finite")
    return float(values[h].mean())


# --------------------------------------------------------------------------
# artifact writing
# --------------------------------------------------------------------------


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


def _atomic_write(path: str, data: str) -> None:
    directory = os.path.dirname(path)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_plot_data(curve: RiskCurve, out_dir: str) -> list[str]:
    """Write one tidy CSV per figure type; returns the written paths.

    plot_risk_vs_alpha.csv:        alpha,r_hat,ci_lo,ci_hi
    plot_mutable_rate_vs_alpha.csv: alpha,column,rate_inside,rate_outside
    plot_correlation_vs_alpha.csv: alpha,column,correlation ('' if undefined)
    """
    if not curve.estimates:
        raise ConfigError("risk curve is empty")
    os.makedirs(out_dir, exist_ok=True)
    order = np.argsort(curve.alpha_grid, kind="stable")
    written = []

    lines = ["alpha,r_hat,ci_lo,ci_hi"]
    for i in order:
        est = curve.estimates[i]
        lines.append(f"{_fmt(est.alpha)},{_fmt(est.r_hat)},{_fmt(est.ci[0])},{_fmt(est.ci[1])}")
    path = os.path.join(out_dir, "plot_risk_vs_alpha.csv")
    _atomic_write(path, "\n".join(lines) + "\n")
    written.append(path)

    lines = ["alpha,column,rate_inside,rate_outside"]
    for i in order:
        if i < len(curve.reports):
            rep = curve.reports[i]
            for name in sorted(rep.mutable_rates):
                inside, outside = rep.mutable_rates[name]
                lines.append(f"{_fmt(rep.alpha)},{name},{_fmt(inside)},{_fmt(outside)}")
    path = os.path.join(out_dir, "plot_mutable_rate_vs_alpha.csv")
    _atomic_write(path, "\n".join(lines) + "\n")
    written.append(path)

    lines = ["alpha,column,correlation"]
    for i in order:
        if i < len(curve.reports):
            rep = curve.reports[i]
            for name in sorted(rep.within_subsample_correlations):
                c = rep.within_subsample_correlations[name]
                lines.append(f"{_fmt(rep.alpha)},{name},{'' if c is None else _fmt(c)}")
    path = os.path.join(out_dir, "plot_correlation_vs_alpha.csv")
    _atomic_write(path, "\n".join(lines) + "\n")
    written.append(path)
    return written


def _config_echo(config: AnalysisConfig) -> dict:
    echo = dataclasses.asdict(config)
    tuning = echo["estimator"]["tuning"]
    echo["estimator"]["tuning"] = tuning if tuning is not None else None
    return _jsonify(echo)


def _estimate_entry(est: WorstCaseEstimate) -> dict:
    return {
        "alpha": est.alpha,
        "r_hat": est.r_hat,
        "sigma2_hat": est.sigma2_hat,
        "ci_lower": est.ci[0],
        "ci_upper": est.ci[1],
        "epsilon_used": est.epsilon_used,
        "subsample_size": est.subsample_size,
    }


def _report_entry(rep: SubsampleReport) -> dict:
    return {
        "alpha": rep.alpha,
        "subsample_size": rep.subsample_size,
        "mutable_rates": {k: {"inside": v[0], "outside": v[1]} for k, v in rep.mutable_rates.items()},
        "immutable_marginal_distance": rep.immutable_marginal_distance,
        "within_subsample_correlations": rep.within_subsample_correlations,
        "undefined_correlations": list(rep.undefined_correlations),
    }


def run_analysis(config: AnalysisConfig, threads: int = 1) -> RiskCurve:
    """Validate, estimate the full risk curve and persist all artifacts.

    Writes results.json, curve.csv, h_indicators.csv and the plot CSVs into
    config.output_dir; every file lands via an atomic rename after all
    computation has finished.
    """
    config.validate()
    dataset = load_dataset(config.dataset_path, config.schema)
    losses = compute_losses(dataset, config.loss)
    stratify = dataset.column(config.loss.label_column) if config.estimator.stratify_by_label else None
    folds = assign_folds(dataset.n_rows, config.estimator.k_folds, config.estimator.seed, stratify_labels=stratify)
    frame = build_frame(dataset, config.partition, losses, folds)

    est_config = config.estimator.to_estimator_config(alpha=config.alpha_grid[-1])
    curve = risk_curve(frame, config.alpha_grid, est_config, threads=threads)

    if config.report.outcome_column == "loss":
        outcome_values = losses
    else:
        outcome_values = np.asarray(dataset.column(config.report.outcome_column), dtype=np.float64)

    reports = ()
    if config.report.characterize:
        reports = tuple(
            characterize_subsample(frame, est.h_indicators, outcome_values, alpha=est.alpha)
            for est in curve.estimates
        )
    comparisons = None
    if config.report.comparison_loss_columns:
        comparisons = {}
        for col in config.report.comparison_loss_columns:
            values = np.asarray(dataset.column(col), dtype=np.float64)
            comparisons[col] = [compare_on_subsamples(frame, est.h_indicators, values) for est in curve.estimates]
    curve = dataclasses.replace(curve, reports=reports, comparison_curves=comparisons)

    out_dir = config.output_dir
    os.makedirs(out_dir, exist_ok=True)

    results = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "config": _config_echo(config),
        "curve": [_estimate_entry(est) for est in curve.estimates],
        "reports": [_report_entry(rep) for rep in reports],
        "comparison_curves": _jsonify(comparisons) if comparisons else None,
    }
    _atomic_write(os.path.join(out_dir, "results.json"), json.dumps(results, sort_keys=True, indent=2) + "\n")

    lines = ["alpha,r_hat,ci_lo,ci_hi,sigma2"]
    for est in curve.estimates:
        lines.append(f"{_fmt(est.alpha)},{_fmt(est.r_hat)},{_fmt(est.ci[0])},{_fmt(est.ci[1])},{_fmt(est.sigma2_hat)}")
    _atomic_write(os.path.join(out_dir, "curve.csv"), "\n".join(lines) + "\n")

    lines = ["row_id,alpha,h"]
    for est in curve.estimates:
        a = _fmt(est.alpha)
        for rid, h in zip(frame.row_ids, est.h_indicators):
            lines.append(f"{rid},{a},{int(h)}")
    _atomic_write(os.path.join(out_dir, "h_indicators.csv"), "\n".join(lines) + "\n")

    emit_plot_data(curve, out_dir)
    return curve
