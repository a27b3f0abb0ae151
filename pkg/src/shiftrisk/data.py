"""Tabular ingestion, per-row losses, variable partitions and fold assignment.

Datasets are immutable column stores: numeric columns are float64, categorical
columns are int64 level codes. Missing values are rejected at ingestion; if
missingness is informative it must arrive as explicit indicator columns.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DomainError,
    EmptyDataset,
    ParseError,
    PartitionError,
    SchemaMismatch,
)

NUMERIC = "numeric"
CATEGORICAL = "categorical"

LOSS_KINDS = ("zero_one", "binary_cross_entropy", "squared_error", "precomputed")


@dataclass(frozen=True)
class TabularDataset:
    """Column-oriented dataset with per-column kind tags."""

    column_names: tuple[str, ...]
    columns: tuple[np.ndarray, ...]
    kinds: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.column_names)) != len(self.column_names):
            raise SchemaMismatch("duplicate column names")
        if not (len(self.column_names) == len(self.columns) == len(self.kinds)):
            raise SchemaMismatch("column metadata lengths disagree")
        lengths = {len(c) for c in self.columns}
        if len(lengths) > 1:
            raise SchemaMismatch(f"ragged columns: lengths {sorted(lengths)}")
        for name, col, kind in zip(self.column_names, self.columns, self.kinds):
            if kind not in (NUMERIC, CATEGORICAL):
                raise SchemaMismatch(f"unknown kind {kind!r} for column {name!r}")
            if kind == NUMERIC and not np.all(np.isfinite(col)):
                raise DomainError(f"non-finite value in numeric column {name!r}")

    @property
    def n_rows(self) -> int:
        return 0 if not self.columns else len(self.columns[0])

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[self.column_names.index(name)]
        except ValueError:
            raise SchemaMismatch(f"no column named {name!r}") from None

    def kind(self, name: str) -> str:
        try:
            return self.kinds[self.column_names.index(name)]
        except ValueError:
            raise SchemaMismatch(f"no column named {name!r}") from None


@dataclass(frozen=True)
class VariablePartition:
    """Declared split of columns into immutable (Z), mutable (W) and dependent (V)."""

    mutable_w: tuple[str, ...]
    immutable_z: tuple[str, ...] = ()
    dependent_v: tuple[str, ...] = ()

    def validate(self, dataset: TabularDataset) -> None:
        if not self.mutable_w:
            raise PartitionError("mutable set W must be non-empty")
        w, z, v = set(self.mutable_w), set(self.immutable_z), set(self.dependent_v)
        for a_name, a, b_name, b in (
            ("W", w, "Z", z),
            ("W", w, "V", v),
            ("Z", z, "V", v),
        ):
            overlap = sorted(a & b)
            if overlap:
                raise PartitionError(f"{a_name} and {b_name} overlap on columns {overlap}")
        known = set(dataset.column_names)
        missing = sorted((w | z | v) - known)
        if missing:
            raise PartitionError(f"partition names {missing} not in dataset")


@dataclass(frozen=True)
class LossSpec:
    """How per-row losses are obtained from dataset columns."""

    kind: str
    prediction_column: str | None = None
    label_column: str | None = None
    loss_column: str | None = None
    clip_epsilon: float = 1e-12

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if not 0.0 < self.clip_epsilon < 0.5:
            raise ConfigError("clip_epsilon must lie in (0, 0.5)")
        if self.kind == "precomputed":
            if self.loss_column is None or self.prediction_column or self.label_column:
                raise ConfigError("precomputed loss takes exactly loss_column")
        else:
            if self.loss_column is not None:
                raise ConfigError("loss_column is only valid for kind='precomputed'")
            if self.prediction_column is None or self.label_column is None:
                raise ConfigError(f"loss kind {self.kind!r} needs prediction and label columns")


@dataclass(frozen=True)
class FoldAssignment:
    """Cross-fitting fold labels derived from a seeded permutation."""

    k_folds: int
    seed: int
    fold_id: np.ndarray

    def __post_init__(self):
        counts = np.bincount(self.fold_id, minlength=self.k_folds)
        if len(counts) != self.k_folds or counts.min() == 0:
            raise ConfigError("fold ids must cover exactly 0..k-1")
        if counts.max() - counts.min() > 1:
            raise ConfigError("fold sizes may differ by at most one row")


@dataclass(frozen=True)
class ColumnGroup:
    """Maps a source column to its (possibly one-hot expanded) block columns."""

    source: str
    indices: tuple[int, ...]
    categorical: bool
    levels: tuple[int, ...] = ()


@dataclass(frozen=True)
class EvaluationFrame:
    """The estimator's sole input: losses, W/Z blocks and fold labels."""

    losses: np.ndarray
    w_block: np.ndarray
    z_block: np.ndarray
    fold_id: np.ndarray
    row_ids: np.ndarray
    w_names: tuple[str, ...]
    z_names: tuple[str, ...]
    w_groups: tuple[ColumnGroup, ...] = ()
    z_groups: tuple[ColumnGroup, ...] = ()

    def __post_init__(self):
        n = len(self.losses)
        if not (self.w_block.shape[0] == self.z_block.shape[0] == len(self.fold_id) == len(self.row_ids) == n):
            raise DomainError("frame arrays disagree on row count")
        if not np.all(np.isfinite(self.losses)):
            raise DomainError("losses must be finite")
        if self.k_folds < 2:
            raise ConfigError("frames need at least 2 folds")

    @property
    def n_rows(self) -> int:
        return len(self.losses)

    @property
    def k_folds(self) -> int:
        return int(self.fold_id.max()) + 1

    def features_wz(self) -> np.ndarray:
        """Concatenated [W | Z] feature matrix driving the loss regression."""
        return np.hstack([self.w_block, self.z_block])

    def column_values(self, name: str) -> np.ndarray:
        """Look up an expanded block column or 'loss' by name."""
        if name == "loss":
            return self.losses
        if name in self.w_names:
            return self.w_block[:, self.w_names.index(name)]
        if name in self.z_names:
            return self.z_block[:, self.z_names.index(name)]
        raise SchemaMismatch(f"no frame column named {name!r}")


def load_dataset(path, schema: dict[str, str]) -> TabularDataset:
    """Parse an RFC-4180 CSV whose header exactly matches the schema names.

    Numeric cells parse with a dot decimal separator regardless of locale;
    categorical cells parse as integer level codes.
    """
    for name, kind in schema.items():
        if kind not in (NUMERIC, CATEGORICAL):
            raise ConfigError(f"schema kind for {name!r} must be 'numeric' or 'categorical'")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataset(f"{path}: file is empty") from None
        declared = set(schema)
        present = set(header)
        if declared != present:
            missing = sorted(declared - present)
            extra = sorted(present - declared)
            raise SchemaMismatch(f"header mismatch: missing={missing} extra={extra}")
        raw = [[] for _ in header]
        n_rows = 0
        for r, rec in enumerate(reader):
            if len(rec) != len(header):
                raise ParseError(r, header[min(len(rec), len(header) - 1)], "wrong field count")
            for j, cell in enumerate(rec):
                raw[j].append(cell)
            n_rows += 1
    if n_rows == 0:
        raise EmptyDataset(f"{path}: no data rows")

    columns = []
    kinds = []
    for j, name in enumerate(header):
        kind = schema[name]
        kinds.append(kind)
        if kind == NUMERIC:
            out = np.empty(n_rows)
            for r, cell in enumerate(raw[j]):
                try:
                    out[r] = float(cell)
                except ValueError:
                    raise ParseError(r, name, f"not numeric: {cell!r}") from None
                if not np.isfinite(out[r]):
                    raise ParseError(r, name, f"non-finite value: {cell!r}")
        else:
            out = np.empty(n_rows, dtype=np.int64)
            for r, cell in enumerate(raw[j]):
                try:
                    out[r] = int(cell)
                except ValueError:
                    raise ParseError(r, name, f"not an integer code: {cell!r}") from None
        columns.append(out)
    return TabularDataset(tuple(header), tuple(columns), tuple(kinds))


def write_csv(dataset: TabularDataset, path) -> None:
    """Write a dataset back to CSV so that load_dataset round-trips exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.column_names)
        for r in range(dataset.n_rows):
            row = []
            for col, kind in zip(dataset.columns, dataset.kinds):
                row.append(repr(float(col[r])) if kind == NUMERIC else str(int(col[r])))
            writer.writerow(row)


def compute_losses(dataset: TabularDataset, spec: LossSpec) -> np.ndarray:
    """Per-row losses for the configured loss kind.

    zero_one compares integer codes for exact equality, so binary and
    multiclass labels behave identically.
    """
    if spec.kind == "precomputed":
        losses = np.asarray(dataset.column(spec.loss_column), dtype=np.float64).copy()
        if not np.all(np.isfinite(losses)):
            raise DomainError(f"precomputed loss column {spec.loss_column!r} has non-finite values")
        return losses

    pred = dataset.column(spec.prediction_column)
    label = dataset.column(spec.label_column)
    if spec.kind == "zero_one":
        if dataset.kind(spec.prediction_column) != CATEGORICAL or dataset.kind(spec.label_column) != CATEGORICAL:
            raise DomainError("zero_one loss needs categorical prediction and label codes")
        return (pred != label).astype(np.float64)
    if spec.kind == "squared_error":
        diff = np.asarray(pred, dtype=np.float64) - np.asarray(label, dtype=np.float64)
        return diff * diff
    # binary cross-entropy
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    if p.min() < 0.0 or p.max() > 1.0:
        raise DomainError("cross-entropy predictions must lie in [0, 1]")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DomainError("cross-entropy labels must be 0 or 1")
    # clamp both branches directly so losses stay within [0, -ln(clip_epsilon)]
    p_pos = np.clip(p, spec.clip_epsilon, 1.0 - spec.clip_epsilon)
    p_neg = np.clip(1.0 - p, spec.clip_epsilon, 1.0 - spec.clip_epsilon)
    return -(y * np.log(p_pos) + (1.0 - y) * np.log(p_neg))


def assign_folds(n: int, k: int, seed: int, stratify_labels=None) -> FoldAssignment:
    """Chunk a seeded uniform permutation of n rows into k near-equal folds.

    With ``stratify_labels`` the permuted rows are dealt round-robin within
    each label group, so rare labels spread across folds.
    """
    if k < 2 or k > n:
        raise ConfigError(f"need 2 <= k <= n, got k={k}, n={n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(n)
    fold_id = np.empty(n, dtype=np.int64)
    if stratify_labels is None:
        base, extra = divmod(n, k)
        start = 0
        for f in range(k):
            size = base + (1 if f < extra else 0)
            fold_id[perm[start : start + size]] = f
            start += size
    else:
        labels = np.asarray(stratify_labels)
        if len(labels) != n:
            raise ConfigError("stratify labels must have one entry per row")
        counter = 0
        for lab in np.unique(labels):
            rows = perm[labels[perm] == lab]
            for i, r in enumerate(rows):
                fold_id[r] = (counter + i) % k
            counter += len(rows)
    return FoldAssignment(k_folds=k, seed=seed, fold_id=fold_id)


def _expand_block(dataset: TabularDataset, names: tuple[str, ...]):
    """One-hot expand categorical columns, keep numeric columns as-is."""
    mats = []
    out_names: list[str] = []
    groups: list[ColumnGroup] = []
    for name in names:
        col = dataset.column(name)
        if dataset.kind(name) == CATEGORICAL:
            levels = tuple(int(v) for v in np.unique(col))
            block = np.zeros((dataset.n_rows, len(levels)))
            idx = []
            for i, level in enumerate(levels):
                block[:, i] = col == level
                idx.append(len(out_names))
                out_names.append(f"{name}={level}")
            mats.append(block)
            groups.append(ColumnGroup(name, tuple(idx), True, levels))
        else:
            mats.append(np.asarray(col, dtype=np.float64).reshape(-1, 1))
            groups.append(ColumnGroup(name, (len(out_names),), False))
            out_names.append(name)
    block = np.hstack(mats) if mats else np.zeros((dataset.n_rows, 0))
    return block, tuple(out_names), tuple(groups)


def build_frame(
    dataset: TabularDataset,
    partition: VariablePartition,
    losses: np.ndarray,
    folds: FoldAssignment,
) -> EvaluationFrame:
    """Assemble the estimator input, preserving dataset row order."""
    partition.validate(dataset)
    losses = np.asarray(losses, dtype=np.float64)
    if len(losses) != dataset.n_rows:
        raise DomainError(f"{len(losses)} losses for {dataset.n_rows} rows")
    if len(folds.fold_id) != dataset.n_rows:
        raise ConfigError("fold assignment does not match dataset size")
    w_block, w_names, w_groups = _expand_block(dataset, partition.mutable_w)
    z_block, z_names, z_groups = _expand_block(dataset, partition.immutable_z)
    return EvaluationFrame(
        losses=losses,
        w_block=w_block,
        z_block=z_block,
        fold_id=np.asarray(folds.fold_id, dtype=np.int64),
        row_ids=np.arange(dataset.n_rows, dtype=np.int64),
        w_names=w_names,
        z_names=z_names,
        w_groups=w_groups,
        z_groups=z_groups,
    )
