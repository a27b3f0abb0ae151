import numpy as np
import pytest

import shiftrisk as sr


@pytest.fixture
def lattice():
    return sr.bundled_instance("lattice")


@pytest.fixture
def single_grid():
    """Degenerate tuning grid: one candidate per learner, so no search cost."""
    return sr.TuningGrid(gammas=(1.0,), ridge_lambdas=(1e-6,), quantile_lambdas=(1e-8,), inner_folds=5)


def lattice_frame(instance, n, seed, k_folds=5):
    ds = sr.sample_discrete_instance(instance, n, seed=seed)
    losses = sr.compute_losses(ds, sr.LossSpec(kind="precomputed", loss_column="loss"))
    folds = sr.assign_folds(ds.n_rows, k_folds, seed=seed)
    part = sr.VariablePartition(mutable_w=("w",), immutable_z=("z",))
    return sr.build_frame(ds, part, losses, folds)


@pytest.fixture
def make_instance_frame():
    return lattice_frame


def write_csv_text(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


@pytest.fixture
def csv_file(tmp_path):
    def _write(text, name="data.csv"):
        return write_csv_text(tmp_path / name, text)

    return _write
