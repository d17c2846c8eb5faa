import numpy as np
import pytest

from mmm.dataset import Categorical, Numeric, Schema, from_raw
from mmm.kernels import (
    CategoricalStats,
    NumericStats,
    categorical_log_marginal,
    normal_log_marginal,
)


def make_dataset(numeric=(), categorical=(), output=None, standardize=False):
    """Build a Dataset from raw numeric arrays and ``(codes, k)`` pairs."""
    columns, raw = [], []
    for c, values in enumerate(numeric):
        columns.append((f"x{c}", Numeric()))
        raw.append(np.asarray(values, dtype=float))
    for c, (codes, k) in enumerate(categorical):
        columns.append((f"c{c}", Categorical(tuple(str(v) for v in range(k)))))
        raw.append(np.asarray(codes, dtype=np.int64))
    return from_raw(Schema(tuple(columns), output), raw, standardize)


def ref_stats(dataset, rows):
    out = []
    for i in range(dataset.n_columns):
        col = dataset.columns[i][rows]
        if dataset.is_categorical(i):
            out.append(CategoricalStats.from_values(col.tolist(), dataset.schema.kind(i).k))
        else:
            out.append(NumericStats.from_values(col.tolist()))
    return out


def ref_log_lik(dataset, priors, assignment, K):
    total = 0.0
    for j in range(K):
        for s, p in zip(ref_stats(dataset, np.flatnonzero(assignment == j)), priors):
            if isinstance(s, CategoricalStats):
                total += categorical_log_marginal(s, p)
            else:
                total += normal_log_marginal(p, s)
    return total


@pytest.fixture
def two_blob():
    """20 rows: two well separated numeric blobs plus a noisy binary column."""
    rng = np.random.default_rng(7)
    truth = np.repeat([0, 1], 10)
    x = np.where(truth == 0, -2.0, 2.0) + 0.4 * rng.standard_normal(20)
    y = np.where(truth == 0, 1.0, -1.0) + 0.4 * rng.standard_normal(20)
    b = np.where(rng.random(20) < 0.8, truth, 1 - truth)
    return make_dataset([x, y], [(b, 2)], standardize=True), truth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
