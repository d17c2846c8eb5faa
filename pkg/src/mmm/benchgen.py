"""Synthetic clustering benchmarks with planted ground truth.

Four kinds of table are produced:

* ``categorical`` -- per cluster, each column's distribution is
  ``softmax(log v0 + delta * v_j)`` with ``v0`` shared and ``v_j`` a
  zero-sum unit-norm perturbation drawn per cluster and column.
* ``numeric-diffmean`` -- cluster ``j`` has mean ``j`` and standard
  deviation ``0.5 + j * delta_sigma / 5`` in every column.
* ``numeric-samemean`` -- as above but all means are zero.
* ``mixed`` -- numeric-diffmean and 4-valued categorical columns, with
  ``delta_sigma = 5 - delta`` unless given.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import (
    Categorical,
    Dataset,
    Numeric,
    Schema,
    design_matrix,
    from_raw,
    write_csv,
    write_schema,
)

KINDS = ("categorical", "numeric-diffmean", "numeric-samemean", "mixed")
BASE_STD = 0.5
MEAN_SPACING = 1.0

# (numeric, binary, 4-valued) columns per kind
_DEFAULT_COLUMNS = {
    "categorical": (0, 5, 5),
    "numeric-diffmean": (10, 0, 0),
    "numeric-samemean": (10, 0, 0),
    "mixed": (5, 0, 5),
}


@dataclass(frozen=True)
class BenchSpec:
    kind: str = "mixed"
    n_rows: int = 5000
    ratios: tuple[float, ...] = (5, 4, 3, 2, 1)
    delta: float = 2.5
    delta_sigma: Optional[float] = None
    n_numeric: Optional[int] = None
    n_binary: Optional[int] = None
    n_quaternary: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown benchmark kind {self.kind!r}; choose from {KINDS}")
        if self.n_rows < 1:
            raise ValueError("n_rows must be positive")
        if not self.ratios or any(not r > 0 for r in self.ratios):
            raise ValueError(f"ratio weights must be positive, got {self.ratios}")
        if self.delta < 0 or (self.delta_sigma is not None and self.delta_sigma < 0):
            raise ValueError("delta and delta_sigma must be non-negative")
        if self.kind == "mixed" and self.delta > 5.0 and self.delta_sigma is None:
            raise ValueError("mixed benchmarks need delta <= 5 when delta_sigma is derived")
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        for n in self.columns:
            if n < 0:
                raise ValueError("column counts must be non-negative")
        if sum(self.columns) == 0:
            raise ValueError("benchmark has no columns")

    @property
    def columns(self) -> tuple[int, int, int]:
        num, binary, quat = _DEFAULT_COLUMNS[self.kind]
        return (
            num if self.n_numeric is None else self.n_numeric,
            binary if self.n_binary is None else self.n_binary,
            quat if self.n_quaternary is None else self.n_quaternary,
        )

    @property
    def sigma_spacing(self) -> float:
        if self.delta_sigma is not None:
            return self.delta_sigma
        return 5.0 - self.delta if self.kind == "mixed" else 0.5

    @property
    def n_clusters(self) -> int:
        return len(self.ratios)


def apportion(n: int, weights) -> np.ndarray:
    """Split ``n`` into integer parts proportional to ``weights`` (largest remainder)."""
    w = np.asarray(weights, dtype=float)
    quotas = n * w / w.sum()
    sizes = np.floor(quotas).astype(np.int64)
    remainder = quotas - sizes
    order = np.lexsort((np.arange(w.size), -remainder))
    sizes[order[: n - int(sizes.sum())]] += 1
    return sizes


def _perturbation(rng: np.random.Generator, k: int) -> np.ndarray:
    z = rng.standard_normal(k)
    z -= z.mean()
    return z / np.linalg.norm(z)


def category_distributions(rng: np.random.Generator, k: int, n_clusters: int, delta: float) -> np.ndarray:
    """Per-cluster probability vectors (rows) for one categorical column."""
    log_v0 = np.log(rng.dirichlet(np.ones(k)))
    out = np.empty((n_clusters, k))
    for j in range(n_clusters):
        logits = log_v0 + delta * _perturbation(rng, k)
        logits -= logits.max()
        p = np.exp(logits)
        out[j] = p / p.sum()
    return out


def gen_benchmark(spec: BenchSpec) -> tuple[Dataset, np.ndarray]:
    """Generate a dataset and its true cluster labels (aligned to rows)."""
    rng = np.random.default_rng(spec.seed)
    sizes = apportion(spec.n_rows, spec.ratios)
    labels = np.repeat(np.arange(spec.n_clusters), sizes)
    n_num, n_bin, n_quat = spec.columns
    columns: list[tuple[str, object]] = []
    raw: list[np.ndarray] = []

    j = np.arange(spec.n_clusters)
    means = np.zeros(spec.n_clusters) if spec.kind == "numeric-samemean" else MEAN_SPACING * j
    stds = BASE_STD + j * spec.sigma_spacing / 5.0
    for c in range(n_num):
        columns.append((f"num{c}", Numeric()))
        raw.append(means[labels] + stds[labels] * rng.standard_normal(spec.n_rows))

    for c, k in enumerate([2] * n_bin + [4] * n_quat):
        probs = category_distributions(rng, k, spec.n_clusters, spec.delta)
        u = rng.random(spec.n_rows)
        codes = (u[:, None] >= np.cumsum(probs[labels], axis=1)).sum(axis=1)
        columns.append((f"cat{c}", Categorical(tuple(str(v) for v in range(k)))))
        raw.append(np.minimum(codes, k - 1))

    perm = rng.permutation(spec.n_rows)
    schema = Schema(tuple(columns))
    return from_raw(schema, [r[perm] for r in raw]), labels[perm]


def add_linear_output(
    dataset: Dataset,
    seed=None,
    strength: float = 1.0,
    name: str = "outcome",
) -> tuple[Dataset, np.ndarray]:
    """Append a binary output drawn from a logistic model of the inputs.

    Weights are standard normal, rescaled so the linear predictor has
    standard deviation ``strength``. Returns the new dataset (output last)
    and the weights on the one-hot design.
    """
    rng = np.random.default_rng(seed)
    X = design_matrix(dataset, list(range(dataset.n_columns)))
    w = rng.standard_normal(X.shape[1])
    eta = X @ w
    eta = strength * (eta - eta.mean()) / eta.std()
    y = (rng.random(dataset.n_rows) < 1.0 / (1.0 + np.exp(-eta))).astype(np.int64)
    columns = dataset.schema.columns + ((name, Categorical(("0", "1"))),)
    schema = Schema(columns, len(columns) - 1)
    return Dataset(schema, list(dataset.columns) + [y], dict(dataset.transforms)), w


def format_spec(spec: BenchSpec) -> str:
    lines = []
    for key, value in asdict(spec).items():
        if value is None:
            continue
        if key == "ratios":
            value = ",".join(repr(v) for v in value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def parse_spec(text: str) -> BenchSpec:
    types = {f.name: f.type for f in fields(BenchSpec)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("["):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or key not in types:
            raise ValueError(f"spec line {lineno}: unknown or malformed entry {line!r}")
        if key == "kind":
            values[key] = value
        elif key == "ratios":
            values[key] = tuple(float(v) for v in value.split(","))
        elif key in ("n_rows", "seed", "n_numeric", "n_binary", "n_quaternary"):
            values[key] = int(value)
        else:
            values[key] = float(value)
    return BenchSpec(**values)


def write_labels(labels: np.ndarray, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row_index", "cluster"])
        writer.writerows(enumerate(int(v) for v in labels))


def read_labels(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = [(int(r["row_index"]), int(r["cluster"])) for r in reader]
    rows.sort()
    if [i for i, _ in rows] != list(range(len(rows))):
        raise ValueError(f"{path}: row_index must cover 0..N-1 exactly once")
    return np.array([c for _, c in rows], dtype=np.int64)


def write_benchmark(spec: BenchSpec, out_dir) -> dict[str, Path]:
    """Write ``data.csv``, ``schema.txt``, ``labels.csv`` and ``spec.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset, labels = gen_benchmark(spec)
    paths = {
        "data": out / "data.csv",
        "schema": out / "schema.txt",
        "labels": out / "labels.csv",
        "spec": out / "spec.txt",
    }
    write_csv(dataset, paths["data"], destandardize=True)
    write_schema(dataset.schema, paths["schema"])
    write_labels(labels, paths["labels"])
    paths["spec"].write_text(format_spec(spec), encoding="utf-8")
    return paths
