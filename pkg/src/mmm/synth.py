"""Cluster-wise synthetic tabular data.

The input columns are clustered (output column excluded). Within each
cluster every input column gets an independent categorical or Gaussian
fit, and the output gets a noisy linear model on the cluster's inputs.
Sampling replays each cluster at its original size and pools the rows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.special import expit, logit

from .dataset import Categorical, Dataset, Schema, design_matrix, format_schema, parse_schema
from .engine import ClusteringResult, fit_k, fit_sweep
from .evaluate import auc, logistic_fit

logger = logging.getLogger(__name__)

FORMAT_NAME = "mmmsynth-generator"
FORMAT_VERSION = 1
STD_FLOOR = 1e-9
OUTPUT_MODES = ("clamped", "logistic")


@dataclass
class CategoricalModel:
    probs: np.ndarray


@dataclass
class NumericModel:
    mean: float
    std: float


ColumnModel = Union[CategoricalModel, NumericModel]


@dataclass
class LinearOutputModel:
    """``output = design @ weights + intercept + Normal(0, residual_std)``.

    For a binary output in ``logistic`` mode the linear predictor is a
    log-odds instead, and ``residual_std`` is unused.
    """

    weights: np.ndarray
    intercept: float
    residual_std: float
    kind: str = "numeric"
    mode: str = "clamped"
    fallback: bool = False


@dataclass
class ClusterModel:
    size: int
    columns: list[ColumnModel]
    output: Optional[LinearOutputModel]


@dataclass
class GeneratorModel:
    schema: Schema
    transforms: dict[int, tuple[float, float]]
    clusters: list[ClusterModel]
    seed: Optional[int] = None
    criterion: str = "fixed"
    output_mode: str = "clamped"

    @property
    def K(self) -> int:
        return len(self.clusters)

    @property
    def n_rows(self) -> int:
        return sum(c.size for c in self.clusters)

    @property
    def input_indices(self) -> list[int]:
        return [i for i in range(len(self.schema.columns)) if i != self.schema.output_index]


def _output_kind(dataset: Dataset) -> str:
    idx = dataset.schema.output_index
    if idx is None:
        raise ValueError("dataset has no designated output column")
    kind = dataset.schema.kind(idx)
    if isinstance(kind, Categorical):
        if kind.k != 2:
            raise ValueError("only binary categorical outputs are supported")
        return "binary"
    return "numeric"


def _fit_ols(X: np.ndarray, y: np.ndarray) -> Optional[tuple[np.ndarray, float, float]]:
    """Minimum-norm least squares with intercept; None without residual dof."""
    n = X.shape[0]
    A = np.hstack([X, np.ones((n, 1))])
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if n < 2 or n <= rank:
        return None
    resid = y - A @ coef
    rss = float(resid @ resid)
    std = math.sqrt(max(rss, 0.0) / (n - rank))
    if std < 1e-10 * max(1.0, float(np.abs(y).max())):
        std = 0.0
    return coef[:-1], float(coef[-1]), std


def _fit_logistic(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    if y.min() == y.max():
        rate = (y.sum() + 0.5) / (y.size + 1.0)
        return np.zeros(X.shape[1]), float(logit(rate))
    model = logistic_fit(X, y, l2=1e-2)
    return model.weights, model.intercept


def fit_output_model(X: np.ndarray, y: np.ndarray, kind: str, mode: str = "clamped") -> Optional[LinearOutputModel]:
    if kind == "binary" and mode == "logistic":
        if X.shape[0] < 2:
            return None
        w, b = _fit_logistic(X, y)
        return LinearOutputModel(w, b, 0.0, kind, mode)
    fit = _fit_ols(X, y)
    if fit is None:
        return None
    w, b, std = fit
    return LinearOutputModel(w, b, std, kind, mode)


def fit_column_models(dataset: Dataset, rows: np.ndarray, columns: list[int]) -> list[ColumnModel]:
    """Add-one smoothed frequencies and population mean/std per column."""
    models: list[ColumnModel] = []
    for i in columns:
        kind = dataset.schema.kind(i)
        col = dataset.columns[i][rows]
        if isinstance(kind, Categorical):
            counts = np.bincount(col, minlength=kind.k).astype(float)
            models.append(CategoricalModel((counts + 1.0) / (counts.sum() + kind.k)))
        else:
            models.append(NumericModel(float(col.mean()), max(float(col.std()), STD_FLOOR)))
    return models


def _cluster_inputs(
    inputs: Dataset,
    k_policy: Union[int, str],
    seed: int,
    k_max: int,
    n_restarts: int,
    estimator_options: dict,
) -> ClusteringResult:
    if isinstance(k_policy, (int, np.integer)):
        return fit_k(inputs, int(k_policy), seed=seed, n_restarts=n_restarts)
    sweep = fit_sweep(inputs, k_max, k_policy, seed=seed, n_restarts=n_restarts, **estimator_options)
    logger.info("auto-K (%s) chose K=%d", k_policy, sweep.chosen_k)
    return sweep.results[sweep.chosen_k]


def fit_generator(
    dataset: Dataset,
    k_policy: Union[int, str] = "hmbeta",
    seed: int = 0,
    k_max: int = 8,
    n_restarts: int = 1,
    output_mode: str = "clamped",
    clustering: Optional[ClusteringResult] = None,
    **estimator_options,
) -> GeneratorModel:
    """Cluster the inputs and fit per-cluster column and output models.

    ``k_policy`` is a fixed number of clusters or the name of a model
    selection method (``hmbeta``, ``ti``, ...). A precomputed
    ``clustering`` of the input columns skips the clustering step.
    """
    if output_mode not in OUTPUT_MODES:
        raise ValueError(f"output_mode must be one of {OUTPUT_MODES}")
    out_kind = _output_kind(dataset)
    if dataset.n_rows < 2:
        raise ValueError("need at least 2 rows")
    out_idx = dataset.schema.output_index
    inputs = [i for i in range(dataset.n_columns) if i != out_idx]
    if clustering is None:
        clustering = _cluster_inputs(dataset.inputs(), k_policy, seed, k_max, n_restarts,
                                     estimator_options)
    labels = clustering.assignment
    X = design_matrix(dataset, inputs)
    y = dataset.columns[out_idx].astype(float)
    global_out = fit_output_model(X, y, out_kind, output_mode)
    if global_out is None:
        global_out = LinearOutputModel(np.zeros(X.shape[1]), float(y.mean()), float(y.std()),
                                       out_kind, output_mode)
    clusters = []
    for j in range(clustering.K):
        rows = np.flatnonzero(labels == j)
        if rows.size == 0:
            continue
        cols = fit_column_models(dataset, rows, inputs)
        out = fit_output_model(X[rows], y[rows], out_kind, output_mode)
        if out is None:
            out = LinearOutputModel(global_out.weights.copy(), global_out.intercept,
                                    global_out.residual_std, out_kind, output_mode, fallback=True)
        clusters.append(ClusterModel(int(rows.size), cols, out))
    criterion = str(k_policy) if not isinstance(k_policy, (int, np.integer)) else "fixed"
    return GeneratorModel(dataset.schema, dict(dataset.transforms), clusters, seed, criterion,
                          output_mode)


def _sample_column(rng: np.random.Generator, model: ColumnModel, size: int) -> np.ndarray:
    if isinstance(model, CategoricalModel):
        cdf = np.cumsum(model.probs)
        u = rng.random(size)
        codes = np.searchsorted(cdf, u * cdf[-1], side="right")
        return np.minimum(codes, model.probs.size - 1).astype(np.int64)
    z = rng.standard_normal(size)
    return model.mean + model.std * z


def _sample_output(rng: np.random.Generator, model: LinearOutputModel, X: np.ndarray) -> np.ndarray:
    eta = X @ model.weights + model.intercept
    if model.kind == "binary":
        if model.mode == "logistic":
            p = expit(eta)
        else:
            p = np.clip(eta + model.residual_std * rng.standard_normal(eta.size), 0.0, 1.0)
        return (rng.random(eta.size) < p).astype(np.int64)
    return eta + model.residual_std * rng.standard_normal(eta.size)


def sample_synthetic(model: GeneratorModel, seed=None) -> Dataset:
    """Draw a synthetic table of the original size and schema."""
    rng = np.random.default_rng(seed)
    n_cols = len(model.schema.columns)
    inputs = model.input_indices
    out_idx = model.schema.output_index
    chunks: list[list[np.ndarray]] = []
    for cluster in model.clusters:
        cols: list[Optional[np.ndarray]] = [None] * n_cols
        for i, cm in zip(inputs, cluster.columns):
            cols[i] = _sample_column(rng, cm, cluster.size)
        if out_idx is not None:
            part = Dataset(model.schema, [c if c is not None else np.zeros(cluster.size, dtype=np.int64)
                                          if isinstance(model.schema.kind(k), Categorical)
                                          else np.zeros(cluster.size)
                                          for k, c in enumerate(cols)])
            X = design_matrix(part, inputs)
            cols[out_idx] = _sample_output(rng, cluster.output, X)
        chunks.append(cols)
    columns = [np.concatenate([c[i] for c in chunks]) for i in range(n_cols)]
    perm = rng.permutation(model.n_rows)
    return Dataset(model.schema, [c[perm] for c in columns], dict(model.transforms))


# ---------------------------------------------------------------- reporting


@dataclass
class QualityReport:
    auc_synthetic: float
    auc_real: float
    auc_control: Optional[float]
    marginals: list[dict] = field(default_factory=list)
    exact_copies: int = 0

    @property
    def gap(self) -> float:
        return self.auc_real - self.auc_synthetic

    def rows(self) -> list[tuple[str, str, float]]:
        out = [
            ("auc", "synthetic_on_real", self.auc_synthetic),
            ("auc", "real_cv", self.auc_real),
            ("auc", "gap", self.gap),
        ]
        if self.auc_control is not None:
            out.append(("auc", "shuffled_control", self.auc_control))
        out.append(("privacy", "exact_copies", float(self.exact_copies)))
        for m in self.marginals:
            out.append((m["column"], m["statistic"] + "_real", m["real"]))
            out.append((m["column"], m["statistic"] + "_synthetic", m["synthetic"]))
        return out


def _binary_target(dataset: Dataset) -> np.ndarray:
    if _output_kind(dataset) != "binary":
        raise ValueError("quality report needs a binary output column")
    return dataset.columns[dataset.schema.output_index].astype(float)


def cross_validated_auc(X: np.ndarray, y: np.ndarray, folds: int, rng: np.random.Generator,
                        l2: float = 1e-4) -> float:
    """Mean held-out AUC of logistic regression over shuffled K folds."""
    order = rng.permutation(y.size)
    scores = []
    for f in range(folds):
        test = order[f::folds]
        train = np.setdiff1d(order, test)
        if y[train].min() == y[train].max() or y[test].min() == y[test].max():
            continue
        model = logistic_fit(X[train], y[train], l2=l2)
        scores.append(auc(model.decision(X[test]), y[test]))
    return float(np.mean(scores))


def marginal_summary(real: Dataset, synthetic: Dataset) -> list[dict]:
    rows = []
    for i, (name, kind) in enumerate(real.schema.columns):
        r, s = real.raw_column(i), synthetic.raw_column(i)
        if isinstance(kind, Categorical):
            fr = np.bincount(r, minlength=kind.k) / r.size
            fs = np.bincount(s, minlength=kind.k) / s.size
            for lab, a, b in zip(kind.labels, fr, fs):
                rows.append({"column": name, "statistic": f"freq[{lab}]", "real": float(a),
                             "synthetic": float(b)})
        else:
            rows.append({"column": name, "statistic": "mean", "real": float(r.mean()),
                         "synthetic": float(s.mean())})
            rows.append({"column": name, "statistic": "std", "real": float(r.std()),
                         "synthetic": float(s.std())})
    return rows


def count_exact_copies(real: Dataset, synthetic: Dataset) -> int:
    def keys(ds):
        return set(zip(*[c.tolist() for c in ds.columns]))

    real_rows = keys(real)
    return sum(1 for row in zip(*[c.tolist() for c in synthetic.columns]) if row in real_rows)


def synth_quality_report(
    real: Dataset,
    synthetic: Dataset,
    seed=None,
    folds: int = 5,
    l2: float = 1e-4,
    n_control: int = 10,
) -> QualityReport:
    """Train-on-synthetic/test-on-real AUC against a real-data CV reference.

    The control scores models trained on synthetic data with shuffled
    outputs, averaged over ``n_control`` shuffles (0 disables it); it
    should land near 0.5.
    """
    if real.schema != synthetic.schema:
        raise ValueError("real and synthetic schemas differ")
    rng = np.random.default_rng(seed)
    y_real = _binary_target(real)
    y_syn = _binary_target(synthetic)
    X_real = design_matrix(real)
    X_syn = design_matrix(synthetic)
    model = logistic_fit(X_syn, y_syn, l2=l2)
    auc_syn = auc(model.decision(X_real), y_real)
    auc_real = cross_validated_auc(X_real, y_real, folds, rng, l2)
    auc_ctrl = None
    if n_control > 0:
        auc_ctrl = float(np.mean([
            auc(logistic_fit(X_syn, rng.permutation(y_syn), l2=l2).decision(X_real), y_real)
            for _ in range(n_control)
        ]))
    return QualityReport(auc_syn, auc_real, auc_ctrl, marginal_summary(real, synthetic),
                         count_exact_copies(real, synthetic))


# ------------------------------------------------------------ serialization


def _floats(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def format_model(model: GeneratorModel) -> str:
    lines = [f"format={FORMAT_NAME}", f"version={FORMAT_VERSION}", "", "[model]",
             f"k={model.K}", f"seed={model.seed}", f"criterion={model.criterion}",
             f"output_mode={model.output_mode}", "", "[schema]"]
    lines += ["line=" + line for line in format_schema(model.schema).splitlines()]
    lines += ["", "[transforms]"]
    for i in sorted(model.transforms):
        lines.append(f"{i}={_floats(model.transforms[i])}")
    for j, cluster in enumerate(model.clusters):
        lines += ["", f"[cluster {j}]", f"size={cluster.size}"]
        for i, cm in zip(model.input_indices, cluster.columns):
            if isinstance(cm, CategoricalModel):
                lines.append(f"col.{i}=cat,{_floats(cm.probs)}")
            else:
                lines.append(f"col.{i}=num,{_floats((cm.mean, cm.std))}")
        out = cluster.output
        if out is not None:
            lines += [
                f"out.kind={out.kind}",
                f"out.mode={out.mode}",
                f"out.fallback={int(out.fallback)}",
                f"out.weights={_floats(out.weights)}",
                f"out.intercept={out.intercept!r}",
                f"out.residual_std={out.residual_std!r}",
            ]
    return "\n".join(lines) + "\n"


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")]) if text else np.zeros(0)


def parse_model(text: str) -> GeneratorModel:
    sections: dict[str, list[tuple[str, str]]] = {"": []}
    order = [""]
    current = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections[current] = []
            order.append(current)
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"model line {lineno}: expected key=value")
        sections[current].append((key.strip(), value.strip()))
    header = dict(sections[""])
    if header.get("format") != FORMAT_NAME:
        raise ValueError("not a generator model file")
    if int(header.get("version", -1)) != FORMAT_VERSION:
        raise ValueError(f"unsupported model version {header.get('version')}")
    meta = dict(sections["model"])
    schema = parse_schema("\n".join(v for _, v in sections["schema"]))
    transforms = {int(k): tuple(_parse_floats(v)) for k, v in sections.get("transforms", [])}
    inputs = [i for i in range(len(schema.columns)) if i != schema.output_index]
    clusters = []
    for name in order:
        if not name.startswith("cluster "):
            continue
        entries = dict(sections[name])
        cols: list[ColumnModel] = []
        for i in inputs:
            kind, _, rest = entries[f"col.{i}"].partition(",")
            vals = _parse_floats(rest)
            cols.append(CategoricalModel(vals) if kind == "cat" else NumericModel(vals[0], vals[1]))
        out = None
        if "out.kind" in entries:
            out = LinearOutputModel(
                _parse_floats(entries["out.weights"]),
                float(entries["out.intercept"]),
                float(entries["out.residual_std"]),
                entries["out.kind"],
                entries["out.mode"],
                bool(int(entries["out.fallback"])),
            )
        clusters.append(ClusterModel(int(entries["size"]), cols, out))
    seed = meta.get("seed")
    return GeneratorModel(schema, transforms, clusters,
                          None if seed in (None, "None") else int(seed),
                          meta.get("criterion", "fixed"), meta.get("output_mode", "clamped"))


def save_model(model: GeneratorModel, path) -> None:
    Path(path).write_text(format_model(model), encoding="utf-8")


def load_model(path) -> GeneratorModel:
    return parse_model(Path(path).read_text(encoding="utf-8"))
