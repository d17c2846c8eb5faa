"""Clustering agreement (ARI) and a small logistic-regression/AUC toolkit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata


def _comb2(x):
    x = np.asarray(x, dtype=float)
    return float(np.sum(x * (x - 1.0) / 2.0))


def adjusted_rand_index(a: Sequence[int], b: Sequence[int]) -> float:
    """Hubert-Arabie adjusted Rand index between two labelings."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"partitions must be 1-d and equal length, got {a.shape} and {b.shape}")
    n = a.size
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1 if n else 0, bi.max() + 1 if n else 0))
    np.add.at(table, (ai, bi), 1)
    index = _comb2(table)
    sum_a = _comb2(table.sum(axis=1))
    sum_b = _comb2(table.sum(axis=0))
    total = n * (n - 1) / 2.0
    if total == 0:
        return 1.0
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions trivial (all-one-cluster or all-singletons alike)
        return 1.0 if sum_a == sum_b else 0.0
    return (index - expected) / (max_index - expected)


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int((labels == 0).sum())
    if n_pos + n_neg != labels.size:
        raise ValueError("labels must be 0/1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class LogisticModel:
    weights: np.ndarray
    intercept: float
    iterations: int = 0
    loss: float = math.nan
    grad_norm: float = math.nan
    loss_trace: list[float] = field(default_factory=list)

    def decision(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision(X))


def logistic_loss_grad(params: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean negative log-likelihood plus ``l2/2 * |w|^2`` and its gradient.

    ``params`` is ``(w_1..w_p, intercept)``; the intercept is not penalized.
    """
    w, b = params[:-1], params[-1]
    z = X @ w + b
    # log(1 + e^z) - y z, computed stably
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))
    r = (expit(z) - y) / y.size
    grad = np.empty_like(params)
    grad[:-1] = X.T @ r + l2 * w
    grad[-1] = r.sum()
    return loss, grad


def logistic_fit(
    X,
    y,
    l2: float = 1e-4,
    max_iter: int = 20_000,
    tol: float = 1e-6,
) -> LogisticModel:
    """L2-regularized logistic regression by gradient descent.

    Starts from zero; each step tries a Barzilai-Borwein length and
    backtracks until the Armijo condition holds, so the loss never
    increases. Stops when the gradient norm drops to ``tol``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if y.min() == y.max():
        raise ValueError("logistic regression needs both classes present")
    params = np.zeros(X.shape[1] + 1)
    loss, grad = logistic_loss_grad(params, X, y, l2)
    trace = [loss]
    step = 1.0
    it = 0
    while it < max_iter and np.linalg.norm(grad) > tol:
        it += 1
        gg = float(grad @ grad)
        while True:
            cand = params - step * grad
            new_loss, new_grad = logistic_loss_grad(cand, X, y, l2)
            if new_loss <= loss - 1e-4 * step * gg or step < 1e-14:
                break
            step *= 0.5
        if new_loss > loss:
            break
        s = cand - params
        dg = new_grad - grad
        params, loss, grad = cand, new_loss, new_grad
        trace.append(loss)
        sy = float(s @ dg)
        step = float(s @ s) / sy if sy > 0 else 2.0 * step
    return LogisticModel(params[:-1].copy(), float(params[-1]), it, loss,
                         float(np.linalg.norm(grad)), trace)
