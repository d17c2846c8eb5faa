"""Conjugate-prior building blocks for categorical and numeric columns.

Everything here works in log space on plain Python floats. These scalar
routines are the reference path; the compiled cluster engine in
:mod:`mmm._jit` re-implements the same algebra on packed arrays and is
tested against this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LOG_PI = math.log(math.pi)
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DirichletParams:
    """Dirichlet pseudocounts for a ``k``-valued categorical column."""

    c: tuple[float, ...]
    C: float = field(init=False)

    def __post_init__(self):
        c = tuple(float(v) for v in self.c)
        if len(c) < 2:
            raise ValueError("a categorical column needs at least 2 categories")
        if any(not v > 0 for v in c):
            raise ValueError(f"pseudocounts must be positive, got {c}")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "C", math.fsum(c))

    @classmethod
    def uniform(cls, k: int, value: float = 1.0) -> "DirichletParams":
        return cls((value,) * k)

    @property
    def k(self) -> int:
        return len(self.c)


@dataclass
class CategoricalStats:
    """Per-category counts of the observations seen so far."""

    counts: list[int]

    @classmethod
    def empty(cls, k: int) -> "CategoricalStats":
        return cls([0] * k)

    @classmethod
    def from_values(cls, values: Sequence[int], k: int) -> "CategoricalStats":
        stats = cls.empty(k)
        for x in values:
            stats.add(x)
        return stats

    @property
    def k(self) -> int:
        return len(self.counts)

    @property
    def N(self) -> int:
        return sum(self.counts)

    def add(self, x: int) -> None:
        _check_category(x, self.k)
        self.counts[x] += 1

    def remove(self, x: int) -> None:
        _check_category(x, self.k)
        if self.counts[x] == 0:
            raise ValueError(f"no observation of category {x} to remove")
        self.counts[x] -= 1


@dataclass(frozen=True)
class NormalGammaParams:
    """Normal-Gamma hyperparameters; posteriors are values of the same type."""

    mu0: float
    beta0: float
    a0: float
    b0: float

    def __post_init__(self):
        if not (self.beta0 > 0 and self.a0 > 0 and self.b0 > 0):
            raise ValueError(
                f"beta0, a0, b0 must be positive, got {self.beta0}, {self.a0}, {self.b0}"
            )


@dataclass
class NumericStats:
    """Count, sum and sum of squares of the observations seen so far."""

    n: int = 0
    sum: float = 0.0
    sum_sq: float = 0.0

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "NumericStats":
        stats = cls()
        for x in values:
            stats.add(x)
        return stats

    def add(self, x: float) -> None:
        self.n += 1
        self.sum += x
        self.sum_sq += x * x

    def remove(self, x: float) -> None:
        if self.n == 0:
            raise ValueError("no observation to remove")
        self.n -= 1
        if self.n == 0:
            self.sum = 0.0
            self.sum_sq = 0.0
        else:
            self.sum -= x
            self.sum_sq -= x * x

    @property
    def mean(self) -> float:
        return self.sum / self.n if self.n else 0.0

    @property
    def scatter(self) -> float:
        """Sum of squared deviations from the mean, clamped at zero."""
        if self.n == 0:
            return 0.0
        return max(self.sum_sq - self.sum * self.sum / self.n, 0.0)


def _check_category(x: int, k: int) -> None:
    if not 0 <= x < k:
        raise ValueError(f"category index {x} out of range for k={k}")


def categorical_log_postpred(
    stats: CategoricalStats, prior: DirichletParams, x: int
) -> float:
    """Log probability that the next draw is category ``x``."""
    if stats.k != prior.k:
        raise ValueError(f"stats have k={stats.k} but prior has k={prior.k}")
    _check_category(x, prior.k)
    return math.log(stats.counts[x] + prior.c[x]) - math.log(stats.N + prior.C)


def categorical_log_marginal(stats: CategoricalStats, prior: DirichletParams) -> float:
    """Log Dirichlet-multinomial evidence of the observed sequence.

    Returns ``log B(c + N) - log B(c)`` with ``B`` the multivariate Beta
    function.
    """
    if stats.k != prior.k:
        raise ValueError(f"stats have k={stats.k} but prior has k={prior.k}")
    total = 0.0
    for n_j, c_j in zip(stats.counts, prior.c):
        if n_j:
            total += math.lgamma(n_j + c_j) - math.lgamma(c_j)
    N = stats.N
    if N:
        total += math.lgamma(prior.C) - math.lgamma(prior.C + N)
    return total


def normalgamma_update(prior: NormalGammaParams, stats: NumericStats) -> NormalGammaParams:
    n = stats.n
    if n == 0:
        return prior
    xbar = stats.sum / n
    beta_n = prior.beta0 + n
    mu_n = (prior.beta0 * prior.mu0 + n * xbar) / beta_n
    a_n = prior.a0 + 0.5 * n
    b_n = (
        prior.b0
        + 0.5 * stats.scatter
        + prior.beta0 * n * (xbar - prior.mu0) ** 2 / (2.0 * beta_n)
    )
    return NormalGammaParams(mu_n, beta_n, a_n, b_n)


def student_precision(post: NormalGammaParams) -> float:
    """Precision of the Student-t predictive of a Normal-Gamma posterior."""
    return post.a0 * post.beta0 / (post.b0 * (post.beta0 + 1.0))


def normal_log_postpred(post: NormalGammaParams, x: float) -> float:
    """Log Student-t predictive density of ``x`` under the posterior ``post``."""
    a = post.a0
    lam = student_precision(post)
    return (
        -0.5 * LOG_PI
        + math.lgamma(a + 0.5)
        - math.lgamma(a)
        + 0.5 * (math.log(lam) - math.log(2.0 * a))
        - (a + 0.5) * math.log1p(lam * (x - post.mu0) ** 2 / (2.0 * a))
    )


def normal_log_marginal(prior: NormalGammaParams, stats: NumericStats) -> float:
    if stats.n == 0:
        return 0.0
    post = normalgamma_update(prior, stats)
    return (
        math.lgamma(post.a0)
        - math.lgamma(prior.a0)
        + prior.a0 * math.log(prior.b0)
        - post.a0 * math.log(post.b0)
        + 0.5 * (math.log(prior.beta0) - math.log(post.beta0))
        - 0.5 * stats.n * LOG_2PI
    )


def logsumexp(values) -> float:
    """Stable ``log(sum(exp(values)))`` for a 1-d sequence."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return -math.inf
    m = float(arr.max())
    if not math.isfinite(m):
        return m
    return m + math.log(float(np.exp(arr - m).sum()))


def logmeanexp(values) -> float:
    arr = np.asarray(values, dtype=float)
    return logsumexp(arr) - math.log(arr.size)
