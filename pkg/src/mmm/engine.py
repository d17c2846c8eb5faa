"""Hard-assignment clustering under parameter-marginalized likelihoods.

Each cluster's columns are scored with their closed-form conjugate
marginals, so the only thing optimized is the assignment vector. A pass
visits rows in order, pulls each row out of its cluster, and puts it back
into whichever cluster gives it the highest posterior predictive.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import gammaln

from . import _jit
from .dataset import Categorical, Dataset
from .kernels import (
    LOG_PI,
    CategoricalStats,
    DirichletParams,
    NormalGammaParams,
    NumericStats,
)

logger = logging.getLogger(__name__)

Prior = Union[DirichletParams, NormalGammaParams]

B0_FLOOR = 1e-6
MAX_PASSES = 200
MIN_PASS_GAIN = 1e-9


def default_priors(
    dataset: Dataset,
    dirichlet_c: float = 1.0,
    beta0: float = 1.0,
    a0: float = 1.0,
    b0_scale: float = 0.5,
) -> tuple[Prior, ...]:
    """Weakly informative priors scaled to each column.

    Categorical columns get symmetric pseudocounts ``dirichlet_c``; numeric
    columns get ``mu0`` at the column mean and ``b0 = b0_scale * variance``
    (floored at 1e-6).
    """
    priors: list[Prior] = []
    for i, (_, kind) in enumerate(dataset.schema.columns):
        if isinstance(kind, Categorical):
            priors.append(DirichletParams.uniform(kind.k, dirichlet_c))
        else:
            col = dataset.columns[i]
            var = float(np.var(col)) if col.size else 1.0
            priors.append(
                NormalGammaParams(float(np.mean(col)) if col.size else 0.0, beta0, a0,
                                  max(b0_scale * var, B0_FLOOR))
            )
    return tuple(priors)


class PackedData:
    """Column-major arrays and prior tables in the layout :mod:`_jit` expects."""

    def __init__(self, dataset: Dataset, priors: Optional[Sequence[Prior]] = None):
        if priors is None:
            priors = default_priors(dataset)
        if len(priors) != dataset.n_columns:
            raise ValueError("one prior per column is required")
        self.dataset = dataset
        self.priors = tuple(priors)
        N = dataset.n_rows
        self.cat_cols = [i for i in range(dataset.n_columns) if dataset.is_categorical(i)]
        self.num_cols = [i for i in range(dataset.n_columns) if not dataset.is_categorical(i)]
        kmax = max([dataset.schema.kind(i).k for i in self.cat_cols], default=1)

        counts = np.arange(N + 1)
        cat_x = np.zeros((len(self.cat_cols), N), dtype=np.int64)
        cat_c = np.zeros((len(self.cat_cols), kmax))
        cat_C = np.zeros(len(self.cat_cols))
        lognum = np.zeros((len(self.cat_cols), kmax, N + 1))
        logden = np.zeros((len(self.cat_cols), N + 1))
        for r, i in enumerate(self.cat_cols):
            prior = priors[i]
            if not isinstance(prior, DirichletParams):
                raise TypeError(f"column {i} is categorical but its prior is {prior!r}")
            if prior.k != dataset.schema.kind(i).k:
                raise ValueError(f"column {i}: prior has k={prior.k}")
            cat_x[r] = dataset.columns[i]
            cat_c[r, : prior.k] = prior.c
            cat_C[r] = prior.C
            lognum[r, : prior.k] = np.log(counts[None, :] + np.asarray(prior.c)[:, None])
            logden[r] = np.log(counts + prior.C)

        num_x = np.zeros((len(self.num_cols), N))
        ng = np.zeros((len(self.num_cols), 4))
        ngtab = np.zeros((len(self.num_cols), N + 1, 3))
        for r, i in enumerate(self.num_cols):
            prior = priors[i]
            if not isinstance(prior, NormalGammaParams):
                raise TypeError(f"column {i} is numeric but its prior is {prior!r}")
            num_x[r] = dataset.columns[i]
            ng[r] = (prior.mu0, prior.beta0, prior.a0, prior.b0)
            a_n = prior.a0 + 0.5 * counts
            beta_n = prior.beta0 + counts
            ngtab[r, :, 0] = a_n
            ngtab[r, :, 1] = beta_n
            ngtab[r, :, 2] = (
                -0.5 * LOG_PI
                + gammaln(a_n + 0.5)
                - gammaln(a_n)
                + 0.5 * (np.log(a_n * beta_n / (beta_n + 1.0)) - np.log(2.0 * a_n))
            )

        self.arrays = (cat_x, cat_c, cat_C, num_x, ng, lognum, logden, ngtab)
        self.n_rows = N

    def empty_state(self, K: int):
        cat_c = self.arrays[1]
        n_num = self.arrays[4].shape[0]
        return (
            np.zeros(self.n_rows, dtype=np.int64),
            np.zeros(K, dtype=np.int64),
            np.zeros((K, cat_c.shape[0], cat_c.shape[1]), dtype=np.int64),
            np.zeros((K, n_num, 2)),
            np.zeros((K, n_num, 4)),
        )


class ClusterState:
    """An assignment of rows to ``K`` clusters plus per-cluster statistics."""

    def __init__(
        self,
        data: Union[Dataset, PackedData],
        K: int,
        assignment: Sequence[int],
        priors: Optional[Sequence[Prior]] = None,
    ):
        if isinstance(data, Dataset):
            data = PackedData(data, priors)
        assignment = np.asarray(assignment, dtype=np.int64)
        if assignment.shape != (data.n_rows,):
            raise ValueError(f"assignment must have length {data.n_rows}")
        if K < 1:
            raise ValueError("K must be at least 1")
        if assignment.size and (assignment.min() < 0 or assignment.max() >= K):
            raise ValueError(f"assignment values must lie in [0, {K})")
        self.packed = data
        self.K = K
        self.arrays = data.empty_state(K)
        self.arrays[0][:] = assignment
        assign, sizes, counts, nsum = self.arrays[:4]
        _jit.fill_stats(data.arrays, assign, sizes, counts, nsum)
        _jit.refresh_all(data.arrays, self.arrays)

    @property
    def dataset(self) -> Dataset:
        return self.packed.dataset

    @property
    def priors(self) -> tuple[Prior, ...]:
        return self.packed.priors

    @property
    def n_rows(self) -> int:
        return self.packed.n_rows

    @property
    def assignment(self) -> np.ndarray:
        return self.arrays[0]

    @property
    def sizes(self) -> np.ndarray:
        return self.arrays[1]

    def copy(self) -> "ClusterState":
        return ClusterState(self.packed, self.K, self.assignment.copy())

    def rebuilt(self) -> "ClusterState":
        """A fresh state recomputed from the assignment alone."""
        return self.copy()

    def log_lik(self) -> float:
        return float(_jit.log_lik(self.packed.arrays, self.arrays))

    def cluster_stats(self, j: int) -> list[Union[CategoricalStats, NumericStats]]:
        """Cluster ``j``'s statistics as reference kernel objects, in column order."""
        _, sizes, counts, nsum = self.arrays[:4]
        ds = self.dataset
        out: list = [None] * ds.n_columns
        for r, i in enumerate(self.packed.cat_cols):
            k = ds.schema.kind(i).k
            out[i] = CategoricalStats([int(v) for v in counts[j, r, :k]])
        for r, i in enumerate(self.packed.num_cols):
            n = int(sizes[j])
            out[i] = NumericStats(n, float(nsum[j, r, 0]), float(nsum[j, r, 1]))
        return out

    def move(self, i: int, j: int) -> None:
        _check_index(i, self.n_rows, "row")
        _check_index(j, self.K, "cluster")
        _jit.remove_row(self.packed.arrays, self.arrays, i)
        _jit.add_row(self.packed.arrays, self.arrays, i, j)

    def row_scores(self, i: int) -> np.ndarray:
        """Leave-one-out log predictive of row ``i`` under every cluster."""
        _check_index(i, self.n_rows, "row")
        out = np.empty(self.K)
        home = _jit.remove_row(self.packed.arrays, self.arrays, i)
        _jit.row_scores(self.packed.arrays, self.arrays, i, out)
        _jit.add_row(self.packed.arrays, self.arrays, i, home)
        return out

    def home_scores(self) -> np.ndarray:
        out = np.empty(self.n_rows)
        _jit.loo_home_scores(self.packed.arrays, self.arrays, out)
        return out

    def compacted(self) -> "ClusterState":
        """Drop empty clusters, keeping the surviving clusters in index order."""
        nonempty = np.flatnonzero(self.sizes > 0)
        if nonempty.size == self.K:
            return self
        relabel = np.full(self.K, -1, dtype=np.int64)
        relabel[nonempty] = np.arange(nonempty.size)
        return ClusterState(self.packed, max(int(nonempty.size), 1), relabel[self.assignment])


def _check_index(v: int, n: int, what: str) -> None:
    if not 0 <= v < n:
        raise IndexError(f"{what} index {v} out of range [0, {n})")


def cluster_log_lik(state: ClusterState) -> float:
    return state.log_lik()


def score_row(state: ClusterState, row: int, target: int) -> float:
    _check_index(target, state.K, "cluster")
    return float(state.row_scores(row)[target])


def em_pass(state: ClusterState, batch: bool = False) -> tuple[ClusterState, int]:
    """One reassignment pass; mutates and returns ``state`` with the move count."""
    kernel = _jit.em_pass_batch if batch else _jit.em_pass
    moved = int(kernel(state.packed.arrays, state.arrays))
    return state, moved


@dataclass
class ClusteringResult:
    state: ClusterState
    trace: list[float]
    passes: int
    converged: bool
    seed: Optional[int]
    requested_k: int = 0

    @property
    def K(self) -> int:
        return self.state.K

    @property
    def assignment(self) -> np.ndarray:
        return self.state.assignment

    @property
    def log_lik(self) -> float:
        return self.trace[-1]


def _iterate(state: ClusterState, max_passes: int, batch: bool, seed) -> ClusteringResult:
    trace = [state.log_lik()]
    passes = 0
    converged = state.K == 1
    while not converged and passes < max_passes:
        _, moved = em_pass(state, batch)
        passes += 1
        trace.append(state.log_lik())
        if moved == 0:
            converged = True
        elif trace[-1] - trace[-2] < MIN_PASS_GAIN and not batch:
            logger.debug("stopping after pass %d: gain below %g", passes, MIN_PASS_GAIN)
            break
    requested = state.K
    final = state.compacted()
    if final is not state:
        trace[-1] = final.log_lik()
    return ClusteringResult(final, trace, passes, converged, seed, requested)


def fit_k(
    dataset: Union[Dataset, PackedData],
    K: int,
    init: Union[str, Sequence[int], ClusterState] = "random",
    seed: Optional[int] = 0,
    max_passes: int = MAX_PASSES,
    n_restarts: int = 1,
    priors: Optional[Sequence[Prior]] = None,
    batch: bool = False,
) -> ClusteringResult:
    """Cluster into at most ``K`` clusters, keeping the best of ``n_restarts``.

    ``init`` is ``"random"`` or an explicit starting assignment; with an
    explicit assignment, only the first restart uses it and the rest start
    from random assignments. Empty clusters are dropped at the end, so the
    result may have fewer than ``K`` clusters.
    """
    packed = dataset if isinstance(dataset, PackedData) else PackedData(dataset, priors)
    N = packed.n_rows
    if not 1 <= K <= N:
        raise ValueError(f"K must lie in [1, N={N}], got {K}")
    rng = np.random.default_rng(seed)
    best: Optional[ClusteringResult] = None
    for r in range(max(n_restarts, 1)):
        if r == 0 and isinstance(init, ClusterState):
            start = ClusterState(packed, K, init.assignment.copy())
        elif r == 0 and not isinstance(init, str):
            start = ClusterState(packed, K, init)
        elif r == 0 and init != "random":
            raise ValueError(f"unknown init {init!r}")
        else:
            start = ClusterState(packed, K, rng.integers(0, K, N))
        result = _iterate(start, max_passes, batch, seed)
        if best is None or result.log_lik > best.log_lik:
            best = result
    return best


def grow_k(result: Union[ClusteringResult, ClusterState]) -> ClusterState:
    """Seed a ``K + 1`` clustering by evicting the worst-fitting rows.

    Rows are ranked by their leave-one-out score against their own cluster;
    the lowest ``floor(N / (K + 1))`` (ties by row index) form the new cluster.
    """
    state = result.state if isinstance(result, ClusteringResult) else result
    K, N = state.K, state.n_rows
    scores = state.home_scores()
    n_move = N // (K + 1)
    order = np.lexsort((np.arange(N), scores))
    assignment = state.assignment.copy()
    assignment[order[:n_move]] = K
    return ClusterState(state.packed, K + 1, assignment)


@dataclass
class SweepResult:
    results: dict[int, ClusteringResult]
    criteria: dict[int, float]
    estimates: dict = field(default_factory=dict)
    chosen_k: int = 1
    selection: str = "hmbeta"


def fit_sweep(
    dataset: Union[Dataset, PackedData],
    k_max: int,
    selection: str = "hmbeta",
    seed: int = 0,
    n_restarts: int = 1,
    priors: Optional[Sequence[Prior]] = None,
    max_passes: int = MAX_PASSES,
    batch: bool = False,
    threads: int = 1,
    **estimator_options,
) -> SweepResult:
    """Fit K = 1..k_max, each grown from the previous fit, and pick K.

    ``selection`` is one of ``exact``, ``am``, ``hm``, ``hmbeta``, ``ti`` or
    ``bic``; extra keyword arguments go to the estimator.
    """
    from . import selection as sel

    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    packed = dataset if isinstance(dataset, PackedData) else PackedData(dataset, priors)
    k_max = min(k_max, packed.n_rows)
    results: dict[int, ClusteringResult] = {}
    prev: Optional[ClusterState] = None
    for K in range(1, k_max + 1):
        k_seed = int(np.random.SeedSequence([seed, K]).generate_state(1)[0])
        if prev is None:
            init = np.zeros(packed.n_rows, dtype=np.int64)
        else:
            grown = prev
            while grown.K < K:
                grown = grow_k(grown)
            init = grown
        results[K] = fit_k(packed, K, init, k_seed, max_passes, n_restarts, batch=batch)
        prev = results[K].state
        logger.info("K=%d fitted: log-lik %.4f, %d passes", K, results[K].log_lik, results[K].passes)

    def estimate(K: int):
        return sel.estimate(selection, packed, K, result=results[K], seed=seed, **estimator_options)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            estimates = dict(zip(results, pool.map(estimate, results)))
    else:
        estimates = {K: estimate(K) for K in results}
    criteria = {K: sel.criterion(e) for K, e in estimates.items()}
    chosen = sel.select_k(criteria)
    return SweepResult(results, criteria, estimates, chosen, selection)
