"""Marginal likelihood of K clusters, summed over all assignments.

``log P(D|K) = log sum_A P(A|K) P(D|A,K)`` with ``P(A|K) = K**-N``. The
estimators here either enumerate A outright or sample it with a tempered
single-row Gibbs kernel whose stationary law is ``P(D|A,K)**beta``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import _jit
from .dataset import Dataset
from .engine import ClusteringResult, ClusterState, PackedData, Prior, fit_k
from .kernels import logmeanexp

ESTIMATORS = ("exact", "am", "hm", "hmbeta", "ti", "bic")
EXACT_BUDGET = 2**22
N_BATCHES = 20


@dataclass
class MLEstimate:
    log_ml: float
    estimator: str
    n_samples: int
    K: int = 0
    mc_std_error: Optional[float] = None
    beta: Optional[float] = None
    ladder: Optional["TILadder"] = None
    seed: Optional[int] = None
    wall_time_ms: float = 0.0
    details: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TILadder:
    """Inverse temperatures ``beta_i = (i / (n_points - 1)) ** power``.

    The integral is taken with composite Simpson's rule in the uniform
    variable ``t = beta ** (1 / power)``, so ``power > 1`` packs rungs near
    ``beta = 0`` where the expected log likelihood changes fastest.
    """

    n_points: int = 11
    power: float = 1.0
    sweeps: int = 2000
    burn_in: int = 400

    def __post_init__(self):
        if self.n_points < 3 or self.n_points % 2 == 0:
            raise ValueError(f"Simpson's rule needs an odd number >= 3 of rungs, got {self.n_points}")
        if not self.power > 0:
            raise ValueError("power must be positive")
        if self.sweeps < 1 or self.burn_in < 0:
            raise ValueError("sweeps must be >= 1 and burn_in >= 0")

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_points)

    @property
    def betas(self) -> np.ndarray:
        return self.t**self.power

    def weights(self) -> np.ndarray:
        """Quadrature weights ``w_i`` with ``integral ~= sum_i w_i E_{beta_i}``."""
        n = self.n_points
        h = 1.0 / (n - 1)
        w = np.ones(n)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        w *= h / 3.0
        t = self.t
        if self.power != 1.0:
            w = w * self.power * t ** (self.power - 1.0)
        return w


def _packed(dataset, priors) -> PackedData:
    return dataset if isinstance(dataset, PackedData) else PackedData(dataset, priors)


class AssignmentSampler:
    """Gibbs chain over assignments targeting ``P(D|A,K)**beta``."""

    def __init__(
        self,
        dataset: Union[Dataset, PackedData],
        K: int,
        beta: float,
        seed=None,
        init: Optional[Sequence[int]] = None,
        priors: Optional[Sequence[Prior]] = None,
    ):
        if not 0.0 <= beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {beta}")
        self.packed = _packed(dataset, priors)
        self.K = K
        self.beta = float(beta)
        self.rng = np.random.default_rng(seed)
        if init is None:
            init = self.rng.integers(0, K, self.packed.n_rows)
        self.state = ClusterState(self.packed, K, init)
        self.steps = 0

    def step(self) -> "AssignmentSampler":
        u = self.rng.random(self.packed.n_rows)
        _jit.gibbs_sweep(self.packed.arrays, self.state.arrays, self.beta, u)
        self.steps += 1
        return self

    def log_lik(self) -> float:
        return self.state.log_lik()

    def run(self, n_samples: int, burn_in: int = 0) -> np.ndarray:
        """Log likelihood after each of ``n_samples`` post-burn-in sweeps."""
        if self.K == 1:
            return np.full(n_samples, self.log_lik())
        for _ in range(burn_in):
            self.step()
        out = np.empty(n_samples)
        for s in range(n_samples):
            self.step()
            out[s] = self.log_lik()
        return out


def gibbs_step(sampler: AssignmentSampler) -> AssignmentSampler:
    return sampler.step()


def conditional_probabilities(state: ClusterState, row: int, beta: float) -> np.ndarray:
    """Full conditional of ``row``'s cluster under the tempered target."""
    logw = beta * state.row_scores(row)
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


def sweep_transition_matrix(
    dataset: Union[Dataset, PackedData],
    K: int,
    beta: float,
    priors: Optional[Sequence[Prior]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact transition matrix of one systematic-scan sweep, for tiny N.

    Returns ``(T, assignments)`` where state ``s`` is row ``s`` of
    ``assignments`` and ``T[s, s']`` is the probability of moving from
    ``s`` to ``s'`` in one sweep.
    """
    packed = _packed(dataset, priors)
    N = packed.n_rows
    assignments = _all_assignments(N, K)
    index = {tuple(a): s for s, a in enumerate(assignments)}
    T = np.eye(len(assignments))
    for i in range(N):
        Ti = np.zeros_like(T)
        for s, a in enumerate(assignments):
            probs = conditional_probabilities(ClusterState(packed, K, a), i, beta)
            for j in range(K):
                b = a.copy()
                b[i] = j
                Ti[s, index[tuple(b)]] += probs[j]
        T = T @ Ti
    return T, assignments


def _all_assignments(N: int, K: int) -> np.ndarray:
    idx = np.arange(K**N)
    return np.stack([(idx // K**i) % K for i in range(N)], axis=1).astype(np.int64)


def _log_mean_se(terms: np.ndarray) -> tuple[float, Optional[float]]:
    """``log mean exp(terms)`` and its batch-means standard error.

    The error is the delta-method standard error of the log of the mean
    over ``N_BATCHES`` equal batches.
    """
    terms = np.asarray(terms, dtype=float)
    est = logmeanexp(terms)
    n_batches = min(N_BATCHES, terms.size)
    if n_batches < 2:
        return est, None
    size = terms.size // n_batches
    batch = np.array(
        [logmeanexp(terms[b * size:(b + 1) * size]) for b in range(n_batches)]
    )
    ratio = np.exp(batch - logmeanexp(batch))
    return est, float(np.std(ratio, ddof=1) / math.sqrt(n_batches))


def _mean_se(values: np.ndarray) -> tuple[float, Optional[float]]:
    values = np.asarray(values, dtype=float)
    n_batches = min(N_BATCHES, values.size)
    if n_batches < 2:
        return float(values.mean()), None
    size = values.size // n_batches
    means = values[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(values.mean()), float(np.std(means, ddof=1) / math.sqrt(n_batches))


def _stream_seeds(seed) -> list[np.random.SeedSequence]:
    """Independent child seeds: [tempered stream, posterior stream]."""
    return np.random.SeedSequence(seed).spawn(2)


def ml_exact(
    dataset: Union[Dataset, PackedData],
    K: int,
    all_labelings: bool = True,
    budget: int = EXACT_BUDGET,
    priors: Optional[Sequence[Prior]] = None,
) -> MLEstimate:
    """Sum the likelihood over every assignment.

    With ``all_labelings=False`` only assignments that leave no cluster
    empty are summed, under a uniform prior over that smaller set.
    """
    packed = _packed(dataset, priors)
    N = packed.n_rows
    total = K**N
    if total > budget:
        raise ValueError(
            f"{K}**{N} assignments exceed the enumeration budget {budget}; "
            "use a sampling estimator (ti, hmbeta)"
        )
    t0 = time.perf_counter()
    mx, acc, terms = _jit.enumerate_log_sum(packed.arrays, N, K, not all_labelings, 0, total)
    lse = mx + math.log(acc)
    log_ml = lse - N * math.log(K) if all_labelings else lse - math.log(terms)
    return MLEstimate(log_ml, "exact", int(terms), K=K,
                      wall_time_ms=1e3 * (time.perf_counter() - t0))


def uniform_assignments(rng: np.random.Generator, n_samples: int, N: int, K: int) -> np.ndarray:
    """Uniform assignments drawn exactly as an infinite-temperature sweep would."""
    out = np.empty((n_samples, N), dtype=np.int64)
    for s in range(n_samples):
        out[s] = np.floor(rng.random(N) * K).astype(np.int64)
    return np.minimum(out, K - 1)


def ml_am(
    dataset: Union[Dataset, PackedData],
    K: int,
    n_samples: int = 10_000,
    seed=None,
    priors: Optional[Sequence[Prior]] = None,
) -> MLEstimate:
    """Arithmetic mean of the likelihood over uniformly drawn assignments."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    packed = _packed(dataset, priors)
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    ll = _jit.assignment_log_liks(packed.arrays, uniform_assignments(rng, n_samples, packed.n_rows, K), K)
    est, se = _log_mean_se(ll)
    return MLEstimate(est, "am", n_samples, K=K, mc_std_error=se, seed=seed,
                      wall_time_ms=1e3 * (time.perf_counter() - t0))


def harmonic_mean(log_liks: np.ndarray) -> tuple[float, Optional[float]]:
    est, se = _log_mean_se(-np.asarray(log_liks))
    return -est, se


def hmbeta_from_samples(
    tempered: np.ndarray, posterior: np.ndarray, beta: float
) -> tuple[float, Optional[float]]:
    """Combine the two sample streams of the tempered harmonic-mean estimator.

    ``tempered`` holds log likelihoods drawn from ``P(D|A)**beta`` and
    ``posterior`` from ``P(D|A)``;
    ``log ML = -log<L**-beta>_tempered - log<L**(beta-1)>_posterior``.
    """
    t_est, t_se = _log_mean_se(-beta * np.asarray(tempered))
    p_est, p_se = _log_mean_se((beta - 1.0) * np.asarray(posterior))
    errs = [e for e in (t_se, p_se) if e is not None]
    se = math.sqrt(sum(e * e for e in errs)) if errs else None
    return -t_est - p_est, se


def ml_hm(
    dataset: Union[Dataset, PackedData],
    K: int,
    n_samples: int = 10_000,
    burn_in: int = 1000,
    seed=None,
    init: Optional[Sequence[int]] = None,
    priors: Optional[Sequence[Prior]] = None,
) -> MLEstimate:
    """Harmonic mean of the likelihood over posterior samples."""
    t0 = time.perf_counter()
    sampler = AssignmentSampler(dataset, K, 1.0, _stream_seeds(seed)[1], init, priors)
    ll = sampler.run(n_samples, burn_in)
    est, se = harmonic_mean(ll)
    return MLEstimate(est, "hm", n_samples, K=K, mc_std_error=se, seed=seed,
                      wall_time_ms=1e3 * (time.perf_counter() - t0),
                      details={"posterior_log_liks": ll})


def ml_hmbeta(
    dataset: Union[Dataset, PackedData],
    K: int,
    beta: float = 0.5,
    n_samples: int = 10_000,
    burn_in: int = 1000,
    seed=None,
    init: Optional[Sequence[int]] = None,
    priors: Optional[Sequence[Prior]] = None,
) -> MLEstimate:
    """Tempered harmonic-mean estimate from a beta-chain and a posterior chain.

    The posterior chain uses the same seed derivation as :func:`ml_hm`, and at
    ``beta == 1`` it also serves as the tempered chain.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    packed = _packed(dataset, priors)
    t0 = time.perf_counter()
    tempered_seed, posterior_seed = _stream_seeds(seed)
    posterior = AssignmentSampler(packed, K, 1.0, posterior_seed, init).run(n_samples, burn_in)
    if beta == 1.0:
        tempered = posterior
    else:
        tempered = AssignmentSampler(packed, K, beta, tempered_seed, init).run(n_samples, burn_in)
    est, se = hmbeta_from_samples(tempered, posterior, beta)
    return MLEstimate(est, "hmbeta", n_samples, K=K, mc_std_error=se, beta=beta, seed=seed,
                      wall_time_ms=1e3 * (time.perf_counter() - t0),
                      details={"tempered_log_liks": tempered, "posterior_log_liks": posterior})


def ml_ti(
    dataset: Union[Dataset, PackedData],
    K: int,
    ladder: Optional[TILadder] = None,
    seed=None,
    init: Optional[Sequence[int]] = None,
    priors: Optional[Sequence[Prior]] = None,
) -> MLEstimate:
    """Thermodynamic integration of the mean log likelihood over beta in [0, 1]."""
    ladder = ladder or TILadder()
    if not isinstance(ladder, TILadder):
        raise TypeError("ladder must be a TILadder")
    packed = _packed(dataset, priors)
    t0 = time.perf_counter()
    seeds = np.random.SeedSequence(seed).spawn(ladder.n_points)
    means = np.empty(ladder.n_points)
    errs = np.empty(ladder.n_points)
    for r, (beta, s) in enumerate(zip(ladder.betas, seeds)):
        ll = AssignmentSampler(packed, K, float(beta), s, init).run(ladder.sweeps, ladder.burn_in)
        mean, se = _mean_se(ll)
        means[r] = mean
        errs[r] = se or 0.0
    w = ladder.weights()
    est = float(w @ means)
    se = float(math.sqrt(np.sum((w * errs) ** 2)))
    return MLEstimate(est, "ti", ladder.sweeps * ladder.n_points, K=K, mc_std_error=se,
                      ladder=ladder, seed=seed,
                      wall_time_ms=1e3 * (time.perf_counter() - t0),
                      details={"betas": ladder.betas, "rung_means": means, "rung_std_errors": errs})


def bic_param_count(dataset: Dataset, K: int) -> int:
    per_cluster = 0
    for i in range(dataset.n_columns):
        per_cluster += dataset.schema.kind(i).k - 1 if dataset.is_categorical(i) else 2
    return K * per_cluster + (K - 1)


def bic(result: ClusteringResult, dataset: Optional[Dataset] = None) -> float:
    """``-2 log L + d log N`` at the fitted assignment; lower is better."""
    dataset = dataset if dataset is not None else result.state.dataset
    d = bic_param_count(dataset, result.K)
    return -2.0 * result.log_lik + d * math.log(dataset.n_rows)


def criterion(estimate: MLEstimate) -> float:
    """Larger-is-better score of an estimate (BIC is negated)."""
    if estimate.estimator == "bic":
        return -estimate.log_ml
    return estimate.log_ml


def select_k(values: Union[Mapping[int, float], Sequence[float]]) -> int:
    """The K with the largest criterion; ties go to the smallest K."""
    if not isinstance(values, Mapping):
        values = {K: v for K, v in enumerate(values, 1)}
    if not values:
        raise ValueError("no candidates")
    best = None
    for K in sorted(values):
        if best is None or values[K] > values[best]:
            best = K
    return best


def estimate(
    method: str,
    dataset: Union[Dataset, PackedData],
    K: int,
    result: Optional[ClusteringResult] = None,
    seed=0,
    n_samples: int = 10_000,
    burn_in: int = 1000,
    beta: float = 0.5,
    ladder: Optional[TILadder] = None,
    all_labelings: bool = True,
    priors: Optional[Sequence[Prior]] = None,
) -> MLEstimate:
    """Dispatch to one estimator; samplers start from ``result``'s assignment."""
    packed = _packed(dataset, priors)
    k_seed = [seed, K] if seed is not None else None
    init = None
    if result is not None:
        init = result.assignment
        if result.K > K:
            raise ValueError(f"result has {result.K} clusters but K={K}")
    if method == "exact":
        return ml_exact(packed, K, all_labelings)
    if method == "am":
        return ml_am(packed, K, n_samples, k_seed)
    if method == "hm":
        return ml_hm(packed, K, n_samples, burn_in, k_seed, init)
    if method == "hmbeta":
        return ml_hmbeta(packed, K, beta, n_samples, burn_in, k_seed, init)
    if method == "ti":
        return ml_ti(packed, K, ladder, k_seed, init)
    if method == "bic":
        t0 = time.perf_counter()
        if result is None:
            result = fit_k(packed, K, seed=seed)
        return MLEstimate(bic(result, packed.dataset), "bic", 0, K=K, seed=seed,
                          wall_time_ms=1e3 * (time.perf_counter() - t0))
    raise ValueError(f"unknown estimator {method!r}; choose from {ESTIMATORS}")
