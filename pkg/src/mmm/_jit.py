"""Compiled inner loops over packed cluster statistics.

Two tuples travel through every kernel:

``data``  = (cat_x, cat_c, cat_C, num_x, ng, lognum, logden, ngtab)
    cat_x  (C, N) int64 category codes
    cat_c  (C, kmax) float64 Dirichlet pseudocounts, zero-padded past k
    cat_C  (C,) float64 pseudocount totals
    num_x  (M, N) float64 numeric values
    ng     (M, 4) float64 rows of (mu0, beta0, a0, b0)
    lognum (C, kmax, N + 1) float64 table of log(count + c_x)
    logden (C, N + 1) float64 table of log(n + C)
    ngtab  (M, N + 1, 3) float64 table of (a_n, beta_n, const_n), where
           const_n = -log(pi)/2 + lgamma(a_n + 1/2) - lgamma(a_n)
                     + (log(a_n beta_n / (beta_n + 1)) - log(2 a_n)) / 2

``state`` = (assign, sizes, counts, nsum, numc)
    assign (N,) int64 cluster of each row
    sizes  (K,) int64 rows per cluster
    counts (K, C, kmax) int64 category counts
    nsum   (K, M, 2) float64 (sum, sum of squares)
    numc   (K, M, 4) float64 cache of predictive (mu_n, coef, exponent, const)

The numeric predictive is ``const - exponent * log(1 + coef * (x - mu_n)**2)``.
"""

import math

import numpy as np
from numba import njit

HALF_LOG_PI = 0.5 * math.log(math.pi)
LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True, nogil=True, inline="always")
def refresh(data, state, j):
    cat_x, cat_c, cat_C, num_x, ng, lognum, logden, ngtab = data
    assign, sizes, counts, nsum, numc = state
    n = sizes[j]
    for m in range(ng.shape[0]):
        a_n = ngtab[m, n, 0]
        beta_n = ngtab[m, n, 1]
        if n == 0:
            mu_n = ng[m, 0]
            b_n = ng[m, 3]
        else:
            mu0 = ng[m, 0]
            beta0 = ng[m, 1]
            s = nsum[j, m, 0]
            xbar = s / n
            scatter = nsum[j, m, 1] - s * s / n
            if scatter < 0.0:
                scatter = 0.0
            mu_n = (beta0 * mu0 + s) / beta_n
            b_n = ng[m, 3] + 0.5 * scatter + beta0 * n * (xbar - mu0) ** 2 / (2.0 * beta_n)
        numc[j, m, 0] = mu_n
        numc[j, m, 1] = beta_n / (2.0 * b_n * (beta_n + 1.0))
        numc[j, m, 2] = a_n + 0.5
        numc[j, m, 3] = ngtab[m, n, 2] - 0.5 * math.log(b_n)


@njit(cache=True, nogil=True)
def refresh_all(data, state):
    sizes = state[1]
    for j in range(sizes.shape[0]):
        refresh(data, state, j)


@njit(cache=True, nogil=True, inline="always")
def add_row(data, state, i, j):
    cat_x, cat_c, cat_C, num_x, ng, lognum, logden, ngtab = data
    assign, sizes, counts, nsum, numc = state
    assign[i] = j
    sizes[j] += 1
    for c in range(cat_x.shape[0]):
        counts[j, c, cat_x[c, i]] += 1
    for m in range(num_x.shape[0]):
        x = num_x[m, i]
        nsum[j, m, 0] += x
        nsum[j, m, 1] += x * x
    refresh(data, state, j)


@njit(cache=True, nogil=True, inline="always")
def remove_row(data, state, i):
    cat_x, cat_c, cat_C, num_x, ng, lognum, logden, ngtab = data
    assign, sizes, counts, nsum, numc = state
    j = assign[i]
    sizes[j] -= 1
    for c in range(cat_x.shape[0]):
        counts[j, c, cat_x[c, i]] -= 1
    if sizes[j] == 0:
        for m in range(num_x.shape[0]):
            nsum[j, m, 0] = 0.0
            nsum[j, m, 1] = 0.0
    else:
        for m in range(num_x.shape[0]):
            x = num_x[m, i]
            nsum[j, m, 0] -= x
            nsum[j, m, 1] -= x * x
    refresh(data, state, j)
    return j


@njit(cache=True, nogil=True, inline="always")
def row_scores(data, state, i, out):
    """Log predictive of row ``i`` under each cluster's current statistics."""
    cat_x, cat_c, cat_C, num_x, ng, lognum, logden, ngtab = data
    assign, sizes, counts, nsum, numc = state
    K = sizes.shape[0]
    for j in range(K):
        s = 0.0
        n = sizes[j]
        for c in range(cat_x.shape[0]):
            x = cat_x[c, i]
            s += lognum[c, x, counts[j, c, x]] - logden[c, n]
        for m in range(num_x.shape[0]):
            d = num_x[m, i] - numc[j, m, 0]
            s += numc[j, m, 3] - numc[j, m, 2] * math.log(1.0 + numc[j, m, 1] * d * d)
        out[j] = s


@njit(cache=True, nogil=True, inline="always")
def loo_scores(data, state, i, out):
    """Like :func:`row_scores`, but the home cluster is scored without row ``i``.

    The statistics are left untouched; returns the home cluster.
    """
    cat_x, cat_c, cat_C, num_x, ng, lognum, logden, ngtab = data
    assign, sizes, counts, nsum, numc = state
    home = assign[i]
    row_scores(data, state, i, out)
    n = sizes[home] - 1
    s = 0.0
    for c in range(cat_x.shape[0]):
        x = cat_x[c, i]
        s += lognum[c, x, counts[home, c, x] - 1] - logden[c, n]
    for m in range(num_x.shape[0]):
        x = num_x[m, i]
        a_n = ngtab[m, n, 0]
        beta_n = ngtab[m, n, 1]
        if n == 0:
            mu_n = ng[m, 0]
            b_n = ng[m, 3]
        else:
            mu0 = ng[m, 0]
            beta0 = ng[m, 1]
            sm = nsum[home, m, 0] - x
            xbar = sm / n
            scatter = nsum[home, m, 1] - x * x - sm * sm / n
            if scatter < 0.0:
                scatter = 0.0
            mu_n = (beta0 * mu0 + sm) / beta_n
            b_n = ng[m, 3] + 0.5 * scatter + beta0 * n * (xbar - mu0) ** 2 / (2.0 * beta_n)
        d = x - mu_n
        coef = beta_n / (2.0 * b_n * (beta_n + 1.0))
        s += ngtab[m, n, 2] - 0.5 * math.log(b_n) - (a_n + 0.5) * math.log(1.0 + coef * d * d)
    out[home] = s
    return home


@njit(cache=True, nogil=True, inline="always")
def move_row(data, state, i, j):
    if state[0][i] != j:
        remove_row(data, state, i)
        add_row(data, state, i, j)


@njit(cache=True, nogil=True, inline="always")
def _argmax_prefer(scores, home):
    best = 0
    for j in range(1, scores.shape[0]):
        if scores[j] > scores[best]:
            best = j
    if scores[home] >= scores[best]:
        return home
    return best


@njit(cache=True, nogil=True)
def em_pass(data, state):
    """Sequential reassignment of every row to its best leave-one-out cluster."""
    assign = state[0]
    K = state[1].shape[0]
    scores = np.empty(K)
    moved = 0
    for i in range(assign.shape[0]):
        home = loo_scores(data, state, i, scores)
        best = _argmax_prefer(scores, home)
        if best != home:
            move_row(data, state, i, best)
            moved += 1
    return moved


@njit(cache=True, nogil=True)
def em_pass_batch(data, state):
    """Score every row against frozen statistics, then move all at once."""
    assign = state[0]
    N = assign.shape[0]
    K = state[1].shape[0]
    scores = np.empty(K)
    target = np.empty(N, dtype=np.int64)
    for i in range(N):
        home = loo_scores(data, state, i, scores)
        target[i] = _argmax_prefer(scores, home)
    moved = 0
    for i in range(N):
        if target[i] != assign[i]:
            remove_row(data, state, i)
            add_row(data, state, i, target[i])
            moved += 1
    return moved


@njit(cache=True, nogil=True)
def loo_home_scores(data, state, out):
    """Leave-one-out score of every row against its own cluster."""
    assign = state[0]
    K = state[1].shape[0]
    scores = np.empty(K)
    for i in range(assign.shape[0]):
        home = loo_scores(data, state, i, scores)
        out[i] = scores[home]


@njit(cache=True, nogil=True, inline="always")
def _sample_index(logw, u):
    K = logw.shape[0]
    mx = logw[0]
    for j in range(1, K):
        if logw[j] > mx:
            mx = logw[j]
    total = 0.0
    for j in range(K):
        logw[j] = math.exp(logw[j] - mx)
        total += logw[j]
    target = u * total
    acc = 0.0
    for j in range(K):
        acc += logw[j]
        if target < acc:
            return j
    return K - 1


@njit(cache=True, nogil=True)
def gibbs_sweep(data, state, beta, uniforms):
    """One systematic-scan sweep of the tempered single-row Gibbs kernel."""
    assign = state[0]
    K = state[1].shape[0]
    scores = np.empty(K)
    for i in range(assign.shape[0]):
        if beta == 0.0:
            for j in range(K):
                scores[j] = 0.0
        else:
            loo_scores(data, state, i, scores)
            for j in range(K):
                scores[j] *= beta
        move_row(data, state, i, _sample_index(scores, uniforms[i]))


@njit(cache=True, nogil=True)
def log_lik(data, state):
    """Sum over clusters and columns of the closed-form log marginals."""
    cat_x, cat_c, cat_C, num_x, ng, lognum, logden, ngtab = data
    assign, sizes, counts, nsum, numc = state
    total = 0.0
    kmax = cat_c.shape[1]
    for j in range(sizes.shape[0]):
        n = sizes[j]
        if n == 0:
            continue
        for c in range(cat_C.shape[0]):
            for x in range(kmax):
                cnt = counts[j, c, x]
                if cnt > 0:
                    total += math.lgamma(cnt + cat_c[c, x]) - math.lgamma(cat_c[c, x])
            total += math.lgamma(cat_C[c]) - math.lgamma(cat_C[c] + n)
        for m in range(ng.shape[0]):
            mu0 = ng[m, 0]
            beta0 = ng[m, 1]
            a0 = ng[m, 2]
            b0 = ng[m, 3]
            s = nsum[j, m, 0]
            ss = nsum[j, m, 1]
            xbar = s / n
            scatter = ss - s * s / n
            if scatter < 0.0:
                scatter = 0.0
            beta_n = beta0 + n
            a_n = a0 + 0.5 * n
            b_n = b0 + 0.5 * scatter + beta0 * n * (xbar - mu0) ** 2 / (2.0 * beta_n)
            total += (
                math.lgamma(a_n)
                - math.lgamma(a0)
                + a0 * math.log(b0)
                - a_n * math.log(b_n)
                + 0.5 * (math.log(beta0) - math.log(beta_n))
                - 0.5 * n * LOG_2PI
            )
    return total


@njit(cache=True, nogil=True)
def fill_stats(data, assign, sizes, counts, nsum):
    cat_x, cat_c, cat_C, num_x, ng, lognum, logden, ngtab = data
    sizes[:] = 0
    counts[:] = 0
    nsum[:] = 0.0
    for i in range(assign.shape[0]):
        j = assign[i]
        sizes[j] += 1
        for c in range(cat_x.shape[0]):
            counts[j, c, cat_x[c, i]] += 1
        for m in range(num_x.shape[0]):
            x = num_x[m, i]
            nsum[j, m, 0] += x
            nsum[j, m, 1] += x * x


@njit(cache=True, nogil=True)
def assignment_log_liks(data, assignments, K):
    """Log likelihood of each row of ``assignments`` (shape (S, N))."""
    cat_x, cat_c, cat_C, num_x, ng, lognum, logden, ngtab = data
    S = assignments.shape[0]
    sizes = np.zeros(K, dtype=np.int64)
    counts = np.zeros((K, cat_c.shape[0], cat_c.shape[1]), dtype=np.int64)
    nsum = np.zeros((K, ng.shape[0], 2))
    numc = np.zeros((K, ng.shape[0], 4))
    out = np.empty(S)
    for s in range(S):
        assign = assignments[s]
        fill_stats(data, assign, sizes, counts, nsum)
        out[s] = log_lik(data, (assign, sizes, counts, nsum, numc))
    return out


@njit(cache=True, nogil=True)
def enumerate_log_sum(data, N, K, skip_empty, start, stop):
    """Stream ``logsumexp`` of log L(A) over assignment indices [start, stop).

    Index ``t`` encodes row ``i``'s cluster as the ``i``-th base-``K`` digit.
    Returns (running max, scaled sum, number of terms).
    """
    cat_x, cat_c, cat_C, num_x, ng, lognum, logden, ngtab = data
    assign = np.zeros(N, dtype=np.int64)
    sizes = np.zeros(K, dtype=np.int64)
    counts = np.zeros((K, cat_c.shape[0], cat_c.shape[1]), dtype=np.int64)
    nsum = np.zeros((K, ng.shape[0], 2))
    numc = np.zeros((K, ng.shape[0], 4))
    state = (assign, sizes, counts, nsum, numc)
    mx = -np.inf
    acc = 0.0
    terms = 0
    for t in range(start, stop):
        r = t
        for i in range(N):
            assign[i] = r % K
            r //= K
        fill_stats(data, assign, sizes, counts, nsum)
        if skip_empty:
            empty = False
            for j in range(K):
                if sizes[j] == 0:
                    empty = True
            if empty:
                continue
        v = log_lik(data, state)
        terms += 1
        if v > mx:
            acc = acc * math.exp(mx - v) + 1.0
            mx = v
        else:
            acc += math.exp(v - mx)
    return mx, acc, terms
