import itertools
import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import logsumexp

from conftest import make_dataset, ref_log_lik
from mmm.engine import ClusterState, default_priors, fit_k
from mmm.selection import (
    AssignmentSampler,
    MLEstimate,
    TILadder,
    bic,
    bic_param_count,
    criterion,
    estimate,
    gibbs_step,
    harmonic_mean,
    hmbeta_from_samples,
    ml_am,
    ml_exact,
    ml_hm,
    ml_hmbeta,
    ml_ti,
    select_k,
    sweep_transition_matrix,
)


def brute_force_log_ml(ds, K, all_labelings=True):
    priors = default_priors(ds)
    terms = []
    for a in itertools.product(range(K), repeat=ds.n_rows):
        a = np.array(a)
        if not all_labelings and len(set(a.tolist())) < K:
            continue
        terms.append(ref_log_lik(ds, priors, a, K))
    return logsumexp(terms) - math.log(len(terms)), len(terms)


def toy(seed, n=8):
    rng = np.random.default_rng(seed)
    truth = np.arange(n) % 2
    x = np.where(truth == 0, -1.5, 1.5) + 0.6 * rng.standard_normal(n)
    b = np.where(rng.random(n) < 0.8, truth, 1 - truth)
    return make_dataset([x], [(b, 2)], standardize=True)


# ---------------------------------------------------------------------- exact


def test_exact_two_row_hand_enumeration():
    ds = make_dataset(categorical=[([0, 1], 2)])
    # together: B(2,2)/B(1,1) = 1/6; apart: 1/2 * 1/2
    est = ml_exact(ds, 2)
    assert est.n_samples == 4 and est.mc_std_error is None
    assert est.log_ml == pytest.approx(math.log((2 / 6 + 2 / 4) / 4), abs=1e-12)
    est = ml_exact(ds, 2, all_labelings=False)
    assert est.n_samples == 2
    assert est.log_ml == pytest.approx(math.log(1 / 4), abs=1e-12)


@pytest.mark.parametrize("K, n", [(2, 7), (3, 5)])
@pytest.mark.parametrize("all_labelings", [True, False])
def test_exact_matches_brute_force(K, n, all_labelings):
    ds = toy(K + n, n)
    expected, count = brute_force_log_ml(ds, K, all_labelings)
    est = ml_exact(ds, K, all_labelings)
    assert est.n_samples == count
    assert est.log_ml == pytest.approx(expected, abs=1e-10)


def test_exact_k1_and_budget():
    ds = toy(1)
    assert ml_exact(ds, 1).log_ml == pytest.approx(ClusterState(ds, 1, np.zeros(8, int)).log_lik())
    with pytest.raises(ValueError, match="budget"):
        ml_exact(ds, 2, budget=100)


def test_exact_twenty_row_term_count(two_blob):
    ds, _ = two_blob
    assert ml_exact(ds, 2, all_labelings=False).n_samples == 1_048_574
    assert ml_exact(ds, 2).n_samples == 2**20


# -------------------------------------------------------------- AM, HM, HMbeta


def test_k1_estimators_are_exact():
    ds = toy(2)
    exact = ml_exact(ds, 1).log_ml
    assert ml_am(ds, 1, 50, seed=0).log_ml == pytest.approx(exact, abs=1e-12)
    assert ml_hm(ds, 1, 50, 5, seed=0).log_ml == pytest.approx(exact, abs=1e-12)
    assert ml_hmbeta(ds, 1, 0.5, 50, 5, seed=0).log_ml == pytest.approx(exact, abs=1e-12)
    assert ml_ti(ds, 1, TILadder(5, 1.0, 20, 0), seed=0).log_ml == pytest.approx(exact, abs=1e-12)


def test_constant_likelihood_data():
    ds = make_dataset(categorical=[([1] * 6, 2)])
    exact = ml_exact(ds, 1).log_ml
    for est in (ml_am(ds, 1, 100, seed=1), ml_hm(ds, 1, 100, 10, seed=1)):
        assert est.log_ml == pytest.approx(exact, abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_am_within_error_of_exact(seed):
    ds = toy(seed, 10)
    exact = ml_exact(ds, 2).log_ml
    est = ml_am(ds, 2, 100_000, seed=seed)
    assert abs(est.log_ml - exact) <= 3 * est.mc_std_error
    assert est.log_ml <= exact + 3 * est.mc_std_error


def test_hm_overshoots_more_than_hmbeta():
    ds = toy(4, 10)
    exact = ml_exact(ds, 2).log_ml
    hm_over = hmb_over = 0
    for rep in range(50):
        hm_over += ml_hm(ds, 2, 2000, 200, seed=rep).log_ml > exact
        hmb_over += ml_hmbeta(ds, 2, 0.5, 2000, 200, seed=rep).log_ml > exact
    assert hm_over > hmb_over


def test_hmbeta_one_is_hm_on_shared_stream():
    ds = toy(5, 12)
    hm = ml_hm(ds, 2, 500, 50, seed=9)
    hmb = ml_hmbeta(ds, 2, 1.0, 500, 50, seed=9)
    np.testing.assert_array_equal(hm.details["posterior_log_liks"],
                                  hmb.details["tempered_log_liks"])
    assert abs(hmb.log_ml - hm.log_ml) <= 1e-12


def test_hmbeta_zero_is_am_form_over_posterior_stream():
    ds = toy(6, 12)
    est = ml_hmbeta(ds, 2, 0.0, 500, 50, seed=4)
    post = est.details["posterior_log_liks"]
    am_form = logsumexp(-post) - math.log(post.size)
    assert abs(est.log_ml - (-am_form)) <= 1e-12


def test_infinite_temperature_chain_reproduces_am_draws():
    ds = toy(7, 12)
    init = np.zeros(12, dtype=np.int64)
    chain = AssignmentSampler(ds, 3, 0.0, seed=21, init=init).run(400)
    am = ml_am(ds, 3, 400, seed=21)
    assert abs(am.log_ml - (logsumexp(chain) - math.log(400))) <= 1e-12


def test_hmbeta_from_samples_algebra(rng):
    t = rng.normal(-50, 3, 200)
    p = rng.normal(-45, 2, 200)
    beta = 0.3
    est, se = hmbeta_from_samples(t, p, beta)
    expected = -(logsumexp(-beta * t) - math.log(200)) - (logsumexp((beta - 1) * p) - math.log(200))
    assert est == pytest.approx(expected, abs=1e-12)
    assert se >= 0
    assert harmonic_mean(p)[0] == pytest.approx(-(logsumexp(-p) - math.log(200)), abs=1e-12)


def test_hmbeta_rejects_bad_beta():
    with pytest.raises(ValueError):
        ml_hmbeta(toy(1), 2, 1.5, 10, 0)


def test_estimators_close_to_exact_on_twenty_rows(two_blob):
    ds, _ = two_blob
    exact = ml_exact(ds, 2, all_labelings=False).log_ml
    # the labeling conventions differ by log((2**20 - 2) / 2**20) plus two tiny terms
    assert ml_exact(ds, 2).log_ml == pytest.approx(exact, abs=1e-3)
    ti = ml_ti(ds, 2, TILadder(11, 1.0, 2000, 400), seed=0)
    hmb = ml_hmbeta(ds, 2, 0.5, 10_000, 1000, seed=0)
    assert abs(ti.log_ml - exact) <= 0.5
    assert abs(hmb.log_ml - exact) <= 1.0


def test_selected_k_agrees_across_estimators(two_blob):
    ds, _ = two_blob
    exact = {K: ml_exact(ds, K).log_ml for K in (1, 2)}
    ti = {K: ml_ti(ds, K, TILadder(11, 1.0, 1000, 200), seed=1).log_ml for K in (1, 2)}
    hmb = {K: ml_hmbeta(ds, K, 0.5, 4000, 400, seed=1).log_ml for K in (1, 2)}
    assert select_k(exact) == select_k(ti) == select_k(hmb) == 2


@pytest.mark.parametrize("seed", range(3))
def test_oracle_agreement_small_data(seed):
    ds = toy(100 + seed, 12)
    for K in (2, 3):
        exact = ml_exact(ds, K).log_ml
        ti = ml_ti(ds, K, TILadder(11, 1.0, 1000, 200), seed=seed)
        hmb = ml_hmbeta(ds, K, 0.5, 4000, 400, seed=seed)
        for est in (ti, hmb):
            assert abs(est.log_ml - exact) <= 3 * est.mc_std_error + 1.0


# ------------------------------------------------------------------------- TI


def test_ti_rung_means_increase_with_beta(two_blob):
    ds, _ = two_blob
    est = ml_ti(ds, 2, TILadder(11, 1.0, 1000, 200), seed=3)
    means = est.details["rung_means"]
    errs = est.details["rung_std_errors"]
    for r in range(len(means) - 1):
        assert means[r + 1] >= means[r] - 3 * math.hypot(errs[r], errs[r + 1])


def test_ladder_weights_integrate_polynomials():
    for power in (1.0, 3.0):
        lad = TILadder(11, power)
        b = lad.betas
        assert b[0] == 0.0 and b[-1] == 1.0 and np.all(np.diff(b) > 0)
        # int_0^1 beta^2 d beta = 1/3, exact under Simpson in t for power 1
        assert lad.weights() @ b**2 == pytest.approx(1 / 3, abs=1e-3 if power != 1 else 1e-12)
        assert lad.weights().sum() == pytest.approx(1.0, abs=1e-12 if power == 1 else 1e-3)


@pytest.mark.parametrize("n", [2, 4, 1])
def test_ladder_requires_odd_points(n):
    with pytest.raises(ValueError):
        TILadder(n)


def test_ti_type_check():
    with pytest.raises(TypeError):
        ml_ti(toy(1), 2, ladder=(0.0, 0.5, 1.0))


# -------------------------------------------------------------------- sampler


def test_infinite_temperature_is_uniform():
    ds = toy(3, 3)
    sampler = AssignmentSampler(ds, 2, 0.0, seed=5)
    counts = np.zeros(8)
    for _ in range(10_000):
        gibbs_step(sampler)
        a = sampler.state.assignment
        counts[a[0] + 2 * a[1] + 4 * a[2]] += 1
    assert stats.chisquare(counts).pvalue > 0.001


def test_posterior_sampler_matches_enumeration():
    ds = make_dataset(categorical=[([0, 1], 2)])
    probs = np.array([1 / 6, 1 / 4, 1 / 4, 1 / 6])  # states (0,0),(1,0),(0,1),(1,1)
    probs /= probs.sum()
    sampler = AssignmentSampler(ds, 2, 1.0, seed=8)
    counts = np.zeros(4)
    for _ in range(100_000):
        sampler.step()
        a = sampler.state.assignment
        counts[a[0] + 2 * a[1]] += 1
    np.testing.assert_allclose(counts / counts.sum(), probs, atol=0.02)


@pytest.mark.parametrize("beta", [0.0, 0.3, 0.5, 1.0])
def test_sweep_kernel_stationary(beta):
    ds = toy(11, 3)
    T, assignments = sweep_transition_matrix(ds, 2, beta)
    np.testing.assert_allclose(T.sum(axis=1), 1.0, atol=1e-12)
    priors = default_priors(ds)
    logp = np.array([beta * ref_log_lik(ds, priors, a, 2) for a in assignments])
    pi = np.exp(logp - logsumexp(logp))
    np.testing.assert_allclose(pi @ T, pi, atol=1e-8)


def test_sampler_deterministic_and_validated():
    ds = toy(12, 10)
    a = AssignmentSampler(ds, 3, 0.5, seed=1).run(50, 5)
    b = AssignmentSampler(ds, 3, 0.5, seed=1).run(50, 5)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        AssignmentSampler(ds, 3, -0.1)


def test_estimates_deterministic(two_blob):
    ds, _ = two_blob
    for method in ("am", "hm", "hmbeta", "ti"):
        kw = {"ladder": TILadder(5, 1.0, 100, 10)} if method == "ti" else {"n_samples": 300,
                                                                          "burn_in": 30}
        a = estimate(method, ds, 2, seed=3, **kw)
        b = estimate(method, ds, 2, seed=3, **kw)
        assert a.log_ml == b.log_ml and a.mc_std_error == b.mc_std_error


# ------------------------------------------------------------------------ BIC


def test_bic_parameter_counts():
    one = make_dataset([[0.1, 0.5, 0.9]])
    assert bic_param_count(one, 1) == 2
    res = fit_k(one, 1)
    assert bic(res, one) == pytest.approx(-2 * res.log_lik + 2 * math.log(3))
    cats = make_dataset(categorical=[([0, 1], 2)] * 5 + [([0, 3], 4)] * 5)
    assert bic_param_count(cats, 5) == 104


def test_bic_criterion_is_negated():
    est = MLEstimate(100.0, "bic", 0)
    assert criterion(est) == -100.0
    assert criterion(MLEstimate(-5.0, "ti", 10)) == -5.0


def test_select_k():
    assert select_k({3: -1.0}) == 3
    assert select_k([-1.0, -2.0, -3.0]) == 1
    assert select_k({1: -5.0, 2: -3.0, 3: -3.0}) == 2
    with pytest.raises(ValueError):
        select_k({})


def test_estimate_dispatch_errors():
    with pytest.raises(ValueError):
        estimate("laplace", toy(1), 2)
