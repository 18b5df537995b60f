import numpy as np
import pytest

from dptr_cli.core_api import pooling
from dptr_cli.core_api.dgp import linear_truth
from dptr_cli.core_api.exceptions import (
    EmptyInputError,
    InvalidParameterError,
    MissingDesignFactorError,
    NonPositiveTau0Error,
)
from dptr_cli.core_api.metrics import reward
from dptr_cli.core_api.models import (
    AteEstimate,
    EstimateBatch,
    OracleParams,
    PerExperimentBeta,
    PoolingPlan,
    SharedBeta,
    WeightSpec,
    z_quantile,
)
from dptr_cli.core_api.rng import stream

Z = z_quantile(0.05)
BASELINE_PARAMS = OracleParams(tau0=1.0, sigma0_sq=9.0, sigma_sq=9.0, n=10, alpha=0.05)


def _batch(tau_hat, v, n=4, b=None):
    return EstimateBatch.from_variance(tau_hat, v, [n] * len(tau_hat), 0.05, b=b)


@pytest.fixture
def two_point():
    return _batch([0.0, 2.0], [2.0, 2.0])


@pytest.fixture
def random_batch():
    rng = stream(1, "pooling-test")
    return _batch(rng.normal(1.0, 3.0, 300), rng.uniform(10.0, 60.0, 300), n=10)


# --- Anchor ---
@pytest.mark.parametrize(
    "tau_hat, expected",
    [([0.0, 2.0], 1.0), ([3.5] * 5, 3.5), ([-1, -1, 0, 0, 1, 1, 1], 1.0 / 7.0)],
)
def test_anchor_is_arithmetic_mean(tau_hat, expected):
    assert pooling.anchor(_batch(tau_hat, [1.0] * len(tau_hat))) == pytest.approx(expected, abs=1e-12)


def test_anchor_accepts_sequence_of_estimates():
    estimates = [AteEstimate.from_variance(t, 1.0, 4, 0.05) for t in (0.0, 2.0)]
    assert pooling.anchor(estimates) == pytest.approx(1.0)


def test_anchor_of_nothing_raises():
    with pytest.raises(EmptyInputError):
        pooling.anchor([])


# --- Shared beta ---
def test_shared_beta_hand_example(two_point):
    # V = 2, M = 1, denominator 0.5, first term 4, second z * sqrt(8) / 1
    assert pooling.shared_beta(two_point, 0.05, 4) == pytest.approx(4.0 + Z * np.sqrt(8.0), rel=1e-12)


def test_shared_beta_degenerate_denominator_pools_fully():
    batch = _batch([0.9, 1.1], [2.0, 2.0])
    plan = pooling.fit_plan(batch, 0.05, n=4)
    assert plan.beta.value == pooling.beta_max(4)
    assert plan.degenerate_denominator


def test_shared_beta_drops_significance_term_for_nonpositive_anchor():
    batch = _batch([-2.0, 0.0], [2.0, 2.0])
    plan = pooling.fit_plan(batch, 0.05, n=4)
    assert plan.beta.value == pytest.approx(4.0)
    assert plan.nonpositive_anchor and not plan.degenerate_denominator


def test_shared_beta_first_term_vanishes_with_large_spread():
    batch = _batch([1.0 - 1e4, 1.0 + 1e4], [2.0, 2.0])
    second_term = Z * np.sqrt(8.0) / 1.0
    assert pooling.shared_beta(batch, 0.05, 4) == pytest.approx(second_term, rel=1e-6)


# --- Personalized beta ---
def test_personalized_beta_reduces_to_shared_with_equal_design_factors(random_batch):
    with_b = EstimateBatch.from_variance(
        random_batch.tau_hat, random_batch.v, random_batch.n, 0.05, b=np.full(len(random_batch), 2.0)
    )
    shared = pooling.shared_beta(random_batch, 0.05, 10)
    assert pooling.personalized_betas(with_b, 0.05, 10) == pytest.approx(np.full(len(random_batch), shared))


def test_personalized_beta_scales_with_design_factor():
    # b_k^2 enters the first term, b_k the second; the averages stay fixed when b is swapped.
    tau_hat = [0.0, 4.0, 1.0, 3.0]
    b = np.array([1.0, 2.0, 2.0, 1.0])
    batch = _batch(tau_hat, 0.5 * b**2, b=b)
    betas = pooling.personalized_betas(batch, 0.05, 4)
    s_bar, b_bar, m = 0.5, 2.5, 2.5
    first = b**2 * s_bar / (m - b_bar * s_bar / 4)
    second = Z * b * np.sqrt(4 * s_bar) / 2.0
    assert betas == pytest.approx(first + second)
    assert first[1] == pytest.approx(4 * first[0])


def test_personalized_beta_degenerate_hand_example():
    batch = _batch([0.0, 2.0], [8.0, 8.0], b=[2.0, 2.0])
    assert pooling.personalized_beta(batch, 0.05, 4, 1) == pooling.beta_max(4)


def test_personalized_beta_without_design_factor_raises(two_point):
    with pytest.raises(MissingDesignFactorError):
        pooling.personalized_betas(two_point, 0.05, 4)


# --- Bayes beta ---
def test_bayes_beta_hand_example(two_point):
    for k in range(2):
        assert pooling.bayes_beta(two_point.estimate(k), two_point, 4) == pytest.approx(4.0)


def test_bayes_beta_zero_variance_means_no_shrinkage():
    batch = _batch([0.0, 2.0, 5.0], [0.0, 2.0, 2.0])
    assert pooling.bayes_betas(batch, 4)[0] == 0.0


def test_bayes_beta_nonpositive_prior_variance_hits_the_cap():
    batch = _batch([0.9, 1.1], [2.0, 2.0])
    assert pooling.bayes_betas(batch, 4) == pytest.approx(np.full(2, pooling.beta_max(4)))


# --- Oracle beta ---
def test_oracle_beta_matches_closed_form():
    assert pooling.oracle_beta(BASELINE_PARAMS) == pytest.approx(41.183, abs=0.01)
    assert pooling.oracle_beta(BASELINE_PARAMS) == pytest.approx(4.0 + 2.0 * np.sqrt(10) * Z * 3.0)


def test_oracle_beta_personalized_reduces_at_b_two():
    assert pooling.oracle_beta_personalized(BASELINE_PARAMS, 2.0) == pytest.approx(pooling.oracle_beta(BASELINE_PARAMS))
    assert pooling.oracle_beta_personalized(BASELINE_PARAMS, 0.0) == 0.0
    assert pooling.oracle_beta_personalized(BASELINE_PARAMS, 1.0) == pytest.approx(1.0 + np.sqrt(10) * Z * 3.0)


def test_oracle_beta_limits():
    wide_prior = OracleParams(tau0=1.0, sigma0_sq=1e12, sigma_sq=9.0, n=10, alpha=0.05)
    large_tau0 = OracleParams(tau0=1e12, sigma0_sq=9.0, sigma_sq=9.0, n=10, alpha=0.05)
    assert pooling.oracle_beta(wide_prior) == pytest.approx(2.0 * np.sqrt(10) * Z * 3.0, rel=1e-9)
    assert pooling.oracle_beta(large_tau0) == pytest.approx(4.0, rel=1e-9)


def test_oracle_beta_needs_positive_tau0():
    with pytest.raises(NonPositiveTau0Error):
        pooling.oracle_beta(OracleParams(tau0=0.0, sigma0_sq=9.0, sigma_sq=9.0, n=10, alpha=0.05))


# --- Shrinkage ---
def test_shrink_zero_beta_is_identity():
    est = AteEstimate.from_variance(2.0, 4.0, 10, 0.05)
    assert pooling.shrink(est, 0.0, -3.0, 10) == (est.tau_hat, est.lb, est.ub)


def test_shrink_half_weight():
    est = AteEstimate.from_variance(2.0, 4.0, 10, 0.05)
    assert pooling.shrink(est, 10.0, 0.0, 10).tau_bar == pytest.approx(1.0)


def test_shrink_full_pooling_collapses_interval():
    est = AteEstimate.from_variance(2.0, 4.0, 10, 0.05)
    shrunk = pooling.shrink(est, pooling.beta_max(10), 0.5, 10)
    assert shrunk.tau_bar == pytest.approx(0.5, abs=1e-5)
    assert shrunk.ub_bar - shrunk.lb_bar == pytest.approx(0.0, abs=1e-5)


def test_shrink_rejects_negative_beta():
    with pytest.raises(InvalidParameterError):
        pooling.shrink(AteEstimate.from_variance(2.0, 4.0, 10, 0.05), -1.0, 0.0, 10)


def test_shrink_moves_monotonically_toward_anchor():
    est = AteEstimate.from_variance(2.0, 4.0, 10, 0.05)
    path = [pooling.shrink(est, beta, 0.0, 10).tau_bar for beta in np.linspace(0.0, 500.0, 50)]
    assert all(a > b for a, b in zip(path, path[1:]))


# --- Decisions ---
def test_decide_iht_uses_strict_inequality():
    batch = EstimateBatch(
        tau_hat=np.array([1.0, 2.0]),
        v=np.array([1.0, 1.0]),
        n=np.array([4, 4]),
        lb=np.array([0.0, 0.5]),
        ub=np.array([2.0, 3.5]),
    )
    assert pooling.decide_iht(batch).selected == frozenset({1})


def test_decide_dptr_with_zero_beta_equals_iht(random_batch):
    plan = PoolingPlan(tau0_hat=pooling.anchor(random_batch), beta=SharedBeta(value=0.0), alpha=0.05, n=10)
    assert pooling.decide_dptr(random_batch, plan).selected == pooling.decide_iht(random_batch).selected


def test_decide_dptr_full_pooling_with_positive_anchor_selects_everything(random_batch):
    plan = PoolingPlan(tau0_hat=0.7, beta=SharedBeta(value=pooling.beta_max(10)), alpha=0.05, n=10)
    decision = pooling.decide_dptr(random_batch, plan)
    assert decision.selected == frozenset(range(len(random_batch)))
    assert decision.method == "DPTR"


def test_decide_dptr_tags_personalized_plans(random_batch):
    plan = PoolingPlan(
        tau0_hat=1.0, beta=PerExperimentBeta(values=[5.0] * len(random_batch)), alpha=0.05, n=10
    )
    assert pooling.decide_dptr(random_batch, plan).method == "DPTR-P"


def test_dptr_can_roll_out_a_harmful_experiment_and_still_beat_iht():
    # ARRANGE
    truth = linear_truth([-1.0, -1.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    batch = _batch([1.0, -4.0, -3.0, 0.5, 2.5, 3.0, 3.5], [36.0] * 7, n=10)

    # ACT
    plan = pooling.fit_plan(batch, 0.05, n=10)
    dptr = pooling.decide_dptr(batch, plan)
    iht = pooling.decide_iht(batch)

    # ASSERT
    # anchor 0.5, beta about 84: the shrunk bound of the first estimate stays just above zero
    assert not plan.degenerate_denominator
    assert dptr.selected == frozenset({0, 3, 4, 5, 6})
    assert iht.selected == frozenset()
    weights = WeightSpec.uniform(7)
    assert reward(dptr, truth, weights) == pytest.approx(2.0 / 7.0)
    assert reward(dptr, truth, weights) > reward(iht, truth, weights)


def test_decide_bayes_point_posterior_is_sign_of_estimate():
    batch = _batch([-1.0, 0.5, 2.0], [0.0, 0.0, 0.0])
    assert pooling.decide_bayes(batch, 0.05, 4).selected == frozenset({1, 2})


def test_decide_bayes_strong_prior_selects_all_with_positive_anchor():
    batch = _batch([0.9, 1.0, 1.1], [5.0, 5.0, 5.0])
    assert pooling.decide_bayes(batch, 0.05, 4).selected == frozenset({0, 1, 2})


def test_decide_bayes_zero_posterior_mean_is_not_selected():
    symmetric = _batch([0.0, 0.0], [1.0, 1.0])
    mean, variance = pooling.posterior(symmetric, 4)
    assert mean == pytest.approx([0.0, 0.0])
    assert (variance > 0).all()
    assert pooling.decide_bayes(symmetric, 0.05, 4).selected == frozenset()


def test_posterior_mean_shrinks_toward_anchor(two_point):
    # beta = 4 and n = 4 give weight 1/2 on each estimate.
    mean, variance = pooling.posterior(two_point, 4)
    assert mean == pytest.approx([0.5, 1.5])
    assert variance == pytest.approx([0.25, 0.25])


# --- Plans ---
def test_fit_plan_records_anchor_and_shared_beta(two_point):
    plan = pooling.fit_plan(two_point, 0.05)
    assert plan.n == 4
    assert plan.tau0_hat == pytest.approx(1.0)
    assert plan.beta.value == pytest.approx(pooling.shared_beta(two_point, 0.05, 4))


def test_oracle_plan_uses_true_anchor_and_multiplier():
    plan = pooling.oracle_plan(BASELINE_PARAMS, multiplier=0.5)
    assert plan.tau0_hat == 1.0
    assert plan.beta.value == pytest.approx(0.5 * pooling.oracle_beta(BASELINE_PARAMS))


def test_oracle_plan_with_design_factors_is_personalized():
    plan = pooling.oracle_plan(BASELINE_PARAMS, b=np.array([1.0, 2.0]))
    assert plan.beta_array(2) == pytest.approx(
        [pooling.oracle_beta_personalized(BASELINE_PARAMS, 1.0), pooling.oracle_beta(BASELINE_PARAMS)]
    )


def test_pooled_sample_size_rounds_mean():
    batch = EstimateBatch.from_variance([0.0, 1.0, 2.0], [1.0, 1.0, 1.0], [10, 11, 13], 0.05)
    assert pooling.pooled_sample_size(batch) == 11
