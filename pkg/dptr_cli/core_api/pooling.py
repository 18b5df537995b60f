# dptr_cli/core_api/pooling.py
"""Anchors, scale parameters, shrinkage and the three roll-out decision rules.

Shrinkage moves each estimate toward the anchor tau0 with weight
w = n / (n + beta); the DPTR rule then rolls out experiment k iff its
shrunk lower bound is strictly positive.
"""
import logging
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy.stats import norm

from dptr_cli.core import config
from dptr_cli.core_api.exceptions import (
    EmptyInputError,
    InvalidParameterError,
    MissingDesignFactorError,
    NonPositiveTau0Error,
)
from dptr_cli.core_api.models import (
    AteEstimate,
    DecisionMethod,
    DecisionSet,
    EstimateInput,
    OracleParams,
    PerExperimentBeta,
    PoolingPlan,
    SharedBeta,
    as_batch,
    z_quantile,
)

logger = logging.getLogger(__name__)


class ShrunkEstimate(NamedTuple):
    tau_bar: float
    lb_bar: float
    ub_bar: float


class _BetaResult(NamedTuple):
    values: np.ndarray
    degenerate_denominator: bool
    nonpositive_anchor: bool


def beta_max(n: int) -> float:
    return config.BETA_MAX_FACTOR * n


def anchor(estimates: EstimateInput) -> float:
    """Arithmetic mean of the point estimates."""
    batch = as_batch(estimates)
    if len(batch) == 0:
        raise EmptyInputError("Cannot compute an anchor from zero estimates.")
    return float(np.mean(batch.tau_hat))


def _spread(tau_hat: np.ndarray, tau0: float) -> float:
    return float(np.mean((tau_hat - tau0) ** 2))


def _shared_beta(estimates: EstimateInput, alpha: float, n: int) -> _BetaResult:
    batch = as_batch(estimates)
    tau0 = anchor(batch)
    v_bar = float(np.mean(batch.v))
    denominator = _spread(batch.tau_hat, tau0) - v_bar / n
    cap = beta_max(n)
    if denominator <= 0:
        logger.warning(
            f"Between-experiment variance estimate is non-positive ({denominator:.4g}); pooling fully."
        )
        return _BetaResult(np.array([cap]), True, tau0 <= 0)
    value = v_bar / denominator
    if tau0 > 0:
        value += z_quantile(alpha) * np.sqrt(n * v_bar) / tau0
    else:
        logger.warning(f"Anchor {tau0:.4g} is not positive; dropping the significance term of beta.")
    return _BetaResult(np.array([float(np.clip(value, 0.0, cap))]), False, tau0 <= 0)


def shared_beta(estimates: EstimateInput, alpha: float, n: int) -> float:
    """Data-driven shared scale parameter, clamped into [0, BETA_MAX]."""
    return float(_shared_beta(estimates, alpha, n).values[0])


def _personalized_betas(estimates: EstimateInput, alpha: float, n: int) -> _BetaResult:
    batch = as_batch(estimates)
    if batch.b is None or np.any(~np.isfinite(batch.b)) or np.any(batch.b <= 0):
        raise MissingDesignFactorError("Personalized pooling needs a positive design factor b on every estimate.")
    tau0 = anchor(batch)
    b_sq = batch.b**2
    s_bar = float(np.mean(batch.v / b_sq))
    b_bar = float(np.mean(b_sq))
    denominator = _spread(batch.tau_hat, tau0) - b_bar * s_bar / n
    cap = beta_max(n)
    if denominator <= 0:
        logger.warning(
            f"Between-experiment variance estimate is non-positive ({denominator:.4g}); pooling fully."
        )
        return _BetaResult(np.full(len(batch), cap), True, tau0 <= 0)
    values = b_sq * s_bar / denominator
    if tau0 > 0:
        values = values + z_quantile(alpha) * batch.b * np.sqrt(n * s_bar) / tau0
    return _BetaResult(np.clip(values, 0.0, cap), False, tau0 <= 0)


def personalized_betas(estimates: EstimateInput, alpha: float, n: int) -> np.ndarray:
    return _personalized_betas(estimates, alpha, n).values


def personalized_beta(estimates: EstimateInput, alpha: float, n: int, k: int) -> float:
    """Scale parameter for experiment k driven by its design factor b_k."""
    return float(personalized_betas(estimates, alpha, n)[k])


def prior_variance(estimates: EstimateInput, n: int) -> float:
    """Method-of-moments estimate of the ATE prior variance, M - mean(v)/n."""
    batch = as_batch(estimates)
    return _spread(batch.tau_hat, anchor(batch)) - float(np.mean(batch.v)) / n


def bayes_betas(estimates: EstimateInput, n: int) -> np.ndarray:
    batch = as_batch(estimates)
    sigma0_sq = max(prior_variance(batch, n), config.VARIANCE_FLOOR)
    return np.clip(batch.v / sigma0_sq, 0.0, beta_max(n))


def bayes_beta(estimate: AteEstimate, estimates: EstimateInput, n: int) -> float:
    """Empirical-Bayes scale parameter v_k / sigma0_hat^2 (no significance term)."""
    sigma0_sq = max(prior_variance(estimates, n), config.VARIANCE_FLOOR)
    return float(np.clip(estimate.v / sigma0_sq, 0.0, beta_max(n)))


# --- Oracle scale parameters ---
def _check_oracle(params: OracleParams) -> None:
    if params.tau0 <= 0:
        raise NonPositiveTau0Error(f"Oracle beta needs a positive prior mean, got tau0={params.tau0}.")


def oracle_beta(params: OracleParams) -> float:
    """Optimal shared beta under a normal prior: 4 s^2/s0^2 + 2 sqrt(N) z s / tau0."""
    _check_oracle(params)
    sigma = np.sqrt(params.sigma_sq)
    return float(
        4.0 * params.sigma_sq / params.sigma0_sq
        + 2.0 * np.sqrt(params.n) * z_quantile(params.alpha) * sigma / params.tau0
    )


def oracle_beta_personalized(params: OracleParams, b: float) -> float:
    """Optimal beta as a function of the design factor; b = 2 recovers oracle_beta."""
    _check_oracle(params)
    if b < 0:
        raise InvalidParameterError(f"Design factor must be non-negative, got {b}.")
    sigma = np.sqrt(params.sigma_sq)
    return float(
        params.sigma_sq * b**2 / params.sigma0_sq
        + np.sqrt(params.n) * z_quantile(params.alpha) * sigma * b / params.tau0
    )


# --- Shrinkage and decisions ---
def shrink(estimate: AteEstimate, beta: float, tau0: float, n: int) -> ShrunkEstimate:
    if beta < 0:
        raise InvalidParameterError(f"beta must be non-negative, got {beta}.")
    w = n / (n + beta)
    return ShrunkEstimate(
        tau_bar=w * estimate.tau_hat + (1.0 - w) * tau0,
        lb_bar=w * estimate.lb + (1.0 - w) * tau0,
        ub_bar=w * estimate.ub + (1.0 - w) * tau0,
    )


def shrink_arrays(estimates: EstimateInput, betas: np.ndarray, tau0: float, n: int) -> Tuple[np.ndarray, ...]:
    batch = as_batch(estimates)
    w = n / (n + np.asarray(betas, dtype=float))
    pull = (1.0 - w) * tau0
    return w * batch.tau_hat + pull, w * batch.lb + pull, w * batch.ub + pull


def decide_iht(estimates: EstimateInput) -> DecisionSet:
    """Roll out k iff its own lower confidence bound is strictly positive."""
    return DecisionSet.from_mask(as_batch(estimates).lb > 0, "IHT")


def decide_dptr(estimates: EstimateInput, plan: PoolingPlan, method: Optional[DecisionMethod] = None) -> DecisionSet:
    """Roll out k iff its shrunk lower bound is strictly positive."""
    batch = as_batch(estimates)
    if method is None:
        method = "DPTR" if isinstance(plan.beta, SharedBeta) else "DPTR-P"
    _, lb_bar, _ = shrink_arrays(batch, plan.beta_array(len(batch)), plan.tau0_hat, plan.n)
    return DecisionSet.from_mask(lb_bar > 0, method)


def posterior(estimates: EstimateInput, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Normal posterior mean and variance of each tau_k under the fitted prior."""
    batch = as_batch(estimates)
    w = n / (n + bayes_betas(batch, n))
    mean = w * batch.tau_hat + (1.0 - w) * anchor(batch)
    return mean, w * batch.v / n


def decide_bayes(estimates: EstimateInput, alpha: float, n: int) -> DecisionSet:
    """Roll out k iff the posterior probability that tau_k > 0 is at least 1 - alpha/2."""
    mean, variance = posterior(estimates, n)
    sd = np.sqrt(variance)
    with np.errstate(divide="ignore", invalid="ignore"):
        mass = norm.cdf(np.where(sd > 0, mean / np.where(sd > 0, sd, 1.0), 0.0))
    selected = np.where(sd > 0, mass >= 1.0 - alpha / 2.0, mean > 0)
    return DecisionSet.from_mask(selected, "BAYES")


# --- Plans ---
def pooled_sample_size(estimates: EstimateInput) -> int:
    batch = as_batch(estimates)
    return max(1, int(np.rint(np.mean(batch.n))))


def fit_plan(
    estimates: EstimateInput, alpha: float, n: Optional[int] = None, personalized: bool = False
) -> PoolingPlan:
    """Builds the data-driven DPTR (or DPTR-P) plan for a batch of estimates."""
    batch = as_batch(estimates)
    n = n or pooled_sample_size(batch)
    if personalized:
        result = _personalized_betas(batch, alpha, n)
        beta = PerExperimentBeta(values=result.values.tolist())
    else:
        result = _shared_beta(batch, alpha, n)
        beta = SharedBeta(value=float(result.values[0]))
    return PoolingPlan(
        tau0_hat=anchor(batch),
        beta=beta,
        alpha=alpha,
        n=n,
        degenerate_denominator=result.degenerate_denominator,
        nonpositive_anchor=result.nonpositive_anchor,
    )


def oracle_plan(params: OracleParams, b: Optional[np.ndarray] = None, multiplier: float = 1.0) -> PoolingPlan:
    """DPTR plan with the oracle beta (scaled by `multiplier`) and the true tau0 as anchor."""
    if b is None:
        beta = SharedBeta(value=multiplier * oracle_beta(params))
    else:
        values = [multiplier * oracle_beta_personalized(params, float(bk)) for bk in np.asarray(b)]
        beta = PerExperimentBeta(values=values)
    return PoolingPlan(tau0_hat=params.tau0, beta=beta, alpha=params.alpha, n=params.n)
