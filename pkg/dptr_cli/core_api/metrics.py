# dptr_cli/core_api/metrics.py
"""Scoring a roll-out decision against the ground truth."""
import logging
from typing import NamedTuple, Optional

import numpy as np

from dptr_cli.core_api.exceptions import LengthMismatchError, MissingContextError
from dptr_cli.core_api.models import DecisionSet, GroundTruth, MetricsReport, WeightSpec

logger = logging.getLogger(__name__)


class Confusion(NamedTuple):
    tp: int
    tn: int
    fp: int
    fn: int
    accuracy: Optional[float]
    recall: Optional[float]
    specificity: Optional[float]
    precision: Optional[float]


def _ratio(numerator: float, denominator: float) -> Optional[float]:
    return None if denominator == 0 else numerator / denominator


def _check_lengths(decision: DecisionSet, truth: GroundTruth, weights: Optional[WeightSpec] = None) -> None:
    if decision.k != truth.k:
        raise LengthMismatchError(f"Decision covers {decision.k} experiments but the truth has {truth.k}.")
    if weights is not None and weights.weights.shape[0] != truth.k:
        raise LengthMismatchError(f"{weights.weights.shape[0]} weights supplied for {truth.k} experiments.")


def reward(decision: DecisionSet, truth: GroundTruth, weights: WeightSpec) -> float:
    """Weighted, cost-adjusted reward of the selected experiments."""
    _check_lengths(decision, truth, weights)
    mask = decision.mask()
    return float(np.sum(weights.weights[mask] * (truth.tau[mask] - weights.tau_min)))


def oracle_set(truth: GroundTruth, tau_min: float = 0.0) -> DecisionSet:
    return DecisionSet.from_mask(truth.tau > tau_min, "ORACLE")


def oracle_reward(truth: GroundTruth, weights: WeightSpec) -> float:
    return reward(oracle_set(truth, weights.tau_min), truth, weights)


def optimality_ratio(decision: DecisionSet, truth: GroundTruth, weights: WeightSpec) -> Optional[float]:
    """reward / oracle reward; None when the oracle reward is zero."""
    return _ratio(reward(decision, truth, weights), oracle_reward(truth, weights))


def vdp(reward_z: float, reward_iht: float) -> Optional[float]:
    """Value of data pooling relative to IHT; None when the IHT reward is zero."""
    if reward_iht == 0:
        return None
    return reward_z / reward_iht - 1.0


def confusion(decision: DecisionSet, truth: GroundTruth) -> Confusion:
    """Classification counts with positives = {tau_k > 0}."""
    _check_lengths(decision, truth)
    selected = decision.mask()
    positive = truth.tau > 0
    tp = int(np.sum(selected & positive))
    tn = int(np.sum(~selected & ~positive))
    fp = int(np.sum(selected & ~positive))
    fn = int(np.sum(~selected & positive))
    return Confusion(
        tp=tp,
        tn=tn,
        fp=fp,
        fn=fn,
        accuracy=_ratio(tp + tn, truth.k),
        recall=_ratio(tp, tp + fn),
        specificity=_ratio(tn, tn + fp),
        precision=_ratio(tp, tp + fp),
    )


def sigmoid_reward(decision: DecisionSet, truth: GroundTruth) -> float:
    """E[Y | t(A)] - E[Y | t0] under the sigmoid model, on the oracle's common random numbers."""
    if truth.sigmoid is None:
        raise MissingContextError("Sigmoid reward needs the generator's sigmoid context.")
    _check_lengths(decision, truth)
    context = truth.sigmoid
    return context.expected_outcome(decision.mask().astype(float)) - context.expected_outcome(np.zeros(truth.k))


def score(
    decision: DecisionSet,
    truth: GroundTruth,
    weights: WeightSpec,
    method: Optional[str] = None,
    reward_iht: Optional[float] = None,
) -> MetricsReport:
    """Full MetricsReport for one decision; pass the IHT reward to fill VDP."""
    if truth.sigmoid is not None:
        value = sigmoid_reward(decision, truth)
        r_star = truth.r_star
    else:
        value = reward(decision, truth, weights)
        r_star = oracle_reward(truth, weights)
    counts = confusion(decision, truth)
    return MetricsReport(
        method=method or decision.method,
        reward=value,
        optimality_ratio=_ratio(value, r_star),
        vdp=None if reward_iht is None else vdp(value, reward_iht),
        accuracy=counts.accuracy,
        recall=counts.recall,
        specificity=counts.specificity,
        precision=counts.precision,
        tp=counts.tp,
        tn=counts.tn,
        fp=counts.fp,
        fn=counts.fn,
        k=truth.k,
        r_star=r_star,
    )
