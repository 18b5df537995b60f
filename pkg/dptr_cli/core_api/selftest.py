# dptr_cli/core_api/selftest.py
"""Hand-computed examples and fast property checks run by `dptr selftest`."""
import itertools
import logging
from typing import Callable, List, Tuple

import numpy as np
from pydantic import BaseModel

from dptr_cli.core_api import pooling
from dptr_cli.core_api.estimators import dm_estimate, dm_estimate_arrays
from dptr_cli.core_api.metrics import oracle_reward, reward
from dptr_cli.core_api.models import (
    AteEstimate,
    DecisionSet,
    EstimateBatch,
    ExperimentSample,
    GroundTruth,
    OracleParams,
    PoolingPlan,
    SharedBeta,
    WeightSpec,
    z_quantile,
)
from dptr_cli.core_api.rng import stream

logger = logging.getLogger(__name__)

CheckOutcome = Tuple[bool, str]


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str


def _close(actual: float, expected: float, tol: float = 1e-9) -> CheckOutcome:
    return abs(actual - expected) <= tol, f"got {actual:.10g}, expected {expected:.10g}"


def check_dm_hand_example() -> CheckOutcome:
    sample = ExperimentSample(y=[3, 1, 2, 0], d=[1, 1, 0, 0])
    est = dm_estimate(sample, 0.05)
    ok = abs(est.tau_hat - 1.0) < 1e-12 and abs(est.v - 8.0) < 1e-12
    return ok, f"tau_hat={est.tau_hat:.10g}, v={est.v:.10g} (expected 1 and 8)"


def check_anchor() -> CheckOutcome:
    batch = EstimateBatch.from_variance([-1, -1, 0, 0, 1, 1, 1], [1.0] * 7, [10] * 7, 0.05)
    return _close(pooling.anchor(batch), 1.0 / 7.0, 1e-12)


def _two_point_batch(b=None) -> EstimateBatch:
    return EstimateBatch.from_variance([0.0, 2.0], [2.0, 2.0], [4, 4], 0.05, b=b)


def check_shared_beta_hand_example() -> CheckOutcome:
    expected = 4.0 + z_quantile(0.05) * np.sqrt(8.0)
    return _close(pooling.shared_beta(_two_point_batch(), 0.05, 4), expected)


def check_personalized_degenerate() -> CheckOutcome:
    # b=2, s^2=2 gives v=8; the denominator 1 - 4*2/4 is negative.
    batch = EstimateBatch.from_variance([0.0, 2.0], [8.0, 8.0], [4, 4], 0.05, b=[2.0, 2.0])
    return _close(pooling.personalized_beta(batch, 0.05, 4, 0), pooling.beta_max(4))


def check_bayes_beta_hand_example() -> CheckOutcome:
    batch = _two_point_batch()
    return _close(pooling.bayes_beta(batch.estimate(0), batch, 4), 4.0)


def check_oracle_beta() -> CheckOutcome:
    params = OracleParams(tau0=1.0, sigma0_sq=9.0, sigma_sq=9.0, n=10, alpha=0.05)
    shared = pooling.oracle_beta(params)
    if abs(pooling.oracle_beta_personalized(params, 2.0) - shared) > 1e-9:
        return False, "personalized oracle beta at b=2 differs from the shared value"
    return _close(shared, 41.183, 0.01)


def check_reduction_to_iht() -> CheckOutcome:
    rng = stream(0, "selftest-reduction")
    batch = EstimateBatch.from_variance(rng.normal(0.5, 1.0, 200), rng.uniform(1.0, 30.0, 200), [10] * 200, 0.05)
    plan = PoolingPlan(tau0_hat=pooling.anchor(batch), beta=SharedBeta(value=0.0), alpha=0.05, n=10)
    same = pooling.decide_dptr(batch, plan).selected == pooling.decide_iht(batch).selected
    return same, "DPTR with beta=0 matches IHT" if same else "DPTR with beta=0 diverged from IHT"


def check_monotone_shrink() -> CheckOutcome:
    estimate = AteEstimate.from_variance(tau_hat=2.0, v=4.0, n=10, alpha=0.05)
    path = [pooling.shrink(estimate, beta, 0.0, 10).tau_bar for beta in (0.0, 1.0, 10.0, 100.0, 1e4)]
    ok = all(a > b for a, b in zip(path, path[1:])) and path[0] == 2.0
    return ok, "shrunk estimates: " + ", ".join(f"{v:.4g}" for v in path)


def check_ci_calibration(experiments: int = 4000, n: int = 100) -> CheckOutcome:
    """With zero effects, lb > 0 should happen in about alpha/2 of experiments."""
    rng = stream(0, "selftest-calibration")
    y = rng.normal(0.0, 3.0, size=(experiments, n))
    d = np.zeros((experiments, n), dtype=np.int8)
    d[:, : n // 2] = 1
    rate = float(np.mean(dm_estimate_arrays(y, d, 0.05).lb > 0))
    return 0.015 <= rate <= 0.035, f"false roll-out rate {rate:.4f}"


def check_brute_force_oracle(k: int = 8) -> CheckOutcome:
    rng = stream(0, "selftest-oracle")
    truth = GroundTruth(tau=rng.normal(0.0, 1.0, k), r_star=0.0)
    weights = WeightSpec.from_sizes(rng.integers(1, 50, k), tau_min=0.1)
    best = max(
        reward(DecisionSet(selected=frozenset(subset), method="ORACLE", k=k), truth, weights)
        for size in range(k + 1)
        for subset in itertools.combinations(range(k), size)
    )
    return _close(oracle_reward(truth, weights), best, 1e-12)


CHECKS: List[Tuple[str, Callable[[], CheckOutcome]]] = [
    ("dm estimate hand example", check_dm_hand_example),
    ("anchor of seven ATEs", check_anchor),
    ("shared beta hand example", check_shared_beta_hand_example),
    ("personalized beta degenerate branch", check_personalized_degenerate),
    ("bayes beta hand example", check_bayes_beta_hand_example),
    ("oracle beta value", check_oracle_beta),
    ("beta=0 reduces DPTR to IHT", check_reduction_to_iht),
    ("shrinkage is monotone in beta", check_monotone_shrink),
    ("interval calibration", check_ci_calibration),
    ("brute-force reward oracle", check_brute_force_oracle),
]


def run_selftest() -> List[CheckResult]:
    results = []
    for name, check in CHECKS:
        try:
            passed, detail = check()
        except Exception as e:  # a crashing check is a failed check
            passed, detail = False, f"{type(e).__name__}: {e}"
        level = logging.INFO if passed else logging.ERROR
        logger.log(level, f"selftest {name}: {'pass' if passed else 'FAIL'} ({detail})")
        results.append(CheckResult(name=name, passed=bool(passed), detail=detail))
    return results
