# dptr_cli/core_api/replication.py
"""Monte Carlo replication engine behind `dptr simulate`.

Each (cell, replication) pair draws from its own Philox stream, and results
are collected in replication-index order, so output does not depend on the
number of worker processes.
"""
import logging
import time
from multiprocessing import Pool
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from dptr_cli.core import config
from dptr_cli.core_api import pooling
from dptr_cli.core_api.dgp import draw_scenario1, generate, linear_truth
from dptr_cli.core_api.estimators import dm_estimate_arrays, estimate_trial
from dptr_cli.core_api.exceptions import DptrError, InvalidParameterError, KTooLargeError, OddNError
from dptr_cli.core_api.metrics import score
from dptr_cli.core_api.models import DecisionSet, EstimateBatch, GroundTruth, OracleParams, WeightSpec
from dptr_cli.core_api.nuisance import NetworkConfig
from dptr_cli.core_api.rng import derive_seed, stream
from dptr_cli.features.simulation.models import LINEAR_SCENARIOS, RunConfig, ScenarioConfig, SweepCell

logger = logging.getLogger(__name__)

METRIC_FIELDS = ["reward", "or", "vdp", "accuracy", "recall", "specificity", "precision", "tp", "tn", "fp", "fn"]
_REPORT_FIELDS = {
    "reward",
    "optimality_ratio",
    "vdp",
    "accuracy",
    "recall",
    "specificity",
    "precision",
    "tp",
    "tn",
    "fp",
    "fn",
}


class MethodDecision(BaseModel):
    """A decision plus the pooling quantities that produced it."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    decision: DecisionSet
    betas: Optional[np.ndarray] = None
    tau0_hat: Optional[float] = None


class SimulationResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rows: pd.DataFrame
    elapsed_seconds: float
    cells: List[Dict[str, Any]]


def oracle_params(scenario: ScenarioConfig, alpha: float) -> OracleParams:
    if scenario.scenario not in LINEAR_SCENARIOS:
        raise InvalidParameterError(f"Oracle beta is only defined for linear scenarios, not {scenario.scenario}.")
    return OracleParams(
        tau0=scenario.tau0,
        sigma0_sq=scenario.sigma0**2,
        sigma_sq=scenario.sigma**2,
        n=scenario.sample_size,
        alpha=alpha,
    )


def apply_method(
    method: str, batch: EstimateBatch, alpha: float, n: int, scenario: Optional[ScenarioConfig] = None
) -> MethodDecision:
    """Runs one roll-out method on a batch of estimates."""
    if method == "IHT":
        return MethodDecision(decision=pooling.decide_iht(batch))
    if method == "BAYES":
        return MethodDecision(
            decision=pooling.decide_bayes(batch, alpha, n),
            betas=pooling.bayes_betas(batch, n),
            tau0_hat=pooling.anchor(batch),
        )
    if method in ("DPTR", "DPTR-P"):
        plan = pooling.fit_plan(batch, alpha, n=n, personalized=method == "DPTR-P")
    elif method == "ORACLE_BETA":
        if scenario is None:
            raise InvalidParameterError("ORACLE_BETA needs the scenario's known parameters.")
        plan = pooling.oracle_plan(oracle_params(scenario, alpha), b=batch.b)
    else:
        raise InvalidParameterError(f"Unknown method '{method}'.")
    tag = "ORACLE" if method == "ORACLE_BETA" else None
    return MethodDecision(
        decision=pooling.decide_dptr(batch, plan, method=tag),
        betas=plan.beta_array(len(batch)),
        tau0_hat=plan.tau0_hat,
    )


def beta_summary(betas: Optional[np.ndarray]) -> Optional[str]:
    if betas is None or betas.size == 0:
        return None
    return "/".join(f"{v:.17g}" for v in (np.min(betas), np.median(betas), np.max(betas)))


def _estimates_for(
    cell: SweepCell, replication: int, master_seed: int, network: NetworkConfig, folds: int
) -> Tuple[EstimateBatch, GroundTruth]:
    scenario = cell.scenario
    rng = stream(master_seed, "trial", cell.cell_id, replication)
    if scenario.scenario == "S1_DM":
        arrays = draw_scenario1(scenario, rng)
        return dm_estimate_arrays(arrays.y, arrays.d, cell.alpha), linear_truth(arrays.tau)
    trial, truth = generate(scenario, rng)
    seed = derive_seed(master_seed, "estimation", cell.cell_id, replication)
    batch = estimate_trial(trial, scenario.estimator, cell.alpha, arch=network, folds=folds, seed=seed)
    return batch, truth


def error_rows(base: Dict[str, Any], methods: Sequence[str], error: DptrError) -> List[Dict[str, Any]]:
    """Placeholder rows recording a failed replication for every method."""
    rows = []
    for method in methods:
        row = {**base, "method": method, "beta_summary": None, "tau0_hat": None}
        row.update({field: None for field in METRIC_FIELDS})
        row["error_tag"] = type(error).__name__
        rows.append(row)
    return rows


def score_methods(
    batch: EstimateBatch,
    truth: GroundTruth,
    weights: WeightSpec,
    methods: Sequence[str],
    alpha: float,
    base: Dict[str, Any],
    scenario: Optional[ScenarioConfig] = None,
) -> List[Dict[str, Any]]:
    """Decides with every method on one batch and scores each decision into a result row."""
    n = pooling.pooled_sample_size(batch)
    decisions = {m: apply_method(m, batch, alpha, n, scenario) for m in methods}
    reward_iht = None
    if "IHT" in decisions:
        reward_iht = score(decisions["IHT"].decision, truth, weights).reward
    rows = []
    for method, outcome in decisions.items():
        report = score(
            outcome.decision,
            truth,
            weights,
            method=method,
            reward_iht=None if method == "IHT" else reward_iht,
        )
        row = {**base, "method": method}
        row.update(report.model_dump(by_alias=True, include=_REPORT_FIELDS))
        row["beta_summary"] = beta_summary(outcome.betas)
        row["tau0_hat"] = outcome.tau0_hat
        row["error_tag"] = None
        rows.append(row)
    return rows


def run_replication(run: RunConfig, cell: SweepCell, replication: int, run_id: str = "") -> List[Dict[str, Any]]:
    """One replication of one sweep cell: generate, estimate, decide with every method, score."""
    base = {"run_id": run_id, "cell_id": cell.cell_id, "replication": replication}
    try:
        batch, truth = _estimates_for(cell, replication, run.master_seed, run.network, run.folds)
        weights = WeightSpec.uniform(truth.k, cell.tau_min)
        rows = score_methods(batch, truth, weights, run.methods, cell.alpha, base, cell.scenario)
    except DptrError as e:
        logger.warning(f"Cell {cell.cell_id} replication {replication} failed: {e.message}")
        return error_rows(base, run.methods, e)
    logger.debug(f"Cell {cell.cell_id} replication {replication}: {len(rows)} method rows")
    return rows


def _task(args) -> List[Dict[str, Any]]:
    run, cell, replication, run_id = args
    return run_replication(run, cell, replication, run_id)


def check_cell(cell: SweepCell) -> None:
    """Raises the configuration errors that would otherwise fail every replication of a cell."""
    scenario = cell.scenario
    if not scenario.overlapping and scenario.sample_size % 2:
        raise OddNError(
            f"Cell {cell.cell_id}: a balanced design needs an even sample size, got N={scenario.sample_size}."
        )
    if scenario.scenario == "SIGMOID" and scenario.k > config.SIGMOID_MAX_K:
        raise KTooLargeError(
            f"Cell {cell.cell_id}: K={scenario.k} exceeds the sigmoid oracle cap of {config.SIGMOID_MAX_K}."
        )


def run_synthetic(run: RunConfig, run_id: str = "") -> SimulationResult:
    """Runs every sweep cell for `run.replications` replications."""
    start = time.perf_counter()
    cells = list(run.cells())
    for cell in cells:
        check_cell(cell)
    tasks = [(run, cell, rep, run_id) for cell in cells for rep in range(run.replications)]
    logger.info(
        f"Simulating {len(cells)} cell(s) x {run.replications} replication(s) "
        f"with parallelism {run.parallelism}."
    )
    if run.parallelism == 1:
        chunks = [_task(t) for t in tasks]
    else:
        with Pool(processes=run.parallelism) as pool:
            chunks = pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * run.parallelism)))
    rows = [row for chunk in chunks for row in chunk]
    frame = pd.DataFrame.from_records(rows)
    elapsed = time.perf_counter() - start
    logger.info(f"Simulation finished: {len(rows)} rows in {elapsed:.1f}s.")
    return SimulationResult(
        rows=frame,
        elapsed_seconds=elapsed,
        cells=[{"cell_id": c.cell_id, **c.overrides} for c in cells],
    )


def reward_curve(
    scenario: ScenarioConfig,
    multipliers: Sequence[float],
    replications: int = 100,
    alpha: float = 0.05,
    master_seed: int = 0,
) -> pd.DataFrame:
    """Mean per-experiment DPTR reward at beta = c * beta_oracle for each multiplier c.

    Uses the true tau0 as anchor; the IHT reward on the same draws is
    reported alongside. Same draws are reused for every multiplier.
    """
    params = oracle_params(scenario, alpha)
    multipliers = [float(c) for c in multipliers]
    if any(c < 0 for c in multipliers):
        raise InvalidParameterError("beta multipliers must be non-negative.")
    cell = SweepCell(cell_id=0, overrides={}, scenario=scenario, alpha=alpha, tau_min=0.0)
    rewards = np.empty((replications, len(multipliers)))
    iht = np.empty(replications)
    for rep in range(replications):
        batch, truth = _estimates_for(cell, rep, master_seed, NetworkConfig(), 2)
        weights = WeightSpec.uniform(truth.k)
        iht[rep] = score(pooling.decide_iht(batch), truth, weights).reward
        for j, c in enumerate(multipliers):
            plan = pooling.oracle_plan(params, b=batch.b, multiplier=c)
            rewards[rep, j] = score(pooling.decide_dptr(batch, plan), truth, weights).reward
    shared = pooling.oracle_beta(params)
    se_scale = np.sqrt(replications)
    return pd.DataFrame(
        {
            "multiplier": multipliers,
            "beta": [c * shared for c in multipliers],
            "mean_reward": rewards.mean(axis=0),
            "se_reward": rewards.std(axis=0, ddof=1) / se_scale if replications > 1 else np.nan,
            "iht_mean_reward": iht.mean(),
        }
    )
