# dptr_cli/core_api/dgp.py
"""Seeded synthetic trials for the four linear/partial-linear scenarios and the sigmoid model.

Uniform draws are variance-matched: a uniform with mean m and standard
deviation s has support m +/- s*sqrt(3).
"""
import itertools
import logging
from typing import NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from dptr_cli.core import config
from dptr_cli.core_api.exceptions import InvalidParameterError, KTooLargeError, OddNError
from dptr_cli.core_api.models import (
    ExperimentSample,
    GroundTruth,
    NonOverlappingTrial,
    OverlappingTrial,
    SigmoidContext,
    TrialData,
)
from dptr_cli.core_api.rng import stream
from dptr_cli.features.simulation.models import ScenarioConfig

logger = logging.getLogger(__name__)

_SQRT3 = np.sqrt(3.0)


class Scenario1Arrays(NamedTuple):
    """Scenario 1/2 draws as (K, N) arrays, before wrapping into a trial."""

    y: np.ndarray
    d: np.ndarray
    x: Optional[np.ndarray]
    tau: np.ndarray


def _draw(rng: np.random.Generator, dist: str, mean: float, sd: float, size) -> np.ndarray:
    if dist == "uniform":
        return rng.uniform(mean - sd * _SQRT3, mean + sd * _SQRT3, size=size)
    return rng.normal(mean, sd, size=size)


def _rng_for(config_: ScenarioConfig, rng: Optional[np.random.Generator]) -> np.random.Generator:
    return rng if rng is not None else stream(config_.seed, "trial")


def linear_truth(tau: np.ndarray) -> GroundTruth:
    tau = np.asarray(tau, dtype=float)
    return GroundTruth(tau=tau, r_star=float(np.sum(tau[tau > 0]) / tau.shape[0]))


def _balanced_assignment(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    n = cfg.sample_size
    if n % 2:
        raise OddNError(f"A balanced design needs an even sample size, got N={n}.")
    d = np.zeros((cfg.k, n), dtype=np.int8)
    d[:, : n // 2] = 1
    if cfg.shuffle:
        d = rng.permuted(d, axis=1)
    return d


def _covariates(cfg: ScenarioConfig, rng: np.random.Generator, shape) -> Optional[np.ndarray]:
    if cfg.covariate_dim == 0:
        return None
    return rng.uniform(0.0, 1.0, size=shape + (cfg.covariate_dim,))


def _coefficients(cfg: ScenarioConfig, rng: np.random.Generator, size) -> np.ndarray:
    return rng.uniform(cfg.coeff_low, cfg.coeff_high, size=size)


def draw_scenario1(cfg: ScenarioConfig, rng: Optional[np.random.Generator] = None) -> Scenario1Arrays:
    """Y_ki = a_k + tau_k D_ki (+ theta_k' X_ki) + e_ki, exactly N/2 treated per experiment."""
    rng = _rng_for(cfg, rng)
    k, n = cfg.k, cfg.sample_size
    d = _balanced_assignment(cfg, rng)
    tau = _draw(rng, cfg.ate_dist, cfg.tau0, cfg.sigma0, k)
    intercept = _coefficients(cfg, rng, k)
    y = intercept[:, None] + tau[:, None] * d
    x = _covariates(cfg, rng, (k, n))
    if x is not None:
        theta = _coefficients(cfg, rng, (k, cfg.covariate_dim))
        y = y + np.einsum("knj,kj->kn", x, theta)
    y = y + _draw(rng, cfg.noise_dist, 0.0, cfg.sigma, (k, n))
    return Scenario1Arrays(y=y, d=d, x=x, tau=tau)


def _wrap_experiments(arrays: Scenario1Arrays) -> NonOverlappingTrial:
    experiments = [
        ExperimentSample(y=arrays.y[k], d=arrays.d[k], x=None if arrays.x is None else arrays.x[k])
        for k in range(arrays.y.shape[0])
    ]
    return NonOverlappingTrial(experiments=experiments)


def gen_scenario1(
    cfg: ScenarioConfig, rng: Optional[np.random.Generator] = None
) -> Tuple[NonOverlappingTrial, GroundTruth]:
    arrays = draw_scenario1(cfg, rng)
    return _wrap_experiments(arrays), linear_truth(arrays.tau)


def draw_scenario2(cfg: ScenarioConfig, rng: Optional[np.random.Generator] = None) -> Scenario1Arrays:
    """Y_ki = gamma_k0' X + D (gamma_k1' X) + e; tau_k = gamma_k1' E[X]."""
    if cfg.covariate_dim == 0:
        raise InvalidParameterError("Scenario 2 needs at least one covariate.")
    rng = _rng_for(cfg, rng)
    k, n, d_x = cfg.k, cfg.sample_size, cfg.covariate_dim
    d = _balanced_assignment(cfg, rng)
    gamma0 = _coefficients(cfg, rng, (k, d_x))
    gamma1 = _coefficients(cfg, rng, (k, d_x))
    x = rng.uniform(0.0, 1.0, size=(k, n, d_x))
    y = np.einsum("knj,kj->kn", x, gamma0) + d * np.einsum("knj,kj->kn", x, gamma1)
    y = y + _draw(rng, cfg.noise_dist, 0.0, cfg.sigma, (k, n))
    return Scenario1Arrays(y=y, d=d, x=x, tau=gamma1 @ np.full(d_x, 0.5))


def gen_scenario2(
    cfg: ScenarioConfig, rng: Optional[np.random.Generator] = None
) -> Tuple[NonOverlappingTrial, GroundTruth]:
    arrays = draw_scenario2(cfg, rng)
    return _wrap_experiments(arrays), linear_truth(arrays.tau)


def _bernoulli_treatments(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=(cfg.sample_size, cfg.k), dtype=np.int8)


def gen_scenario3(
    cfg: ScenarioConfig, rng: Optional[np.random.Generator] = None
) -> Tuple[OverlappingTrial, GroundTruth]:
    """Y_i = a + sum_k tau_k D_ki (+ theta' X_i) + e_i with i.i.d. Bernoulli(1/2) assignments."""
    rng = _rng_for(cfg, rng)
    n = cfg.sample_size
    d = _bernoulli_treatments(cfg, rng)
    tau = _draw(rng, cfg.ate_dist, cfg.tau0, cfg.sigma0, cfg.k)
    intercept = float(_coefficients(cfg, rng, 1)[0])
    y = intercept + d @ tau
    x = _covariates(cfg, rng, (n,))
    if x is not None:
        y = y + x @ _coefficients(cfg, rng, cfg.covariate_dim)
    y = y + _draw(rng, cfg.noise_dist, 0.0, cfg.sigma, n)
    return OverlappingTrial(y=y, d=d, x=x), linear_truth(tau)


def _augmented(d: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((d.shape[0], 1)), d.astype(float)])


def gen_scenario4(
    cfg: ScenarioConfig, rng: Optional[np.random.Generator] = None
) -> Tuple[OverlappingTrial, GroundTruth]:
    """Y_i = g(X_i)' t_i + e_i with g(X) = [gamma_0' X, ..., gamma_K' X]."""
    if cfg.covariate_dim == 0:
        raise InvalidParameterError("Scenario 4 needs at least one covariate.")
    rng = _rng_for(cfg, rng)
    n, d_x = cfg.sample_size, cfg.covariate_dim
    d = _bernoulli_treatments(cfg, rng)
    gammas = _coefficients(cfg, rng, (cfg.k + 1, d_x))
    x = rng.uniform(0.0, 1.0, size=(n, d_x))
    y = np.einsum("ij,ij->i", x @ gammas.T, _augmented(d))
    y = y + _draw(rng, cfg.noise_dist, 0.0, cfg.sigma, n)
    return OverlappingTrial(y=y, d=d, x=x), linear_truth(gammas[1:] @ np.full(d_x, 0.5))


def all_treatment_vectors(k: int) -> np.ndarray:
    """Every vector in {0, 1}^K, the all-zero vector first."""
    return np.array(list(itertools.product((0, 1), repeat=k)), dtype=float)


def sigmoid_truth(context: SigmoidContext) -> GroundTruth:
    """Brute-force oracle over all 2^K treatment vectors."""
    k = context.k
    candidates = all_treatment_vectors(k)
    means = context.expected_outcomes(candidates)
    best = int(np.argmax(means))
    baseline = context.expected_outcome(np.zeros(k))
    marginal = context.expected_outcomes(np.eye(k)) - baseline
    resolved = context.model_copy(
        update={"t_opt": tuple(int(v) for v in candidates[best]), "baseline_mean": baseline}
    )
    return GroundTruth(tau=marginal, r_star=max(float(means[best] - baseline), 0.0), sigmoid=resolved)


def gen_sigmoid(
    cfg: ScenarioConfig,
    rng: Optional[np.random.Generator] = None,
    oracle_draws: int = config.SIGMOID_ORACLE_DRAWS,
) -> Tuple[OverlappingTrial, GroundTruth]:
    """Y_i = upsilon / (1 + exp(-g(X_i)' t_i)) + e_i, with a brute-force oracle reward."""
    if cfg.k > config.SIGMOID_MAX_K:
        raise KTooLargeError(
            f"The sigmoid oracle enumerates 2^K vectors; K={cfg.k} exceeds the cap of {config.SIGMOID_MAX_K}."
        )
    if cfg.covariate_dim == 0:
        raise InvalidParameterError("The sigmoid model needs at least one covariate.")
    rng = _rng_for(cfg, rng)
    n, d_x = cfg.sample_size, cfg.covariate_dim
    d = _bernoulli_treatments(cfg, rng)
    gammas = _coefficients(cfg, rng, (cfg.k + 1, d_x))
    upsilon = float(rng.uniform(cfg.upsilon_low, cfg.upsilon_high))
    x = rng.uniform(0.0, 1.0, size=(n, d_x))
    index = np.einsum("ij,ij->i", x @ gammas.T, _augmented(d))
    y = upsilon / (1.0 + np.exp(-index)) + _draw(rng, cfg.noise_dist, 0.0, cfg.sigma, n)
    context = SigmoidContext(
        gammas=gammas,
        upsilon=upsilon,
        draws=oracle_draws,
        oracle_seed=int(rng.integers(0, np.iinfo(np.int64).max)),
        t_opt=tuple([0] * cfg.k),
        baseline_mean=0.0,
    )
    truth = sigmoid_truth(context)
    logger.debug(f"Sigmoid oracle: K={cfg.k}, t_opt={truth.sigmoid.t_opt}, r*={truth.r_star:.6g}")
    return OverlappingTrial(y=y, d=d, x=x), truth


GENERATORS = {
    "S1_DM": gen_scenario1,
    "S1_OLS": gen_scenario1,
    "S2_DML": gen_scenario2,
    "S3_OLS": gen_scenario3,
    "S3_OLS_COV": gen_scenario3,
    "S4_DML": gen_scenario4,
    "SIGMOID": gen_sigmoid,
}


def generate(cfg: ScenarioConfig, rng: Optional[np.random.Generator] = None) -> Tuple[TrialData, GroundTruth]:
    return GENERATORS[cfg.scenario](cfg, rng)


def trial_to_frame(trial: TrialData) -> pd.DataFrame:
    """Lays a trial out in the ingestion CSV schema."""
    if isinstance(trial, OverlappingTrial):
        frame = pd.DataFrame({"outcome": trial.y})
        for k in range(trial.k):
            frame[f"treatment_{k + 1}"] = trial.d[:, k].astype(int)
        x = trial.x
    else:
        frame = pd.DataFrame(
            {
                "experiment": np.repeat(np.arange(trial.k), [e.n for e in trial.experiments]),
                "outcome": np.concatenate([e.y for e in trial.experiments]),
                "treatment": np.concatenate([e.d for e in trial.experiments]).astype(int),
            }
        )
        x = None if trial.d_x == 0 else np.vstack([e.x for e in trial.experiments])
    if x is not None:
        for j in range(x.shape[1]):
            frame[f"x{j}"] = x[:, j]
    return frame
