# dptr_cli/core_api/estimators.py
"""Per-experiment ATE estimators: difference in means, OLS, overlapping OLS and cross-fitted DML.

Every estimator reports the variance scale v = N * Var(tau_hat), so the
standard error is sqrt(v / N) and the pooling rules can compare experiments
of equal N directly.
"""
import logging
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from dptr_cli.core import config
from dptr_cli.core_api.exceptions import (
    EmptyArmError,
    InsufficientDataError,
    InvalidParameterError,
    RankDeficientError,
)
from dptr_cli.core_api.models import (
    AteEstimate,
    EstimateBatch,
    ExperimentSample,
    OverlappingTrial,
    TrialData,
)
from dptr_cli.core_api.nuisance import NetworkConfig, psi_scores, train_nuisance
from dptr_cli.core_api.rng import derive_seed, stream

logger = logging.getLogger(__name__)

EstimatorName = Literal["dm", "ols", "dml"]

_SINGULAR_PIVOT_RATIO = 1e-14


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}.")


# --- Linear algebra ---
def _pivot_ratio(lu: np.ndarray) -> float:
    pivots = np.abs(np.diag(lu))
    top = pivots.max()
    return 0.0 if top == 0.0 else float(pivots.min() / top)


def factor_gram(design: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """LU-factors X'X, adding ridge jitter only when the plain factorization is singular."""
    gram = design.T @ design
    lu, piv = scipy.linalg.lu_factor(gram, check_finite=False)
    if _pivot_ratio(lu) > _SINGULAR_PIVOT_RATIO:
        return lu, piv
    scale = max(1.0, float(np.max(np.diag(gram))))
    logger.warning("Normal equations are near-singular; retrying with ridge jitter.")
    lu, piv = scipy.linalg.lu_factor(gram + config.RIDGE_JITTER * scale * np.eye(gram.shape[0]), check_finite=False)
    if _pivot_ratio(lu) <= 10.0 * config.RIDGE_JITTER:
        raise RankDeficientError(
            f"Design matrix with {design.shape[1]} columns is rank-deficient beyond the ridge tolerance."
        )
    return lu, piv


def solve_ols(design: np.ndarray, y: np.ndarray):
    """Returns (coefficients, residual sum of squares, LU factors of X'X)."""
    factors = factor_gram(design)
    coef = scipy.linalg.lu_solve(factors, design.T @ y, check_finite=False)
    residual = y - design @ coef
    return coef, float(residual @ residual), factors


def gram_inverse_diagonal(factors, columns) -> np.ndarray:
    """Diagonal entries of (X'X)^-1 at the requested column indices."""
    p = factors[0].shape[0]
    columns = np.atleast_1d(columns)
    unit = np.zeros((p, columns.shape[0]))
    unit[columns, np.arange(columns.shape[0])] = 1.0
    solved = scipy.linalg.lu_solve(factors, unit, check_finite=False)
    return solved[columns, np.arange(columns.shape[0])]


def _two_arm_design(sample: ExperimentSample) -> np.ndarray:
    columns = [np.ones(sample.n), sample.d.astype(float)]
    if sample.x is not None:
        columns.extend(sample.x.T)
    return np.column_stack(columns)


def design_factor(sample: ExperimentSample) -> float:
    """b = sqrt(N * [(t't)^-1]_{11}) for the design [1, D, X]."""
    factors = factor_gram(_two_arm_design(sample))
    return float(np.sqrt(sample.n * gram_inverse_diagonal(factors, 1)[0]))


# --- Difference in means ---
def dm_estimate(sample: ExperimentSample, alpha: float) -> AteEstimate:
    """Difference-in-means estimate with the pooled (N - 2) variance."""
    _check_alpha(alpha)
    n1, n0 = sample.n_treated, sample.n_control
    if n1 == 0 or n0 == 0:
        raise EmptyArmError(f"Difference in means needs both arms (treated={n1}, control={n0}).")
    if sample.n < 3:
        raise InsufficientDataError(f"Difference in means needs at least 3 units, got {sample.n}.")
    treated = sample.y[sample.d == 1]
    control = sample.y[sample.d == 0]
    tau_hat = treated.mean() - control.mean()
    ss = np.sum((treated - treated.mean()) ** 2) + np.sum((control - control.mean()) ** 2)
    s_sq = max(ss / (sample.n - 2), config.VARIANCE_FLOOR)
    v = s_sq * sample.n * (1.0 / n1 + 1.0 / n0)
    return AteEstimate.from_variance(tau_hat, v, sample.n, alpha)


def dm_estimate_arrays(y: np.ndarray, d: np.ndarray, alpha: float) -> EstimateBatch:
    """Vectorised difference in means over K equal-size experiments stored as (K, N) arrays."""
    _check_alpha(alpha)
    y = np.asarray(y, dtype=float)
    treated_mask = np.asarray(d).astype(bool)
    n = y.shape[1]
    n1 = treated_mask.sum(axis=1)
    n0 = n - n1
    if (n1 == 0).any() or (n0 == 0).any():
        raise EmptyArmError("Every experiment needs at least one treated and one control unit.")
    if n < 3:
        raise InsufficientDataError(f"Difference in means needs at least 3 units, got {n}.")
    mean1 = np.where(treated_mask, y, 0.0).sum(axis=1) / n1
    mean0 = np.where(treated_mask, 0.0, y).sum(axis=1) / n0
    centred = y - np.where(treated_mask, mean1[:, None], mean0[:, None])
    s_sq = np.maximum((centred**2).sum(axis=1) / (n - 2), config.VARIANCE_FLOOR)
    v = s_sq * n * (1.0 / n1 + 1.0 / n0)
    return EstimateBatch.from_variance(mean1 - mean0, v, n, alpha)


# --- OLS ---
def ols_estimate(sample: ExperimentSample, alpha: float) -> AteEstimate:
    """OLS on [1, D, X]; tau_hat is the treatment coefficient and v = b^2 s^2."""
    _check_alpha(alpha)
    p = 2 + sample.d_x
    if sample.n <= p:
        raise InsufficientDataError(f"OLS with {sample.d_x} covariates needs more than {p} units, got {sample.n}.")
    if sample.n_treated == 0 or sample.n_control == 0:
        raise EmptyArmError("OLS needs both treated and control units.")
    coef, rss, factors = solve_ols(_two_arm_design(sample), sample.y)
    s_sq = max(rss / (sample.n - p), config.VARIANCE_FLOOR)
    b = float(np.sqrt(sample.n * gram_inverse_diagonal(factors, 1)[0]))
    return AteEstimate.from_variance(coef[1], b**2 * s_sq, sample.n, alpha, b=b)


def _overlapping_design(trial: OverlappingTrial) -> np.ndarray:
    columns = [np.ones((trial.n, 1)), trial.d.astype(float)]
    if trial.x is not None:
        columns.append(trial.x)
    return np.hstack(columns)


def ols_overlapping_estimate(trial: OverlappingTrial, alpha: float) -> List[AteEstimate]:
    """Joint OLS over all K treatment indicators; returns one estimate per experiment."""
    return ols_overlapping_batch(trial, alpha).to_estimates()


def ols_overlapping_batch(trial: OverlappingTrial, alpha: float) -> EstimateBatch:
    _check_alpha(alpha)
    p = 1 + trial.k + trial.d_x
    if trial.n <= p:
        raise InsufficientDataError(f"Overlapping OLS with {p} columns needs more than {p} rows, got {trial.n}.")
    coef, rss, factors = solve_ols(_overlapping_design(trial), trial.y)
    sigma_sq = max(rss / (trial.n - p), config.VARIANCE_FLOOR)
    inv_diag = gram_inverse_diagonal(factors, np.arange(1, trial.k + 1))
    b_sq = trial.n * inv_diag
    return EstimateBatch.from_variance(coef[1 : trial.k + 1], b_sq * sigma_sq, trial.n, alpha, b=np.sqrt(b_sq))


# --- Double machine learning ---
def fold_assignment(n: int, folds: int, seed: int) -> List[np.ndarray]:
    """Seeded split of row indices into `folds` groups; earlier folds take the remainder rows."""
    if folds < 2:
        raise InvalidParameterError(f"Cross-fitting needs at least 2 folds, got {folds}.")
    if n < folds:
        raise InsufficientDataError(f"Cannot split {n} rows into {folds} folds.")
    order = stream(seed, "dml-folds").permutation(n)
    return np.array_split(order, folds)


def _check_fold_rows(fold_rows: Sequence[np.ndarray], n: int) -> List[np.ndarray]:
    fold_rows = [np.asarray(rows, dtype=np.intp) for rows in fold_rows]
    if len(fold_rows) < 2 or any(rows.size == 0 for rows in fold_rows):
        raise InvalidParameterError("Cross-fitting needs at least 2 non-empty folds.")
    if not np.array_equal(np.sort(np.concatenate(fold_rows)), np.arange(n)):
        raise InvalidParameterError(f"Fold rows must partition the {n} row indices.")
    return fold_rows


def _cross_fit(y, t, x, fold_rows: List[np.ndarray], arch: NetworkConfig, seed: int, hidden_width: int) -> np.ndarray:
    """Held-out scores stacked in fold order.

    Training rows are taken in fold order too, so the result depends on
    which units share a fold and not on where they sit in the input.
    """
    blocks = []
    for fold_id, held_out in enumerate(fold_rows):
        train = np.concatenate([rows for j, rows in enumerate(fold_rows) if j != fold_id])
        fit = train_nuisance(
            y[train], t[train], None if x is None else x[train], arch, seed, fold_id=fold_id, hidden_width=hidden_width
        )
        blocks.append(psi_scores(fit, y[held_out], t[held_out], None if x is None else x[held_out]))
    return np.vstack(blocks)


def _summarise_psi(psi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    tau_hat = psi.mean(axis=0)
    big_psi = np.maximum(((psi - tau_hat) ** 2).mean(axis=0), config.VARIANCE_FLOOR)
    return tau_hat, big_psi


def dml_estimate(
    data: Union[ExperimentSample, OverlappingTrial],
    alpha: float,
    folds: int = config.DEFAULT_FOLDS,
    arch: Optional[NetworkConfig] = None,
    seed: int = 0,
    fold_rows: Optional[Sequence[np.ndarray]] = None,
) -> Union[AteEstimate, List[AteEstimate]]:
    """Cross-fitted DML estimate for one experiment, or for all K of an overlapping trial.

    `fold_rows` overrides the seeded split with an explicit partition of row indices.
    """
    if isinstance(data, OverlappingTrial):
        return dml_overlapping_batch(data, alpha, folds, arch, seed, fold_rows).to_estimates()
    _check_alpha(alpha)
    arch = arch or NetworkConfig()
    if data.n_treated == 0 or data.n_control == 0:
        raise EmptyArmError("DML needs both treated and control units.")
    t = np.column_stack([np.ones(data.n), data.d.astype(float)])
    split = _check_fold_rows(fold_rows, data.n) if fold_rows is not None else fold_assignment(data.n, folds, seed)
    psi = _cross_fit(data.y, t, data.x, split, arch, seed, arch.width_for(1, overlapping=False))
    tau_hat, big_psi = _summarise_psi(psi)
    b = design_factor(data) if data.n > 2 + data.d_x else None
    return AteEstimate.from_variance(tau_hat[0], big_psi[0], data.n, alpha, b=b)


def dml_overlapping_batch(
    trial: OverlappingTrial,
    alpha: float,
    folds: int = config.DEFAULT_FOLDS,
    arch: Optional[NetworkConfig] = None,
    seed: int = 0,
    fold_rows: Optional[Sequence[np.ndarray]] = None,
) -> EstimateBatch:
    _check_alpha(alpha)
    arch = arch or NetworkConfig()
    t = np.hstack([np.ones((trial.n, 1)), trial.d.astype(float)])
    split = _check_fold_rows(fold_rows, trial.n) if fold_rows is not None else fold_assignment(trial.n, folds, seed)
    psi = _cross_fit(trial.y, t, trial.x, split, arch, seed, arch.width_for(trial.k, overlapping=True))
    tau_hat, big_psi = _summarise_psi(psi)
    b = None
    if trial.n > 1 + trial.k + trial.d_x:
        factors = factor_gram(_overlapping_design(trial))
        b = np.sqrt(trial.n * gram_inverse_diagonal(factors, np.arange(1, trial.k + 1)))
    return EstimateBatch.from_variance(tau_hat, big_psi, trial.n, alpha, b=b)


# --- Whole-trial dispatch ---
def estimate_trial(
    trial: TrialData,
    estimator: EstimatorName,
    alpha: float,
    arch: Optional[NetworkConfig] = None,
    folds: int = config.DEFAULT_FOLDS,
    seed: int = 0,
) -> EstimateBatch:
    """Applies one estimator to every experiment of a trial."""
    if isinstance(trial, OverlappingTrial):
        if estimator == "dml":
            return dml_overlapping_batch(trial, alpha, folds, arch, seed)
        return ols_overlapping_batch(trial, alpha)

    if estimator == "dm" and not trial.variable_size:
        y = np.stack([e.y for e in trial.experiments])
        d = np.stack([e.d for e in trial.experiments])
        return dm_estimate_arrays(y, d, alpha)
    if estimator == "dm":
        return EstimateBatch.from_estimates([dm_estimate(e, alpha) for e in trial.experiments])
    if estimator == "ols":
        return EstimateBatch.from_estimates([ols_estimate(e, alpha) for e in trial.experiments])
    if estimator == "dml":
        # Each experiment gets its own seed so fold splits differ across experiments.
        estimates = [
            dml_estimate(e, alpha, folds, arch, seed=derive_seed(seed, "dml-experiment", k))
            for k, e in enumerate(trial.experiments)
        ]
        return EstimateBatch.from_estimates(estimates)
    raise InvalidParameterError(f"Unknown estimator '{estimator}'.")

