# dptr_cli/core_api/real_data.py
"""Real-data evaluation: CSV ingestion, covariate grouping, true HTEs and subsample replays.

Each group's full-data difference in means is treated as its true effect;
replications draw small per-arm subsamples, run the roll-out methods on
them and score the decisions against those full-data effects.
"""
import csv
import logging
import re
import time
from functools import partial
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from dptr_cli.core_api.estimators import (
    dm_estimate,
    dml_overlapping_batch,
    estimate_trial,
    ols_overlapping_batch,
)
from dptr_cli.core_api.exceptions import (
    DataError,
    DptrError,
    EmptyArmError,
    EmptyFileError,
    GroupTooSmallError,
    MissingColumnError,
    NoGroupsRetainedError,
    UnparseableRowError,
)
from dptr_cli.core_api.models import (
    EstimateBatch,
    ExperimentSample,
    GroundTruth,
    GroupData,
    GroupedDataset,
    IngestResult,
    NonOverlappingTrial,
    OverlappingTrial,
    RejectedRow,
    WeightSpec,
)
from dptr_cli.core_api.nuisance import NetworkConfig
from dptr_cli.core_api.replication import error_rows, score_methods
from dptr_cli.core_api.rng import derive_seed, stream
from dptr_cli.features.evaluation.models import CsvSchema, EvaluateConfig

logger = logging.getLogger(__name__)

_COVARIATE_PATTERN = re.compile(r"x(\d+)")
_TREATMENT_PATTERN = re.compile(r"treatment_(\d+)")


# --- Ingestion ---
def _numbered_columns(header: Sequence[str], pattern: re.Pattern) -> List[str]:
    matches = [(int(m.group(1)), c) for c in header if (m := pattern.fullmatch(c))]
    return [c for _, c in sorted(matches)]


def resolve_columns(header: Sequence[str], schema: CsvSchema, layout: str) -> Dict[str, List[str]]:
    covariates = schema.covariates if schema.covariates is not None else _numbered_columns(header, _COVARIATE_PATTERN)
    if layout == "overlapping":
        treatments = schema.treatments or _numbered_columns(header, _TREATMENT_PATTERN)
        if not treatments:
            raise MissingColumnError("No treatment_<k> columns found for the overlapping layout.")
    else:
        treatments = [schema.treatment]
    return {"outcome": [schema.outcome], "treatments": treatments, "covariates": list(covariates)}


def _read_raw(path: Path) -> Tuple[pd.DataFrame, Dict[int, str]]:
    """Reads the CSV as strings indexed by physical line number; ragged lines are reported separately."""
    records, lines, ragged = [], [], {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f, skipinitialspace=True)
        header = next(reader, None)
        if not header:
            raise EmptyFileError(f"{path} is empty.")
        width = len(header)
        for fields in reader:
            if not any(field.strip() for field in fields):
                continue
            if len(fields) != width:
                ragged[reader.line_num] = f"expected {width} fields, saw {len(fields)}"
                fields = [""] * width
            records.append(fields)
            lines.append(reader.line_num)
    return pd.DataFrame(records, columns=[h.strip() for h in header], index=lines, dtype=str), ragged


def ingest_csv(path: Path, schema: Optional[CsvSchema] = None, layout: str = "grouped") -> IngestResult:
    """Reads a CSV into typed rows; unparseable rows are rejected with their line numbers."""
    schema = schema or CsvSchema()
    path = Path(path)
    if not path.exists():
        raise DataError(f"Input file not found: {path}")
    raw, ragged = _read_raw(path)
    if raw.empty:
        raise EmptyFileError(f"{path} has a header but no data rows.")

    columns = resolve_columns(list(raw.columns), schema, layout)
    numeric_columns = columns["outcome"] + columns["treatments"] + columns["covariates"]
    required = numeric_columns + ([schema.experiment] if schema.experiment else [])
    missing = [c for c in required if c not in raw.columns]
    if missing:
        raise MissingColumnError(f"{path} is missing declared column(s): {', '.join(missing)}")

    numeric = raw[numeric_columns].apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna()
    treatments = numeric[columns["treatments"]]
    bad[columns["treatments"]] |= ~treatments.isin([0, 1])
    rejected_mask = bad.any(axis=1) | raw.index.isin(list(ragged))

    rejected = []
    for index in raw.index[rejected_mask.to_numpy()]:
        if index in ragged:
            reason = ragged[index]
        else:
            offending = bad.columns[bad.loc[index].to_numpy()][0]
            reason = f"column '{offending}' = {raw.at[index, offending]!r}"
        rejected.append(RejectedRow(line_number=int(index), reason=reason))
    if rejected:
        logger.warning(
            f"Rejected {len(rejected)} of {len(raw)} rows from {path}; first at line {rejected[0].line_number}."
        )
    if len(rejected) == len(raw):
        raise UnparseableRowError(
            f"No row of {path} could be parsed ({rejected[0].reason} at line {rejected[0].line_number}).",
            line_number=rejected[0].line_number,
        )

    frame = numeric[~rejected_mask].copy()
    frame[columns["treatments"]] = frame[columns["treatments"]].astype(np.int8)
    if schema.experiment:
        frame[schema.experiment] = raw.loc[~rejected_mask, schema.experiment].astype(str)
    frame = frame.reset_index(drop=True)
    logger.info(f"Ingested {len(frame)} rows from {path}.")
    return IngestResult(frame=frame, rows_read=len(raw), rejected=rejected)


# --- Grouping ---
def true_hte(y: np.ndarray, d: np.ndarray) -> float:
    """Full-group difference of arm means."""
    d = np.asarray(d).astype(bool)
    if d.all() or not d.any():
        raise EmptyArmError("A group needs both treated and control rows to define its HTE.")
    y = np.asarray(y, dtype=float)
    return float(y[d].mean() - y[~d].mean())


def dichotomize(values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Median split with ties assigned at random so the two sides are as equal as possible."""
    values = np.asarray(values, dtype=float)
    median = np.median(values)
    bits = (values > median).astype(np.int8)
    ties = np.flatnonzero(values == median)
    if ties.size:
        low_needed = values.shape[0] // 2 - int(np.sum(values < median))
        low_needed = int(np.clip(low_needed, 0, ties.size))
        shuffled = rng.permutation(ties)
        bits[shuffled[:low_needed]] = 0
        bits[shuffled[low_needed:]] = 1
    return bits


def _make_group(key: str, rows: pd.DataFrame, outcome: str, treatment: str, covariates: List[str]) -> GroupData:
    y = rows[outcome].to_numpy(dtype=float)
    d = rows[treatment].to_numpy()
    x = rows[covariates].to_numpy(dtype=float) if covariates else None
    return GroupData(key=key, y=y, d=d, x=x, tau=true_hte(y, d))


def group_generation(
    frame: pd.DataFrame,
    covariates: Sequence[str],
    min_size: int,
    seed: int,
    outcome: str = "outcome",
    treatment: str = "treatment",
    experiment: Optional[str] = None,
    keep_covariates: Sequence[str] = (),
) -> GroupedDataset:
    """Groups rows by the binary signature of median-split covariates (or by a key column)."""
    if frame.empty:
        raise DataError("Cannot group an empty frame.")
    if experiment:
        keys = frame[experiment].astype(str).to_numpy()
    else:
        if not covariates:
            raise DataError("Grouping needs at least one covariate or an experiment column.")
        rng = stream(seed, "group-ties")
        bits = np.column_stack([dichotomize(frame[c].to_numpy(), rng) for c in covariates])
        keys = np.array(["".join(map(str, row)) for row in bits])

    groups: List[GroupData] = []
    dropped_groups = dropped_rows = 0
    for key, rows in frame.groupby(keys, sort=True):
        arms = rows[treatment]
        if len(rows) < min_size or arms.all() or not arms.any():
            dropped_groups += 1
            dropped_rows += len(rows)
            continue
        groups.append(_make_group(str(key), rows, outcome, treatment, list(keep_covariates)))
    if dropped_groups:
        logger.warning(
            f"Dropped {dropped_groups} group(s) ({dropped_rows} rows) below {min_size} rows or with an empty arm."
        )
    if not groups:
        raise NoGroupsRetainedError(f"No group reached the minimum size of {min_size} rows.")
    logger.info(f"Retained {len(groups)} group(s) covering {sum(g.size for g in groups)} rows.")
    return GroupedDataset(groups=groups, dropped_groups=dropped_groups, dropped_rows=dropped_rows)


# --- Subsample evaluation ---
def arm_draw_sizes(group: GroupData, sample_size: float) -> Tuple[int, int]:
    """(treated, control) draw sizes: N/2 each for an integer N, or a proportion of each arm."""
    if sample_size > 1:
        half = int(sample_size) // 2
        return half, half
    return max(1, int(round(sample_size * group.n1))), max(1, int(round(sample_size * group.n0)))


def check_draws(grouped: GroupedDataset, sample_size: float) -> None:
    for group in grouped.groups:
        n1, n0 = arm_draw_sizes(group, sample_size)
        if n1 > group.n1 or n0 > group.n0:
            raise GroupTooSmallError(
                f"Group '{group.key}' has {group.n1} treated / {group.n0} control rows; "
                f"cannot draw {n1} / {n0} without replacement.",
                group_key=group.key,
            )


def draw_subsample(
    group: GroupData, sample_size: float, rng: np.random.Generator, use_covariates: bool
) -> ExperimentSample:
    n1, n0 = arm_draw_sizes(group, sample_size)
    treated = rng.choice(np.flatnonzero(group.d == 1), size=n1, replace=False)
    control = rng.choice(np.flatnonzero(group.d == 0), size=n0, replace=False)
    rows = np.concatenate([treated, control])
    x = group.x[rows] if use_covariates and group.x is not None else None
    return ExperimentSample(y=group.y[rows], d=group.d[rows], x=x)


def weighted_truth(tau: np.ndarray, weights: WeightSpec) -> GroundTruth:
    winners = tau > weights.tau_min
    r_star = float(np.sum(weights.weights[winners] * (tau[winners] - weights.tau_min)))
    return GroundTruth(tau=tau, r_star=r_star)


def _grouped_replication(s: Dict[str, Any], replication: int) -> List[Dict[str, Any]]:
    grouped: GroupedDataset = s["grouped"]
    base = {"run_id": s["run_id"], "cell_id": s["cell_id"], "replication": replication}
    rng = stream(s["seed"], "subsample", s["cell_id"], replication)
    try:
        samples = [draw_subsample(g, s["sample_size"], rng, s["use_covariates"]) for g in grouped.groups]
        trial = NonOverlappingTrial(experiments=samples, variable_size=s["sample_size"] <= 1)
        batch = estimate_trial(
            trial,
            s["estimator"],
            s["alpha"],
            arch=s["network"],
            folds=s["folds"],
            seed=derive_seed(s["seed"], "estimation", s["cell_id"], replication),
        )
        return score_methods(batch, s["truth"], s["weights"], s["methods"], s["alpha"], base)
    except DptrError as e:
        logger.warning(f"Replication {replication} failed: {e.message}")
        return error_rows(base, s["methods"], e)


def _run_replications(task, state: Dict[str, Any], replications: int, parallelism: int) -> pd.DataFrame:
    # State travels with each task.
    job = partial(task, state)
    if parallelism == 1:
        chunks = [job(rep) for rep in range(replications)]
    else:
        with Pool(processes=parallelism) as pool:
            chunks = pool.map(job, range(replications), chunksize=max(1, replications // (4 * parallelism)))
    return pd.DataFrame.from_records([row for chunk in chunks for row in chunk])


def subsample_evaluate(
    grouped: GroupedDataset,
    sample_size: float,
    methods: Sequence[str],
    alpha: float,
    tau_min: float = 0.0,
    replications: int = 1000,
    seed: int = 0,
    estimator: str = "dm",
    use_covariates: bool = False,
    network: Optional[NetworkConfig] = None,
    folds: int = 2,
    parallelism: int = 1,
    cell_id: int = 0,
    run_id: str = "",
) -> pd.DataFrame:
    """Replays subsampled experiments against full-data HTEs with size-proportional weights."""
    check_draws(grouped, sample_size)
    weights = WeightSpec.from_sizes(grouped.sizes(), tau_min=tau_min)
    state = {
        "grouped": grouped,
        "truth": weighted_truth(grouped.truth_vector(), weights),
        "weights": weights,
        "sample_size": sample_size,
        "methods": list(methods),
        "alpha": alpha,
        "estimator": estimator,
        "use_covariates": use_covariates,
        "network": network or NetworkConfig(),
        "folds": folds,
        "seed": seed,
        "cell_id": cell_id,
        "run_id": run_id,
    }
    logger.info(f"Evaluating {grouped.k} groups at sample size {sample_size} over {replications} replications.")
    return _run_replications(_grouped_replication, state, replications, parallelism)


# --- Overlapping real data ---
def _combination_keys(d: np.ndarray) -> np.ndarray:
    return np.array(["".join(map(str, row)) for row in d.astype(int)])


def _single_treatment_dm(trial: OverlappingTrial, alpha: float) -> EstimateBatch:
    keys = _combination_keys(trial.d)
    control_key = "0" * trial.k
    estimates = []
    for k in range(trial.k):
        treated_key = "".join("1" if j == k else "0" for j in range(trial.k))
        rows = np.flatnonzero((keys == treated_key) | (keys == control_key))
        if not np.any(keys[rows] == treated_key) or not np.any(keys[rows] == control_key):
            raise GroupTooSmallError(
                f"Difference in means for treatment {k + 1} needs rows with combinations "
                f"{treated_key} and {control_key}.",
                group_key=treated_key,
            )
        sample = ExperimentSample(y=trial.y[rows], d=(keys[rows] == treated_key).astype(np.int8))
        estimates.append(dm_estimate(sample, alpha))
    return EstimateBatch.from_estimates(estimates)


def overlapping_truth(trial: OverlappingTrial, alpha: float) -> np.ndarray:
    """Full-data joint OLS coefficients serve as the true per-treatment effects."""
    return ols_overlapping_batch(trial, alpha).tau_hat


def _overlapping_replication(s: Dict[str, Any], replication: int) -> List[Dict[str, Any]]:
    base = {"run_id": s["run_id"], "cell_id": s["cell_id"], "replication": replication}
    rng = stream(s["seed"], "subsample", s["cell_id"], replication)
    trial: OverlappingTrial = s["trial"]
    try:
        rows = np.concatenate([rng.choice(idx, size=s["sample_size"], replace=False) for idx in s["combinations"]])
        sub = OverlappingTrial(y=trial.y[rows], d=trial.d[rows], x=None if trial.x is None else trial.x[rows])
        if s["estimator"] == "dm":
            batch = _single_treatment_dm(sub, s["alpha"])
        elif s["estimator"] == "dml":
            seed = derive_seed(s["seed"], "estimation", s["cell_id"], replication)
            batch = dml_overlapping_batch(sub, s["alpha"], s["folds"], s["network"], seed)
        else:
            batch = ols_overlapping_batch(sub, s["alpha"])
        return score_methods(batch, s["truth"], s["weights"], s["methods"], s["alpha"], base)
    except DptrError as e:
        logger.warning(f"Replication {replication} failed: {e.message}")
        return error_rows(base, s["methods"], e)


def evaluate_overlapping(
    trial: OverlappingTrial,
    sample_size: int,
    methods: Sequence[str],
    alpha: float,
    tau_min: float = 0.0,
    replications: int = 1000,
    seed: int = 0,
    estimator: str = "ols",
    network: Optional[NetworkConfig] = None,
    folds: int = 2,
    parallelism: int = 1,
    cell_id: int = 0,
    run_id: str = "",
) -> pd.DataFrame:
    """Samples N rows per treatment combination and scores against the full-data OLS effects."""
    keys = _combination_keys(trial.d)
    combinations = []
    for key in sorted(set(keys)):
        idx = np.flatnonzero(keys == key)
        if idx.size < sample_size:
            raise GroupTooSmallError(
                f"Treatment combination {key} has {idx.size} rows; cannot draw {sample_size}.", group_key=key
            )
        combinations.append(idx)
    weights = WeightSpec.uniform(trial.k, tau_min=tau_min)
    state = {
        "trial": trial,
        "combinations": combinations,
        "truth": weighted_truth(overlapping_truth(trial, alpha), weights),
        "weights": weights,
        "sample_size": int(sample_size),
        "methods": list(methods),
        "alpha": alpha,
        "estimator": estimator,
        "network": network or NetworkConfig(),
        "folds": folds,
        "seed": seed,
        "cell_id": cell_id,
        "run_id": run_id,
    }
    logger.info(f"Evaluating {trial.k} overlapping treatments over {len(combinations)} combinations.")
    return _run_replications(_overlapping_replication, state, replications, parallelism)


# --- Orchestration ---
class EvaluationResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rows: pd.DataFrame
    elapsed_seconds: float
    cells: List[Dict[str, Any]]
    reconciliation: Dict[str, int]
    groups: List[Dict[str, Any]]
    rejected: List[RejectedRow]


def run_evaluation(cfg: EvaluateConfig, run_id: str = "") -> EvaluationResult:
    """Ingests the CSV and evaluates every requested sample size."""
    start = time.perf_counter()
    ingest = ingest_csv(cfg.data_path, cfg.columns, cfg.layout)
    columns = resolve_columns(list(ingest.frame.columns), cfg.columns, cfg.layout)
    covariates = columns["covariates"]
    frames = []
    groups_report: List[Dict[str, Any]] = []

    if cfg.layout == "overlapping":
        frame = ingest.frame
        trial = OverlappingTrial(
            y=frame[cfg.columns.outcome].to_numpy(dtype=float),
            d=frame[columns["treatments"]].to_numpy(),
            x=frame[covariates].to_numpy(dtype=float) if cfg.use_covariates and covariates else None,
        )
        dropped_rows, rows_used = 0, trial.n
        for cell_id, size in enumerate(cfg.sample_sizes):
            frames.append(
                evaluate_overlapping(
                    trial,
                    int(size),
                    cfg.methods,
                    cfg.alpha,
                    cfg.tau_min,
                    cfg.replications,
                    cfg.master_seed,
                    cfg.estimator,
                    cfg.network,
                    cfg.folds,
                    cfg.parallelism,
                    cell_id,
                    run_id,
                )
            )
    else:
        grouped = group_generation(
            ingest.frame,
            cfg.group_by if cfg.group_by is not None else covariates,
            cfg.min_group_size,
            cfg.master_seed,
            outcome=cfg.columns.outcome,
            treatment=cfg.columns.treatment,
            experiment=cfg.columns.experiment,
            keep_covariates=covariates if cfg.use_covariates else (),
        )
        dropped_rows, rows_used = grouped.dropped_rows, grouped.rows_used
        weights = WeightSpec.from_sizes(grouped.sizes())
        groups_report = [
            {"key": g.key, "size": g.size, "n1": g.n1, "n0": g.n0, "tau": g.tau, "weight": float(w)}
            for g, w in zip(grouped.groups, weights.weights)
        ]
        for cell_id, size in enumerate(cfg.sample_sizes):
            frames.append(
                subsample_evaluate(
                    grouped,
                    size,
                    cfg.methods,
                    cfg.alpha,
                    tau_min=cfg.tau_min,
                    replications=cfg.replications,
                    seed=cfg.master_seed,
                    estimator=cfg.estimator,
                    use_covariates=cfg.use_covariates,
                    network=cfg.network,
                    folds=cfg.folds,
                    parallelism=cfg.parallelism,
                    cell_id=cell_id,
                    run_id=run_id,
                )
            )

    reconciliation = {
        "rows_ingested": ingest.rows_read,
        "rows_rejected": len(ingest.rejected),
        "rows_in_dropped_groups": dropped_rows,
        "rows_used": rows_used,
    }
    if ingest.rows_read != len(ingest.rejected) + dropped_rows + rows_used:
        logger.error(f"Row reconciliation does not balance: {reconciliation}")
    return EvaluationResult(
        rows=pd.concat(frames, ignore_index=True),
        elapsed_seconds=time.perf_counter() - start,
        cells=[{"cell_id": i, "sample_size": s} for i, s in enumerate(cfg.sample_sizes)],
        reconciliation=reconciliation,
        groups=groups_report,
        rejected=ingest.rejected,
    )
