# dptr_cli/core_api/models.py
"""Value types shared by the estimators, pooling rules, generators and metrics."""
from typing import FrozenSet, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator
from scipy.stats import norm

from dptr_cli.core_api.rng import stream

DecisionMethod = Literal["IHT", "DPTR", "DPTR-P", "BAYES", "ORACLE"]

_ARRAY_CONFIG = ConfigDict(arbitrary_types_allowed=True, frozen=True)


def z_quantile(alpha: float) -> float:
    """Two-sided standard normal critical value z_{1-alpha/2}."""
    return float(norm.ppf(1.0 - alpha / 2.0))


# --- Trial data ---
class ExperimentSample(BaseModel):
    """Observations of one non-overlapping experiment."""

    model_config = _ARRAY_CONFIG

    y: np.ndarray
    d: np.ndarray
    x: Optional[np.ndarray] = None

    @field_validator("y", mode="before")
    @classmethod
    def _as_float_vector(cls, value):
        return np.asarray(value, dtype=float).reshape(-1)

    @field_validator("d", mode="before")
    @classmethod
    def _as_binary_vector(cls, value):
        arr = np.asarray(value).reshape(-1)
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ValueError("treatment flags must be 0 or 1")
        return arr.astype(np.int8)

    @field_validator("x", mode="before")
    @classmethod
    def _as_float_matrix(cls, value):
        if value is None:
            return None
        arr = np.asarray(value, dtype=float)
        return arr.reshape(-1, 1) if arr.ndim == 1 else arr

    @model_validator(mode="after")
    def _check_lengths(self):
        if self.y.shape[0] != self.d.shape[0]:
            raise ValueError("outcomes and treatment flags must have the same length")
        if self.x is not None and self.x.shape[0] != self.y.shape[0]:
            raise ValueError("covariate rows must match the number of outcomes")
        return self

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def n_treated(self) -> int:
        return int(self.d.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    @property
    def d_x(self) -> int:
        return 0 if self.x is None else int(self.x.shape[1])


class NonOverlappingTrial(BaseModel):
    """K experiments, each run on its own subject pool."""

    model_config = _ARRAY_CONFIG

    experiments: List[ExperimentSample]
    variable_size: bool = False

    @model_validator(mode="after")
    def _check_uniformity(self):
        if not self.experiments:
            raise ValueError("a trial needs at least one experiment")
        if not self.variable_size and len({e.n for e in self.experiments}) > 1:
            raise ValueError("experiments differ in size; set variable_size for real-data mode")
        if len({e.d_x for e in self.experiments}) > 1:
            raise ValueError("covariate dimension must be uniform within a trial")
        return self

    @property
    def k(self) -> int:
        return len(self.experiments)

    @property
    def n(self) -> int:
        return self.experiments[0].n

    @property
    def d_x(self) -> int:
        return self.experiments[0].d_x


class OverlappingTrial(BaseModel):
    """N shared rows, each carrying a length-K treatment vector."""

    model_config = _ARRAY_CONFIG

    y: np.ndarray
    d: np.ndarray
    x: Optional[np.ndarray] = None

    @field_validator("y", mode="before")
    @classmethod
    def _as_float_vector(cls, value):
        return np.asarray(value, dtype=float).reshape(-1)

    @field_validator("d", mode="before")
    @classmethod
    def _as_binary_matrix(cls, value):
        arr = np.asarray(value)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ValueError("treatment vectors must be binary")
        return arr.astype(np.int8)

    @field_validator("x", mode="before")
    @classmethod
    def _as_float_matrix(cls, value):
        if value is None:
            return None
        arr = np.asarray(value, dtype=float)
        return arr.reshape(-1, 1) if arr.ndim == 1 else arr

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.d.shape[0] != self.y.shape[0]:
            raise ValueError("every row needs a treatment vector")
        if self.x is not None and self.x.shape[0] != self.y.shape[0]:
            raise ValueError("covariate rows must match the number of outcomes")
        return self

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def k(self) -> int:
        return int(self.d.shape[1])

    @property
    def d_x(self) -> int:
        return 0 if self.x is None else int(self.x.shape[1])


TrialData = Union[NonOverlappingTrial, OverlappingTrial]


# --- Estimates ---
class AteEstimate(BaseModel):
    """One experiment's ATE estimate with its variance scale v = N * Var(tau_hat)."""

    model_config = ConfigDict(frozen=True)

    tau_hat: float
    v: float = Field(ge=0.0)
    b: Optional[float] = Field(default=None, gt=0.0)
    n: int = Field(gt=0)
    lb: float
    ub: float

    @model_validator(mode="after")
    def _check_bounds(self):
        if not (self.lb <= self.tau_hat <= self.ub):
            raise ValueError("confidence bounds must bracket the point estimate")
        return self

    @classmethod
    def from_variance(
        cls, tau_hat: float, v: float, n: int, alpha: float, b: Optional[float] = None
    ) -> "AteEstimate":
        half_width = z_quantile(alpha) * np.sqrt(v / n)
        return cls(
            tau_hat=float(tau_hat),
            v=float(v),
            b=None if b is None else float(b),
            n=int(n),
            lb=float(tau_hat - half_width),
            ub=float(tau_hat + half_width),
        )

    @property
    def s_sq(self) -> Optional[float]:
        """Per-unit noise variance implied by v and the design factor."""
        return None if self.b is None else self.v / self.b**2


class EstimateBatch(BaseModel):
    """Column-oriented view of K estimates; the pooling rules work on this form."""

    model_config = _ARRAY_CONFIG

    tau_hat: np.ndarray
    v: np.ndarray
    n: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    b: Optional[np.ndarray] = None

    @model_validator(mode="after")
    def _check_lengths(self):
        k = self.tau_hat.shape[0]
        for name in ("v", "n", "lb", "ub"):
            if getattr(self, name).shape[0] != k:
                raise ValueError(f"'{name}' has a different length from tau_hat")
        if self.b is not None and self.b.shape[0] != k:
            raise ValueError("'b' has a different length from tau_hat")
        return self

    @classmethod
    def from_variance(cls, tau_hat, v, n, alpha: float, b=None) -> "EstimateBatch":
        tau_hat = np.asarray(tau_hat, dtype=float)
        v = np.asarray(v, dtype=float)
        n = np.broadcast_to(np.asarray(n, dtype=np.int64), tau_hat.shape).copy()
        half_width = z_quantile(alpha) * np.sqrt(v / n)
        return cls(
            tau_hat=tau_hat,
            v=v,
            n=n,
            lb=tau_hat - half_width,
            ub=tau_hat + half_width,
            b=None if b is None else np.asarray(b, dtype=float),
        )

    @classmethod
    def from_estimates(cls, estimates: Sequence[AteEstimate]) -> "EstimateBatch":
        has_b = all(e.b is not None for e in estimates)
        return cls(
            tau_hat=np.array([e.tau_hat for e in estimates], dtype=float),
            v=np.array([e.v for e in estimates], dtype=float),
            n=np.array([e.n for e in estimates], dtype=np.int64),
            lb=np.array([e.lb for e in estimates], dtype=float),
            ub=np.array([e.ub for e in estimates], dtype=float),
            b=np.array([e.b for e in estimates], dtype=float) if has_b else None,
        )

    def __len__(self) -> int:
        return int(self.tau_hat.shape[0])

    def estimate(self, k: int) -> AteEstimate:
        return AteEstimate(
            tau_hat=float(self.tau_hat[k]),
            v=float(self.v[k]),
            b=None if self.b is None else float(self.b[k]),
            n=int(self.n[k]),
            lb=float(self.lb[k]),
            ub=float(self.ub[k]),
        )

    def to_estimates(self) -> List[AteEstimate]:
        return [self.estimate(k) for k in range(len(self))]


EstimateInput = Union[EstimateBatch, Sequence[AteEstimate]]


def as_batch(estimates: EstimateInput) -> EstimateBatch:
    if isinstance(estimates, EstimateBatch):
        return estimates
    return EstimateBatch.from_estimates(list(estimates))


# --- Pooling ---
class OracleParams(BaseModel):
    """Known prior and noise parameters for the oracle scale parameter."""

    model_config = ConfigDict(frozen=True)

    tau0: float
    sigma0_sq: float = Field(gt=0.0)
    sigma_sq: float = Field(gt=0.0)
    n: int = Field(gt=0)
    alpha: float = Field(gt=0.0, lt=1.0)


class SharedBeta(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["shared"] = "shared"
    value: float = Field(ge=0.0)


class PerExperimentBeta(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["per_experiment"] = "per_experiment"
    values: List[float]

    @field_validator("values")
    @classmethod
    def _non_negative(cls, values):
        if any(not np.isfinite(v) or v < 0 for v in values):
            raise ValueError("every per-experiment beta must be finite and >= 0")
        return values


class PoolingPlan(BaseModel):
    """Anchor plus scale-parameter assignment used by the DPTR decision rule."""

    model_config = ConfigDict(frozen=True)

    tau0_hat: float
    beta: Union[SharedBeta, PerExperimentBeta] = Field(discriminator="kind")
    alpha: float = Field(gt=0.0, lt=1.0)
    n: int = Field(gt=0)
    degenerate_denominator: bool = False
    nonpositive_anchor: bool = False

    def beta_array(self, k: int) -> np.ndarray:
        if isinstance(self.beta, SharedBeta):
            return np.full(k, self.beta.value, dtype=float)
        values = np.asarray(self.beta.values, dtype=float)
        if values.shape[0] != k:
            raise ValueError(f"plan carries {values.shape[0]} betas for {k} experiments")
        return values


class DecisionSet(BaseModel):
    """Experiments (0-based indices) selected for roll-out by one method."""

    model_config = ConfigDict(frozen=True)

    selected: FrozenSet[int]
    method: DecisionMethod
    k: int = Field(ge=0)

    @model_validator(mode="after")
    def _check_range(self):
        if any(i < 0 or i >= self.k for i in self.selected):
            raise ValueError(f"selected indices must lie in [0, {self.k})")
        return self

    @classmethod
    def from_mask(cls, mask: np.ndarray, method: DecisionMethod) -> "DecisionSet":
        mask = np.asarray(mask, dtype=bool)
        return cls(
            selected=frozenset(int(i) for i in np.flatnonzero(mask)),
            method=method,
            k=int(mask.shape[0]),
        )

    def mask(self) -> np.ndarray:
        out = np.zeros(self.k, dtype=bool)
        if self.selected:
            out[list(self.selected)] = True
        return out


# --- Ground truth and scoring ---
class SigmoidContext(BaseModel):
    """Everything needed to re-evaluate E[Y | t] for the sigmoid outcome model."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    gammas: np.ndarray  # (K + 1, d_x), row 0 is the intercept coordinate
    upsilon: float
    draws: int = Field(gt=0)
    oracle_seed: int
    t_opt: Tuple[int, ...]
    baseline_mean: float

    _design: Optional[np.ndarray] = PrivateAttr(default=None)

    def _linear_index(self) -> np.ndarray:
        if self._design is None:
            d_x = self.gammas.shape[1]
            x = stream(self.oracle_seed, "sigmoid-oracle").uniform(0.0, 1.0, size=(self.draws, d_x))
            self._design = x @ self.gammas.T
        return self._design

    @property
    def k(self) -> int:
        return int(self.gammas.shape[0] - 1)

    def expected_outcomes(self, treatments: np.ndarray, chunk: int = 256) -> np.ndarray:
        """Monte Carlo E[Y | t] for each row of `treatments` (shape (m, K), no intercept)."""
        treatments = np.atleast_2d(np.asarray(treatments, dtype=float))
        index = self._linear_index()
        out = np.empty(treatments.shape[0])
        for start in range(0, treatments.shape[0], chunk):
            block = treatments[start : start + chunk]
            z = index[:, :1] + index[:, 1:] @ block.T
            out[start : start + chunk] = np.mean(self.upsilon / (1.0 + np.exp(-z)), axis=0)
        return out

    def expected_outcome(self, t: Sequence[int]) -> float:
        """Monte Carlo E[Y | t] with common random numbers; t excludes the intercept."""
        return float(self.expected_outcomes(np.asarray(t, dtype=float).reshape(1, -1))[0])


class GroundTruth(BaseModel):
    model_config = _ARRAY_CONFIG

    tau: np.ndarray
    r_star: float
    sigmoid: Optional[SigmoidContext] = None

    @field_validator("tau", mode="before")
    @classmethod
    def _as_float_vector(cls, value):
        return np.asarray(value, dtype=float).reshape(-1)

    @property
    def k(self) -> int:
        return int(self.tau.shape[0])


class WeightSpec(BaseModel):
    """Per-experiment reward weights (summing to one) and the frictional cost."""

    model_config = _ARRAY_CONFIG

    weights: np.ndarray
    tau_min: float = Field(default=0.0, ge=0.0)

    @field_validator("weights", mode="before")
    @classmethod
    def _as_float_vector(cls, value):
        return np.asarray(value, dtype=float).reshape(-1)

    @model_validator(mode="after")
    def _check_normalized(self):
        if (self.weights < 0).any():
            raise ValueError("weights must be non-negative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        return self

    @classmethod
    def uniform(cls, k: int, tau_min: float = 0.0) -> "WeightSpec":
        return cls(weights=np.full(k, 1.0 / k), tau_min=tau_min)

    @classmethod
    def from_sizes(cls, sizes: Sequence[float], tau_min: float = 0.0) -> "WeightSpec":
        sizes = np.asarray(sizes, dtype=float)
        weights = sizes / sizes.sum()
        # Push the rounding residue onto the largest weight so the sum is exact.
        weights[np.argmax(weights)] += 1.0 - weights.sum()
        return cls(weights=weights, tau_min=tau_min)


class MetricsReport(BaseModel):
    """Scores for one method in one replication; absent metrics are None."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    method: str
    reward: float
    optimality_ratio: Optional[float] = Field(default=None, serialization_alias="or")
    vdp: Optional[float] = None
    accuracy: Optional[float] = None
    recall: Optional[float] = None
    specificity: Optional[float] = None
    precision: Optional[float] = None
    tp: int = Field(ge=0)
    tn: int = Field(ge=0)
    fp: int = Field(ge=0)
    fn: int = Field(ge=0)
    k: int = Field(ge=0)
    r_star: float

    @model_validator(mode="after")
    def _check_counts(self):
        if self.tp + self.tn + self.fp + self.fn != self.k:
            raise ValueError("confusion counts must sum to K")
        return self


# --- Real data ---
class GroupData(BaseModel):
    """One covariate-defined group with its full-data ("true") HTE."""

    model_config = _ARRAY_CONFIG

    key: str
    y: np.ndarray
    d: np.ndarray
    x: Optional[np.ndarray] = None
    tau: float

    @property
    def n1(self) -> int:
        return int(self.d.sum())

    @property
    def n0(self) -> int:
        return int(self.d.shape[0] - self.d.sum())

    @property
    def size(self) -> int:
        return int(self.d.shape[0])


class GroupedDataset(BaseModel):
    model_config = _ARRAY_CONFIG

    groups: List[GroupData]
    dropped_groups: int = Field(default=0, ge=0)
    dropped_rows: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _unique_keys(self):
        keys = [g.key for g in self.groups]
        if len(set(keys)) != len(keys):
            raise ValueError("group keys must be unique")
        return self

    @property
    def k(self) -> int:
        return len(self.groups)

    @property
    def rows_used(self) -> int:
        return sum(g.size for g in self.groups)

    def truth_vector(self) -> np.ndarray:
        return np.array([g.tau for g in self.groups], dtype=float)

    def sizes(self) -> np.ndarray:
        return np.array([g.size for g in self.groups], dtype=float)


class RejectedRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    line_number: int
    reason: str


class IngestResult(BaseModel):
    """Typed rows from a CSV plus the rows that could not be parsed."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    frame: pd.DataFrame
    rows_read: int
    rejected: List[RejectedRow] = Field(default_factory=list)

    @property
    def rows_accepted(self) -> int:
        return int(len(self.frame))
