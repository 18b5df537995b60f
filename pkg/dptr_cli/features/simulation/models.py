# dptr_cli/features/simulation/models.py
import itertools
from pathlib import Path
from typing import Any, Dict, Iterator, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from dptr_cli.core import config
from dptr_cli.core_api.nuisance import NetworkConfig

Scenario = Literal["S1_DM", "S1_OLS", "S2_DML", "S3_OLS", "S3_OLS_COV", "S4_DML", "SIGMOID"]
Distribution = Literal["normal", "uniform"]
Method = Literal["IHT", "DPTR", "DPTR-P", "BAYES", "ORACLE_BETA"]

COVARIATE_SCENARIOS = {"S1_OLS", "S2_DML", "S3_OLS_COV", "S4_DML", "SIGMOID"}
OVERLAPPING_SCENARIOS = {"S3_OLS", "S3_OLS_COV", "S4_DML", "SIGMOID"}
# Scenarios whose ATEs are drawn directly from (tau0, sigma0), so the oracle beta applies.
LINEAR_SCENARIOS = {"S1_DM", "S1_OLS", "S3_OLS", "S3_OLS_COV"}

ESTIMATOR_FOR_SCENARIO = {
    "S1_DM": "dm",
    "S1_OLS": "ols",
    "S2_DML": "dml",
    "S3_OLS": "ols",
    "S3_OLS_COV": "ols",
    "S4_DML": "dml",
    "SIGMOID": "dml",
}


class ScenarioConfig(BaseModel):
    """One synthetic data-generating setting."""

    model_config = ConfigDict(extra="forbid")

    scenario: Scenario = "S1_DM"
    k: int = Field(default=config.DEFAULT_K, ge=1, description="Number of experiments")
    n: Optional[int] = Field(
        default=None, ge=3, description="Sample size per experiment (or rows for overlapping scenarios)"
    )
    tau0: float = config.DEFAULT_TAU0
    sigma0: float = Field(default=config.DEFAULT_SIGMA0, gt=0.0)
    sigma: float = Field(default=config.DEFAULT_SIGMA, ge=0.0)
    ate_dist: Distribution = "normal"
    noise_dist: Distribution = "normal"
    d_x: Optional[int] = Field(default=None, ge=0)
    coeff_low: float = -0.3
    coeff_high: float = 0.5
    upsilon_low: float = 10.0
    upsilon_high: float = 20.0
    shuffle: bool = False
    # Only standalone generate() calls read this; simulate keys every trial by the run's master_seed.
    seed: int = Field(default=config.DEFAULT_MASTER_SEED, ge=0, exclude=True)

    @model_validator(mode="after")
    def check_covariates(self):
        if self.scenario in COVARIATE_SCENARIOS and self.d_x == 0:
            raise ValueError(f"scenario {self.scenario} needs covariates; d_x must be at least 1")
        if self.coeff_low > self.coeff_high:
            raise ValueError("coeff_low must not exceed coeff_high")
        if self.upsilon_low > self.upsilon_high:
            raise ValueError("upsilon_low must not exceed upsilon_high")
        return self

    @property
    def overlapping(self) -> bool:
        return self.scenario in OVERLAPPING_SCENARIOS

    @property
    def estimator(self) -> str:
        return ESTIMATOR_FOR_SCENARIO[self.scenario]

    @property
    def sample_size(self) -> int:
        if self.n is not None:
            return self.n
        if self.scenario in ("S3_OLS", "S3_OLS_COV"):
            return 10 + self.k
        if self.scenario in ("S4_DML", "SIGMOID"):
            return 100 + self.k
        if self.scenario == "S2_DML":
            return 100
        return config.DEFAULT_N

    @property
    def covariate_dim(self) -> int:
        if self.d_x is not None:
            return self.d_x
        return 4 if self.scenario in COVARIATE_SCENARIOS else 0


SweepValue = Union[bool, int, float, str]
SWEEPABLE_RUN_FIELDS = {"alpha", "tau_min"}


class SweepAxis(BaseModel):
    model_config = ConfigDict(extra="forbid")

    field: str
    values: List[SweepValue] = Field(min_length=1)

    @model_validator(mode="after")
    def check_field(self):
        if self.field == "seed":
            raise ValueError("the scenario seed is not sweepable; simulate draws trials from master_seed")
        if self.field not in ScenarioConfig.model_fields and self.field not in SWEEPABLE_RUN_FIELDS:
            raise ValueError(
                f"sweep field '{self.field}' is not a scenario field or one of {sorted(SWEEPABLE_RUN_FIELDS)}"
            )
        return self


class SweepCell(BaseModel):
    """A fully resolved grid point of a sweep."""

    model_config = ConfigDict(frozen=True)

    cell_id: int
    overrides: Dict[str, SweepValue]
    scenario: ScenarioConfig
    alpha: float
    tau_min: float


class RunConfig(BaseModel):
    """Everything `dptr simulate` needs; every field has a documented default."""

    model_config = ConfigDict(extra="forbid")

    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    methods: List[Method] = Field(default_factory=lambda: ["IHT", "DPTR", "BAYES"], min_length=1)
    alpha: float = Field(default=config.DEFAULT_ALPHA, gt=0.0, lt=1.0)
    tau_min: float = Field(default=0.0, ge=0.0)
    replications: int = Field(default=config.DEFAULT_REPLICATIONS, ge=1)
    master_seed: int = Field(default=config.DEFAULT_MASTER_SEED, ge=0)
    parallelism: int = Field(default=1, ge=1)
    folds: int = Field(default=config.DEFAULT_FOLDS, ge=2)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    sweep: List[SweepAxis] = Field(default_factory=list)
    output_dir: Optional[Path] = None

    @model_validator(mode="after")
    def check_methods(self):
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("methods must not repeat")
        if "ORACLE_BETA" in self.methods:
            scenarios = {self.scenario.scenario}
            for axis in self.sweep:
                if axis.field == "scenario":
                    scenarios.update(str(v) for v in axis.values)
            if not scenarios <= LINEAR_SCENARIOS:
                raise ValueError("ORACLE_BETA needs a linear scenario with known (tau0, sigma0, sigma)")
        # Resolving every cell up front surfaces bad sweep values as config errors.
        list(self.cells())
        return self

    def cells(self) -> Iterator[SweepCell]:
        """Cartesian product of the sweep axes, in declaration order."""
        axes: List[Tuple[str, List[SweepValue]]] = [(a.field, a.values) for a in self.sweep]
        names = [name for name, _ in axes]
        for cell_id, combo in enumerate(itertools.product(*(values for _, values in axes))):
            overrides = dict(zip(names, combo))
            scenario_updates: Dict[str, Any] = {k: v for k, v in overrides.items() if k not in SWEEPABLE_RUN_FIELDS}
            scenario = ScenarioConfig.model_validate({**self.scenario.model_dump(), **scenario_updates})
            alpha = float(overrides.get("alpha", self.alpha))
            if not 0.0 < alpha < 1.0:
                raise ValueError(f"swept alpha {alpha} is outside (0, 1)")
            tau_min = float(overrides.get("tau_min", self.tau_min))
            yield SweepCell(cell_id=cell_id, overrides=overrides, scenario=scenario, alpha=alpha, tau_min=tau_min)
