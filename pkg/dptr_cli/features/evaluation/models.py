# dptr_cli/features/evaluation/models.py
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from dptr_cli.core import config
from dptr_cli.core_api.nuisance import NetworkConfig


class CsvSchema(BaseModel):
    """Column mapping for an input CSV. Unset lists are auto-detected from the header."""

    model_config = ConfigDict(extra="forbid")

    outcome: str = "outcome"
    treatment: str = "treatment"
    covariates: Optional[List[str]] = Field(default=None, description="Defaults to every x<j> column")
    treatments: Optional[List[str]] = Field(
        default=None, description="Overlapping layout only; defaults to every treatment_<k> column"
    )
    experiment: Optional[str] = Field(
        default=None, description="Column holding a precomputed group key; skips median-split grouping"
    )


class EvaluateConfig(BaseModel):
    """Everything `dptr evaluate` needs."""

    model_config = ConfigDict(extra="forbid")

    data_path: Path
    layout: Literal["grouped", "overlapping"] = "grouped"
    columns: CsvSchema = Field(default_factory=CsvSchema)
    group_by: Optional[List[str]] = Field(
        default=None, description="Covariates to median-split; defaults to every covariate column"
    )
    min_group_size: int = Field(default=1000, ge=2)
    sample_sizes: List[float] = Field(default_factory=lambda: [10.0], min_length=1)
    methods: List[Literal["IHT", "DPTR", "DPTR-P", "BAYES"]] = Field(
        default_factory=lambda: ["IHT", "DPTR"], min_length=1
    )
    estimator: Literal["dm", "ols", "dml"] = "dm"
    use_covariates: bool = Field(default=False, description="Include covariates in the OLS/DML design")
    alpha: float = Field(default=config.DEFAULT_ALPHA, gt=0.0, lt=1.0)
    tau_min: float = Field(default=0.0, ge=0.0)
    replications: int = Field(default=config.DEFAULT_REPLICATIONS, ge=1)
    master_seed: int = Field(default=config.DEFAULT_MASTER_SEED, ge=0)
    parallelism: int = Field(default=1, ge=1)
    folds: int = Field(default=config.DEFAULT_FOLDS, ge=2)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    output_dir: Optional[Path] = None

    @field_validator("sample_sizes")
    @classmethod
    def check_sample_sizes(cls, values):
        for value in values:
            if value <= 0:
                raise ValueError(f"sample size {value} must be positive")
            if value > 1 and (value != int(value) or int(value) % 2):
                raise ValueError(
                    f"sample size {value} must be an even integer N (N/2 per arm) or a proportion in (0, 1]"
                )
        return values

    @model_validator(mode="after")
    def check_layout(self):
        if "DPTR-P" in self.methods and self.estimator == "dm":
            raise ValueError("DPTR-P needs design factors; use the ols or dml estimator")
        if self.layout == "overlapping" and any(v <= 1 for v in self.sample_sizes):
            raise ValueError("the overlapping evaluator samples N rows per treatment combination; use integers")
        return self
