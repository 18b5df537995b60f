import pytest
from pydantic import ValidationError

from dptr_cli.core_api.results_io import run_identifier
from dptr_cli.features.simulation.models import RunConfig, ScenarioConfig


def test_scenario_defaults_match_baseline_setting():
    scenario = ScenarioConfig()
    defaults = (scenario.k, scenario.sample_size, scenario.tau0, scenario.sigma0, scenario.sigma)
    assert defaults == (100, 10, 1.0, 3.0, 3.0)
    assert scenario.covariate_dim == 0
    assert scenario.estimator == "dm"


@pytest.mark.parametrize(
    "name, rows",
    [("S3_OLS", 30), ("S4_DML", 120), ("SIGMOID", 120), ("S2_DML", 100)],
)
def test_default_sample_sizes_per_scenario(name, rows):
    assert ScenarioConfig(scenario=name, k=20).sample_size == rows


def test_covariate_scenarios_reject_zero_covariates():
    with pytest.raises(ValidationError):
        ScenarioConfig(scenario="S2_DML", d_x=0)


def test_run_config_rejects_unknown_fields():
    with pytest.raises(ValidationError):
        RunConfig(replicatons=10)


def test_run_config_rejects_repeated_methods():
    with pytest.raises(ValidationError):
        RunConfig(methods=["IHT", "IHT"])


def test_oracle_beta_needs_linear_scenarios_in_every_cell():
    with pytest.raises(ValidationError):
        RunConfig(methods=["ORACLE_BETA"], sweep=[{"field": "scenario", "values": ["S1_DM", "S4_DML"]}])


def test_sweep_rejects_unknown_field():
    with pytest.raises(ValidationError):
        RunConfig(sweep=[{"field": "colour", "values": [1]}])


def test_sweep_rejects_bad_alpha_value():
    with pytest.raises(ValidationError):
        RunConfig(sweep=[{"field": "alpha", "values": [0.05, 1.5]}])


def test_cells_cartesian_product_in_declaration_order():
    run = RunConfig(
        sweep=[{"field": "sigma", "values": [1.0, 3.0]}, {"field": "tau_min", "values": [0.0, 0.5, 1.0]}]
    )
    cells = list(run.cells())
    assert len(cells) == 6
    assert cells[1].overrides == {"sigma": 1.0, "tau_min": 0.5}
    assert cells[1].scenario.sigma == 1.0
    assert cells[1].tau_min == 0.5
    assert cells[5].scenario.sigma == 3.0 and cells[5].tau_min == 1.0


def test_scenario_seed_stays_out_of_the_resolved_config():
    first = RunConfig(scenario={"seed": 5})
    second = RunConfig(scenario={"seed": 9})
    assert first.scenario.seed == 5
    assert "seed" not in first.model_dump(mode="json")["scenario"]
    assert run_identifier(first) == run_identifier(second)


def test_sweep_rejects_scenario_seed():
    with pytest.raises(ValidationError, match="master_seed"):
        RunConfig(sweep=[{"field": "seed", "values": [1, 2]}])
