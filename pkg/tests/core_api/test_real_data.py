from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd
import pytest

from dptr_cli.core import config
from dptr_cli.core_api.dgp import gen_scenario1, gen_scenario3, trial_to_frame
from dptr_cli.core_api.estimators import dm_estimate, estimate_trial, ols_overlapping_batch
from dptr_cli.core_api.exceptions import (
    DataError,
    EmptyArmError,
    EmptyFileError,
    GroupTooSmallError,
    MissingColumnError,
    NoGroupsRetainedError,
    UnparseableRowError,
)
from dptr_cli.core_api.models import EstimateBatch, ExperimentSample, GroupData, GroupedDataset, OverlappingTrial
from dptr_cli.core_api.real_data import (
    arm_draw_sizes,
    check_draws,
    dichotomize,
    evaluate_overlapping,
    group_generation,
    ingest_csv,
    resolve_columns,
    run_evaluation,
    subsample_evaluate,
    true_hte,
)
from dptr_cli.core_api.rng import stream
from dptr_cli.features.evaluation.models import CsvSchema, EvaluateConfig
from dptr_cli.features.simulation.models import ScenarioConfig


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _planted_groups(taus, rows_per_arm=100, noise=1.0, seed=0):
    rng = stream(seed, "planted")
    groups = []
    for i, tau in enumerate(taus):
        d = np.repeat([1, 0], rows_per_arm)
        y = tau * d + noise * rng.normal(size=d.shape[0])
        groups.append(GroupData(key=f"g{i}", y=y, d=d, tau=true_hte(y, d)))
    return GroupedDataset(groups=groups)


# --- Ingestion ---
def test_ingest_rejects_unparseable_rows_with_line_numbers(tmp_path):
    # ARRANGE
    path = _write(tmp_path, "outcome,treatment,x0\n1.0,1,0.5\nabc,0,0.2\n2.0,2,0.1\n3.0,0,0.3\n")

    # ACT
    result = ingest_csv(path)

    # ASSERT
    assert result.rows_read == 4
    assert result.rows_accepted == 2
    assert [r.line_number for r in result.rejected] == [3, 4]
    assert "outcome" in result.rejected[0].reason
    assert "treatment" in result.rejected[1].reason
    assert result.frame["treatment"].tolist() == [1, 0]


def test_ingest_all_rows_bad_raises_with_first_line(tmp_path):
    path = _write(tmp_path, "outcome,treatment\nx,1\ny,0\n")
    with pytest.raises(UnparseableRowError) as exc_info:
        ingest_csv(path)
    assert exc_info.value.line_number == 2


def test_ingest_missing_declared_column(tmp_path):
    path = _write(tmp_path, "outcome,treatment\n1,1\n")
    with pytest.raises(MissingColumnError):
        ingest_csv(path, CsvSchema(outcome="revenue"))


def test_ingest_empty_and_header_only_files(tmp_path):
    with pytest.raises(EmptyFileError):
        ingest_csv(_write(tmp_path, "", "empty.csv"))
    with pytest.raises(EmptyFileError):
        ingest_csv(_write(tmp_path, "outcome,treatment\n", "header.csv"))


def test_ingest_missing_file(tmp_path):
    with pytest.raises(DataError):
        ingest_csv(tmp_path / "absent.csv")


def test_ingest_rejects_ragged_rows(tmp_path):
    # ARRANGE
    path = _write(tmp_path, "outcome,treatment,x0\n1,1,0.5\n2,0,0.1,9\n3,1\n4,0,0.2\n")

    # ACT
    result = ingest_csv(path)

    # ASSERT
    assert result.rows_read == 4
    assert [(r.line_number, r.reason) for r in result.rejected] == [
        (3, "expected 3 fields, saw 4"),
        (4, "expected 3 fields, saw 2"),
    ]
    assert result.frame["outcome"].tolist() == [1.0, 4.0]


def test_ingest_line_numbers_count_blank_lines(tmp_path):
    path = _write(tmp_path, "outcome,treatment,x0\n1,1,0.5\n\n2,0,0.1,9\n3,1,0.2\n\n")
    result = ingest_csv(path)
    assert result.rows_read == 3
    assert [r.line_number for r in result.rejected] == [4]
    assert result.rows_accepted == 2


def test_ingest_ragged_first_row_is_rejected_not_reindexed(tmp_path):
    path = _write(tmp_path, "outcome,treatment\n1,1,7\n2,0\n")
    result = ingest_csv(path)
    assert [r.line_number for r in result.rejected] == [2]
    assert result.frame["outcome"].tolist() == [2.0]


def test_ingest_overlapping_layout_detects_treatment_columns(tmp_path):
    path = _write(tmp_path, "outcome,treatment_2,treatment_1\n1.5,0,1\n0.5,1,1\n")
    result = ingest_csv(path, layout="overlapping")
    assert result.rows_accepted == 2
    with pytest.raises(MissingColumnError):
        ingest_csv(_write(tmp_path, "outcome,treatment\n1,1\n", "plain.csv"), layout="overlapping")


def test_exported_overlapping_trial_reingests_to_identical_estimates(tmp_path):
    # ARRANGE
    trial, _ = gen_scenario3(ScenarioConfig(scenario="S3_OLS_COV", k=3, seed=31))
    path = tmp_path / "trial.csv"
    trial_to_frame(trial).to_csv(path, index=False, float_format=config.FLOAT_FORMAT)

    # ACT
    frame = ingest_csv(path, layout="overlapping").frame
    reread = OverlappingTrial(
        y=frame["outcome"].to_numpy(),
        d=frame[[f"treatment_{k + 1}" for k in range(trial.k)]].to_numpy(),
        x=frame[[f"x{j}" for j in range(trial.d_x)]].to_numpy(),
    )

    # ASSERT
    before = ols_overlapping_batch(trial, 0.05)
    after = ols_overlapping_batch(reread, 0.05)
    np.testing.assert_allclose(after.tau_hat, before.tau_hat, rtol=0, atol=1e-12)
    np.testing.assert_allclose(after.v, before.v, rtol=0, atol=1e-12)


def test_exported_grouped_trial_reingests_to_identical_estimates(tmp_path):
    trial, _ = gen_scenario1(ScenarioConfig(k=4, n=10, seed=32))
    path = tmp_path / "trial.csv"
    trial_to_frame(trial).to_csv(path, index=False, float_format=config.FLOAT_FORMAT)

    frame = ingest_csv(path, CsvSchema(experiment="experiment")).frame
    samples = [
        ExperimentSample(y=rows["outcome"].to_numpy(), d=rows["treatment"].to_numpy())
        for _, rows in frame.groupby("experiment", sort=False)
    ]

    before = estimate_trial(trial, "dm", 0.05)
    after = EstimateBatch.from_estimates([dm_estimate(s, 0.05) for s in samples])
    np.testing.assert_allclose(after.tau_hat, before.tau_hat, rtol=0, atol=1e-12)
    np.testing.assert_allclose(after.v, before.v, rtol=0, atol=1e-12)


def test_resolve_columns_orders_numbered_columns():
    columns = resolve_columns(["x10", "outcome", "x2", "treatment_3", "treatment_1"], CsvSchema(), "overlapping")
    assert columns["covariates"] == ["x2", "x10"]
    assert columns["treatments"] == ["treatment_1", "treatment_3"]


# --- Grouping ---
def test_true_hte_and_empty_arm():
    assert true_hte([3.0, 1.0, 2.0, 0.0], [1, 1, 0, 0]) == pytest.approx(1.0)
    with pytest.raises(EmptyArmError):
        true_hte([1.0, 2.0], [1, 1])


def test_dichotomize_balances_ties():
    bits = dichotomize(np.array([1.0, 2.0, 2.0, 2.0, 3.0, 4.0]), stream(0, "test"))
    assert bits.sum() == 3
    assert bits[0] == 0 and bits[-1] == 1


def test_dichotomize_without_ties_is_a_plain_median_split():
    bits = dichotomize(np.array([4.0, 1.0, 3.0, 2.0]), stream(0, "test"))
    assert bits.tolist() == [1, 0, 1, 0]


def _grid_frame(rows_per_cell=50):
    x0, x1 = np.meshgrid([0.0, 1.0], [0.0, 1.0], indexing="ij")
    cells = pd.DataFrame({"x0": x0.ravel(), "x1": x1.ravel()})
    frame = cells.loc[cells.index.repeat(rows_per_cell)].reset_index(drop=True)
    frame["treatment"] = np.tile(np.repeat([1, 0], rows_per_cell // 2), 4)
    # the (1, 1) cell is treated throughout
    frame.loc[(frame["x0"] == 1) & (frame["x1"] == 1), "treatment"] = 1
    frame["outcome"] = frame["treatment"] * (1.0 + frame["x0"]) + 0.1 * (frame.index % 3)
    return frame


def test_group_generation_drops_single_arm_and_small_groups():
    # ACT
    grouped = group_generation(_grid_frame(), ["x0", "x1"], min_size=20, seed=0)

    # ASSERT
    assert [g.key for g in grouped.groups] == ["00", "01", "10"]
    assert grouped.dropped_groups == 1
    assert grouped.dropped_rows == 50
    assert grouped.rows_used == 150
    assert all(g.n1 == 25 and g.n0 == 25 for g in grouped.groups)


def test_group_generation_without_survivors_raises():
    with pytest.raises(NoGroupsRetainedError):
        group_generation(_grid_frame(), ["x0", "x1"], min_size=1000, seed=0)


def test_group_generation_by_experiment_column():
    frame = pd.DataFrame(
        {"outcome": [1.0, 0.0, 2.0, 0.5], "treatment": [1, 0, 1, 0], "exp": ["b", "b", "a", "a"]}
    )
    grouped = group_generation(frame, [], min_size=2, seed=0, experiment="exp")
    assert [g.key for g in grouped.groups] == ["a", "b"]
    assert grouped.truth_vector().tolist() == pytest.approx([1.5, 1.0])


# --- Subsample evaluation ---
def test_arm_draw_sizes_integer_and_proportion():
    group = GroupData(key="g", y=np.zeros(100), d=np.repeat([1, 0], [30, 70]), tau=0.0)
    assert arm_draw_sizes(group, 10) == (5, 5)
    assert arm_draw_sizes(group, 0.1) == (3, 7)
    assert arm_draw_sizes(group, 0.001) == (1, 1)


def test_check_draws_names_the_small_group():
    grouped = _planted_groups([1.0, 2.0], rows_per_arm=4)
    with pytest.raises(GroupTooSmallError) as exc_info:
        check_draws(grouped, 10)
    assert exc_info.value.group_key == "g0"


def test_subsample_evaluate_recovers_planted_winners():
    # ARRANGE
    grouped = _planted_groups([5.0, -5.0, 5.0, -5.0])

    # ACT
    rows = subsample_evaluate(grouped, 40, ["IHT", "DPTR"], 0.05, replications=4, seed=1)

    # ASSERT
    assert len(rows) == 8
    assert rows["error_tag"].isna().all()
    assert rows.loc[rows["method"] == "IHT", "or"].tolist() == pytest.approx([1.0] * 4)


def test_subsample_evaluate_independent_of_parallelism():
    grouped = _planted_groups([0.3, -0.1, 0.2], noise=2.0)
    serial = subsample_evaluate(grouped, 0.1, ["IHT", "DPTR", "BAYES"], 0.05, replications=4, seed=2)
    parallel = subsample_evaluate(
        grouped, 0.1, ["IHT", "DPTR", "BAYES"], 0.05, replications=4, seed=2, parallelism=2
    )
    pd.testing.assert_frame_equal(serial, parallel)


def test_concurrent_evaluations_do_not_share_state():
    # ARRANGE
    first = _planted_groups([0.3, -0.1, 0.2], noise=2.0, seed=4)
    second = _planted_groups([-0.4, 0.5, 0.1, 0.0], noise=1.0, seed=5)
    methods = ["IHT", "DPTR"]

    def run(grouped, seed):
        return subsample_evaluate(grouped, 0.2, methods, 0.05, replications=5, seed=seed)

    expected = [run(first, 6), run(second, 7)]

    # ACT
    with ThreadPoolExecutor(max_workers=2) as executor:
        futures = [executor.submit(run, first, 6), executor.submit(run, second, 7)]
        results = [future.result() for future in futures]

    # ASSERT
    for got, want in zip(results, expected):
        pd.testing.assert_frame_equal(got, want)


# --- Overlapping real data ---
def _overlapping_trial(rows_per_combination=30):
    rng = stream(3, "overlapping")
    d = np.repeat(np.array([[0, 0], [0, 1], [1, 0], [1, 1]]), rows_per_combination, axis=0)
    y = 1.0 + d @ np.array([2.0, -1.0]) + 0.5 * rng.normal(size=d.shape[0])
    return OverlappingTrial(y=y, d=d)


@pytest.mark.parametrize("estimator", ["ols", "dm"])
def test_evaluate_overlapping_scores_each_replication(estimator):
    rows = evaluate_overlapping(
        _overlapping_trial(), 10, ["IHT", "DPTR"], 0.05, replications=3, seed=0, estimator=estimator
    )
    assert len(rows) == 6
    assert rows["error_tag"].isna().all()
    assert rows.loc[rows["method"] == "IHT", "or"].tolist() == pytest.approx([1.0] * 3)


def test_evaluate_overlapping_rejects_oversized_draw():
    with pytest.raises(GroupTooSmallError):
        evaluate_overlapping(_overlapping_trial(5), 10, ["IHT"], 0.05, replications=1)


# --- Orchestration ---
def test_run_evaluation_reconciles_rows(tmp_path):
    # ARRANGE
    path = tmp_path / "trial.csv"
    _grid_frame().to_csv(path, index=False)
    with open(path, "a") as f:
        f.write("0,1,oops,1.0\n")
    cfg = EvaluateConfig(data_path=path, min_group_size=20, sample_sizes=[10, 20], replications=2)

    # ACT
    result = run_evaluation(cfg, run_id="rid")

    # ASSERT
    assert result.reconciliation == {
        "rows_ingested": 201,
        "rows_rejected": 1,
        "rows_in_dropped_groups": 50,
        "rows_used": 150,
    }
    assert [g["key"] for g in result.groups] == ["00", "01", "10"]
    assert sum(g["weight"] for g in result.groups) == pytest.approx(1.0)
    assert len(result.rows) == 2 * 2 * 2
    assert sorted(result.rows["cell_id"].unique().tolist()) == [0, 1]
    assert result.cells == [{"cell_id": 0, "sample_size": 10.0}, {"cell_id": 1, "sample_size": 20.0}]
    assert result.rejected[0].line_number == 202
