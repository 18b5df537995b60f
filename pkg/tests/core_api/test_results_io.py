import json
from unittest.mock import patch

import pandas as pd
import pytest

from dptr_cli import __version__
from dptr_cli.core_api.results_io import (
    AGGREGATE_COLUMNS,
    RESULT_COLUMNS,
    aggregate,
    build_manifest,
    emit_results,
    exclusion_counts,
    headline,
    run_identifier,
    version_string,
)
from dptr_cli.features.simulation.models import RunConfig, ScenarioConfig


def _row(replication, method, reward, ratio=None, vdp=None, error_tag=None):
    return {
        "run_id": "r",
        "cell_id": 0,
        "replication": replication,
        "method": method,
        "reward": reward,
        "or": ratio,
        "vdp": vdp,
        "error_tag": error_tag,
    }


@pytest.fixture
def rows():
    return pd.DataFrame.from_records(
        [
            _row(0, "IHT", 1.0, ratio=0.5),
            _row(0, "DPTR", 2.0, ratio=1.0, vdp=1.0),
            _row(1, "IHT", 3.0, ratio=None),
            _row(1, "DPTR", 5.0, ratio=0.8, vdp=2.0 / 3.0),
        ]
    )


def test_run_identifier_ignores_execution_only_fields():
    base = RunConfig(scenario=ScenarioConfig(k=5))
    assert run_identifier(base) == run_identifier(base.model_copy(update={"parallelism": 8}))
    assert run_identifier(base) == run_identifier(base.model_copy(update={"output_dir": "/tmp/elsewhere"}))
    assert run_identifier(base) != run_identifier(base.model_copy(update={"master_seed": 99}))
    assert len(run_identifier(base)) == 12


def test_aggregate_mean_sd_and_difference_percentiles(rows):
    # ACT
    table = aggregate(rows)

    # ASSERT
    assert list(table.columns) == AGGREGATE_COLUMNS
    iht = table[(table["method"] == "IHT") & (table["metric"] == "reward")].iloc[0]
    assert iht["mean"] == pytest.approx(2.0)
    assert iht["sd"] == pytest.approx(2.0**0.5)
    assert pd.isna(iht["diff_p50"])
    dptr = table[(table["method"] == "DPTR") & (table["metric"] == "reward")].iloc[0]
    assert dptr["diff_p2_5"] == pytest.approx(1.025)
    assert dptr["diff_p50"] == pytest.approx(1.5)
    assert dptr["diff_p97_5"] == pytest.approx(1.975)


def test_aggregate_counts_exclusions_and_skips_absent_metrics(rows):
    table = aggregate(rows)
    iht_or = table[(table["method"] == "IHT") & (table["metric"] == "or")].iloc[0]
    assert (iht_or["count"], iht_or["excluded"]) == (1, 1)
    assert iht_or["sd"] is None or pd.isna(iht_or["sd"])
    assert table[(table["method"] == "IHT") & (table["metric"] == "vdp")].empty
    assert table[table["metric"] == "accuracy"].empty


def test_aggregate_of_empty_rows():
    assert aggregate(pd.DataFrame(columns=RESULT_COLUMNS)).empty


def test_exclusion_counts(rows):
    counts = exclusion_counts(rows)
    assert counts["IHT"]["or"] == 1
    assert counts["IHT"]["vdp"] == 2
    assert counts["DPTR"]["reward"] == 0


def test_build_manifest_counts_failures(rows):
    rows.loc[3, "error_tag"] = "RankDeficientError"
    run = RunConfig(scenario=ScenarioConfig(k=5))
    manifest = build_manifest(run, "id123", rows, 1.5, extra={"cells": [{"cell_id": 0}]})
    assert manifest["run_id"] == "id123"
    assert manifest["row_count"] == 4
    assert manifest["failed_rows"] == 1
    assert manifest["master_seed"] == run.master_seed
    assert manifest["resolved_config"]["scenario"]["k"] == 5
    assert manifest["cells"] == [{"cell_id": 0}]


def test_version_string_falls_back_to_package_version():
    with patch("dptr_cli.core_api.results_io.subprocess.run", side_effect=OSError("no git")):
        assert version_string() == f"v{__version__}"


def test_emit_results_writes_three_files(rows, tmp_path):
    # ARRANGE
    rows.loc[0, "reward"] = 0.1 + 0.2
    table = aggregate(rows)

    # ACT
    paths = emit_results(rows, table, {"run_id": "r"}, tmp_path / "out")

    # ASSERT
    written = pd.read_csv(paths["replications"], float_precision="round_trip")
    assert list(written.columns) == RESULT_COLUMNS
    assert written.loc[0, "reward"] == 0.1 + 0.2
    assert "0.30000000000000004" in paths["replications"].read_text()
    assert list(pd.read_csv(paths["aggregates"]).columns) == AGGREGATE_COLUMNS
    assert json.loads(paths["manifest"].read_text()) == {"run_id": "r"}


def test_emit_results_is_byte_stable(rows, tmp_path):
    table = aggregate(rows)
    first = emit_results(rows, table, {}, tmp_path / "a")
    second = emit_results(rows, table, {}, tmp_path / "b")
    assert first["replications"].read_bytes() == second["replications"].read_bytes()
    assert first["aggregates"].read_bytes() == second["aggregates"].read_bytes()


def test_headline_picks_mean_or_and_reward(rows):
    records = headline(aggregate(rows))
    by_method = {r["method"]: r for r in records}
    assert by_method["IHT"]["reward"] == pytest.approx(2.0)
    assert by_method["IHT"]["or"] == pytest.approx(0.5)
    assert by_method["DPTR"]["or"] == pytest.approx(0.9)
    assert all(r["cell_id"] == 0 for r in records)
