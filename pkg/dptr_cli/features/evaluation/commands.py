# dptr_cli/features/evaluation/commands.py
from pathlib import Path

import click

from dptr_cli.core import config
from dptr_cli.core.cli_utils import confirm_output_dir, echo_headline, report_failure, write_envelope
from dptr_cli.core.config_files import read_config_mapping, validate_config
from dptr_cli.core_api import results_io
from dptr_cli.core_api.exceptions import InvalidParameterError
from dptr_cli.core_api.real_data import run_evaluation

from .models import EvaluateConfig

CMD_NAME = "dptr evaluate"
# Rejected rows listed individually in the manifest; the total is always reported.
MANIFEST_REJECTED_LIMIT = 1000


def build_evaluate_config(
    config_path, data_path, layout, sample_sizes, estimator, methods, **overrides
) -> EvaluateConfig:
    data = read_config_mapping(config_path) if config_path else {}
    if data_path is not None:
        data["data_path"] = str(data_path)
    if "data_path" not in data:
        raise InvalidParameterError("No input CSV given; pass --data or set data_path in the config file.")
    if layout:
        data["layout"] = layout
    if sample_sizes:
        data["sample_sizes"] = list(sample_sizes)
    if estimator:
        data["estimator"] = estimator
    if methods:
        data["methods"] = list(methods)
    for key, value in overrides.items():
        if value is not None:
            data[key] = str(value) if isinstance(value, Path) else value
    return validate_config(EvaluateConfig, data, source=str(config_path) if config_path else "command-line options")


@click.command("evaluate")
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False, path_type=Path),
    help="TOML or JSON evaluation config; flags below override its values.",
)
@click.option("--data", "data_path", type=click.Path(dir_okay=False, path_type=Path), help="Input CSV.")
@click.option("--layout", type=click.Choice(["grouped", "overlapping"]), help="CSV layout.")
@click.option(
    "--sample-size",
    "sample_sizes",
    multiple=True,
    type=float,
    help="Even integer N (N/2 per arm) or proportion in (0, 1]; repeat for a sweep.",
)
@click.option("--min-group-size", type=int, help="Drop groups with fewer rows.")
@click.option("--estimator", type=click.Choice(["dm", "ols", "dml"]), help="Per-group ATE estimator.")
@click.option(
    "--method",
    "methods",
    multiple=True,
    type=click.Choice(["IHT", "DPTR", "DPTR-P", "BAYES"]),
    help="Roll-out method to compare; repeat for several.",
)
@click.option("--tau-min", type=float, help="Frictional roll-out cost.")
@click.option("--replications", "-r", type=int, help="Subsampling replications per sample size.")
@click.option("--seed", "master_seed", type=int, help="Master seed.")
@click.option("--parallelism", "-j", type=int, help="Worker processes (results do not depend on it).")
@click.option("--output-dir", "-o", type=click.Path(file_okay=False, path_type=Path))
@click.option("--yes", "-y", is_flag=True, help="Overwrite existing results without asking.")
@click.option(
    "--output-format",
    type=click.Choice(["human", "json"]),
    default="human",
    show_default=True,
)
@click.pass_context
def evaluate_cmd(
    ctx,
    config_path,
    data_path,
    layout,
    sample_sizes,
    min_group_size,
    estimator,
    methods,
    tau_min,
    replications,
    master_seed,
    parallelism,
    output_dir,
    yes,
    output_format,
):
    """Evaluates roll-out methods on real experiment data by subsampling covariate groups."""
    logger = ctx.obj.get("logger")
    logger.info("Executing 'evaluate'")

    try:
        cfg = build_evaluate_config(
            config_path,
            data_path,
            layout,
            sample_sizes,
            estimator,
            methods,
            min_group_size=min_group_size,
            tau_min=tau_min,
            replications=replications,
            master_seed=master_seed,
            parallelism=parallelism,
            output_dir=output_dir,
        )
    except Exception as e:
        report_failure(ctx, CMD_NAME, output_format, e)
        return

    run_id = results_io.run_identifier(cfg)
    destination = cfg.output_dir or config.RESULTS_DIR / run_id
    confirmed, prompt_message = confirm_output_dir(destination, yes)
    if not confirmed:
        if output_format == "json":
            write_envelope(CMD_NAME, "aborted", prompt_message, code="USER_ABORTED")
        else:
            click.echo(prompt_message)
        return

    try:
        result = run_evaluation(cfg, run_id)
        aggregates = results_io.aggregate(result.rows)
        extra = {
            "cells": result.cells,
            "reconciliation": result.reconciliation,
            "groups": result.groups,
            "rejected_rows": [r.model_dump() for r in result.rejected[:MANIFEST_REJECTED_LIMIT]],
        }
        manifest = results_io.build_manifest(cfg, run_id, result.rows, result.elapsed_seconds, extra=extra)
        paths = results_io.emit_results(result.rows, aggregates, manifest, destination)
    except Exception as e:
        report_failure(ctx, CMD_NAME, output_format, e)
        return

    summary = results_io.headline(aggregates)
    rec = result.reconciliation
    scope = f"{len(result.groups)} group(s)" if result.groups else "overlapping treatments"
    message = f"Evaluated {scope} over {len(result.cells)} sample size(s); results in {destination}."
    if output_format == "json":
        data = {
            "run_id": run_id,
            "output_dir": str(destination),
            "files": {name: str(path) for name, path in paths.items()},
            "reconciliation": rec,
            "summary": summary,
        }
        write_envelope(CMD_NAME, "success", message, data=data)
    else:
        click.echo(
            f"Rows: {rec['rows_ingested']} read, {rec['rows_rejected']} rejected, "
            f"{rec['rows_in_dropped_groups']} in dropped groups, {rec['rows_used']} used."
        )
        echo_headline(summary, f"Run {run_id}")
        click.echo(message)
    logger.info(f"evaluate finished: run {run_id}")
