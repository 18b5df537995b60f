# dptr_cli/features/simulation/commands.py
from pathlib import Path
from typing import get_args

import click

from dptr_cli.core import config
from dptr_cli.core.cli_utils import confirm_output_dir, echo_headline, report_failure, write_envelope
from dptr_cli.core.config_files import read_config_mapping, validate_config
from dptr_cli.core_api import results_io
from dptr_cli.core_api.dgp import generate, trial_to_frame
from dptr_cli.core_api.replication import run_synthetic
from dptr_cli.core_api.rng import stream

from .models import Method, RunConfig, Scenario

CMD_NAME = "dptr simulate"


def build_run_config(config_path, scenario, k, n, replications, seed, parallelism, methods, output_dir) -> RunConfig:
    """File values first, then any flag the user passed."""
    data = read_config_mapping(config_path) if config_path else {}
    scenario_section = dict(data.get("scenario", {}))
    for key, value in (("scenario", scenario), ("k", k), ("n", n)):
        if value is not None:
            scenario_section[key] = value
    if scenario_section:
        data["scenario"] = scenario_section
    for key, value in (
        ("replications", replications),
        ("master_seed", seed),
        ("parallelism", parallelism),
        ("output_dir", str(output_dir) if output_dir else None),
    ):
        if value is not None:
            data[key] = value
    if methods:
        data["methods"] = list(methods)
    return validate_config(RunConfig, data, source=str(config_path) if config_path else "command-line options")


@click.command("simulate")
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False, path_type=Path),
    help="TOML or JSON run config; flags below override its values.",
)
@click.option("--scenario", type=click.Choice(get_args(Scenario)), help="Data-generating scenario.")
@click.option("--k", type=int, help="Number of experiments.")
@click.option("--n", type=int, help="Sample size per experiment (rows for overlapping scenarios).")
@click.option("--replications", "-r", type=int, help="Monte Carlo replications per sweep cell.")
@click.option("--seed", type=int, help="Master seed.")
@click.option("--parallelism", "-j", type=int, help="Worker processes (results do not depend on it).")
@click.option(
    "--method",
    "methods",
    multiple=True,
    type=click.Choice(get_args(Method)),
    help="Roll-out method to compare; repeat for several.",
)
@click.option(
    "--output-dir",
    "-o",
    type=click.Path(file_okay=False, path_type=Path),
    help="Where to write replications.csv, aggregates.csv and manifest.json.",
)
@click.option(
    "--export-trial",
    type=click.Path(dir_okay=False, path_type=Path),
    help="Write one generated trial as an ingestion-schema CSV and stop.",
)
@click.option("--yes", "-y", is_flag=True, help="Overwrite existing results without asking.")
@click.option(
    "--output-format",
    type=click.Choice(["human", "json"]),
    default="human",
    show_default=True,
)
@click.pass_context
def simulate_cmd(
    ctx,
    config_path,
    scenario,
    k,
    n,
    replications,
    seed,
    parallelism,
    methods,
    output_dir,
    export_trial,
    yes,
    output_format,
):
    """Runs Monte Carlo replications of a synthetic scenario (optionally a sweep)."""
    logger = ctx.obj.get("logger")
    logger.info("Executing 'simulate'")

    try:
        run = build_run_config(config_path, scenario, k, n, replications, seed, parallelism, methods, output_dir)
        if export_trial:
            trial, _ = generate(run.scenario, stream(run.master_seed, "trial", 0, 0))
            frame = trial_to_frame(trial)
            export_trial.parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(export_trial, index=False, float_format=config.FLOAT_FORMAT)
    except Exception as e:
        report_failure(ctx, CMD_NAME, output_format, e)
        return

    if export_trial:
        message = f"Wrote a {run.scenario.scenario} trial ({len(frame)} rows) to {export_trial}."
        if output_format == "json":
            write_envelope(CMD_NAME, "success", message, data={"path": str(export_trial), "rows": len(frame)})
        else:
            click.echo(message)
        return

    run_id = results_io.run_identifier(run)
    destination = run.output_dir or config.RESULTS_DIR / run_id
    confirmed, prompt_message = confirm_output_dir(destination, yes)
    if not confirmed:
        if output_format == "json":
            write_envelope(CMD_NAME, "aborted", prompt_message, code="USER_ABORTED")
        else:
            click.echo(prompt_message)
        return

    try:
        result = run_synthetic(run, run_id)
        aggregates = results_io.aggregate(result.rows)
        manifest = results_io.build_manifest(
            run, run_id, result.rows, result.elapsed_seconds, extra={"cells": result.cells}
        )
        paths = results_io.emit_results(result.rows, aggregates, manifest, destination)
    except Exception as e:
        report_failure(ctx, CMD_NAME, output_format, e)
        return

    summary = results_io.headline(aggregates)
    message = (
        f"Simulated {len(result.cells)} cell(s) x {run.replications} replication(s) "
        f"in {result.elapsed_seconds:.1f}s; results in {destination}."
    )
    if output_format == "json":
        data = {
            "run_id": run_id,
            "output_dir": str(destination),
            "files": {name: str(path) for name, path in paths.items()},
            "failed_rows": manifest["failed_rows"],
            "summary": summary,
        }
        write_envelope(CMD_NAME, "success", message, data=data)
    else:
        echo_headline(summary, f"Run {run_id}")
        if manifest["failed_rows"]:
            click.secho(f"{manifest['failed_rows']} row(s) recorded a failed replication.", fg="yellow")
        click.echo(message)
    logger.info(f"simulate finished: run {run_id}")
