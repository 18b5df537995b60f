import logging
import os

import click

from dptr_cli import __version__
from dptr_cli.core.logging_setup import setup_logging
from dptr_cli.features.diagnostics.commands import oracle_beta_cmd, selftest_cmd
from dptr_cli.features.evaluation.commands import evaluate_cmd
from dptr_cli.features.simulation.commands import simulate_cmd


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose (DEBUG level) logging.")
@click.version_option(__version__, prog_name="dptr")
@click.pass_context
def dptr(ctx, verbose):
    """
    DPTR: data-pooled treatment roll-out.
    Decide which of many small experiments to roll out, by shrinking their
    estimates toward a common anchor before testing.
    """
    log_level = logging.DEBUG if verbose else logging.INFO
    running_tests = "PYTEST_CURRENT_TEST" in os.environ or os.environ.get("DPTR_TEST_MODE") == "1"
    logger = setup_logging(log_level=log_level, testing_mode=running_tests)

    # Keep any obj passed in by runner.invoke in tests.
    ctx.ensure_object(dict)
    ctx.obj["logger"] = logger
    logger.debug(f"dptr started. Verbose: {verbose}, Testing Mode: {running_tests}")


dptr.add_command(simulate_cmd)
dptr.add_command(evaluate_cmd)
dptr.add_command(oracle_beta_cmd)
dptr.add_command(selftest_cmd)


if __name__ == "__main__":
    dptr(obj={})
