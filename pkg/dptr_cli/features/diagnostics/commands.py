# dptr_cli/features/diagnostics/commands.py
import click

from dptr_cli.core import config
from dptr_cli.core.cli_utils import report_failure, write_envelope
from dptr_cli.core.config_files import validate_config
from dptr_cli.core_api import pooling
from dptr_cli.core_api.models import OracleParams
from dptr_cli.core_api.replication import reward_curve
from dptr_cli.core_api.selftest import run_selftest
from dptr_cli.features.simulation.models import LINEAR_SCENARIOS, ScenarioConfig

DEFAULT_MULTIPLIERS = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0)


@click.command("oracle-beta")
@click.option("--tau0", type=float, default=config.DEFAULT_TAU0, show_default=True, help="Prior mean of the ATEs.")
@click.option("--sigma0", type=float, default=config.DEFAULT_SIGMA0, show_default=True, help="Prior sd of the ATEs.")
@click.option("--sigma", type=float, default=config.DEFAULT_SIGMA, show_default=True, help="Outcome noise sd.")
@click.option("--n", type=int, default=config.DEFAULT_N, show_default=True, help="Per-experiment sample size.")
@click.option("--alpha", type=float, default=config.DEFAULT_ALPHA, show_default=True)
@click.option("--b", "design_factors", multiple=True, type=float, help="Design factor for the personalized value.")
@click.option("--grid", is_flag=True, help="Also simulate the reward at multiples of the oracle beta.")
@click.option(
    "--multiplier",
    "multipliers",
    multiple=True,
    type=float,
    help=f"Grid multiplier (default {', '.join(str(m) for m in DEFAULT_MULTIPLIERS)}).",
)
@click.option(
    "--scenario",
    type=click.Choice(sorted(LINEAR_SCENARIOS)),
    default="S1_DM",
    show_default=True,
    help="Scenario simulated for --grid.",
)
@click.option("--k", type=int, default=2000, show_default=True, help="Experiments per grid replication.")
@click.option("--replications", "-r", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=config.DEFAULT_MASTER_SEED, show_default=True)
@click.option(
    "--output-format",
    type=click.Choice(["human", "json"]),
    default="human",
    show_default=True,
)
@click.pass_context
def oracle_beta_cmd(
    ctx,
    tau0,
    sigma0,
    sigma,
    n,
    alpha,
    design_factors,
    grid,
    multipliers,
    scenario,
    k,
    replications,
    seed,
    output_format,
):
    """Prints the optimal shared and personalized scale parameters for known prior parameters."""
    logger = ctx.obj.get("logger")
    cmd_name = "dptr oracle-beta"
    logger.info("Executing 'oracle-beta'")

    try:
        params = validate_config(
            OracleParams,
            {"tau0": tau0, "sigma0_sq": sigma0**2, "sigma_sq": sigma**2, "n": n, "alpha": alpha},
            source="oracle parameters",
        )
        shared = pooling.oracle_beta(params)
        personalized = [{"b": b, "beta": pooling.oracle_beta_personalized(params, b)} for b in design_factors]
        curve = None
        if grid:
            scenario_cfg = validate_config(
                ScenarioConfig,
                {"scenario": scenario, "k": k, "n": n, "tau0": tau0, "sigma0": sigma0, "sigma": sigma},
                source="grid scenario",
            )
            curve = reward_curve(
                scenario_cfg,
                multipliers or DEFAULT_MULTIPLIERS,
                replications=replications,
                alpha=alpha,
                master_seed=seed,
            )
    except Exception as e:
        report_failure(ctx, cmd_name, output_format, e)
        return

    if output_format == "json":
        data = {
            "params": params.model_dump(),
            "beta": shared,
            "personalized": personalized,
            "grid": None if curve is None else curve.to_dict(orient="records"),
        }
        write_envelope(cmd_name, "success", f"Oracle beta {shared:.6g}.", data=data)
        return

    click.echo(f"Oracle beta (shared): {shared:.6f}")
    for entry in personalized:
        click.echo(f"Oracle beta (b={entry['b']:g}): {entry['beta']:.6f}")
    if curve is not None:
        click.secho(f"\nMean per-experiment reward, {scenario}, K={k}, {replications} replications:", bold=True)
        click.echo(f"  {'c':>6} {'beta':>12} {'DPTR':>10} {'se':>9}")
        for row in curve.itertuples(index=False):
            click.echo(f"  {row.multiplier:>6g} {row.beta:>12.4f} {row.mean_reward:>10.5f} {row.se_reward:>9.5f}")
        click.echo(f"  IHT mean reward: {curve['iht_mean_reward'].iloc[0]:.5f}")


@click.command("selftest")
@click.option(
    "--output-format",
    type=click.Choice(["human", "json"]),
    default="human",
    show_default=True,
)
@click.pass_context
def selftest_cmd(ctx, output_format):
    """Runs the built-in numeric checks; exits non-zero if any fails."""
    logger = ctx.obj.get("logger")
    logger.info("Executing 'selftest'")
    results = run_selftest()
    failed = [r for r in results if not r.passed]
    message = f"{len(results) - len(failed)}/{len(results)} checks passed."

    if output_format == "json":
        write_envelope(
            "dptr selftest",
            "success" if not failed else "error",
            message,
            data=[r.model_dump() for r in results],
            code="SELFTEST_FAILED" if failed else None,
        )
    else:
        for r in results:
            mark = click.style("PASS", fg="green") if r.passed else click.style("FAIL", fg="red")
            click.echo(f"[{mark}] {r.name}: {r.detail}")
        click.echo(message)
    if failed:
        ctx.exit(3)
