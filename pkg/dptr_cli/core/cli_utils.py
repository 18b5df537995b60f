import json
import logging
import re
import sys
from pathlib import Path
from typing import Any, Optional, Tuple

import click

from dptr_cli.core_api.exceptions import DptrError

logger = logging.getLogger(__name__)


def _confirm_action(
    prompt_message: str,
    yes_flag: bool,
    default_abort_message: str = "Action aborted by user.",
) -> Tuple[bool, str]:
    """
    Prompts user for confirmation or bypasses if yes_flag is True.
    Returns a tuple: (bool_confirmed_or_bypassed, message_to_display_or_log).
    """
    if yes_flag:
        logger.info(f"Confirmation bypassed by --yes flag for prompt: '{prompt_message}'")
        return True, f"Confirmation bypassed by --yes flag for: {prompt_message}"

    if not click.confirm(prompt_message, default=False, abort=False):
        logger.info(f"User aborted action for prompt: '{prompt_message}'")
        return False, default_abort_message

    logger.info(f"User confirmed action for prompt: '{prompt_message}'")
    return True, ""


def error_code(error: BaseException) -> str:
    """InvalidParameterError -> INVALID_PARAMETER_ERROR."""
    return re.sub(r"(?<!^)(?=[A-Z])", "_", type(error).__name__).upper()


def write_envelope(
    command: str,
    status: str,
    message: str,
    data: Any = None,
    code: Optional[str] = None,
    details: Optional[str] = None,
) -> None:
    """Writes the standard JSON response envelope to stdout."""
    envelope = {
        "status": status,
        "command_executed": command,
        "message": message,
        "data": data,
        "error_details": None if status == "success" else {"code": code, "details": details or message},
    }
    sys.stdout.write(json.dumps(envelope, indent=2, default=str) + "\n")


def report_failure(ctx: click.Context, command: str, output_format: str, error: Exception) -> None:
    """Logs, prints and exits with the code of the error's family (3 for anything unexpected)."""
    if isinstance(error, DptrError):
        message, exit_code = error.message, error.exit_code
        details = str(error.original_exception) if error.original_exception else None
        logger.error(f"{command} failed: {message}", exc_info=True)
    else:
        message, exit_code, details = f"An unexpected error occurred: {error}", 3, repr(error)
        logger.error(f"Unexpected error in {command}: {error}", exc_info=True)
    if output_format == "json":
        write_envelope(command, "error", message, code=error_code(error), details=details)
    else:
        click.secho(f"Error: {message}", fg="red", err=True)
    ctx.exit(exit_code)


def confirm_output_dir(output_dir: Path, yes_flag: bool) -> Tuple[bool, str]:
    """Asks before writing into a directory that already holds results."""
    output_dir = Path(output_dir)
    if output_dir.is_dir() and any(output_dir.iterdir()):
        return _confirm_action(
            f"{output_dir} already contains files. Overwrite the results there?",
            yes_flag,
            default_abort_message="Run aborted; existing results left untouched.",
        )
    return True, ""


def echo_headline(records, title: str) -> None:
    """Prints per-cell, per-method headline metrics as an aligned table."""
    click.secho(title, bold=True)
    if not records:
        click.echo("  (no rows)")
        return
    click.echo(f"  {'cell':>4}  {'method':<12} {'mean OR':>10} {'mean reward':>12}")
    for record in records:
        ratio = record.get("or")
        value = record.get("reward")
        ratio_text = "n/a" if ratio is None else f"{ratio:.4f}"
        value_text = "n/a" if value is None else f"{value:.4f}"
        click.echo(f"  {record['cell_id']:>4}  {record['method']:<12} {ratio_text:>10} {value_text:>12}")
