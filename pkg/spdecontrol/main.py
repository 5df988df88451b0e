import logging
import sys
from pathlib import Path
from typing import Optional

import click
from rich.console import Console
from rich.logging import RichHandler

from spdecontrol.config import LOG_LEVEL, apply_overrides, load_config
from spdecontrol.exceptions import LabError, NumericalError
from spdecontrol.lab.commands import COMMANDS, LabContext

logger = logging.getLogger("spdecontrol")

PRESETS = ["burgers", "allen-cahn", "linear"]


def configure_logging(level: str) -> None:
    """Route every log record to stderr through rich; artifacts never receive log output."""
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


class LabGroup(click.Group):
    """Command group mapping LabError and click failures onto the documented exit codes."""

    def main(self, *args, **kwargs):
        kwargs["standalone_mode"] = False
        try:
            return super().main(*args, **kwargs)
        except click.UsageError as exc:
            exc.show()
            sys.exit(1)
        except click.ClickException as exc:
            exc.show()
            sys.exit(exc.exit_code)
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(1)
        except LabError as exc:
            logger.error("%s: %s", type(exc).__name__, exc.detail)
            sys.exit(exc.exit_code)
        except ArithmeticError as exc:
            logger.error("%s: %s", type(exc).__name__, exc)
            sys.exit(NumericalError.exit_code)


@click.group(cls=LabGroup)
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None, help="INI run configuration.")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Base seed (unsigned 64-bit).")
@click.option("--paths", type=click.IntRange(min=1), default=None, help="Ensemble size.")
@click.option("--modes", type=click.IntRange(min=1), default=None, help="Retained sine modes.")
@click.option("--dt", type=float, default=None, help="Time step; must divide the horizon.")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=Path("out"), show_default=True)
@click.option("--preset", type=click.Choice(PRESETS), default=None, help="Nonlinearity preset.")
@click.option("--log-level", default=LOG_LEVEL, show_default=True, help="Logging level.")
@click.pass_context
def cli(
    ctx: click.Context,
    config_path: Optional[Path],
    seed: Optional[int],
    paths: Optional[int],
    modes: Optional[int],
    dt: Optional[float],
    out_dir: Path,
    preset: Optional[str],
    log_level: str,
) -> None:
    """Stochastic heat equation null-control laboratory."""
    configure_logging(log_level)
    config = apply_overrides(load_config(config_path), seed, paths, modes, dt, preset)
    ctx.obj = LabContext(config, out_dir)


for command in COMMANDS:
    cli.add_command(command)
