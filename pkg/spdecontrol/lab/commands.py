import asyncio
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List

import click
from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn

from spdecontrol.config import RunConfig, config_hash, get_database_url
from spdecontrol.database.db_connection import get_db
from spdecontrol.exceptions import ConfigError, InvariantViolation
from spdecontrol.lab import plots, services
from spdecontrol.lab.writers import ArtifactWriter, read_table

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabContext:
    """
    Shared state of one command line invocation.

    Attributes:
        config (RunConfig): Configuration after flag overrides.
        out_dir (Path): Artifact directory.
    """

    config: RunConfig
    out_dir: Path

    def writer(self, command: str) -> ArtifactWriter:
        return ArtifactWriter(self.out_dir, command, config_hash(self.config), [self.config.noise.seed])


pass_lab = click.make_pass_decorator(LabContext)


def experiment(name: str, service: Callable[[RunConfig], services.ExperimentOutput], help_text: str) -> click.Command:
    """Command that runs a synchronous service and writes its artifacts."""

    @pass_lab
    def run(lab: LabContext) -> None:
        with lab.writer(name) as writer:
            writer.emit(service(lab.config))
        logger.info("%s: artifacts in %s", name, lab.out_dir)

    return click.command(name, help=help_text)(run)


simulate = experiment("simulate", services.simulate, "Uncontrolled linear equation along one path.")
control_linear = experiment(
    "control-linear", services.control_linear, "Lebeau-Robbiano null control of the linear equation."
)
cost_curve = experiment("cost-curve", services.cost_curve, "Control cost against the horizon, with the fit of M_cost.")
obs_curve = experiment("obs-curve", services.obs_curve, "Observability constant against sqrt(mu).")
source_demo = experiment("source-demo", services.source_demo, "Source-term method and its weighted certificate.")
semilinear = experiment("semilinear", services.semilinear, "Single-path Picard run of the truncated system.")


async def _ensemble(lab: LabContext) -> services.ExperimentOutput:
    total = lab.config.ensemble.n_paths
    with Progress(
        TextColumn("[bold]paths"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=Console(stderr=True),
        transient=True,
    ) as progress:
        task = progress.add_task("ensemble", total=total)
        output = None
        async for session in get_db(get_database_url(lab.out_dir)):
            output = await services.ensemble_run(lab.config, session, lambda _: progress.advance(task))
    return output


@click.command("ensemble")
@pass_lab
def ensemble(lab: LabContext) -> None:
    """Statistical run: exceedance frequency of ||y||_X > R against the Markov bound."""
    with lab.writer("ensemble") as writer:
        writer.emit(asyncio.run(_ensemble(lab)))


@click.command("verify")
@pass_lab
def verify(lab: LabContext) -> None:
    """Invariant suite at desk scale; exits with status 3 when a check fails."""
    with lab.writer("verify") as writer:
        report = services.verify(lab.config)
        writer.write_json("verify.json", report)
    failed = [check.name for check in report.checks if not check.passed]
    if failed:
        raise InvariantViolation(f"failed checks: {', '.join(failed)}")
    logger.info("verify: all %d checks passed", len(report.checks))


@click.command("report")
@pass_lab
def report(lab: LabContext) -> None:
    """Render SVG plots from the CSV artifacts already in the output directory."""
    sources = {
        "trajectory.csv": ("trajectory.svg", plots.plot_trajectory_norms),
        "cost_curve.csv": ("cost_curve.svg", plots.plot_cost_curve),
        "weights.csv": ("weights.svg", plots.plot_weights),
    }
    available = [name for name in sources if (lab.out_dir / name).is_file()]
    if not available:
        raise ConfigError(f"no CSV artifacts to plot in {lab.out_dir}")
    with lab.writer("report") as writer:
        for name in available:
            target_name, plot = sources[name]
            header, data = read_table(lab.out_dir / name)
            target = writer.register(target_name)
            if plot is plots.plot_cost_curve and (lab.out_dir / "cost_fit.json").is_file():
                fit = json.loads((lab.out_dir / "cost_fit.json").read_text(encoding="utf-8"))
                plot(header, data, target, fit)
            else:
                plot(header, data, target)


COMMANDS: List[click.Command] = [
    simulate,
    control_linear,
    cost_curve,
    obs_curve,
    source_demo,
    semilinear,
    ensemble,
    verify,
    report,
]
