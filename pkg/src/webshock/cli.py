"""Command-line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import logging
import sys

import click

from .config import load_config
from .errors import WebshockError
from .pipeline import STAGE_ORDER, StageError, run_pipeline


@click.group()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="YAML configuration file.")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.pass_context
def main(ctx, config_path, verbose):
    """Build web-based firm-level pandemic-affectedness indicators."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx.obj = load_config(config_path)
    except WebshockError as exc:
        raise click.ClickException(str(exc))


def _run(cfg, stages):
    try:
        run_pipeline(cfg, stages=stages)
    except StageError as exc:
        click.echo(f"error in stage {exc.stage!r}: {exc.cause}", err=True)
        sys.exit(1)


def _stage_command(name, help_text):
    @main.command(name=name, help=help_text)
    @click.pass_obj
    def _cmd(cfg):
        _run(cfg, [name])
    return _cmd


_stage_command("ingest", "Resolve firm domains to archived captures.")
_stage_command("extract", "Extract keyword-bearing paragraphs from captures.")
_stage_command("classify", "Score paragraphs and aggregate per firm-period.")
_stage_command("aggregate", "Build region, industry, and tag-share tables.")
_stage_command("correlate", "Correlate regional series with policy stringency.")
_stage_command("panel", "Assemble the firm-quarter financial panel.")
_stage_command("regress", "Estimate the fixed-effects specifications.")


@main.command(name="run-all")
@click.pass_obj
def run_all(cfg):
    """Run every stage in order."""
    _run(cfg, list(STAGE_ORDER))


@main.command()
@click.option("--format", "fmt", default="csv",
              type=click.Choice(["csv", "json", "svg-lines"]),
              help="Output format for the report bundle.")
@click.pass_obj
def report(cfg, fmt):
    """Render the run's headline outputs under <output_dir>/report/."""
    from .report import emit_report

    try:
        written = emit_report(cfg, fmt)
    except WebshockError as exc:
        click.echo(f"error in stage 'report': {exc}", err=True)
        sys.exit(1)
    for path in written:
        click.echo(str(path))


if __name__ == "__main__":
    main()
