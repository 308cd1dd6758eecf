"""``greyscreen`` command line: search, screen, agree, sample, report."""

from __future__ import annotations

import dataclasses
import logging
import sys
import typing

import click

from .config import ConfigError, PipelineConfig
from .pipeline import StageError, cmd_agree, cmd_report, cmd_sample, cmd_screen, cmd_search, format_agreement

_SCALARS = {str: str, int: int, float: float}
_HINTS = typing.get_type_hints(PipelineConfig)
_OVERRIDABLE = [f.name for f in dataclasses.fields(PipelineConfig) if _HINTS[f.name] in _SCALARS and f.name != "api_key"]


def config_options(func):
    """Attach ``--config`` plus one override flag per scalar config field."""
    for name in reversed(_OVERRIDABLE):
        func = click.option(
            f"--{name.replace('_', '-')}", name, type=_SCALARS[_HINTS[name]], default=None,
            help=f"Override config '{name}'.", show_default=False,
        )(func)
    func = click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML config file.")(func)
    return func


def _load(config_path, overrides) -> PipelineConfig:
    picked = {k: overrides.pop(k) for k in list(overrides) if k in _OVERRIDABLE}
    try:
        return PipelineConfig.load(config_path, picked)
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc


def _run(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConfigError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except StageError as exc:
        click.echo(f"incomplete: {exc}", err=True)
        sys.exit(1)


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for info, -vv for debug logging.")
def main(verbose: int) -> None:
    """Search, screen and validate grey-literature PDFs with a local LLM."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@main.command()
@config_options
def search(config_path, **overrides):
    """Run every query and write the deduplicated id,url screening CSV."""
    config = _load(config_path, overrides)
    summary = _run(cmd_search, config)
    click.echo(f"{summary.queries} queries, {summary.raw_hits} PDF hits, {summary.unique_hits} unique -> {summary.csv_path}")
    if summary.errors:
        click.echo(f"{len(summary.errors)} page error(s); see logs/search/errors.txt", err=True)


@main.command()
@config_options
@click.option("--input", "input_csv", type=click.Path(exists=True, dir_okay=False), help="id,url CSV (default: logs/screening.csv).")
def screen(config_path, input_csv, **overrides):
    """Fetch, extract, and ask the model about every document in the CSV."""
    config = _load(config_path, overrides)
    summary = _run(cmd_screen, config, input_csv)
    d = summary.dispositions
    click.echo(
        f"{summary.input_rows} rows ({summary.skipped} resumed): keep={d.get('Keep', 0)} "
        f"discard={d.get('Discard', 0)} unavailable={d.get('Unavailable', 0)} -> {summary.log_path}"
    )


@main.command()
@config_options
@click.option("--votes", "votes_csv", required=True, type=click.Path(exists=True, dir_okay=False), help="item_id,rater_id,vote CSV.")
@click.option("--log", "llm_log", type=click.Path(exists=True, dir_okay=False), help="Evaluation log (default: the run's).")
@click.option("--no-figures", is_flag=True, help="Skip the PPA figure.")
def agree(config_path, votes_csv, llm_log, no_figures, **overrides):
    """Compare LLM verdicts with human votes (PPA, Cohen's and Fleiss' kappa)."""
    config = _load(config_path, overrides)
    report = _run(cmd_agree, config, votes_csv, llm_log, figures=not no_figures)
    click.echo(format_agreement(report), nl=False)


@main.command()
@config_options
@click.option("--population", "population_csv", required=True, type=click.Path(exists=True, dir_okay=False), help="CSV with an id column.")
@click.option("--output", "out", type=click.Path(dir_okay=False), help="Where to write the sample (default: reports/sample.csv).")
def sample(config_path, population_csv, out, **overrides):
    """Draw a seeded random sample sized for the configured confidence and margin."""
    config = _load(config_path, overrides)
    path = _run(cmd_sample, config, population_csv, out)
    click.echo(str(path))


@main.command()
@config_options
@click.option("--no-figures", is_flag=True, help="Skip figure rendering.")
def report(config_path, no_figures, **overrides):
    """Summarise the evaluation log into tables and figures under reports/."""
    config = _load(config_path, overrides)
    rep = _run(cmd_report, config, figures=not no_figures)
    click.echo(" ".join(f"{k}={v}" for k, v in rep.votes.items()) + f" total={rep.total}")


if __name__ == "__main__":
    main()
