"""Command line interface

Usage:

    jsstools scenario show historical
    jsstools verify src/jsstools/data/historical_scheme.csv --scenario historical
    jsstools train --scenario default:2 --algorithm dqn --alpha 0 --alpha 1
    jsstools bench ~/.local/share/jsstools/runs/run-20230419-101500
"""

import logging
import pathlib
import sys
from typing import Any, Dict, NoReturn, Optional, Tuple

import click

import jsstools.clicklog as clicklog
from jsstools.agents import ALGORITHMS, GreedyPolicy
from jsstools.config import Configuration
from jsstools.env import DISPATCH_RULES, RewardConfig, reference_scheme
from jsstools.exceptions import JSTError, SchemeError
from jsstools.experiments import (
    ExperimentSpec,
    bench as bench_runs,
    load_spec,
    resolve_scenario,
    run_experiment,
)
from jsstools.parser import read_program
from jsstools.pattern import (
    format_pattern,
    format_relation,
    match_patterns,
    reward_rz,
    scheme_pattern,
    write_pattern,
)
from jsstools.scenario import ScenarioConfig, default_scenario, dump_scenario
from jsstools.scheme import (
    dump_scheme,
    makespan,
    optimal_makespan,
    read_scheme,
    write_scheme,
)
from jsstools.training import evaluate, load_checkpoint, read_checkpoint, summarize
from jsstools.verify import (
    ModelingProgram,
    VerificationReport,
    compile_scheme,
    verify as verify_program,
    write_report,
)

log = logging.getLogger(__package__)

config = Configuration()

EXIT_FAILED = 1
EXIT_INPUT = 2

_path = click.Path(exists=True, dir_okay=False, path_type=pathlib.Path)


def _fail(exc: Exception, code: int) -> NoReturn:

    log.error("%s", exc)
    sys.exit(code)


def _scenario(ref: Optional[str]) -> Optional[ScenarioConfig]:

    if ref is None:
        return None
    try:
        return resolve_scenario(ref, config.scenario.n_tasks, config.scenario.seed)
    except JSTError as exc:
        _fail(exc, EXIT_INPUT)


scenario_option = click.option(
    "--scenario",
    "scenario_ref",
    metavar="REF",
    default=None,
    help="historical, default, default:<n> or a scenario YAML file",
)


@click.group()
@click.option(
    "--config-file",
    "--config",
    type=click.Path(dir_okay=False, path_type=pathlib.Path),
    default=None,
    help="[default: ~/.config/jsstools/jsstools.toml]",
)
@click.option("--seed", type=int, default=0, show_default=True, help="Run seed")
@click.option(
    "--out-dir",
    type=click.Path(file_okay=False, path_type=pathlib.Path),
    default=None,
    help="Output directory [default from config]",
)
@clicklog.log_level_option(log)
@click.pass_context
def cli(
    ctx: click.Context,
    config_file: Optional[pathlib.Path],
    seed: int,
    out_dir: Optional[pathlib.Path],
) -> None:
    """Job shop scheduling with verified, pattern driven rewards"""

    try:
        config.init(config_file)
    except JSTError as exc:
        _fail(exc, EXIT_INPUT)
    state = ctx.ensure_object(dict)
    state["seed"] = seed
    state["out_dir"] = out_dir or config.output.out_dir


# scenario


@cli.group()
def scenario() -> None:
    """Inspect and generate scenarios"""


@scenario.command()
@click.argument("ref", default="historical")
def show(ref: str) -> None:
    """Print a scenario in canonical form"""

    scenario_ = _scenario(ref)
    assert scenario_ is not None
    click.echo(dump_scenario(scenario_), nl=False)
    log.info(
        "%s: %d tasks, %d assignments, %d cars",
        scenario_.name or ref,
        scenario_.n_tasks,
        scenario_.n_total,
        scenario_.cars,
    )


@scenario.command()
@click.argument("n_tasks", type=int)
@click.option(
    "--output",
    type=click.Path(dir_okay=False, writable=True, path_type=pathlib.Path),
    default=None,
    help="Write to file instead of stdout",
)
def default(n_tasks: int, output: Optional[pathlib.Path]) -> None:
    """Generate the default benchmark scenario with N_TASKS tasks"""

    try:
        text = dump_scenario(default_scenario(n_tasks, config.scenario.seed))
    except JSTError as exc:
        _fail(exc, EXIT_INPUT)
    if output is None:
        click.echo(text, nl=False)
    else:
        output.write_text(text, encoding="utf-8")
        log.info("Scenario written to %s", output)


@scenario.command()
@click.argument("ref")
@click.option(
    "--rule",
    "rules",
    type=click.Choice(sorted(DISPATCH_RULES)),
    multiple=True,
    help="Dispatching rules to try [default: all]",
)
@click.option("--tries", type=int, default=20, show_default=True)
@click.option(
    "--output",
    type=click.Path(dir_okay=False, writable=True, path_type=pathlib.Path),
    default=None,
    help="Write the scheme to file instead of stdout",
)
@click.pass_obj
def reference(
    obj: Dict[str, Any],
    ref: str,
    rules: Tuple[str, ...],
    tries: int,
    output: Optional[pathlib.Path],
) -> None:
    """Best dispatching rule scheme, usable as historical scheme"""

    scenario_ = _scenario(ref)
    assert scenario_ is not None
    try:
        scheme = reference_scheme(
            scenario_, rules or ("mwkr", "spt", "random"), tries, obj["seed"]
        )
    except JSTError as exc:
        _fail(exc, EXIT_FAILED)
    if output is None:
        click.echo(dump_scheme(scheme), nl=False)
    else:
        write_scheme(scheme, output)
        log.info("Scheme with makespan %d written to %s", makespan(scheme), output)


@scenario.command()
@click.argument("ref")
def optimal(ref: str) -> None:
    """Optimal makespan by exhaustive search (tiny scenarios only)"""

    scenario_ = _scenario(ref)
    assert scenario_ is not None
    try:
        click.echo(optimal_makespan(scenario_))
    except JSTError as exc:
        _fail(exc, EXIT_FAILED)


# verify


def _echo_report(report: VerificationReport) -> None:

    colour = "green" if report.verified else "red"
    click.secho(f"Verdict: {report.verdict.value}", fg=colour)
    if report.reason:
        where = f" (line {report.line})" if report.line is not None else ""
        click.echo(f"Reason:  {report.reason}{where}")
    click.echo(f"Steps:   {report.steps}")
    if (check := report.makespan_check) is not None:
        click.echo(f"Makespan: scheme {check.scheme}, simulated {check.simulated}")
    click.echo("Occupancy:")
    for code, events in sorted(report.occupancy_by_location().items()):
        tasks = [e.task for e in events if e.kind == "allocate"]
        click.echo(f"  loc{code:02d}  {' '.join(tasks)}")


@cli.command()
@click.argument("path", type=_path)
@scenario_option
@click.option("--fuel-factor", type=int, default=None, help="[default from config]")
@click.option(
    "--report-dir",
    type=click.Path(file_okay=False, path_type=pathlib.Path),
    default=None,
    help="Write the compiled program and a YAML report",
)
def verify(
    path: pathlib.Path,
    scenario_ref: Optional[str],
    fuel_factor: Optional[int],
    report_dir: Optional[pathlib.Path],
) -> None:
    """Verify a scheme (CSV) or a modeling program (.mljss)

    Exits with 0 when verified, 1 when not and 2 on unreadable input.
    """

    fuel_factor = fuel_factor or config.verify.fuel_factor
    scenario_ = _scenario(scenario_ref)

    program: Optional[ModelingProgram]
    if path.suffix == ".mljss":
        try:
            program = ModelingProgram(
                read_program(path), scenario=scenario_, name=path.stem
            )
        except JSTError as exc:
            _fail(exc, EXIT_INPUT)
    else:
        try:
            scheme = read_scheme(path)
        except SchemeError as exc:
            _fail(exc, EXIT_INPUT)
        try:
            program = compile_scheme(scheme, scenario_, path.stem)
        except SchemeError as exc:
            _fail(exc, EXIT_FAILED)

    report = verify_program(program, fuel_factor=fuel_factor)
    _echo_report(report)
    if report_dir is not None:
        for written in write_report(report, program, report_dir, path.stem):
            log.info("Wrote %s", written)

    check = report.makespan_check
    if not report.verified or (check is not None and not check.ok):
        sys.exit(EXIT_FAILED)


# pattern


@cli.command()
@click.argument("path", type=_path)
@scenario_option
@click.option(
    "--historical",
    type=_path,
    default=None,
    help="Historical scheme to match against",
)
@click.option(
    "--output",
    type=click.Path(dir_okay=False, writable=True, path_type=pathlib.Path),
    default=None,
    help="Write the pattern to file",
)
def pattern(
    path: pathlib.Path,
    scenario_ref: Optional[str],
    historical: Optional[pathlib.Path],
    output: Optional[pathlib.Path],
) -> None:
    """Priority pattern of a verified scheme"""

    scenario_ = _scenario(scenario_ref)
    fuel_factor = config.verify.fuel_factor
    try:
        scheme = read_scheme(path)
    except SchemeError as exc:
        _fail(exc, EXIT_INPUT)
    try:
        pattern_ = scheme_pattern(scheme, scenario_, fuel_factor)
        historical_ = (
            scheme_pattern(read_scheme(historical), scenario_, fuel_factor)
            if historical is not None
            else None
        )
    except JSTError as exc:
        _fail(exc, EXIT_FAILED)

    click.echo(format_pattern(pattern_), nl=False)
    if output is not None:
        write_pattern(pattern_, output)
        log.info("Pattern written to %s", output)

    if historical_ is not None:
        match = match_patterns(pattern_, historical_)
        r_z = reward_rz(match, RewardConfig.from_config(config))
        click.echo(f"matched {match.mu_match} of {match.mu_total}, r_z = {r_z:g}")
        for relation in sorted(match.missed):
            click.echo(f"  missed {format_relation(relation)}")


# training


@cli.command()
@click.option(
    "--spec",
    "spec_path",
    type=_path,
    default=None,
    help="Experiment YAML, replaces the options below",
)
@scenario_option
@click.option(
    "--algorithm",
    "algorithms",
    type=click.Choice(ALGORITHMS),
    multiple=True,
    help="[default: all]",
)
@click.option("--alpha", "alphas", type=float, multiple=True, help="[default: 0 and 1]")
@click.option("--seeds", type=int, multiple=True, help="[default: the global seed]")
@click.option("--historical", type=_path, default=None, help="Historical scheme")
@click.option("--upper-steps", type=int, default=None, help="[default from config]")
@click.option("--lower-steps", type=int, default=None, help="[default from config]")
@click.option("--eval-episodes", type=int, default=5, show_default=True)
@click.option("--jobs", type=int, default=None, help="[default from config]")
@click.option(
    "--resume",
    type=_path,
    default=None,
    help="Continue a single run from its checkpoint",
)
@click.pass_obj
def train(
    obj: Dict[str, Any],
    spec_path: Optional[pathlib.Path],
    scenario_ref: Optional[str],
    algorithms: Tuple[str, ...],
    alphas: Tuple[float, ...],
    seeds: Tuple[int, ...],
    historical: Optional[pathlib.Path],
    upper_steps: Optional[int],
    lower_steps: Optional[int],
    eval_episodes: int,
    jobs: Optional[int],
    resume: Optional[pathlib.Path],
) -> None:
    """Train both layers for every algorithm, alpha and seed"""

    try:
        if spec_path is not None:
            spec = load_spec(spec_path)
        else:
            spec = ExperimentSpec(
                scenario=scenario_ref or "default",
                algorithms=algorithms or ALGORITHMS,
                alphas=alphas or (0.0, 1.0),
                seeds=seeds or (obj["seed"],),
                historical=str(historical) if historical is not None else None,
                eval_episodes=eval_episodes,
            )
    except JSTError as exc:
        raise click.UsageError(str(exc))

    try:
        result = run_experiment(
            spec,
            config,
            obj["out_dir"],
            jobs,
            upper_steps,
            lower_steps,
            resume,
        )
    except JSTError as exc:
        _fail(exc, EXIT_FAILED)

    for outcome in result.outcomes:
        click.echo(f"{outcome.run.name:40} {outcome.status}")
    click.echo(str(result.directory))
    if result.failed:
        log.error("%d of %d runs failed", len(result.failed), len(result.outcomes))
        sys.exit(EXIT_FAILED)


@cli.command(name="eval")
@click.argument("checkpoint", type=_path)
@scenario_option
@click.option("--episodes", type=int, default=5, show_default=True)
@click.option(
    "--historical",
    type=_path,
    default=None,
    help="Historical scheme for the pattern columns",
)
@click.pass_obj
def evaluate_(
    obj: Dict[str, Any],
    checkpoint: pathlib.Path,
    scenario_ref: Optional[str],
    episodes: int,
    historical: Optional[pathlib.Path],
) -> None:
    """Greedy evaluation of a trained task selection checkpoint"""

    scenario_ = _scenario(scenario_ref or "default")
    assert scenario_ is not None
    try:
        meta, _ = read_checkpoint(checkpoint)
        agent, _ = load_checkpoint(checkpoint)
        lower_policy = None
        if (lower_path := meta.get("lower_checkpoint")) is not None:
            lower_agent, _ = load_checkpoint(lower_path)
            lower_policy = GreedyPolicy(lower_agent)
        historical_ = (
            scheme_pattern(
                read_scheme(historical), scenario_, config.verify.fuel_factor
            )
            if historical is not None
            else None
        )
        metrics = evaluate(
            GreedyPolicy(agent),
            scenario_,
            episodes,
            lower_policy,
            agent.cfg.reward,
            historical_,
            obj["seed"],
            config.verify.fuel_factor,
        )
    except JSTError as exc:
        _fail(exc, EXIT_FAILED)

    for m in metrics:
        click.echo(
            f"episode {m.episode}: ComT {'-' if m.dnf else m.comt}, "
            f"CumR {m.cumr:.4f}, DecT {m.dect_mean:.3f} ms, "
            f"{'verified' if m.verified else 'not verified'}"
        )
    summary = summarize(metrics)
    click.echo(
        "mean: ComT {}, CumR {}, DNF {:.0f}".format(
            "-" if summary["ComT"] is None else f"{summary['ComT']:.2f}",
            "-" if summary["CumR"] is None else f"{summary['CumR']:.4f}",
            summary["dnf"],
        )
    )


@cli.command()
@click.argument(
    "directory", type=click.Path(exists=True, file_okay=False, path_type=pathlib.Path)
)
@click.option(
    "--filter",
    "pattern_",
    metavar="PATTERN",
    default="*",
    show_default=True,
    help="Wildcard on run names",
)
def bench(directory: pathlib.Path, pattern_: str) -> None:
    """Benchmark table and reward curves of an experiment directory"""

    try:
        table, _ = bench_runs(directory, pattern_)
    except JSTError as exc:
        _fail(exc, EXIT_INPUT)
    click.echo(table.read_text(encoding="utf-8"), nl=False)


def main() -> None:

    clicklog.basicConfig()
    cli()


if __name__ == "__main__":
    main()
