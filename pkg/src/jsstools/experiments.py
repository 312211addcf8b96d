"""Experiment harness

An experiment trains one task selection agent per (algorithm, alpha, seed)
on a shared scenario. Runs with alpha > 0 get the pattern reward of a
historical scheme (PDCL mode), runs with alpha = 0 are the baseline. All
output goes to a run stamped directory:

    run-20230419-101500/
        manifest.yaml
        scenario.yaml
        historical_scheme.csv
        historical.pattern
        lower-seed0.pt
        dqn-pdcl-alpha1-seed0/
            train.csv
            eval.csv
            upper.pt

bench reads the metric files back and writes table.csv and curves.csv.
"""

import csv
import itertools
import logging
import pathlib
import time
from concurrent import futures
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import yaml
from pathmatch import wildmatch

from jsstools.agents import ALGORITHMS, GreedyPolicy, TrainConfig
from jsstools.config import Configuration
from jsstools.env import reference_scheme
from jsstools.exceptions import DivergedError, JSTError
from jsstools.pattern import (
    PatternReward,
    PriorityPattern,
    scheme_pattern,
    write_pattern,
)
from jsstools.scenario import (
    DEFAULT_SEED,
    ScenarioConfig,
    default_scenario,
    dump_scenario,
    historical_scenario,
    read_scenario,
)
from jsstools.scheme import (
    SchedulingScheme,
    historical_scheme,
    read_scheme,
    write_scheme,
)
from jsstools.training import (
    METRIC_FIELDS,
    EpisodeMetrics,
    evaluate,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
    train_lower,
    train_upper,
)
from jsstools.verify import DEFAULT_FUEL_FACTOR

PathOrStr = Union[pathlib.Path, str]

log = logging.getLogger(__package__)

MODES = ("baseline", "pdcl")
TABLE_FIELDS = (
    "algorithm",
    "mode",
    "runs",
    "ComT",
    "CumR",
    "DecT_mean",
    "DecT_total",
    "TraT",
    "improvement",
)
CURVE_FIELDS = ("algorithm", "mode", "episode", "CumR", "ComT")
MISSING = "-"


def resolve_scenario(
    ref: str, n_tasks: int = 10, seed: int = DEFAULT_SEED
) -> ScenarioConfig:
    """Scenario by reference: historical, default, default:<n> or a YAML file"""

    if ref == "historical":
        return historical_scenario()
    if ref == "default":
        return default_scenario(n_tasks, seed)
    if ref.startswith("default:"):
        try:
            n_tasks = int(ref.split(":", 1)[1])
        except ValueError:
            raise JSTError(f"Invalid scenario reference {ref!r}")
        return default_scenario(n_tasks, seed)
    return read_scenario(ref)


@dataclass(frozen=True)
class RunSpec:

    algorithm: str
    alpha: float
    seed: int

    @property
    def mode(self) -> str:
        return "pdcl" if self.alpha > 0 else "baseline"

    @property
    def name(self) -> str:
        return f"{self.algorithm}-{self.mode}-alpha{self.alpha:g}-seed{self.seed}"


@dataclass(frozen=True)
class ExperimentSpec:

    scenario: str = "default"
    algorithms: Tuple[str, ...] = ALGORITHMS
    alphas: Tuple[float, ...] = (0.0, 1.0)
    seeds: Tuple[int, ...] = (0,)
    historical: Optional[str] = None
    eval_episodes: int = 5

    def __post_init__(self) -> None:

        if unknown := [a for a in self.algorithms if a not in ALGORITHMS]:
            raise JSTError(
                f"Unknown algorithms {', '.join(unknown)}, use {', '.join(ALGORITHMS)}"
            )
        if not self.algorithms or not self.alphas or not self.seeds:
            raise JSTError("An experiment needs algorithms, alphas and seeds")
        if any(a < 0 for a in self.alphas):
            raise JSTError("alpha must be >= 0")
        if self.eval_episodes < 1:
            raise JSTError("eval_episodes must be >= 1")

    @property
    def pdcl(self) -> bool:
        return any(a > 0 for a in self.alphas)

    def runs(self) -> List[RunSpec]:

        return [
            RunSpec(algorithm, alpha, seed)
            for algorithm, alpha, seed in itertools.product(
                self.algorithms, self.alphas, self.seeds
            )
        ]

    def to_dict(self) -> Dict[str, Any]:

        return {
            "scenario": self.scenario,
            "algorithms": list(self.algorithms),
            "alphas": list(self.alphas),
            "seeds": list(self.seeds),
            "historical": self.historical,
            "eval_episodes": self.eval_episodes,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentSpec":

        if not isinstance(data, dict):
            raise JSTError("An experiment spec must be a mapping")
        if unknown := set(data) - set(cls().to_dict()):
            raise JSTError(f"Unknown experiment keys {', '.join(sorted(unknown))}")
        values = dict(data)
        for key, kind in (("algorithms", str), ("alphas", float), ("seeds", int)):
            if key in values:
                values[key] = tuple(kind(v) for v in values[key])
        return cls(**values)


def load_spec(path: PathOrStr) -> ExperimentSpec:

    path = pathlib.Path(path)
    try:
        with path.open(encoding="utf-8") as inp:
            data = yaml.safe_load(inp)
    except OSError as exc:
        raise JSTError(f"Cannot read experiment {path}: {exc.strerror}")
    except yaml.YAMLError as exc:
        raise JSTError(f"Invalid experiment {path}: {exc}")
    return ExperimentSpec.from_dict(data or {})


@dataclass
class RunOutcome:

    run: RunSpec
    status: str = "pending"
    error: str = ""
    episodes: int = 0
    steps: int = 0
    pattern: Dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> Dict[str, Any]:

        data: Dict[str, Any] = {
            "name": self.run.name,
            "algorithm": self.run.algorithm,
            "alpha": self.run.alpha,
            "seed": self.run.seed,
            "mode": self.run.mode,
            "status": self.status,
            "episodes": self.episodes,
            "steps": self.steps,
        }
        if self.error:
            data["error"] = self.error
        if self.pattern:
            data["pattern_reward"] = dict(self.pattern)
        return data


@dataclass
class ExperimentResult:

    directory: pathlib.Path
    outcomes: List[RunOutcome]

    @property
    def failed(self) -> List[RunOutcome]:
        return [o for o in self.outcomes if not o.ok]


class MetricsWriter:
    """Episode metrics CSV, flushed per row so partial runs stay readable"""

    def __init__(self, path: pathlib.Path) -> None:

        self.path = path
        self.file = path.open("w", encoding="utf-8", newline="")
        self.writer = csv.DictWriter(self.file, METRIC_FIELDS, lineterminator="\n")
        self.writer.writeheader()

    def __call__(self, metrics: EpisodeMetrics) -> None:
        self.writer.writerow(metrics.row())
        self.file.flush()

    def close(self) -> None:
        self.file.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()


def read_metrics(path: PathOrStr) -> List[EpisodeMetrics]:

    with pathlib.Path(path).open(encoding="utf-8", newline="") as inp:
        return [EpisodeMetrics.from_row(row) for row in csv.DictReader(inp)]


def _historical(
    spec: ExperimentSpec, scenario: ScenarioConfig, seed: int
) -> SchedulingScheme:

    if spec.historical is not None:
        return read_scheme(spec.historical)
    if spec.scenario == "historical":
        return historical_scheme()
    log.info("No historical scheme given, using the best dispatching rule scheme")
    return reference_scheme(scenario, seed=seed)


def _train_config(
    config: Configuration, run: RunSpec, steps: Optional[int]
) -> TrainConfig:

    cfg = TrainConfig.from_config(config, run.algorithm, "upper", steps=steps)
    return replace(cfg, seed=run.seed, reward=replace(cfg.reward, alpha=run.alpha))


def execute_run(
    run: RunSpec,
    scenario: ScenarioConfig,
    lower_policy: GreedyPolicy,
    historical: Optional[PriorityPattern],
    cfg: TrainConfig,
    directory: pathlib.Path,
    eval_episodes: int = 5,
    fuel_factor: int = DEFAULT_FUEL_FACTOR,
    resume: Optional[PathOrStr] = None,
    lower_checkpoint: Optional[pathlib.Path] = None,
) -> RunOutcome:
    """Train and evaluate one run, failures end up in the outcome"""

    outcome = RunOutcome(run)
    run_dir = directory / run.name
    run_dir.mkdir(parents=True, exist_ok=True)

    pattern_reward = None
    if run.alpha > 0:
        if historical is None:
            raise JSTError(f"{run.name} needs a historical pattern")
        pattern_reward = PatternReward(historical, cfg.reward, scenario, fuel_factor)

    agent = None
    if resume is not None:
        agent, _ = load_checkpoint(resume, cfg)
        log.info("Resuming %s at step %d", run.name, agent.steps)

    log.info("Starting run %s", run.name)
    try:
        with MetricsWriter(run_dir / "train.csv") as writer:
            result = train_upper(
                scenario,
                lower_policy,
                cfg,
                pattern_reward,
                agent,
                on_episode=writer,
                fuel_factor=fuel_factor,
            )
    except DivergedError as exc:
        outcome.status = "diverged"
        outcome.error = str(exc)
        log.error("Run %s diverged: %s", run.name, exc)
        return outcome

    extra = {"run": run.name, "scenario": scenario.name}
    if lower_checkpoint is not None:
        extra["lower_checkpoint"] = str(lower_checkpoint)
    save_checkpoint(result.agent, run_dir / "upper.pt", "upper", **extra)

    metrics = evaluate(
        result.policy,
        scenario,
        eval_episodes,
        lower_policy,
        cfg.reward,
        historical,
        seed=run.seed,
        fuel_factor=fuel_factor,
    )
    with MetricsWriter(run_dir / "eval.csv") as writer:
        for m in metrics:
            writer(m)

    outcome.status = "ok"
    outcome.episodes = len(result.metrics)
    outcome.steps = result.agent.steps
    if pattern_reward is not None:
        outcome.pattern = {
            "granted": pattern_reward.granted,
            "skipped": pattern_reward.skipped,
            "gate_violations": pattern_reward.gate_violations,
        }
    log.info("Finished run %s after %d episodes", run.name, outcome.episodes)
    return outcome


def _lower_policies(
    config: Configuration,
    scenario: ScenarioConfig,
    seeds: List[int],
    directory: pathlib.Path,
    steps: Optional[int],
    jobs: int,
) -> Dict[int, Tuple[GreedyPolicy, pathlib.Path]]:
    """One PPO car selection policy per seed"""

    def train(seed: int) -> Tuple[GreedyPolicy, pathlib.Path]:
        cfg = TrainConfig.from_config(config, "ppo", "lower", steps=steps, seed=seed)
        result = train_lower(scenario, cfg)
        path = directory / f"lower-seed{seed}.pt"
        save_checkpoint(result.agent, path, "lower")
        return result.policy, path

    policies = {}
    with futures.ThreadPoolExecutor(max_workers=jobs) as executor:
        f_to_seed = {executor.submit(train, seed): seed for seed in seeds}
        for future in futures.as_completed(f_to_seed):
            policies[f_to_seed[future]] = future.result()
    return policies


def run_experiment(
    spec: ExperimentSpec,
    config: Configuration,
    out_dir: PathOrStr,
    jobs: Optional[int] = None,
    upper_steps: Optional[int] = None,
    lower_steps: Optional[int] = None,
    resume: Optional[PathOrStr] = None,
) -> ExperimentResult:
    """Run every (algorithm, alpha, seed) of the experiment in parallel"""

    jobs = jobs or config.output.jobs
    runs = spec.runs()
    if resume is not None and len(runs) != 1:
        raise JSTError(
            f"Resuming needs exactly one run, the experiment has {len(runs)}"
        )

    directory = pathlib.Path(out_dir) / time.strftime("run-%Y%m%d-%H%M%S")
    directory.mkdir(parents=True, exist_ok=True)
    log.info("Experiment with %d runs in %s", len(runs), directory)

    scenario = resolve_scenario(
        spec.scenario, config.scenario.n_tasks, config.scenario.seed
    )
    (directory / "scenario.yaml").write_text(dump_scenario(scenario), encoding="utf-8")

    manifest: Dict[str, Any] = {
        "spec": spec.to_dict(),
        "scenario": "scenario.yaml",
        "fuel_factor": config.verify.fuel_factor,
        "train": TrainConfig.from_config(config, "dqn", steps=upper_steps).to_dict(),
    }
    historical = None
    if spec.pdcl:
        scheme = _historical(spec, scenario, min(spec.seeds))
        write_scheme(scheme, directory / "historical_scheme.csv")
        historical = scheme_pattern(scheme, scenario, config.verify.fuel_factor)
        write_pattern(historical, directory / "historical.pattern")
        manifest["historical"] = "historical_scheme.csv"
        log.info("Historical pattern with %d relations", len(historical))

    if resume is not None:
        meta, _ = read_checkpoint(resume)
        if (lower_path := meta.get("lower_checkpoint")) is None:
            raise JSTError(f"Checkpoint {resume} does not name its car selection policy")
        lower_agent, _ = load_checkpoint(lower_path)
        lowers = {runs[0].seed: (GreedyPolicy(lower_agent), pathlib.Path(lower_path))}
    else:
        lowers = _lower_policies(
            config, scenario, sorted(set(spec.seeds)), directory, lower_steps, jobs
        )

    outcomes: Dict[RunSpec, RunOutcome] = {}
    with futures.ThreadPoolExecutor(max_workers=jobs) as executor:
        f_to_run = {}
        for run in runs:
            lower_policy, lower_path = lowers[run.seed]
            f_to_run[
                executor.submit(
                    execute_run,
                    run,
                    scenario,
                    lower_policy,
                    historical,
                    _train_config(config, run, upper_steps),
                    directory,
                    spec.eval_episodes,
                    config.verify.fuel_factor,
                    resume,
                    lower_path,
                )
            ] = run
        for future in futures.as_completed(f_to_run):
            run = f_to_run[future]
            if (exception := future.exception()) is not None:
                log.error("Run %s raised %s", run.name, exception)
                outcomes[run] = RunOutcome(run, "failed", str(exception))
            else:
                outcomes[run] = future.result()

    ordered = [outcomes[run] for run in runs]
    manifest["runs"] = [o.to_dict() for o in ordered]
    with (directory / "manifest.yaml").open("w", encoding="utf-8") as out:
        yaml.safe_dump(manifest, out, sort_keys=False)
    return ExperimentResult(directory, ordered)


# bench


def load_manifest(directory: PathOrStr) -> Dict[str, Any]:

    path = pathlib.Path(directory) / "manifest.yaml"
    try:
        with path.open(encoding="utf-8") as inp:
            return yaml.safe_load(inp)
    except OSError as exc:
        raise JSTError(f"Cannot read manifest {path}: {exc.strerror}")


def _fmt(value: Optional[float]) -> str:
    return MISSING if value is None else f"{value:.4g}"


def _mean(values: List[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def bench(
    directory: PathOrStr, pattern: str = "*"
) -> Tuple[pathlib.Path, pathlib.Path]:
    """Table of algorithms by mode and per episode reward curves

    Every number is recomputed from the metric files of the runs. Missing
    cells and runs where every evaluation episode failed are written as "-".
    """

    directory = pathlib.Path(directory)
    manifest = load_manifest(directory)
    runs = sorted(
        (r for r in manifest.get("runs", []) if wildmatch.match(pattern, r["name"])),
        key=lambda r: r["name"],
    )
    log.info("Bench over %d runs of %s", len(runs), directory)

    evals: Dict[Tuple[str, str], List[List[EpisodeMetrics]]] = {}
    trains: Dict[Tuple[str, str], List[List[EpisodeMetrics]]] = {}
    for r in runs:
        key = (r["algorithm"], r["mode"])
        run_dir = directory / r["name"]
        if (path := run_dir / "train.csv").exists():
            trains.setdefault(key, []).append(read_metrics(path))
        if (path := run_dir / "eval.csv").exists():
            evals.setdefault(key, []).append(read_metrics(path))

    rows = []
    comt: Dict[Tuple[str, str], Optional[float]] = {}
    for algorithm, mode in itertools.product(ALGORITHMS, MODES):
        key = (algorithm, mode)
        episodes = [m for run in evals.get(key, []) for m in run]
        finished = [m.comt for m in episodes if m.comt is not None]
        comt[key] = _mean(finished)
        if not episodes:
            log.warning("No evaluated runs for %s %s", algorithm, mode)
        row = {
            "algorithm": algorithm,
            "mode": mode,
            "runs": len(evals.get(key, [])),
            "ComT": _fmt(comt[key]),
            "CumR": _fmt(_mean([m.cumr for m in episodes])),
            "DecT_mean": _fmt(_mean([m.dect_mean for m in episodes])),
            "DecT_total": _fmt(_mean([m.dect_total for m in episodes])),
            "TraT": _fmt(_mean([run[-1].trat for run in trains.get(key, []) if run])),
            "improvement": "",
        }
        if mode == "pdcl":
            base = comt[(algorithm, "baseline")]
            if base is None or comt[key] is None or base == 0:
                row["improvement"] = MISSING
            else:
                row["improvement"] = f"{100.0 * (base - comt[key]) / base:.1f}%"
        rows.append(row)

    table = directory / "table.csv"
    with table.open("w", encoding="utf-8", newline="") as out:
        writer = csv.DictWriter(out, TABLE_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)

    curves = directory / "curves.csv"
    with curves.open("w", encoding="utf-8", newline="") as out:
        writer = csv.DictWriter(out, CURVE_FIELDS, lineterminator="\n")
        writer.writeheader()
        for algorithm, mode in itertools.product(ALGORITHMS, MODES):
            series = trains.get((algorithm, mode), [])
            for episode in range(max((len(s) for s in series), default=0)):
                at = [s[episode] for s in series if episode < len(s)]
                writer.writerow(
                    {
                        "algorithm": algorithm,
                        "mode": mode,
                        "episode": episode,
                        "CumR": _fmt(_mean([m.cumr for m in at])),
                        "ComT": _fmt(_mean([m.comt for m in at if m.comt is not None])),
                    }
                )

    log.info("Wrote %s and %s", table, curves)
    return table, curves
