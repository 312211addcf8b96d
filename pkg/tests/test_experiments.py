import csv

import pytest
import yaml
from pytest_mock import MockerFixture

from jsstools.agents import TrainConfig
from jsstools.env import GreedyLowerPolicy
from jsstools.exceptions import DivergedError, JSTError
from jsstools.experiments import (
    TABLE_FIELDS,
    ExperimentSpec,
    MetricsWriter,
    RunSpec,
    bench,
    execute_run,
    load_spec,
    read_metrics,
    resolve_scenario,
    run_experiment,
)
from jsstools.training import EpisodeMetrics


def read_csv(path):
    with path.open(newline="") as inp:
        return list(csv.DictReader(inp))


def test_resolve_scenario(tiny_file) -> None:

    assert resolve_scenario("historical").n_tasks == 10
    assert resolve_scenario("default", n_tasks=4).n_tasks == 4
    assert resolve_scenario("default:3", seed=1) == resolve_scenario("default:3", seed=1)
    assert resolve_scenario("default:3").n_tasks == 3
    assert resolve_scenario(str(tiny_file)).name == "tiny"
    with pytest.raises(JSTError):
        resolve_scenario("default:three")


def test_run_names() -> None:

    assert RunSpec("dqn", 1.0, 0).name == "dqn-pdcl-alpha1-seed0"
    assert RunSpec("ppo", 0.0, 2).name == "ppo-baseline-alpha0-seed2"
    assert RunSpec("ddqn", 0.5, 1).mode == "pdcl"


def test_experiment_spec() -> None:

    spec = ExperimentSpec(alphas=(0.0, 1.0), seeds=(0, 1))

    assert len(spec.runs()) == 16
    assert spec.pdcl
    assert not ExperimentSpec(alphas=(0.0,)).pdcl
    assert ExperimentSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize(
    "kwargs",
    [
        {"algorithms": ("dqn", "a3c")},
        {"seeds": ()},
        {"alphas": (-1.0,)},
        {"eval_episodes": 0},
    ],
)
def test_invalid_spec(kwargs) -> None:

    with pytest.raises(JSTError):
        ExperimentSpec(**kwargs)


def test_load_spec(tmp_path) -> None:

    path = tmp_path / "experiment.yaml"
    path.write_text("scenario: historical\nalgorithms: [dqn]\nalphas: [0, 1]\n")
    spec = load_spec(path)
    assert spec.alphas == (0.0, 1.0)
    assert [r.name for r in spec.runs()] == [
        "dqn-baseline-alpha0-seed0",
        "dqn-pdcl-alpha1-seed0",
    ]

    path.write_text("scenario: historical\nepochs: 3\n")
    with pytest.raises(JSTError, match="epochs"):
        load_spec(path)
    path.write_text("- dqn\n")
    with pytest.raises(JSTError):
        load_spec(path)
    with pytest.raises(JSTError):
        load_spec(tmp_path / "none.yaml")


def test_metrics_file(tmp_path) -> None:

    metrics = [
        EpisodeMetrics(0, None, -3.5, 0.25, 20.0, 0.01),
        EpisodeMetrics(1, 8, 1.25, 0.5, 2.0, 0.02, True, 2, 2, 1.0, 40),
    ]
    with MetricsWriter(tmp_path / "train.csv") as writer:
        for m in metrics:
            writer(m)

    assert read_metrics(tmp_path / "train.csv") == metrics


def test_execute_run(tmp_path, tiny) -> None:

    cfg = TrainConfig("ddqn", steps=40, hidden=(8,), learning_starts=8, batch_size=8)
    outcome = execute_run(
        RunSpec("ddqn", 0.0, 0), tiny, GreedyLowerPolicy(), None, cfg, tmp_path, 2
    )

    assert outcome.ok
    assert outcome.steps >= 40
    run_dir = tmp_path / "ddqn-baseline-alpha0-seed0"
    assert len(read_metrics(run_dir / "train.csv")) == outcome.episodes
    assert len(read_metrics(run_dir / "eval.csv")) == 2
    assert (run_dir / "upper.pt").exists()

    with pytest.raises(JSTError, match="historical"):
        execute_run(RunSpec("ddqn", 1.0, 0), tiny, GreedyLowerPolicy(), None, cfg, tmp_path)


def test_diverged_run(tmp_path, tiny, mocker: MockerFixture) -> None:

    mocker.patch(
        "jsstools.experiments.train_upper",
        side_effect=DivergedError("Non finite loss", 5),
    )
    outcome = execute_run(
        RunSpec("dqn", 0.0, 0), tiny, GreedyLowerPolicy(), None, TrainConfig(), tmp_path
    )

    assert outcome.status == "diverged"
    assert "step 5" in outcome.error
    assert outcome.to_dict()["error"] == outcome.error


def test_experiment_and_bench(small_config, tiny_file, tmp_path) -> None:

    spec = ExperimentSpec(str(tiny_file), ("dqn", "ppo"), (0.0, 1.0), (0,), eval_episodes=1)
    result = run_experiment(spec, small_config, tmp_path / "runs")

    assert result.failed == []
    directory = result.directory
    assert directory.name.startswith("run-")
    for name in (
        "manifest.yaml",
        "scenario.yaml",
        "historical_scheme.csv",
        "historical.pattern",
        "lower-seed0.pt",
    ):
        assert (directory / name).exists()

    manifest = yaml.safe_load((directory / "manifest.yaml").read_text())
    assert [r["name"] for r in manifest["runs"]] == [r.name for r in spec.runs()]
    assert manifest["train"]["steps"] == 60
    pdcl = [r for r in manifest["runs"] if r["mode"] == "pdcl"]
    assert all(r["pattern_reward"]["gate_violations"] == 0 for r in pdcl)
    for outcome in result.outcomes:
        assert outcome.steps >= 60
        assert (directory / outcome.run.name / "upper.pt").exists()

    table, curves = bench(directory)
    rows = read_csv(table)
    assert list(rows[0]) == list(TABLE_FIELDS)
    assert len(rows) == 8
    by_key = {(r["algorithm"], r["mode"]): r for r in rows}
    assert by_key[("dueling", "baseline")]["runs"] == "0"
    assert by_key[("dueling", "baseline")]["ComT"] == "-"
    assert by_key[("dueling", "pdcl")]["improvement"] == "-"
    assert by_key[("dqn", "baseline")]["runs"] == "1"
    assert by_key[("dqn", "baseline")]["ComT"] in ("8", "-")
    assert by_key[("dqn", "pdcl")]["improvement"] in ("0.0%", "-")

    train_rows = read_metrics(directory / "dqn-baseline-alpha0-seed0" / "train.csv")
    curve_rows = [
        r for r in read_csv(curves) if (r["algorithm"], r["mode"]) == ("dqn", "baseline")
    ]
    assert len(curve_rows) == len(train_rows)

    table, _ = bench(directory, "ppo-*")
    by_key = {(r["algorithm"], r["mode"]): r for r in read_csv(table)}
    assert by_key[("dqn", "baseline")]["runs"] == "0"
    assert by_key[("ppo", "pdcl")]["runs"] == "1"


def test_resume_experiment(small_config, tiny_file, tmp_path) -> None:

    spec = ExperimentSpec(str(tiny_file), ("dqn",), (0.0,), (0,), eval_episodes=1)
    first = run_experiment(spec, small_config, tmp_path / "first")
    checkpoint = first.directory / "dqn-baseline-alpha0-seed0" / "upper.pt"

    second = run_experiment(
        spec, small_config, tmp_path / "second", upper_steps=120, resume=checkpoint
    )

    assert second.outcomes[0].ok
    assert second.outcomes[0].steps >= 120
    assert not (second.directory / "lower-seed0.pt").exists()

    with pytest.raises(JSTError, match="exactly one run"):
        run_experiment(
            ExperimentSpec(str(tiny_file), ("dqn", "ppo")),
            small_config,
            tmp_path / "third",
            resume=checkpoint,
        )


def test_bench_without_manifest(tmp_path) -> None:

    with pytest.raises(JSTError):
        bench(tmp_path)
