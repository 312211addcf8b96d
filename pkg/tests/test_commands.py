import pathlib

import pytest
from click.testing import CliRunner

from jsstools.commands import cli
from jsstools.scenario import DATA_DIR, historical_scenario, load_scenario
from jsstools.scheme import load_scheme, makespan, write_scheme

from .conftest import SMALL_TOML
from .test_scheme import LOC0, tiny_scheme

HISTORICAL_CSV = str(DATA_DIR / "historical_scheme.csv")
HISTORICAL_MLJSS = str(DATA_DIR / "historical.mljss")


@pytest.fixture
def invoke(tmp_path: pathlib.Path):
    """Run the command line with a small configuration in tmp_path

    Only errors are logged, the root logger may echo into the captured output.
    """

    config_file = tmp_path / "jsstools.toml"
    config_file.write_text(SMALL_TOML.format(out_dir=tmp_path / "runs"))
    runner = CliRunner()

    def _invoke(*args: str):
        return runner.invoke(
            cli, ["--config-file", str(config_file), "--log-level", "ERROR", *args]
        )

    return _invoke


def test_show(invoke) -> None:

    result = invoke("scenario", "show", "historical")

    assert result.exit_code == 0
    assert load_scenario(result.output) == historical_scenario()


def test_show_missing(invoke, tmp_path) -> None:

    result = invoke("scenario", "show", str(tmp_path / "none.yaml"))

    assert result.exit_code == 2


def test_default(invoke, tmp_path) -> None:

    result = invoke("scenario", "default", "3")
    assert result.exit_code == 0
    assert load_scenario(result.output).n_tasks == 3

    output = tmp_path / "default.yaml"
    assert invoke("scenario", "default", "3", "--output", str(output)).exit_code == 0
    assert output.read_text() == result.output

    assert invoke("scenario", "default", "0").exit_code == 2


def test_reference(invoke, tiny_file) -> None:

    result = invoke(
        "scenario", "reference", str(tiny_file), "--rule", "spt", "--tries", "1"
    )

    assert result.exit_code == 0
    assert makespan(load_scheme(result.output)) == 8


def test_optimal(invoke, tiny_file) -> None:

    result = invoke("scenario", "optimal", str(tiny_file))
    assert result.exit_code == 0
    assert result.output.strip() == "8"

    assert invoke("scenario", "optimal", "historical").exit_code == 1


def test_verify_scheme(invoke, tmp_path) -> None:

    report_dir = tmp_path / "audit"
    result = invoke(
        "verify",
        HISTORICAL_CSV,
        "--scenario",
        "historical",
        "--report-dir",
        str(report_dir),
    )

    assert result.exit_code == 0
    assert "Verdict: Verified" in result.output
    assert "Makespan: scheme 16, simulated 16" in result.output
    assert "loc11  t0 t8" in result.output
    assert (report_dir / "historical_scheme.mljss").exists()
    assert (report_dir / "historical_scheme.report.yaml").exists()


def test_verify_illegal_scheme(invoke, tmp_path) -> None:

    path = tmp_path / "illegal.csv"
    write_scheme(tiny_scheme((0, 0, LOC0, 1, 0, 2), (1, 1, LOC0, 2, 1, 3)), path)

    assert invoke("verify", str(path)).exit_code == 1

    path.write_text("nonsense\n")
    assert invoke("verify", str(path)).exit_code == 2


def test_verify_program(invoke, tmp_path) -> None:

    result = invoke("verify", HISTORICAL_MLJSS)
    assert result.exit_code == 0
    assert "Steps:" in result.output

    stuck = tmp_path / "stuck.mljss"
    stuck.write_text("skip;\nexec1 t0.0;\n")
    result = invoke("verify", str(stuck))
    assert result.exit_code == 1
    assert "Verdict: Stuck" in result.output
    assert "unbound task t0 (line 2)" in result.output

    broken = tmp_path / "broken.mljss"
    broken.write_text("plan c1@0 [loc11 3];\n")
    assert invoke("verify", str(broken)).exit_code == 2


def test_pattern(invoke, tmp_path) -> None:

    output = tmp_path / "historical.pattern"
    result = invoke(
        "pattern",
        HISTORICAL_CSV,
        "--scenario",
        "historical",
        "--historical",
        HISTORICAL_CSV,
        "--output",
        str(output),
    )

    assert result.exit_code == 0
    assert result.output.splitlines()[0] == "loc00 t1 t3"
    assert "matched 14 of 14, r_z = 7" in result.output
    assert "missed" not in result.output
    assert output.exists()


def test_train_eval_bench(invoke, tiny_file) -> None:

    result = invoke(
        "train",
        "--scenario",
        str(tiny_file),
        "--algorithm",
        "dqn",
        "--alpha",
        "0",
        "--eval-episodes",
        "1",
    )

    assert result.exit_code == 0, result.output
    assert "dqn-baseline-alpha0-seed0" in result.output
    directory = pathlib.Path(result.output.splitlines()[-1])
    assert directory.name.startswith("run-")

    checkpoint = directory / "dqn-baseline-alpha0-seed0" / "upper.pt"
    result = invoke(
        "eval", str(checkpoint), "--scenario", str(tiny_file), "--episodes", "2"
    )
    assert result.exit_code == 0, result.output
    assert "episode 1:" in result.output
    assert "mean: ComT" in result.output

    result = invoke("bench", str(directory))
    assert result.exit_code == 0
    assert result.output.splitlines()[0].startswith("algorithm,mode,runs,ComT")
    assert "dqn,baseline,1," in result.output


def test_train_bad_spec(invoke, tmp_path) -> None:

    spec = tmp_path / "experiment.yaml"
    spec.write_text("algorithms: [a3c]\n")

    assert invoke("train", "--spec", str(spec)).exit_code == 2
