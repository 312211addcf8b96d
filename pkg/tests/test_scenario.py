import numpy as np
import pytest

from jsstools.exceptions import ScenarioError
from jsstools.scenario import (
    DEFAULT_WORKSTATIONS,
    MAX_DURATION,
    Location,
    default_scenario,
    dump_scenario,
    load_scenario,
    random_cars,
    read_scenario,
)

from .conftest import TINY


def test_tiny(tiny) -> None:

    assert tiny.name == "tiny"
    assert tiny.n_tasks == 2
    assert tiny.n_total == 4
    assert tiny.n_types == 2
    assert tiny.location_codes() == {0, 10}
    assert tiny.stations_for(1) == [Location(1, 0)]
    assert tiny.tasks[0].remaining() == 5


def test_historical(historical) -> None:

    assert historical.n_tasks == 10
    assert historical.n_total == 14
    assert historical.cars == 3
    assert historical.location_codes() == {0, 1, 10, 11, 20, 21, 30, 40, 41}


def test_location_names() -> None:

    assert str(Location(0, 0)) == "loc00"
    assert str(Location(4, 1)) == "loc41"
    assert Location.from_code(41) == Location(4, 1)
    assert Location(2, 1).code == 21


def test_canonical_text(tiny, historical) -> None:

    assert load_scenario(dump_scenario(tiny)) == tiny
    assert load_scenario(dump_scenario(historical)) == historical


def test_read_scenario(tmp_path) -> None:

    path = tmp_path / "shop.yaml"
    path.write_text(TINY)

    scenario = read_scenario(path)
    assert scenario.name == "shop"
    assert scenario.n_total == 4


def test_read_missing(tmp_path) -> None:

    with pytest.raises(ScenarioError):
        read_scenario(tmp_path / "none.yaml")


def test_default_scenario() -> None:

    scenario = default_scenario(6, seed=3)

    assert scenario.n_tasks == 6
    assert scenario.cars == 3
    assert [e.workstations for e in scenario.equipment] == list(DEFAULT_WORKSTATIONS)
    for task in scenario.tasks:
        assert sorted(op.resource_type for op in task.ops) == [0, 1, 2, 3, 4]
        assert all(1 <= op.duration <= MAX_DURATION for op in task.ops)

    assert default_scenario(6, seed=3) == scenario
    assert default_scenario(4, seed=3).tasks == scenario.tasks[:4]


def test_default_scenario_empty() -> None:

    with pytest.raises(ScenarioError):
        default_scenario(0)


@pytest.mark.parametrize(
    "text, message",
    [
        (TINY.replace("cars: 1", "cars: 0"), "at least one car"),
        (TINY.replace("duration: 3", "duration: 0"), "positive integer duration"),
        (TINY.replace("duration: 3", "duration: 1.5"), "positive integer duration"),
        (TINY.replace("{type: 1, duration: 3}", "{type: 7, duration: 3}"), "unknown"),
        (TINY.replace("0, workstations: 1", "0, workstations: 11"), "workstations"),
        (TINY.replace("cars: 1\n", ""), "Missing key 'cars'"),
        ("- 1\n- 2\n", "mapping"),
    ],
)
def test_invalid_scenario(text: str, message: str) -> None:

    with pytest.raises(ScenarioError, match=message):
        load_scenario(text)


def test_yaml_error_position() -> None:

    with pytest.raises(ScenarioError) as exc:
        load_scenario("cars: 1\nequipment: [\n")

    assert exc.value.line is not None
    assert str(exc.value).startswith("line ")


def test_random_cars(historical) -> None:

    rng = np.random.default_rng(1)
    cars = random_cars(historical, rng)

    assert len(cars) == historical.cars
    locations = set(historical.locations())
    assert all(c.location is None or c.location in locations for c in cars)
    assert all(c.idle for c in cars)
