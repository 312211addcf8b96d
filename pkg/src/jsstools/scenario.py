"""Static problem instance

A scenario consists of tasks (ordered operations), equipment with parallel
workstations and a fleet of cars. Every operation needs one workstation of
the equipment type it names and one car for its whole duration.

Scenario files are YAML:

    seed: 0
    cars: 3
    equipment:
      - {type: 0, workstations: 2}
      - {type: 1, workstations: 2}
    tasks:
      - ops:
          - {type: 0, duration: 3}
          - {type: 1, duration: 2}
"""

import logging
import pathlib
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
import yaml

from jsstools.exceptions import ScenarioError

PathOrStr = Union[pathlib.Path, str]

log = logging.getLogger(__package__)

DATA_DIR = pathlib.Path(__file__).with_name("data")

DEFAULT_WORKSTATIONS = (2, 2, 2, 1, 2)
DEFAULT_CARS = 3
DEFAULT_SEED = 20230419
MAX_DURATION = 9
MAX_WORKSTATIONS = 10

IDLE = 1
BUSY = -1


@dataclass(frozen=True)
class Operation:

    resource_type: int
    duration: int


@dataclass(frozen=True)
class Task:
    """Ordered operations of a task

    progress is the index of the next unstarted operation.
    """

    ops: Tuple[Operation, ...]
    progress: int = 0

    def __len__(self) -> int:
        return len(self.ops)

    @property
    def finished(self) -> bool:
        return self.progress >= len(self.ops)

    def remaining(self, progress: Optional[int] = None) -> int:
        """Sum of the durations of the unstarted operations"""

        start = self.progress if progress is None else progress
        return sum(op.duration for op in self.ops[start:])


@dataclass(frozen=True)
class Equipment:

    resource_type: int
    workstations: int


@dataclass(frozen=True, order=True)
class Location:
    """One workstation of one equipment

    Printed as loc<equipment><workstation>, the integer code 10 * equipment +
    workstation is used as location id by the modeling language.
    """

    equipment_id: int
    workstation_index: int

    @property
    def code(self) -> int:
        return 10 * self.equipment_id + self.workstation_index

    @classmethod
    def from_code(cls, code: int) -> "Location":
        return cls(*divmod(code, 10))

    def __str__(self) -> str:
        return f"loc{self.code:02d}"


@dataclass(frozen=True)
class Car:
    """Car with its location (None at the depot) and availability flag"""

    location: Optional[Location]
    available: int = IDLE

    def __post_init__(self) -> None:
        if self.available not in (IDLE, BUSY):
            raise ScenarioError(
                f"Car availability must be {IDLE} or {BUSY}, not {self.available}"
            )

    @property
    def idle(self) -> bool:
        return self.available == IDLE


@dataclass(frozen=True)
class ScenarioConfig:

    tasks: Tuple[Task, ...]
    equipment: Tuple[Equipment, ...]
    cars: int
    car_init_seed: int = 0
    name: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        validate_scenario(self)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def n_total(self) -> int:
        """Total number of assignments of a complete scheme"""

        return sum(len(t.ops) for t in self.tasks)

    @property
    def n_types(self) -> int:
        return max((e.resource_type for e in self.equipment), default=-1) + 1

    def locations(self) -> Iterator[Location]:

        for e, equipment in enumerate(self.equipment):
            for w in range(equipment.workstations):
                yield Location(e, w)

    def location_codes(self) -> frozenset:

        return frozenset(loc.code for loc in self.locations())

    def stations_for(self, resource_type: int) -> List[Location]:
        """All locations able to execute an operation of this type"""

        return [
            loc
            for loc in self.locations()
            if self.equipment[loc.equipment_id].resource_type == resource_type
        ]


def validate_scenario(scenario: ScenarioConfig) -> None:

    if scenario.cars < 1:
        raise ScenarioError(f"A scenario needs at least one car, not {scenario.cars}")
    if not scenario.equipment:
        raise ScenarioError("A scenario needs at least one equipment")

    types = set()
    for e, equipment in enumerate(scenario.equipment):
        if not 1 <= equipment.workstations <= MAX_WORKSTATIONS:
            raise ScenarioError(
                f"Equipment {e} must have 1 to {MAX_WORKSTATIONS} workstations, "
                f"not {equipment.workstations}"
            )
        if equipment.resource_type < 0:
            raise ScenarioError(f"Equipment {e} has negative type")
        types.add(equipment.resource_type)

    for t, task in enumerate(scenario.tasks):
        if not task.ops:
            raise ScenarioError(f"Task t{t} has no operations")
        if not 0 <= task.progress <= len(task.ops):
            raise ScenarioError(f"Task t{t} has progress out of range")
        for o, op in enumerate(task.ops):
            if (
                isinstance(op.duration, bool)
                or not isinstance(op.duration, (int, np.integer))
                or op.duration <= 0
            ):
                raise ScenarioError(
                    f"Operation t{t}.{o} must have a positive integer duration, "
                    f"not {op.duration!r}"
                )
            if op.resource_type not in types:
                raise ScenarioError(
                    f"Operation t{t}.{o} needs unknown equipment type {op.resource_type}"
                )


def _require(data: Dict[str, Any], key: str, where: str) -> Any:

    try:
        return data[key]
    except (KeyError, TypeError):
        raise ScenarioError(f"Missing key '{key}' in {where}")


def scenario_from_dict(data: Any, name: str = "") -> ScenarioConfig:
    """Build a scenario from the parsed YAML document"""

    if not isinstance(data, dict):
        raise ScenarioError("Scenario must be a mapping")

    try:
        equipment = tuple(
            Equipment(
                int(_require(item, "type", f"equipment {e}")),
                int(_require(item, "workstations", f"equipment {e}")),
            )
            for e, item in enumerate(_require(data, "equipment", "scenario"))
        )
        tasks = []
        for t, item in enumerate(_require(data, "tasks", "scenario")):
            ops = tuple(
                Operation(
                    int(_require(op, "type", f"task t{t}")),
                    _require(op, "duration", f"task t{t}"),
                )
                for op in (_require(item, "ops", f"task t{t}") or [])
            )
            tasks.append(Task(ops))
        cars = _require(data, "cars", "scenario")
        seed = data.get("seed", 0)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"Malformed scenario: {exc}")

    if isinstance(cars, bool) or not isinstance(cars, int):
        raise ScenarioError(f"cars must be an integer, not {cars!r}")

    return ScenarioConfig(tuple(tasks), equipment, cars, int(seed), name=name)


def load_scenario(text: str, name: str = "") -> ScenarioConfig:
    """Parse and validate a scenario document"""

    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        if mark is None:
            raise ScenarioError(str(exc))
        raise ScenarioError(
            exc.problem or str(exc), line=mark.line + 1, column=mark.column + 1
        )
    except yaml.YAMLError as exc:
        raise ScenarioError(str(exc))

    scenario = scenario_from_dict(data, name)
    log.debug(
        "Scenario %s: %d tasks, %d assignments, %d cars",
        name or "<text>",
        scenario.n_tasks,
        scenario.n_total,
        scenario.cars,
    )
    return scenario


def read_scenario(path: PathOrStr) -> ScenarioConfig:

    path = pathlib.Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"Cannot read scenario {path}: {exc.strerror}")
    return load_scenario(text, name=path.stem)


def scenario_to_dict(scenario: ScenarioConfig) -> Dict[str, Any]:

    return {
        "seed": scenario.car_init_seed,
        "cars": scenario.cars,
        "equipment": [
            {"type": e.resource_type, "workstations": e.workstations}
            for e in scenario.equipment
        ],
        "tasks": [
            {
                "ops": [
                    {"type": op.resource_type, "duration": int(op.duration)}
                    for op in task.ops
                ]
            }
            for task in scenario.tasks
        ],
    }


def dump_scenario(scenario: ScenarioConfig) -> str:
    """Canonical text of a scenario"""

    return yaml.safe_dump(
        scenario_to_dict(scenario), sort_keys=False, default_flow_style=None
    )


def default_scenario(n_tasks: int, seed: int = DEFAULT_SEED) -> ScenarioConfig:
    """Benchmark instance: n_tasks tasks routed through five equipment types

    Every task visits each equipment type exactly once in a random order, with
    durations between 1 and 9. Tasks are drawn one after the other, so the
    first tasks of a larger instance equal a smaller one.
    """

    if n_tasks < 1:
        raise ScenarioError(f"A default scenario needs at least one task, not {n_tasks}")

    rng = np.random.default_rng(seed)
    n_types = len(DEFAULT_WORKSTATIONS)
    tasks = []
    for _ in range(n_tasks):
        route = rng.permutation(n_types)
        durations = rng.integers(1, MAX_DURATION + 1, size=n_types)
        tasks.append(
            Task(tuple(Operation(int(w), int(d)) for w, d in zip(route, durations)))
        )

    equipment = tuple(Equipment(w, n) for w, n in enumerate(DEFAULT_WORKSTATIONS))
    return ScenarioConfig(
        tuple(tasks), equipment, DEFAULT_CARS, seed, name=f"default-{n_tasks}"
    )


def historical_scenario() -> ScenarioConfig:
    """Scenario of the shipped historical high-quality scheme"""

    return read_scenario(DATA_DIR / "historical_scenario.yaml")


def random_cars(
    scenario: ScenarioConfig, rng: np.random.Generator, p_busy: float = 0.0
) -> List[Car]:
    """Random initial car placement, either at the depot or at a location"""

    locations = list(scenario.locations())
    cars = []
    for _ in range(scenario.cars):
        i = int(rng.integers(len(locations) + 1))
        location = locations[i - 1] if i > 0 else None
        available = BUSY if rng.random() < p_busy else IDLE
        cars.append(Car(location, available))
    return cars
