"""Scheduling schemes

A scheme is the decision output of an episode: one record per operation with
its location, car and time interval. Scheme files are CSV with the header

    task,op,equipment,workstation,car,start,end

Tasks and operations are 0-based, cars are numbered 1..K.
"""

import collections
import csv
import io
import logging
import pathlib
from dataclasses import dataclass, replace
from typing import Dict, Iterable, Iterator, List, Optional, Tuple, Union

from jsstools.exceptions import SchemeError
from jsstools.scenario import Location, ScenarioConfig

PathOrStr = Union[pathlib.Path, str]

log = logging.getLogger(__package__)

FIELDS = ("task", "op", "equipment", "workstation", "car", "start", "end")


@dataclass(frozen=True)
class SchemeRecord:

    task: int
    op: int
    location: Location
    car: int
    start: int
    end: int

    @property
    def duration(self) -> int:
        return self.end - self.start

    def sort_key(self) -> Tuple[int, int, int]:
        return (self.start, self.task, self.op)


@dataclass(frozen=True)
class SchedulingScheme:

    records: Tuple[SchemeRecord, ...] = ()

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[SchemeRecord]:
        return iter(self.records)

    def sorted(self) -> "SchedulingScheme":
        return SchedulingScheme(tuple(sorted(self.records, key=SchemeRecord.sort_key)))

    def translate(self, dt: int) -> "SchedulingScheme":
        """Same scheme shifted in time"""

        return SchedulingScheme(
            tuple(replace(r, start=r.start + dt, end=r.end + dt) for r in self.records)
        )

    def restrict(self, tasks: Iterable[int]) -> "SchedulingScheme":

        keep = set(tasks)
        return SchedulingScheme(tuple(r for r in self.records if r.task in keep))

    def by_location(self) -> Dict[Location, List[SchemeRecord]]:
        return _group(self.records, lambda r: r.location)

    def by_car(self) -> Dict[int, List[SchemeRecord]]:
        return _group(self.records, lambda r: r.car)

    def by_task(self) -> Dict[int, List[SchemeRecord]]:
        groups = collections.defaultdict(list)
        for r in self.records:
            groups[r.task].append(r)
        return {t: sorted(rs, key=lambda r: r.op) for t, rs in groups.items()}

    def missing(self, scenario: ScenarioConfig) -> List[Tuple[int, int]]:
        """(task, op) pairs of the scenario without a record"""

        present = {(r.task, r.op) for r in self.records}
        return [
            (t, o)
            for t, task in enumerate(scenario.tasks)
            for o in range(len(task.ops))
            if (t, o) not in present
        ]

    def violations(self, scenario: Optional[ScenarioConfig] = None) -> List[str]:
        """Independent interval sweep over locations, cars and tasks"""

        problems: List[str] = []

        for r in self.records:
            if r.end <= r.start:
                problems.append(f"t{r.task}.{r.op} has empty interval [{r.start},{r.end})")

        for loc, records in self.by_location().items():
            problems.extend(
                f"{loc} occupied by t{a.task}.{a.op} [{a.start},{a.end}) and "
                f"t{b.task}.{b.op} [{b.start},{b.end})"
                for a, b in _overlaps(records)
            )
        for car, records in self.by_car().items():
            problems.extend(
                f"car{car} serves t{a.task}.{a.op} [{a.start},{a.end}) and "
                f"t{b.task}.{b.op} [{b.start},{b.end})"
                for a, b in _overlaps(records)
            )

        for task, records in self.by_task().items():
            for a, b in zip(records, records[1:]):
                if a.op == b.op:
                    problems.append(f"t{task}.{a.op} scheduled twice")
                elif b.start < a.end:
                    problems.append(
                        f"t{task}.{b.op} starts at {b.start} before t{task}.{a.op} "
                        f"ends at {a.end}"
                    )

        if scenario is not None:
            problems.extend(_scenario_violations(self, scenario))

        return problems

    def check(self, scenario: Optional[ScenarioConfig] = None) -> None:

        if problems := self.violations(scenario):
            raise SchemeError("Illegal scheme", problems)


def _group(records, key) -> dict:

    groups = collections.defaultdict(list)
    for r in records:
        groups[key(r)].append(r)
    return {k: sorted(v, key=SchemeRecord.sort_key) for k, v in groups.items()}


def _overlaps(records: List[SchemeRecord]) -> Iterator[Tuple[SchemeRecord, SchemeRecord]]:
    """Overlapping pairs of a start sorted interval list"""

    active: List[SchemeRecord] = []
    for r in records:
        active = [a for a in active if a.end > r.start]
        for a in active:
            yield a, r
        active.append(r)


def _scenario_violations(scheme: SchedulingScheme, scenario: ScenarioConfig) -> List[str]:

    problems = []
    locations = set(scenario.locations())
    for r in scheme.records:
        name = f"t{r.task}.{r.op}"
        if not 0 <= r.task < scenario.n_tasks or not 0 <= r.op < len(
            scenario.tasks[r.task].ops
        ):
            problems.append(f"{name} is not an operation of the scenario")
            continue
        op = scenario.tasks[r.task].ops[r.op]
        if r.location not in locations:
            problems.append(f"{name} uses unknown location {r.location}")
        elif scenario.equipment[r.location.equipment_id].resource_type != op.resource_type:
            problems.append(
                f"{name} needs equipment type {op.resource_type}, {r.location} has "
                f"type {scenario.equipment[r.location.equipment_id].resource_type}"
            )
        if not 1 <= r.car <= scenario.cars:
            problems.append(f"{name} uses unknown car {r.car}")
        if r.duration != op.duration:
            problems.append(f"{name} lasts {r.duration}, expected {op.duration}")

    problems.extend(f"t{t}.{o} is not scheduled" for t, o in scheme.missing(scenario))
    return problems


def makespan(scheme: SchedulingScheme, scenario: Optional[ScenarioConfig] = None) -> int:
    """Completion time of the whole batch

    Without a scenario the operations of every task in the scheme must be
    numbered 0..n-1.
    """

    if scenario is not None:
        missing = scheme.missing(scenario)
    else:
        missing = []
        for task, records in scheme.by_task().items():
            ops = {r.op for r in records}
            missing.extend((task, o) for o in range(max(ops) + 1) if o not in ops)
    if missing:
        raise SchemeError(
            "Incomplete scheme", [f"t{t}.{o} missing" for t, o in missing]
        )

    return max((r.end for r in scheme.records), default=0)


def optimal_makespan(scenario: ScenarioConfig) -> int:
    """Optimal makespan by enumeration of all dispatch orders

    Every distinct interleaving of the task operation sequences is scheduled
    with each operation at the earliest time its task, a workstation of its
    type and a car are available. Only usable for tiny instances.
    """

    if scenario.n_total == 0:
        return 0
    if scenario.n_total > 10:
        raise SchemeError(
            f"Brute force enumeration over {scenario.n_total} assignments refused"
        )

    stations = {
        w: [loc for loc in scenario.stations_for(w)] for w in range(scenario.n_types)
    }
    best: Optional[int] = None
    for order in _interleavings([len(t.ops) for t in scenario.tasks]):
        task_free = [0] * scenario.n_tasks
        progress = [0] * scenario.n_tasks
        station_free = {loc: 0 for loc in scenario.locations()}
        car_free = [0] * scenario.cars
        end = 0
        for t in order:
            op = scenario.tasks[t].ops[progress[t]]
            progress[t] += 1
            loc = min(stations[op.resource_type], key=lambda s: (station_free[s], s))
            car = min(range(scenario.cars), key=lambda c: (car_free[c], c))
            start = max(task_free[t], station_free[loc], car_free[car])
            task_free[t] = station_free[loc] = car_free[car] = start + op.duration
            end = max(end, start + op.duration)
            if best is not None and end >= best:
                break
        else:
            best = end
    assert best is not None
    return best


def _interleavings(counts: List[int]) -> Iterator[Tuple[int, ...]]:
    """Distinct permutations of the multiset {t: counts[t]}"""

    total = sum(counts)

    def rec(prefix: List[int], left: List[int]) -> Iterator[Tuple[int, ...]]:
        if len(prefix) == total:
            yield tuple(prefix)
            return
        for t, n in enumerate(left):
            if n:
                left[t] -= 1
                prefix.append(t)
                yield from rec(prefix, left)
                prefix.pop()
                left[t] += 1

    yield from rec([], list(counts))


def _as_int(value: str, name: str, line: int) -> int:

    try:
        return int(value)
    except (TypeError, ValueError):
        raise SchemeError(f"line {line}: {name} must be an integer, not {value!r}")


def load_scheme(text: str) -> SchedulingScheme:

    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemeError("Empty scheme file")
    if tuple(h.strip() for h in header) != FIELDS:
        raise SchemeError(f"Scheme header must be {','.join(FIELDS)}")

    records = []
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(FIELDS):
            raise SchemeError(f"line {line}: expected {len(FIELDS)} fields, got {len(row)}")
        values = dict(
            zip(FIELDS, (_as_int(v, n, line) for v, n in zip(row, FIELDS)))
        )
        records.append(
            SchemeRecord(
                values["task"],
                values["op"],
                Location(values["equipment"], values["workstation"]),
                values["car"],
                values["start"],
                values["end"],
            )
        )
    return SchedulingScheme(tuple(records))


def read_scheme(path: PathOrStr) -> SchedulingScheme:

    path = pathlib.Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemeError(f"Cannot read scheme {path}: {exc.strerror}")
    scheme = load_scheme(text)
    log.debug("Read scheme %s with %d records", path, len(scheme))
    return scheme


def dump_scheme(scheme: SchedulingScheme) -> str:

    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(FIELDS)
    for r in scheme.sorted():
        writer.writerow(
            (
                r.task,
                r.op,
                r.location.equipment_id,
                r.location.workstation_index,
                r.car,
                r.start,
                r.end,
            )
        )
    return out.getvalue()


def write_scheme(scheme: SchedulingScheme, path: PathOrStr) -> None:

    pathlib.Path(path).write_text(dump_scheme(scheme), encoding="utf-8")


def historical_scheme() -> SchedulingScheme:
    """The shipped historical high-quality scheme"""

    return read_scheme(pathlib.Path(__file__).with_name("data") / "historical_scheme.csv")
