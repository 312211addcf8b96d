"""Scheme verification by execution of a compiled modeling program

A scheme is compiled into a straight line program in the style of the
hand written historical program: every run of consecutive operations of a
task on the same car becomes

    plan c<car>@<task> [loc..: d, ...];
    asgn t<task> (c<car>@<task>);        (att for later runs)
    exec1 t<task>.0;                     (one per operation, at its end)
    free t<task>.0;

followed by comp t<task> once the task is done. Commands are ordered by
time; at equal times releases come before allocations. The program is run
from the empty state and the terminal configuration is judged.
"""

import enum
import logging
import pathlib
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple, Union

import yaml

from jsstools import lang
from jsstools.exceptions import SchemeError, VerificationError
from jsstools.machine import (
    DEFAULT_LOCATION_POOL,
    FIN,
    NULL,
    MachineState,
    RunStatus,
    TraceEntry,
    run,
)
from jsstools.scenario import ScenarioConfig
from jsstools.scheme import SchedulingScheme, SchemeRecord, makespan

PathOrStr = Union[pathlib.Path, str]

log = logging.getLogger(__package__)

DEFAULT_FUEL_FACTOR = 10

# event ranks at equal time
_EXEC, _FREE, _COMP, _ALLOCATE = range(4)


class Verdict(enum.Enum):
    VERIFIED = "Verified"
    STUCK = "Stuck"
    FUEL_EXHAUSTED = "FuelExhausted"
    INCOMPLETE = "Incomplete"


@dataclass
class ModelingProgram:

    ast: lang.Command
    line_map: Dict[int, List[SchemeRecord]] = field(default_factory=dict)
    scheme: Optional[SchedulingScheme] = None
    scenario: Optional[ScenarioConfig] = None
    name: str = ""

    @property
    def commands(self) -> List[lang.Command]:
        return list(lang.flatten(self.ast))

    @property
    def text(self) -> str:
        return lang.format_program(self.ast)

    def records_at(self, line: int) -> List[SchemeRecord]:
        return self.line_map.get(line, [])


@dataclass(frozen=True)
class OccupancyEvent:

    location: int
    task: str
    kind: str
    step_index: int


@dataclass(frozen=True)
class MakespanCheck:
    """Makespan of the scheme against the one replayed from the trace"""

    scheme: Optional[int]
    simulated: Optional[int]
    mismatches: Tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return (
            self.scheme is not None
            and self.scheme == self.simulated
            and not self.mismatches
        )


@dataclass
class VerificationReport:

    verdict: Verdict
    terminal_state: MachineState
    occupancy: List[OccupancyEvent]
    makespan_check: Optional[MakespanCheck] = None
    reason: str = ""
    line: Optional[int] = None
    steps: int = 0
    namespace: FrozenSet[int] = frozenset()

    @property
    def verified(self) -> bool:
        return self.verdict is Verdict.VERIFIED

    def occupancy_by_location(self) -> Dict[int, List[OccupancyEvent]]:

        events: Dict[int, List[OccupancyEvent]] = {}
        for e in self.occupancy:
            events.setdefault(e.location, []).append(e)
        return events

    def to_dict(self) -> dict:

        data: dict = {"verdict": self.verdict.value}
        if self.reason:
            data["reason"] = self.reason
        if self.line is not None:
            data["line"] = self.line
        data["steps"] = self.steps
        if (check := self.makespan_check) is not None:
            data["makespan"] = {
                "scheme": check.scheme,
                "simulated": check.simulated,
                "ok": check.ok,
            }
            if check.mismatches:
                data["makespan"]["mismatches"] = list(check.mismatches)
        data["occupancy"] = {
            f"loc{code:02d}": [f"{e.task} {e.kind}" for e in events]
            for code, events in sorted(self.occupancy_by_location().items())
        }
        data["terminal_state"] = self.terminal_state.to_dict()
        return data


# compile


def _runs(scheme: SchedulingScheme) -> Dict[int, List[List[SchemeRecord]]]:
    """Split each task into runs that hold their car and locations from the start"""

    by_location = scheme.by_location()
    by_car = scheme.by_car()

    def blocked(run: List[SchemeRecord], r: SchemeRecord) -> bool:
        begin = run[0].start
        others = by_location[r.location] + by_car[r.car]
        return any(
            o not in run and o is not r and o.start < r.start and o.end > begin
            for o in others
        )

    runs: Dict[int, List[List[SchemeRecord]]] = {}
    for task, records in sorted(scheme.by_task().items()):
        task_runs: List[List[SchemeRecord]] = []
        for r in records:
            current = task_runs[-1] if task_runs else None
            if (
                current is None
                or current[-1].car != r.car
                or any(c.location == r.location for c in current)
                or blocked(current, r)
            ):
                task_runs.append([r])
            else:
                current.append(r)
        runs[task] = task_runs
    return runs


def compile_scheme(
    scheme: SchedulingScheme, scenario: Optional[ScenarioConfig] = None, name: str = ""
) -> ModelingProgram:
    """Modeling program of a legal scheme

    Raises SchemeError for schemes with overlapping resource use or broken
    precedence, those could never be verified.
    """

    if problems := scheme.violations(scenario):
        raise SchemeError("Scheme cannot be compiled", problems)

    # (time, rank, task, op, part), builder
    events: List[Tuple[Tuple[int, int, int, int, int], tuple, List[SchemeRecord]]] = []
    for task, task_runs in _runs(scheme).items():
        t = f"t{task}"
        for k, run_ in enumerate(task_runs):
            first, last = run_[0], run_[-1]
            car = lang.CarVar(first.car, task)
            items = tuple(
                lang.PlanItem(r.location.code, lang.Num(r.duration)) for r in run_
            )
            bind = lang.Asgn if k == 0 else lang.Att
            events.append(
                ((first.start, _ALLOCATE, task, first.op, 0), (lang.Plan, car, items), run_)
            )
            events.append(
                ((first.start, _ALLOCATE, task, first.op, 1), (bind, t, (car,)), run_)
            )
            for r in run_:
                events.append(((r.end, _EXEC, task, r.op, 0), (lang.Exec1, t), [r]))
            events.append(((last.end, _FREE, task, last.op, 0), (lang.Free, t), [last]))
        all_records = [r for run_ in task_runs for r in run_]
        end = task_runs[-1][-1]
        events.append(((end.end, _COMP, task, end.op, 0), (lang.Comp, t), all_records))

    events.sort(key=lambda e: e[0])

    commands: List[lang.Command] = []
    line_map: Dict[int, List[SchemeRecord]] = {}
    for line, (_, (kind, *args), records) in enumerate(events, start=1):
        if kind is lang.Plan:
            command = lang.Plan(*args, line=line)
        elif kind in (lang.Asgn, lang.Att):
            command = kind(*args, line=line)
        elif kind in (lang.Exec1, lang.Free):
            command = kind(args[0], lang.Num(0), line=line)
        else:
            command = lang.Comp(args[0], line=line)
        commands.append(command)
        line_map[line] = list(records)

    log.debug(
        "Compiled scheme %s: %d records, %d commands",
        name or "<scheme>",
        len(scheme),
        len(commands),
    )
    return ModelingProgram(lang.seq(commands), line_map, scheme, scenario, name)


# verify


def _occupancy(trace: List[TraceEntry]) -> List[OccupancyEvent]:

    events = []
    for i, entry in enumerate(trace):
        task = entry.task or ""
        events.extend(OccupancyEvent(code, task, "allocate", i) for code in entry.allocated)
        events.extend(OccupancyEvent(code, task, "release", i) for code in entry.released)
    return events


def _makespan_check(program: ModelingProgram, trace: List[TraceEntry]) -> MakespanCheck:
    """Replay the exec1 steps of the trace on a clock

    An operation starts when its record starts and completes after the
    duration its released location held in the heap. The completions must
    not overlap the next operation of the task or the next use of the
    location, the simulated makespan is the latest completion.
    """

    assert program.scheme is not None
    try:
        expected: Optional[int] = makespan(program.scheme, program.scenario)
    except SchemeError:
        expected = None

    simulated: Optional[int] = None
    mismatches = []
    task_done: Dict[str, int] = {}
    location_done: Dict[int, int] = {}
    for entry in trace:
        if entry.rule != "exec1" or not entry.released:
            continue
        line = entry.command.line
        records = program.records_at(line)
        if not records:
            continue
        r = records[0]
        code = entry.released[0]
        duration = entry.duration or 0
        if code != r.location.code or duration != r.duration:
            mismatches.append(
                f"line {line}: released loc{code:02d} for {duration}, "
                f"scheme has t{r.task}.{r.op} at {r.location} for {r.duration}"
            )
        task = entry.task or f"t{r.task}"
        if (done := task_done.get(task)) is not None and r.start < done:
            mismatches.append(
                f"line {line}: {task} starts at {r.start}, "
                f"its previous operation completes at {done}"
            )
        if (done := location_done.get(code)) is not None and r.start < done:
            mismatches.append(
                f"line {line}: loc{code:02d} used at {r.start}, released at {done}"
            )
        task_done[task] = location_done[code] = r.start + duration
        simulated = max(simulated or 0, r.start + duration)

    return MakespanCheck(expected, simulated, tuple(mismatches))


def _unfinished(state: MachineState) -> List[str]:

    problems = [
        f"cc{cc} still holds {len(locs)} locations"
        for cc, locs in state.car_heap.items()
    ]
    problems.extend(f"loc{code:02d} still allocated" for code in state.loc_heap)
    problems.extend(
        f"{t} is not finished"
        for t, v in state.tasks.items()
        if v != FIN and v != NULL
    )
    return problems


def verify(
    program: Union[ModelingProgram, lang.Command],
    fuel: Optional[int] = None,
    fuel_factor: int = DEFAULT_FUEL_FACTOR,
) -> VerificationReport:
    """Run a program from the empty state and judge its terminal configuration

    Failures are verdicts, this never raises on program behaviour.
    """

    if not isinstance(program, ModelingProgram):
        program = ModelingProgram(program)

    if fuel is None:
        fuel = fuel_factor * lang.count_commands(program.ast)
    fuel = max(fuel, 1)

    if program.scenario is not None:
        pool: Tuple[int, ...] = tuple(sorted(program.scenario.location_codes()))
        namespace = frozenset(pool)
    else:
        pool = DEFAULT_LOCATION_POOL
        namespace = frozenset()

    result = run(program.ast, fuel=fuel, pool=pool)
    occupancy = _occupancy(result.trace)

    report = VerificationReport(
        Verdict.VERIFIED,
        result.state,
        occupancy,
        steps=result.steps,
        namespace=namespace,
    )
    if program.scheme is not None:
        report.makespan_check = _makespan_check(program, result.trace)

    if result.status is RunStatus.STUCK:
        assert result.stuck is not None
        report.verdict = Verdict.STUCK
        report.reason = result.stuck.reason
        report.line = result.stuck.line
    elif result.status is RunStatus.FUEL_EXHAUSTED:
        report.verdict = Verdict.FUEL_EXHAUSTED
        report.reason = f"no termination within {fuel} steps"
    elif problems := _unfinished(result.state):
        report.verdict = Verdict.INCOMPLETE
        report.reason = "; ".join(problems)

    log.debug(
        "Verification of %s: %s after %d steps %s",
        program.name or "<program>",
        report.verdict.value,
        report.steps,
        report.reason,
    )
    return report


def check_scheme(
    scheme: SchedulingScheme,
    scenario: Optional[ScenarioConfig] = None,
    fuel: Optional[int] = None,
    fuel_factor: int = DEFAULT_FUEL_FACTOR,
    name: str = "",
) -> VerificationReport:
    """Compile and verify a scheme, a verified run must reproduce its makespan"""

    program = compile_scheme(scheme, scenario, name)
    report = verify(program, fuel, fuel_factor)
    check = report.makespan_check
    if report.verified and check is not None and not check.ok:
        raise VerificationError(
            f"Makespan check failed: scheme {check.scheme}, simulated {check.simulated}"
            + (f" ({'; '.join(check.mismatches)})" if check.mismatches else "")
        )
    return report


def write_report(
    report: VerificationReport,
    program: Optional[ModelingProgram],
    directory: PathOrStr,
    stem: str,
) -> List[pathlib.Path]:
    """Write the compiled program and the YAML report for audit"""

    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    if program is not None:
        path = directory / f"{stem}.mljss"
        path.write_text(program.text, encoding="utf-8")
        written.append(path)
    path = directory / f"{stem}.report.yaml"
    with path.open("w", encoding="utf-8") as out:
        yaml.safe_dump(report.to_dict(), out, sort_keys=False)
    written.append(path)
    return written
