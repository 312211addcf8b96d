"""Small step interpreter of the modeling language

The machine state is the quintuple (s_T, s_C, s_L, h_C, h_L):

    tasks       task variable -> null (empty tuple), fin or a tuple of car resources
    cars        car variable (c1@0) -> car resource id
    variables   location and arithmetic variables -> int
    car_heap    car resource id -> tuple of location codes still to execute
    loc_heap    location code -> duration

States are never mutated, every rule returns a new state.
"""

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from jsstools import lang
from jsstools.exceptions import EvalError

log = logging.getLogger(__package__)

NULL: Tuple[int, ...] = ()
FIN = "fin"

DEFAULT_FUEL = 10000
DEFAULT_LOCATION_POOL = tuple(c for c in range(11, 100) if c % 10)

TaskValue = Union[str, Tuple[int, ...]]


@dataclass(frozen=True)
class MachineState:

    tasks: Mapping[str, TaskValue] = field(default_factory=dict)
    cars: Mapping[str, int] = field(default_factory=dict)
    variables: Mapping[str, int] = field(default_factory=dict)
    car_heap: Mapping[int, Tuple[int, ...]] = field(default_factory=dict)
    loc_heap: Mapping[int, int] = field(default_factory=dict)

    def with_task(self, task: str, value: TaskValue) -> "MachineState":
        return replace(self, tasks={**self.tasks, task: value})

    def with_car(self, name: str, cc: int) -> "MachineState":
        return replace(self, cars={**self.cars, name: cc})

    def with_variable(self, name: str, value: int) -> "MachineState":
        return replace(self, variables={**self.variables, name: value})

    @property
    def heaps_empty(self) -> bool:
        return not self.car_heap and not self.loc_heap

    def to_dict(self) -> Dict[str, dict]:
        """Plain rendering with printed names, used by reports"""

        def task_value(v: TaskValue):
            if v == FIN:
                return FIN
            return [f"cc{cc}" for cc in v] if v else "null"

        return {
            "tasks": {t: task_value(v) for t, v in sorted(self.tasks.items())},
            "cars": {c: f"cc{cc}" for c, cc in sorted(self.cars.items())},
            "variables": dict(sorted(self.variables.items())),
            "car_heap": {
                f"cc{cc}": [f"loc{code:02d}" for code in locs]
                for cc, locs in sorted(self.car_heap.items())
            },
            "loc_heap": {
                f"loc{code:02d}": value for code, value in sorted(self.loc_heap.items())
            },
        }


EMPTY_STATE = MachineState()


@dataclass(frozen=True)
class Config:

    command: Optional[lang.Command]
    state: MachineState

    @property
    def terminal(self) -> bool:
        return self.command is None


@dataclass(frozen=True)
class TraceEntry:
    """One labelled transition

    allocated and released list the location codes entering and leaving the
    location heap, duration is the value of a location released by exec1.
    """

    rule: str
    command: lang.Command
    config: Config
    allocated: Tuple[int, ...] = ()
    released: Tuple[int, ...] = ()
    task: Optional[str] = None
    duration: Optional[int] = None


@dataclass(frozen=True)
class Stuck:

    reason: str
    command: lang.Command

    @property
    def line(self) -> int:
        return getattr(self.command, "line", 0)


class RunStatus(enum.Enum):
    TERMINATED = "terminated"
    STUCK = "stuck"
    FUEL_EXHAUSTED = "fuel-exhausted"


@dataclass
class Run:

    status: RunStatus
    config: Config
    trace: List[TraceEntry]
    stuck: Optional[Stuck] = None

    @property
    def state(self) -> MachineState:
        return self.config.state

    @property
    def steps(self) -> int:
        return len(self.trace)


# evaluation


def eval_expr(e: lang.Expr, state: MachineState) -> int:

    if isinstance(e, lang.Num):
        return e.value
    if isinstance(e, lang.Var):
        try:
            return state.variables[e.name]
        except KeyError:
            raise EvalError(f"unbound variable {e.name}")
    if isinstance(e, lang.BinOp):
        left = eval_expr(e.left, state)
        right = eval_expr(e.right, state)
        if e.op == "+":
            return left + right
        if e.op == "-":
            return left - right
        if e.op == "*":
            return left * right
        raise EvalError(f"unknown operator {e.op}")
    if isinstance(e, lang.CarLen):
        cc = resolve_car(e.car, state)
        if cc not in state.car_heap:
            raise EvalError(f"cc{cc} is not a live car resource")
        return len(state.car_heap[cc])
    if isinstance(e, lang.TaskLen):
        value = _task_value(e.task, state)
        if value == FIN:
            return 0
        return sum(len(state.car_heap.get(cc, ())) for cc in value)
    raise EvalError(f"not an expression: {e!r}")


def eval_bool(be: lang.BoolExpr, state: MachineState) -> bool:

    if isinstance(be, lang.BoolConst):
        return be.value
    if isinstance(be, lang.Cmp):
        left = eval_expr(be.left, state)
        right = eval_expr(be.right, state)
        return left == right if be.op == "=" else left <= right
    if isinstance(be, lang.Not):
        return not eval_bool(be.arg, state)
    if isinstance(be, lang.BoolOp):
        if be.op == "and":
            return eval_bool(be.left, state) and eval_bool(be.right, state)
        return eval_bool(be.left, state) or eval_bool(be.right, state)
    raise EvalError(f"not a boolean expression: {be!r}")


def _task_value(task: str, state: MachineState) -> TaskValue:

    try:
        return state.tasks[task]
    except KeyError:
        raise EvalError(f"unbound task {task}")


def resolve_car(ce: lang.CarExpr, state: MachineState) -> int:
    """Car resource id a car expression denotes"""

    if isinstance(ce, lang.CarNull):
        raise EvalError("null does not denote a car resource")
    if isinstance(ce, lang.CarRes):
        return ce.index
    if isinstance(ce, lang.CarVar):
        try:
            return state.cars[ce.name]
        except KeyError:
            raise EvalError(f"unbound car variable {ce.name}")
    if isinstance(ce, lang.CarIndex):
        value = _task_value(ce.task, state)
        if value == FIN:
            raise EvalError(f"{ce.task} is finished")
        index = eval_expr(ce.index, state)
        if not 0 <= index < len(value):
            raise EvalError(f"{ce.task} has no car at index {index}")
        return value[index]
    raise EvalError(f"not a car expression: {ce!r}")


def eval_task(te: lang.TaskExpr, state: MachineState) -> TaskValue:

    if isinstance(te, lang.TaskNull):
        return NULL
    if isinstance(te, lang.TaskFin):
        return FIN
    if isinstance(te, lang.TaskRef):
        return _task_value(te.name, state)
    if isinstance(te, (lang.TaskAppend, lang.TaskConcat)):
        left = eval_task(te.task if isinstance(te, lang.TaskAppend) else te.left, state)
        if isinstance(te, lang.TaskAppend):
            right: TaskValue = (resolve_car(te.car, state),)
        else:
            right = eval_task(te.right, state)
        if left == FIN or right == FIN:
            raise EvalError("cannot extend a finished task")
        return tuple(left) + tuple(right)
    raise EvalError(f"not a task expression: {te!r}")


# transitions


class _Stuck(Exception):
    """Violated precondition inside a rule"""


def _fresh_locations(
    items: Sequence[Tuple[Optional[int], int]],
    loc_heap: Mapping[int, int],
    pool: Sequence[int],
) -> List[int]:

    explicit = [loc for loc, _ in items if loc is not None]
    for loc in explicit:
        if loc in loc_heap:
            raise _Stuck(f"freshness: loc{loc:02d} is already allocated")
    if len(set(explicit)) != len(explicit):
        raise _Stuck("freshness: location planned twice")

    taken = set(loc_heap) | set(explicit)
    free = (code for code in pool if code not in taken)
    codes = []
    for loc, _ in items:
        if loc is None:
            if (loc := next(free, None)) is None:
                raise _Stuck("freshness: no unused location left")
        codes.append(loc)
    return codes


def _attached(state: MachineState, cc: int) -> Optional[str]:

    for task, value in state.tasks.items():
        if value != FIN and cc in value:
            return task
    return None


def _cars(cars: Sequence[lang.CarExpr], state: MachineState) -> Tuple[int, ...]:

    resolved = tuple(resolve_car(ce, state) for ce in cars)
    for cc in resolved:
        if cc not in state.car_heap:
            raise _Stuck(f"cc{cc} is not a planned car resource")
        if (owner := _attached(state, cc)) is not None:
            raise _Stuck(f"cc{cc} is already attached to {owner}")
    if len(set(resolved)) != len(resolved):
        raise _Stuck("car resource attached twice")
    return resolved


def _task_car(task: str, index: lang.Expr, state: MachineState) -> Tuple[int, int]:

    value = _task_value(task, state)
    if value == FIN:
        raise _Stuck(f"{task} is already finished")
    i = eval_expr(index, state)
    if not 0 <= i < len(value):
        raise _Stuck(f"{task} has no car at index {i}")
    return i, value[i]


def _atomic(
    command: lang.Command, state: MachineState, pool: Sequence[int]
) -> Tuple[MachineState, Dict]:
    """Apply an atomic command, returns the new state and trace details"""

    if isinstance(command, lang.Skip):
        return state, {}

    if isinstance(command, lang.Assign):
        return state.with_variable(command.name, eval_expr(command.expr, state)), {}

    if isinstance(command, lang.Lookup):
        cc = resolve_car(command.car, state)
        if cc not in state.car_heap:
            raise _Stuck(f"cc{cc} is not a live car resource")
        i = eval_expr(command.index, state)
        locs = state.car_heap[cc]
        if not 0 <= i < len(locs):
            raise _Stuck(f"cc{cc} has no location at index {i}")
        return state.with_variable(command.name, locs[i]), {}

    if isinstance(command, lang.Plan):
        cc = command.car.car
        if cc in state.car_heap:
            raise _Stuck(f"freshness: cc{cc} is already allocated")
        items = [(item.location, eval_expr(item.value, state)) for item in command.items]
        codes = _fresh_locations(items, state.loc_heap, pool)
        state = replace(
            state,
            car_heap={**state.car_heap, cc: tuple(codes)},
            loc_heap={
                **state.loc_heap,
                **{code: value for code, (_, value) in zip(codes, items)},
            },
        ).with_car(command.car.name, cc)
        return state, {"allocated": tuple(codes), "task": command.car.task}

    if isinstance(command, lang.Add):
        if command.car.name not in state.cars:
            raise _Stuck(f"{command.car.name} is not planned")
        cc = state.cars[command.car.name]
        if cc not in state.car_heap:
            raise _Stuck(f"cc{cc} is not a live car resource")
        value = eval_expr(command.item.value, state)
        (code,) = _fresh_locations([(command.item.location, value)], state.loc_heap, pool)
        state = replace(
            state,
            car_heap={**state.car_heap, cc: state.car_heap[cc] + (code,)},
            loc_heap={**state.loc_heap, code: value},
        )
        return state, {"allocated": (code,), "task": command.car.task}

    if isinstance(command, lang.Asgn):
        current = state.tasks.get(command.task)
        if current is not None and current != NULL:
            raise _Stuck(f"{command.task} is already assigned")
        _cars(command.cars, state)
        value = eval_task(_append(lang.TaskNull(), command.cars), state)
        return state.with_task(command.task, value), {"task": command.task}

    if isinstance(command, lang.Att):
        current = state.tasks.get(command.task)
        if current is None:
            raise _Stuck(f"{command.task} is not assigned")
        if current == FIN:
            raise _Stuck(f"{command.task} is already finished")
        _cars(command.cars, state)
        value = eval_task(_append(lang.TaskRef(command.task), command.cars), state)
        return state.with_task(command.task, value), {"task": command.task}

    if isinstance(command, lang.Exec1):
        _, cc = _task_car(command.task, command.index, state)
        locs = state.car_heap.get(cc)
        if locs is None:
            raise _Stuck(f"cc{cc} is not a live car resource")
        if not locs:
            raise _Stuck(f"executing an empty car cc{cc}")
        head = locs[0]
        if head not in state.loc_heap:
            raise _Stuck(f"loc{head:02d} is not allocated")
        duration = state.loc_heap[head]
        state = replace(
            state,
            car_heap={**state.car_heap, cc: locs[1:]},
            loc_heap={k: v for k, v in state.loc_heap.items() if k != head},
        )
        return state, {"released": (head,), "task": command.task, "duration": duration}

    if isinstance(command, lang.Free):
        i, cc = _task_car(command.task, command.index, state)
        if state.car_heap.get(cc):
            raise _Stuck(f"freeing a non-empty car cc{cc}")
        value = state.tasks[command.task]
        assert value != FIN
        state = replace(
            state, car_heap={k: v for k, v in state.car_heap.items() if k != cc}
        ).with_task(command.task, tuple(value[:i]) + tuple(value[i + 1 :]))
        return state, {"task": command.task}

    if isinstance(command, lang.Comp):
        current = state.tasks.get(command.task)
        if current is None:
            raise _Stuck(f"{command.task} is not assigned")
        if current != NULL:
            raise _Stuck(f"{command.task} still holds cars")
        return state.with_task(command.task, FIN), {"task": command.task}

    raise EvalError(f"not an atomic command: {command!r}")


def _append(te: lang.TaskExpr, cars: Sequence[lang.CarExpr]) -> lang.TaskExpr:

    for ce in cars:
        te = lang.TaskAppend(te, ce)
    return te


def _rule(command: lang.Command) -> str:
    return type(command).__name__.lower()


def step(
    config: Config, pool: Sequence[int] = DEFAULT_LOCATION_POOL
) -> Union[TraceEntry, Stuck]:
    """One transition of a non-terminal configuration

    Exactly one rule applies to every command, precondition violations and
    evaluation errors make the configuration stuck.
    """

    command = config.command
    if command is None:
        raise ValueError("terminal configuration has no transition")
    state = config.state

    try:
        if isinstance(command, lang.Seq):
            inner = step(Config(command.first, state), pool)
            if isinstance(inner, Stuck):
                return inner
            rest = inner.config.command
            next_command = command.second if rest is None else lang.Seq(rest, command.second)
            return replace(inner, config=Config(next_command, inner.config.state))

        if isinstance(command, lang.If):
            taken = eval_bool(command.cond, state)
            return TraceEntry(
                "if-true" if taken else "if-false",
                command,
                Config(command.then if taken else command.orelse, state),
            )

        if isinstance(command, lang.While):
            if eval_bool(command.cond, state):
                return TraceEntry(
                    "while-true", command, Config(lang.Seq(command.body, command), state)
                )
            return TraceEntry("while-false", command, Config(None, state))

        new_state, details = _atomic(command, state, pool)
        return TraceEntry(_rule(command), command, Config(None, new_state), **details)

    except _Stuck as exc:
        return Stuck(str(exc), _current(command))
    except EvalError as exc:
        return Stuck(str(exc), _current(command))


def _current(command: lang.Command) -> lang.Command:
    """Innermost command about to execute"""

    while isinstance(command, lang.Seq):
        command = command.first
    return command


def run(
    program: lang.Command,
    state: Optional[MachineState] = None,
    fuel: int = DEFAULT_FUEL,
    pool: Sequence[int] = DEFAULT_LOCATION_POOL,
) -> Run:
    """Iterate step until the program terminates, gets stuck or runs out of fuel"""

    if fuel <= 0:
        raise ValueError(f"fuel must be positive, not {fuel}")

    config = Config(program, EMPTY_STATE if state is None else state)
    trace: List[TraceEntry] = []
    while not config.terminal:
        if len(trace) >= fuel:
            log.debug("Fuel exhausted after %d steps", len(trace))
            return Run(RunStatus.FUEL_EXHAUSTED, config, trace)
        result = step(config, pool)
        if isinstance(result, Stuck):
            log.debug(
                "Stuck at line %d (%s): %s",
                result.line,
                lang.format_command(result.command),
                result.reason,
            )
            return Run(RunStatus.STUCK, config, trace, result)
        trace.append(result)
        config = result.config

    return Run(RunStatus.TERMINATED, config, trace)


def check_separation(state: MachineState) -> List[str]:
    """Violations of the disjointness of the car footprints"""

    problems = []
    owner: Dict[int, int] = {}
    for cc, locs in sorted(state.car_heap.items()):
        for code in locs:
            if code in owner:
                problems.append(f"loc{code:02d} on cc{owner[code]} and cc{cc}")
            else:
                owner[code] = cc
            if code not in state.loc_heap:
                problems.append(f"loc{code:02d} on cc{cc} is not allocated")

    holder: Dict[int, str] = {}
    for task, value in sorted(state.tasks.items()):
        if value == FIN:
            continue
        for cc in value:
            if cc in holder:
                problems.append(f"cc{cc} attached to {holder[cc]} and {task}")
            holder[cc] = task
    return problems
