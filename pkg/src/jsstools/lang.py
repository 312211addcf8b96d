"""Abstract syntax of the modeling language

Programs describe how a scheme uses its resources: car resources carry a
sequence of locations, locations carry operation durations. Concrete syntax:

    x := e;                         x := {ce.e};
    plan c1@0 [loc11: 3, 2];        add c1@0 [loc30: 4];
    asgn t0 (c1@0);                 att t8 (c1@8);
    exec1 t0.0;   free t0.0;   comp t0;   skip;
    if be then ... else ... end;    while be do ... done;

    e  := n | x | e + e | e - e | e * e | #ce | #t0 | (e)
    be := e = e | e <= e | true | false | not be | be and be | be or be
    ce := null | cc1 | c1@0 | t0.e

c1@0 names car 1 planned for task t0, cc1 is the car resource it is bound
to. A plan item is either an explicit location (loc11: e) or a bare duration,
which is placed at the least unused location. Lines starting with '# ' are
comments.
"""

from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple, Union

# expressions


@dataclass(frozen=True)
class Num:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class CarLen:
    """Number of locations left on a car"""

    car: "CarExpr"


@dataclass(frozen=True)
class TaskLen:
    """Number of locations left on all cars of a task"""

    task: str


Expr = Union[Num, Var, BinOp, CarLen, TaskLen]


# boolean expressions


@dataclass(frozen=True)
class Cmp:
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class BoolConst:
    value: bool


@dataclass(frozen=True)
class Not:
    arg: "BoolExpr"


@dataclass(frozen=True)
class BoolOp:
    op: str
    left: "BoolExpr"
    right: "BoolExpr"


BoolExpr = Union[Cmp, BoolConst, Not, BoolOp]


# car expressions


@dataclass(frozen=True)
class CarNull:
    pass


@dataclass(frozen=True)
class CarRes:
    index: int


@dataclass(frozen=True, order=True)
class CarVar:
    car: int
    owner: int

    @property
    def name(self) -> str:
        return f"c{self.car}@{self.owner}"

    @property
    def task(self) -> str:
        return f"t{self.owner}"


@dataclass(frozen=True)
class CarIndex:
    task: str
    index: Expr


CarExpr = Union[CarNull, CarRes, CarVar, CarIndex]


# task expressions


@dataclass(frozen=True)
class TaskNull:
    pass


@dataclass(frozen=True)
class TaskFin:
    pass


@dataclass(frozen=True)
class TaskRef:
    name: str


@dataclass(frozen=True)
class TaskAppend:
    task: "TaskExpr"
    car: CarExpr


@dataclass(frozen=True)
class TaskConcat:
    left: "TaskExpr"
    right: "TaskExpr"


TaskExpr = Union[TaskNull, TaskFin, TaskRef, TaskAppend, TaskConcat]


# commands, line is the source line and not part of the value


@dataclass(frozen=True)
class PlanItem:
    location: Optional[int]
    value: Expr


@dataclass(frozen=True)
class Skip:
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Assign:
    name: str
    expr: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Lookup:
    """x := {ce.e}, the e-th location of a car"""

    name: str
    car: CarExpr
    index: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Plan:
    car: CarVar
    items: Tuple[PlanItem, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Add:
    car: CarVar
    item: PlanItem
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Asgn:
    task: str
    cars: Tuple[CarExpr, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Att:
    task: str
    cars: Tuple[CarExpr, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Exec1:
    task: str
    index: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Free:
    task: str
    index: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Comp:
    task: str
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Seq:
    first: "Command"
    second: "Command"

    @property
    def line(self) -> int:
        return self.first.line


@dataclass(frozen=True)
class If:
    cond: BoolExpr
    then: "Command"
    orelse: "Command"
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class While:
    cond: BoolExpr
    body: "Command"
    line: int = field(default=0, compare=False)


Command = Union[
    Skip, Assign, Lookup, Plan, Add, Asgn, Att, Exec1, Free, Comp, Seq, If, While
]


def seq(commands: List[Command]) -> Command:
    """Right folded sequence, skip for no commands"""

    if not commands:
        return Skip()
    result = commands[-1]
    for c in reversed(commands[:-1]):
        result = Seq(c, result)
    return result


def flatten(command: Command) -> Iterator[Command]:
    """Top level commands of a sequence"""

    if isinstance(command, Seq):
        yield from flatten(command.first)
        yield from flatten(command.second)
    else:
        yield command


def count_commands(command: Command) -> int:
    """Number of commands, loop and branch bodies included"""

    if isinstance(command, Seq):
        return count_commands(command.first) + count_commands(command.second)
    if isinstance(command, If):
        return 1 + count_commands(command.then) + count_commands(command.orelse)
    if isinstance(command, While):
        return 1 + count_commands(command.body)
    return 1


def task_of(command: Command) -> Optional[str]:
    """Task a command acts on, plans and adds act for the owner of the car"""

    if isinstance(command, (Plan, Add)):
        return command.car.task
    return getattr(command, "task", None)


# printer


def format_expr(e: Expr, nested: bool = False) -> str:

    if isinstance(e, Num):
        return str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, CarLen):
        return "#" + format_car(e.car)
    if isinstance(e, TaskLen):
        return "#" + e.task
    if isinstance(e, BinOp):
        text = f"{format_expr(e.left, True)} {e.op} {format_expr(e.right, True)}"
        return f"({text})" if nested else text
    raise TypeError(f"Not an expression: {e!r}")


def _index(e: Expr) -> str:

    if isinstance(e, (Num, Var)):
        return format_expr(e)
    return f"({format_expr(e)})"


def format_car(ce: CarExpr) -> str:

    if isinstance(ce, CarNull):
        return "null"
    if isinstance(ce, CarRes):
        return f"cc{ce.index}"
    if isinstance(ce, CarVar):
        return ce.name
    if isinstance(ce, CarIndex):
        return f"{ce.task}.{_index(ce.index)}"
    raise TypeError(f"Not a car expression: {ce!r}")


def format_bool(be: BoolExpr, nested: bool = False) -> str:

    if isinstance(be, BoolConst):
        return "true" if be.value else "false"
    if isinstance(be, Cmp):
        return f"{format_expr(be.left)} {be.op} {format_expr(be.right)}"
    if isinstance(be, Not):
        return f"not {format_bool(be.arg, True)}"
    if isinstance(be, BoolOp):
        text = f"{format_bool(be.left, True)} {be.op} {format_bool(be.right, True)}"
        return f"({text})" if nested else text
    raise TypeError(f"Not a boolean expression: {be!r}")


def format_item(item: PlanItem) -> str:

    if item.location is None:
        return format_expr(item.value)
    return f"loc{item.location:02d}: {format_expr(item.value)}"


def format_lines(command: Command, indent: int = 0) -> List[str]:
    """One line per atomic command"""

    pad = "  " * indent
    if isinstance(command, Seq):
        return format_lines(command.first, indent) + format_lines(command.second, indent)
    if isinstance(command, If):
        return (
            [f"{pad}if {format_bool(command.cond)} then"]
            + format_lines(command.then, indent + 1)
            + [f"{pad}else"]
            + format_lines(command.orelse, indent + 1)
            + [f"{pad}end;"]
        )
    if isinstance(command, While):
        return (
            [f"{pad}while {format_bool(command.cond)} do"]
            + format_lines(command.body, indent + 1)
            + [f"{pad}done;"]
        )
    return [pad + format_command(command)]


def format_command(command: Command) -> str:

    if isinstance(command, Skip):
        return "skip;"
    if isinstance(command, Assign):
        return f"{command.name} := {format_expr(command.expr)};"
    if isinstance(command, Lookup):
        return (
            f"{command.name} := {{{format_car(command.car)}.{_index(command.index)}}};"
        )
    if isinstance(command, Plan):
        items = ", ".join(format_item(i) for i in command.items)
        return f"plan {command.car.name} [{items}];"
    if isinstance(command, Add):
        return f"add {command.car.name} [{format_item(command.item)}];"
    if isinstance(command, (Asgn, Att)):
        kind = "asgn" if isinstance(command, Asgn) else "att"
        cars = ", ".join(format_car(c) for c in command.cars)
        return f"{kind} {command.task} ({cars});"
    if isinstance(command, Exec1):
        return f"exec1 {command.task}.{_index(command.index)};"
    if isinstance(command, Free):
        return f"free {command.task}.{_index(command.index)};"
    if isinstance(command, Comp):
        return f"comp {command.task};"
    return "\n".join(format_lines(command))


def format_program(command: Command) -> str:

    return "\n".join(format_lines(command)) + "\n"
