"""Parser for the modeling language, LALR grammar with lark"""

import functools
import logging
import pathlib
from typing import Union

from lark import Lark, Token, Transformer, v_args
from lark.exceptions import UnexpectedCharacters, UnexpectedEOF, UnexpectedInput

from jsstools import lang
from jsstools.exceptions import ProgramSyntaxError

PathOrStr = Union[pathlib.Path, str]

log = logging.getLogger(__package__)

GRAMMAR = r"""
    start: block

    block: command*

    ?command: NAME ":=" expr ";"                             -> assign
        | NAME ":=" "{" carexpr "." index "}" ";"            -> lookup
        | "plan" CARVAR "[" item ("," item)* "]" ";"         -> plan
        | "add" CARVAR "[" item "]" ";"                      -> add_loc
        | "asgn" TASKVAR "(" carexpr ("," carexpr)* ")" ";"  -> asgn
        | "att" TASKVAR "(" carexpr ("," carexpr)* ")" ";"   -> att
        | "exec1" TASKVAR "." index ";"                      -> exec1
        | "free" TASKVAR "." index ";"                       -> free
        | "comp" TASKVAR ";"                                 -> comp
        | "skip" ";"                                         -> skip
        | "if" bexpr "then" block "else" block "end" ";"     -> if_cmd
        | "while" bexpr "do" block "done" ";"                -> while_cmd

    item: LOC ":" expr                                       -> loc_item
        | expr                                               -> anon_item

    ?bexpr: bterm
        | bexpr "or" bterm                                   -> or_op
    ?bterm: bfactor
        | bterm "and" bfactor                                -> and_op
    ?bfactor: "not" bfactor                                  -> not_op
        | "true"                                             -> true_const
        | "false"                                            -> false_const
        | expr "=" expr                                      -> eq
        | expr "<=" expr                                     -> le
        | "(" bexpr ")"

    ?expr: product
        | expr "+" product                                   -> plus
        | expr "-" product                                   -> minus
    ?product: atom
        | product "*" atom                                   -> times
    ?atom: INT                                               -> num
        | NAME                                               -> var
        | _LEN carexpr                                       -> car_len
        | _LEN TASKVAR                                       -> task_len
        | "(" expr ")"

    ?index: INT                                              -> num
        | NAME                                               -> var
        | "(" expr ")"

    carexpr: "null"                                          -> car_null
        | CARRES                                             -> car_res
        | CARVAR                                             -> car_var
        | TASKVAR "." index                                  -> car_index

    _LEN.3: "#"
    TASKVAR.2: /t\d+\b/
    CARVAR.2: /c\d+@\d+\b/
    CARRES.2: /cc\d+\b/
    LOC.2: /loc\d+\b/
    NAME: /[a-zA-Z_][a-zA-Z0-9_]*/
    INT: /\d+/
    COMMENT: /#(?=\s|$)[^\n]*/

    %import common.WS
    %ignore WS
    %ignore COMMENT
"""


def _line(meta) -> int:
    return getattr(meta, "line", 0) if not getattr(meta, "empty", True) else 0


def _task(token: Token) -> str:
    return str(token)


def _car_var(token: Token) -> lang.CarVar:
    car, owner = str(token)[1:].split("@")
    return lang.CarVar(int(car), int(owner))


class ProgramTransformer(Transformer):
    """Builds lang AST nodes from the parse tree"""

    def start(self, children):
        return children[0]

    def block(self, children):
        return lang.seq(list(children))

    @v_args(meta=True)
    def assign(self, meta, children):
        name, expr = children
        return lang.Assign(str(name), expr, line=_line(meta))

    @v_args(meta=True)
    def lookup(self, meta, children):
        name, car, index = children
        return lang.Lookup(str(name), car, index, line=_line(meta))

    @v_args(meta=True)
    def plan(self, meta, children):
        car, *items = children
        return lang.Plan(_car_var(car), tuple(items), line=_line(meta))

    @v_args(meta=True)
    def add_loc(self, meta, children):
        car, item = children
        return lang.Add(_car_var(car), item, line=_line(meta))

    @v_args(meta=True)
    def asgn(self, meta, children):
        task, *cars = children
        return lang.Asgn(_task(task), tuple(cars), line=_line(meta))

    @v_args(meta=True)
    def att(self, meta, children):
        task, *cars = children
        return lang.Att(_task(task), tuple(cars), line=_line(meta))

    @v_args(meta=True)
    def exec1(self, meta, children):
        task, index = children
        return lang.Exec1(_task(task), index, line=_line(meta))

    @v_args(meta=True)
    def free(self, meta, children):
        task, index = children
        return lang.Free(_task(task), index, line=_line(meta))

    @v_args(meta=True)
    def comp(self, meta, children):
        (task,) = children
        return lang.Comp(_task(task), line=_line(meta))

    @v_args(meta=True)
    def skip(self, meta, children):
        return lang.Skip(line=_line(meta))

    @v_args(meta=True)
    def if_cmd(self, meta, children):
        cond, then, orelse = children
        return lang.If(cond, then, orelse, line=_line(meta))

    @v_args(meta=True)
    def while_cmd(self, meta, children):
        cond, body = children
        return lang.While(cond, body, line=_line(meta))

    @v_args(inline=True)
    def loc_item(self, loc, value):
        return lang.PlanItem(int(str(loc)[3:]), value)

    @v_args(inline=True)
    def anon_item(self, value):
        return lang.PlanItem(None, value)

    @v_args(inline=True)
    def or_op(self, left, right):
        return lang.BoolOp("or", left, right)

    @v_args(inline=True)
    def and_op(self, left, right):
        return lang.BoolOp("and", left, right)

    @v_args(inline=True)
    def not_op(self, arg):
        return lang.Not(arg)

    def true_const(self, _):
        return lang.BoolConst(True)

    def false_const(self, _):
        return lang.BoolConst(False)

    @v_args(inline=True)
    def eq(self, left, right):
        return lang.Cmp("=", left, right)

    @v_args(inline=True)
    def le(self, left, right):
        return lang.Cmp("<=", left, right)

    @v_args(inline=True)
    def plus(self, left, right):
        return lang.BinOp("+", left, right)

    @v_args(inline=True)
    def minus(self, left, right):
        return lang.BinOp("-", left, right)

    @v_args(inline=True)
    def times(self, left, right):
        return lang.BinOp("*", left, right)

    @v_args(inline=True)
    def num(self, token):
        return lang.Num(int(token))

    @v_args(inline=True)
    def var(self, token):
        return lang.Var(str(token))

    @v_args(inline=True)
    def car_len(self, car):
        return lang.CarLen(car)

    @v_args(inline=True)
    def task_len(self, task):
        return lang.TaskLen(_task(task))

    def car_null(self, _):
        return lang.CarNull()

    @v_args(inline=True)
    def car_res(self, token):
        return lang.CarRes(int(str(token)[2:]))

    @v_args(inline=True)
    def car_var(self, token):
        return _car_var(token)

    @v_args(inline=True)
    def car_index(self, task, index):
        return lang.CarIndex(_task(task), index)


@functools.lru_cache(maxsize=None)
def _parser() -> Lark:
    return Lark(GRAMMAR, parser="lalr", propagate_positions=True)


def parse_program(text: str) -> lang.Command:
    """Parse program text into a command AST"""

    try:
        tree = _parser().parse(text)
    except UnexpectedEOF as exc:
        raise ProgramSyntaxError(f"Unexpected end of program, expected {_expected(exc)}")
    except UnexpectedCharacters as exc:
        raise ProgramSyntaxError(
            f"Unexpected character {text[exc.pos_in_stream]!r}",
            exc.line,
            exc.column,
        )
    except UnexpectedInput as exc:
        token = getattr(exc, "token", None)
        raise ProgramSyntaxError(
            f"Unexpected {token!r}, expected {_expected(exc)}"
            if token is not None
            else str(exc),
            exc.line,
            exc.column,
        )
    return ProgramTransformer().transform(tree)


def _expected(exc: UnexpectedInput) -> str:

    expected = getattr(exc, "expected", None) or getattr(exc, "allowed", None) or []
    return ", ".join(sorted(str(e) for e in expected)) or "nothing"


def read_program(path: PathOrStr) -> lang.Command:

    path = pathlib.Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ProgramSyntaxError(f"Cannot read program {path}: {exc.strerror}")
    return parse_program(text)


def historical_program() -> lang.Command:
    """Hand written modeling program of the historical scheme, tasks t0 and t8"""

    return read_program(pathlib.Path(__file__).with_name("data") / "historical.mljss")
