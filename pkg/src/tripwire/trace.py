"""Trace language: event types and the line-oriented parser.

Traces are straight-line programs, one event per line, that model the
application under test: stack pushes/pops, heap traffic through named
variables, register and global stores, and external calls. The parser
assigns dense 0-based event ids in file order and statically validates
variable bindings and stack depth so execution never sees an unbound
name or an impossible pop.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

from .errors import StackUnderflow, TraceSyntaxError, UnboundVariable


class EventKind(enum.Enum):
    STACK_PUSH = "stack_push"
    STACK_POP = "stack_pop"
    MALLOC = "malloc"
    FREE = "free"
    WRITE = "write"
    WRITE_ABS = "writeabs"
    READ = "read"
    REG_SET = "reg"
    GLOBAL_SET = "global"
    EXT_CALL = "call"
    END = "end"


_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


@dataclass(frozen=True)
class ValueExpr:
    """Right-hand side of a reg/global store: a literal or var+delta."""

    var: str | None = None
    delta: int = 0
    literal: int | None = None


@dataclass(frozen=True)
class TraceEvent:
    id: int
    kind: EventKind
    line_no: int
    var: str | None = None
    size: int | None = None
    offset: int | None = None
    delta: int | None = None
    length: int | None = None
    fill: int | None = None
    frame: str | None = None
    reg: str | None = None
    index: int | None = None
    value: ValueExpr | None = None
    call_name: str | None = None
    call_args: tuple[str, ...] = field(default=())


def _parse_int(token: str, line_no: int, what: str) -> int:
    try:
        return int(token, 0)
    except ValueError:
        raise TraceSyntaxError(line_no, f"{what} must be an integer, got {token!r}")


def _parse_uint(token: str, line_no: int, what: str, minimum: int = 0) -> int:
    value = _parse_int(token, line_no, what)
    if value < minimum:
        raise TraceSyntaxError(line_no, f"{what} must be >= {minimum}, got {value}")
    return value


def _require_name(token: str, line_no: int, what: str) -> str:
    if not _NAME_RE.match(token):
        raise TraceSyntaxError(line_no, f"{what} must be an identifier, got {token!r}")
    return token


def _parse_fill(token: str, line_no: int) -> int:
    if len(token) != 2:
        raise TraceSyntaxError(line_no, f"fill byte must be two hex digits, got {token!r}")
    try:
        return int(token, 16)
    except ValueError:
        raise TraceSyntaxError(line_no, f"fill byte must be two hex digits, got {token!r}")


def _parse_value_expr(token: str, line_no: int, bound: set[str]) -> ValueExpr:
    if token[0].isdigit():
        return ValueExpr(literal=_parse_uint(token, line_no, "literal value"))
    name, plus, delta = token.partition("+")
    _require_name(name, line_no, "variable")
    if name not in bound:
        raise UnboundVariable(line_no, f"use of unbound variable {name!r}")
    offset = _parse_uint(delta, line_no, "delta") if plus else 0
    return ValueExpr(var=name, delta=offset)


def _parse_var_delta(token: str, line_no: int, bound: set[str]) -> tuple[str, int]:
    m = re.match(r"([A-Za-z_][A-Za-z0-9_]*)([+-])([0-9][0-9xXa-fA-F]*)\Z", token)
    if not m:
        raise TraceSyntaxError(line_no, f"expected <var>(+|-)<delta>, got {token!r}")
    name, sign, magnitude = m.groups()
    if name not in bound:
        raise UnboundVariable(line_no, f"use of unbound variable {name!r}")
    delta = _parse_uint(magnitude, line_no, "delta")
    return name, delta if sign == "+" else -delta


def parse_trace(text: str) -> list[TraceEvent]:
    """Parse trace source into events with dense 0-based ids.

    Rejects malformed lines with the line number and reason. An empty
    source yields an empty list, which the engine treats as an
    immediate end-of-trace.
    """
    events: list[TraceEvent] = []
    bound: set[str] = set()
    depth = 0

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        keyword = tokens[0]
        args = tokens[1:]
        eid = len(events)

        def need(n: int, form: str):
            if len(args) != n:
                raise TraceSyntaxError(line_no, f"expected `{form}`, got {line!r}")

        if keyword == "stack":
            if args[:1] == ["push"]:
                need(2, "stack push <name>")
                frame = _require_name(args[1], line_no, "frame name")
                events.append(TraceEvent(eid, EventKind.STACK_PUSH, line_no, frame=frame))
                depth += 1
            elif args[:1] == ["pop"]:
                need(1, "stack pop")
                if depth == 0:
                    raise StackUnderflow(line_no, "stack pop on empty stack")
                depth -= 1
                events.append(TraceEvent(eid, EventKind.STACK_POP, line_no))
            else:
                raise TraceSyntaxError(line_no, f"expected `stack push|pop`, got {line!r}")
        elif keyword == "malloc":
            need(2, "malloc <var> <size>")
            var = _require_name(args[0], line_no, "variable")
            size = _parse_uint(args[1], line_no, "size", minimum=1)
            events.append(TraceEvent(eid, EventKind.MALLOC, line_no, var=var, size=size))
            bound.add(var)
        elif keyword == "free":
            need(1, "free <var>")
            var = _require_name(args[0], line_no, "variable")
            if var not in bound:
                raise UnboundVariable(line_no, f"free of unbound variable {var!r}")
            events.append(TraceEvent(eid, EventKind.FREE, line_no, var=var))
        elif keyword == "write":
            need(4, "write <var> <offset> <len> <bytehex>")
            var = _require_name(args[0], line_no, "variable")
            if var not in bound:
                raise UnboundVariable(line_no, f"write to unbound variable {var!r}")
            offset = _parse_uint(args[1], line_no, "offset")
            length = _parse_uint(args[2], line_no, "length", minimum=1)
            fill = _parse_fill(args[3], line_no)
            events.append(
                TraceEvent(eid, EventKind.WRITE, line_no, var=var, offset=offset, length=length, fill=fill)
            )
        elif keyword == "writeabs":
            need(3, "writeabs <var>(+|-)<delta> <len> <bytehex>")
            var, delta = _parse_var_delta(args[0], line_no, bound)
            length = _parse_uint(args[1], line_no, "length", minimum=1)
            fill = _parse_fill(args[2], line_no)
            events.append(
                TraceEvent(eid, EventKind.WRITE_ABS, line_no, var=var, delta=delta, length=length, fill=fill)
            )
        elif keyword == "read":
            need(3, "read <var> <offset> <len>")
            var = _require_name(args[0], line_no, "variable")
            if var not in bound:
                raise UnboundVariable(line_no, f"read of unbound variable {var!r}")
            offset = _parse_uint(args[1], line_no, "offset")
            length = _parse_uint(args[2], line_no, "length", minimum=1)
            events.append(TraceEvent(eid, EventKind.READ, line_no, var=var, offset=offset, length=length))
        elif keyword == "reg":
            if len(args) != 3 or args[1] != "=":
                raise TraceSyntaxError(line_no, f"expected `reg <name> = <value>`, got {line!r}")
            reg = _require_name(args[0], line_no, "register name")
            value = _parse_value_expr(args[2], line_no, bound)
            events.append(TraceEvent(eid, EventKind.REG_SET, line_no, reg=reg, value=value))
        elif keyword == "global":
            if len(args) != 3 or args[1] != "=":
                raise TraceSyntaxError(line_no, f"expected `global <index> = <value>`, got {line!r}")
            index = _parse_uint(args[0], line_no, "global index")
            value = _parse_value_expr(args[2], line_no, bound)
            events.append(TraceEvent(eid, EventKind.GLOBAL_SET, line_no, index=index, value=value))
        elif keyword == "call":
            if not args:
                raise TraceSyntaxError(line_no, "expected `call <name> [<arg> ...]`")
            name = _require_name(args[0], line_no, "call name")
            events.append(
                TraceEvent(eid, EventKind.EXT_CALL, line_no, call_name=name, call_args=tuple(args[1:]))
            )
        elif keyword == "end":
            need(0, "end")
            events.append(TraceEvent(eid, EventKind.END, line_no))
        else:
            raise TraceSyntaxError(line_no, f"unknown event {keyword!r}")

    return events
