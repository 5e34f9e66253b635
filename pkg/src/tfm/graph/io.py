"""JSONL event-log serialization.

One event per line, keys in a fixed order::

    {"t":0.0,"i":0,"ev":"node_add","node":17,"kind":"vehicle","s":[...]}
    {"t":12.0,"i":3,"ev":"edge","rel":"follows","u":17,"v":12}
    {"t":12.0,"i":4,"ev":"state","node":17,"s":[8.2,0.4,...]}
    {"t":40.0,"i":0,"ev":"node_remove","node":17}

Floats go through ``repr`` so every value round-trips exactly.
"""
from __future__ import annotations

import io
import json
from pathlib import Path
from typing import IO, Iterable

from .types import (
    EdgeAdd,
    EventLog,
    GraphEvent,
    InteractionEdge,
    NodeAdd,
    NodeKind,
    NodeRemove,
    Relation,
    StateUpdate,
)


class LogFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _num(x: float) -> str:
    return json.dumps(float(x))


def _vec(values: Iterable[float]) -> str:
    return "[" + ",".join(_num(x) for x in values) + "]"


def event_to_json(ev: GraphEvent) -> str:
    head = f'{{"t":{_num(ev.time)},"i":{int(ev.ordinal)},'
    p = ev.payload
    if isinstance(p, EdgeAdd):
        e = p.edge
        return head + f'"ev":"edge","rel":"{e.rel.label}","u":{e.source},"v":{e.target}}}'
    if isinstance(p, StateUpdate):
        return head + f'"ev":"state","node":{p.node},"s":{_vec(p.state)}}}'
    if isinstance(p, NodeAdd):
        return head + f'"ev":"node_add","node":{p.node},"kind":"{p.kind.label}","s":{_vec(p.state)}}}'
    if isinstance(p, NodeRemove):
        return head + f'"ev":"node_remove","node":{p.node}}}'
    raise TypeError(f"unknown payload {p!r}")


def event_from_json(line: str, lineno: int | None = None) -> GraphEvent:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise LogFormatError(f"invalid JSON ({exc.msg})", lineno) from None
    try:
        t = float(obj["t"])
        i = int(obj["i"])
        kind = obj["ev"]
        if kind == "edge":
            payload = EdgeAdd(InteractionEdge(int(obj["u"]), int(obj["v"]), Relation.parse(obj["rel"]), t))
        elif kind == "state":
            payload = StateUpdate(int(obj["node"]), tuple(float(x) for x in obj["s"]))
        elif kind == "node_add":
            payload = NodeAdd(int(obj["node"]), NodeKind.parse(obj["kind"]),
                              tuple(float(x) for x in obj["s"]))
        elif kind == "node_remove":
            payload = NodeRemove(int(obj["node"]))
        else:
            raise LogFormatError(f"unknown event type {kind!r}", lineno)
    except KeyError as exc:
        raise LogFormatError(f"missing key {exc.args[0]!r}", lineno) from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, LogFormatError):
            raise
        raise LogFormatError(str(exc), lineno) from None
    return GraphEvent(t, i, payload)


def write_log(log: EventLog, dest: str | Path | IO[str]) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="\n") as fh:
            write_log(log, fh)
        return
    for ev in log.events:
        dest.write(event_to_json(ev))
        dest.write("\n")


def read_log(src: str | Path | IO[str], step_duration: float = 1.0) -> EventLog:
    if isinstance(src, (str, Path)):
        with open(src, encoding="utf-8") as fh:
            return read_log(fh, step_duration)
    events = []
    for lineno, line in enumerate(src, start=1):
        if line.strip():
            events.append(event_from_json(line, lineno))
    return EventLog(events, step_duration)


def dumps_log(log: EventLog) -> str:
    buf = io.StringIO()
    write_log(log, buf)
    return buf.getvalue()


def loads_log(text: str, step_duration: float = 1.0) -> EventLog:
    return read_log(io.StringIO(text), step_duration)
