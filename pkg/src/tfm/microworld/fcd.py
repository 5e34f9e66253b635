"""Reader for SUMO floating-car-data (FCD) XML.

Only ``<timestep time=...>`` and the ``id``, ``speed``, ``lane`` and ``pos``
attributes of its ``<vehicle>`` children are used; anything else is ignored.
Acceleration is the forward difference of speed, (v[k+1] - v[k]) / dt, which
matches the oracle's convention that a point's acceleration is the one
applied over the following tick. A vehicle's last point repeats the previous
difference, and a single-point vehicle gets 0.
"""
from __future__ import annotations

import io
import xml.sax
from pathlib import Path
from typing import IO, Union

import numpy as np

from .oracle import TrajectoryPoint, Trajectories


class FcdError(ValueError):
    def __init__(self, message: str, line: int | None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MalformedXml(FcdError):
    pass


class MissingAttribute(FcdError):
    pass


_VEHICLE_ATTRS = ("id", "speed", "lane", "pos")


class _Handler(xml.sax.ContentHandler):
    def __init__(self) -> None:
        super().__init__()
        self.locator = None
        self.time: float | None = None
        self.times: list[float] = []
        self.raw: dict[str, list[tuple[float, str, float, float]]] = {}

    def setDocumentLocator(self, locator) -> None:
        self.locator = locator

    def _line(self) -> int | None:
        return self.locator.getLineNumber() if self.locator is not None else None

    def _number(self, attrs, name: str) -> float:
        try:
            value = float(attrs[name])
        except ValueError:
            raise MalformedXml(f"attribute {name}={attrs[name]!r} is not a number", self._line()) from None
        if not np.isfinite(value):
            raise MalformedXml(f"attribute {name} is not finite", self._line())
        return value

    def startElement(self, name, attrs) -> None:
        if name == "timestep":
            if "time" not in attrs:
                raise MissingAttribute("<timestep> without a time attribute", self._line())
            self.time = self._number(attrs, "time")
            if self.times and self.time <= self.times[-1]:
                raise MalformedXml(f"timestep {self.time} does not increase", self._line())
            self.times.append(self.time)
        elif name == "vehicle":
            if self.time is None:
                raise MalformedXml("<vehicle> outside a <timestep>", self._line())
            for key in _VEHICLE_ATTRS:
                if key not in attrs:
                    raise MissingAttribute(f"<vehicle> without a {key} attribute", self._line())
            self.raw.setdefault(attrs["id"], []).append(
                (self.time, attrs["lane"], self._number(attrs, "pos"), self._number(attrs, "speed")))

    def endElement(self, name) -> None:
        if name == "timestep":
            self.time = None


def import_fcd(source: Union[str, Path, IO[bytes], IO[str]]) -> Trajectories:
    """Parse FCD XML from a path or an open file into trajectories."""
    handler = _Handler()
    try:
        if isinstance(source, (str, Path)):
            with open(source, "rb") as fh:
                xml.sax.parse(fh, handler)
        else:
            data = source.read()
            if isinstance(data, str):
                data = data.encode("utf-8")
            xml.sax.parse(io.BytesIO(data), handler)
    except xml.sax.SAXParseException as exc:
        raise MalformedXml(exc.getMessage(), exc.getLineNumber()) from None
    times = handler.times
    tick = float(np.median(np.diff(times))) if len(times) > 1 else 1.0
    traj = Trajectories(tick=tick, times=list(times))
    for vid, rows in handler.raw.items():
        speeds = [r[3] for r in rows]
        pts = []
        for k, (t, lane, pos, v) in enumerate(rows):
            if k + 1 < len(rows):
                acc = (speeds[k + 1] - v) / (rows[k + 1][0] - t)
            elif k > 0:
                acc = (v - speeds[k - 1]) / (t - rows[k - 1][0])
            else:
                acc = 0.0
            pts.append(TrajectoryPoint(t, lane, pos, v, acc))
        traj.vehicles[vid] = pts
    return traj
