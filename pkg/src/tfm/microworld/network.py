"""Road networks and demand schedules for the micro-world, with JSON I/O.

Network JSON::

    {"topology": {"type": "ring", "circumference": 1000.0, "lanes": 1, "segments": 1},
     "roads":  [{"id": "r0", "length": 1000.0, "lanes": ["r0_0"]}],
     "lanes":  [{"id": "r0_0", "road": "r0", "length": 1000.0, "successors": ["r0_0"]}],
     "lights": [{"id": "tl0", "lanes": ["r0_0"], "green": 30.0, "red": 30.0, "offset": 0.0}]}

Demand JSON::

    [{"depart": 0.0, "origin": "r0_0", "destination": null, "desired_speed": 13.9}, ...]

A vehicle without a destination circulates until the run ends.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class Lane:
    id: str
    road: str
    length: float
    successors: tuple[str, ...] = ()


@dataclass(frozen=True)
class Road:
    id: str
    length: float
    lanes: tuple[str, ...]


@dataclass(frozen=True)
class Light:
    """Fixed-cycle signal: green for ``green`` s, then red for ``red`` s, shifted by ``offset``."""

    id: str
    lanes: tuple[str, ...]
    green: float
    red: float
    offset: float = 0.0

    @property
    def cycle(self) -> float:
        return self.green + self.red

    def phase(self, t: float) -> tuple[bool, float]:
        """(is_green, seconds spent in the current phase) at time ``t``."""
        c = (t + self.offset) % self.cycle
        if c < self.green:
            return True, c
        return False, c - self.green


@dataclass
class RoadNetwork:
    roads: list[Road]
    lanes: list[Lane]
    lights: list[Light] = field(default_factory=list)
    topology: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.lane_map = {l.id: l for l in self.lanes}
        self.road_map = {r.id: r for r in self.roads}
        self.light_of: dict[str, Light] = {}
        for light in self.lights:
            for lane in light.lanes:
                self.light_of[lane] = light
        self.predecessors: dict[str, list[str]] = {l.id: [] for l in self.lanes}
        for l in self.lanes:
            for s in l.successors:
                if s in self.predecessors:
                    self.predecessors[s].append(l.id)

    def validate(self) -> None:
        if len(self.lane_map) != len(self.lanes):
            raise NetworkError("duplicate lane ids")
        if len(self.road_map) != len(self.roads):
            raise NetworkError("duplicate road ids")
        for lane in self.lanes:
            if not lane.length > 0:
                raise NetworkError(f"lane {lane.id} has non-positive length")
            if lane.road not in self.road_map:
                raise NetworkError(f"lane {lane.id} references unknown road {lane.road}")
            for s in lane.successors:
                if s not in self.lane_map:
                    raise NetworkError(f"lane {lane.id} has unknown successor {s}")
        for road in self.roads:
            for lid in road.lanes:
                if lid not in self.lane_map:
                    raise NetworkError(f"road {road.id} lists unknown lane {lid}")
        for light in self.lights:
            if not light.lanes:
                raise NetworkError(f"light {light.id} controls no lane")
            for lid in light.lanes:
                if lid not in self.lane_map:
                    raise NetworkError(f"light {light.id} controls unknown lane {lid}")
            if light.green <= 0 or light.red <= 0:
                raise NetworkError(f"light {light.id} needs positive green and red durations")
        if self.lanes and not self._weakly_connected():
            raise NetworkError("lane successor graph is not connected")

    def _weakly_connected(self) -> bool:
        adj: dict[str, set[str]] = {l.id: set() for l in self.lanes}
        for l in self.lanes:
            for s in l.successors:
                adj[l.id].add(s)
                adj[s].add(l.id)
        start = self.lanes[0].id
        seen = {start}
        todo = [start]
        while todo:
            for nxt in adj[todo.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    todo.append(nxt)
        return len(seen) == len(self.lanes)

    @property
    def total_lane_km(self) -> float:
        return sum(l.length for l in self.lanes) / 1000.0

    def route(self, origin: str, destination: str) -> list[str]:
        """Fewest-lane path from ``origin`` to ``destination`` (both included); BFS, ties by list order."""
        if origin == destination:
            return [origin]
        prev: dict[str, str] = {origin: origin}
        todo = deque([origin])
        while todo:
            cur = todo.popleft()
            for nxt in self.lane_map[cur].successors:
                if nxt not in prev:
                    prev[nxt] = cur
                    if nxt == destination:
                        path = [nxt]
                        while path[-1] != origin:
                            path.append(prev[path[-1]])
                        return path[::-1]
                    todo.append(nxt)
        raise NetworkError(f"no route from {origin} to {destination}")

    # ------------------------------------------------------------------ JSON

    def to_json(self) -> dict[str, Any]:
        return {
            "topology": self.topology,
            "roads": [{"id": r.id, "length": r.length, "lanes": list(r.lanes)} for r in self.roads],
            "lanes": [{"id": l.id, "road": l.road, "length": l.length, "successors": list(l.successors)}
                      for l in self.lanes],
            "lights": [{"id": g.id, "lanes": list(g.lanes), "green": g.green, "red": g.red,
                        "offset": g.offset} for g in self.lights],
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "RoadNetwork":
        try:
            net = cls(
                roads=[Road(r["id"], float(r["length"]), tuple(r["lanes"])) for r in data["roads"]],
                lanes=[Lane(l["id"], l["road"], float(l["length"]), tuple(l.get("successors", ())))
                       for l in data["lanes"]],
                lights=[Light(g["id"], tuple(g["lanes"]), float(g["green"]), float(g["red"]),
                              float(g.get("offset", 0.0))) for g in data.get("lights", [])],
                topology=dict(data.get("topology", {})),
            )
        except (KeyError, TypeError) as exc:
            raise NetworkError(f"malformed network document: {exc!r}") from None
        net.validate()
        return net

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "RoadNetwork":
        return cls.from_json(_read_json(path))


def _read_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path} is not valid JSON: {exc}") from None


def ring(circumference: float = 1000.0, lanes: int = 1, segments: int = 1, lights: int = 0,
         green: float = 30.0, red: float = 30.0) -> RoadNetwork:
    """Closed loop of ``segments`` roads with ``lanes`` parallel lanes each.

    Lane ``j`` of a road feeds lane ``j`` of the next road (no lane changes).
    ``lights`` signals are placed at the ends of evenly spaced roads.
    """
    if circumference <= 0 or lanes < 1 or segments < 1:
        raise NetworkError("ring needs positive circumference, lanes and segments")
    if lights > segments:
        raise NetworkError("at most one light per segment")
    seg = circumference / segments
    roads, lane_list = [], []
    for i in range(segments):
        nxt = (i + 1) % segments
        ids = tuple(f"r{i}_{j}" for j in range(lanes))
        roads.append(Road(f"r{i}", seg, ids))
        for j in range(lanes):
            lane_list.append(Lane(f"r{i}_{j}", f"r{i}", seg, (f"r{nxt}_{j}",)))
    light_list = []
    for k in range(lights):
        i = (k * segments) // lights
        light_list.append(Light(f"tl{k}", tuple(f"r{i}_{j}" for j in range(lanes)), green, red,
                                offset=float(k) * (green + red) / max(lights, 1)))
    net = RoadNetwork(roads, lane_list, light_list,
                      {"type": "ring", "circumference": circumference, "lanes": lanes, "segments": segments})
    net.validate()
    return net


def grid(rows: int = 3, cols: int = 3, block: float = 200.0, green: float = 30.0,
         red: float = 30.0) -> RoadNetwork:
    """Intersections on a rows x cols lattice joined by one-lane roads in both directions.

    Every intersection with more than two approaches gets a pair of signals:
    one for north-south approaches and one for east-west approaches, in
    opposite phase. Lanes may continue to any outgoing lane; U-turns are only
    allowed at intersections with at most two approaches, which keeps a 2 x 2
    grid connected.
    """
    if rows < 1 or cols < 1 or rows * cols < 2 or block <= 0:
        raise NetworkError("grid needs at least two intersections and a positive block length")
    nodes = [(r, c) for r in range(rows) for c in range(cols)]
    links = []
    for r, c in nodes:
        for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < rows and 0 <= cc < cols:
                links.append(((r, c), (rr, cc)))
    name = {ln: f"e{ln[0][0]}{ln[0][1]}_{ln[1][0]}{ln[1][1]}" for ln in links}
    outgoing: dict[tuple[int, int], list] = {n: [] for n in nodes}
    incoming: dict[tuple[int, int], list] = {n: [] for n in nodes}
    for ln in links:
        outgoing[ln[0]].append(ln)
        incoming[ln[1]].append(ln)
    roads, lanes = [], []
    for ln in links:
        rid = name[ln]
        corner = len(incoming[ln[1]]) <= 2
        succ = tuple(f"{name[o]}_0" for o in outgoing[ln[1]] if corner or o[1] != ln[0])
        roads.append(Road(rid, block, (f"{rid}_0",)))
        lanes.append(Lane(f"{rid}_0", rid, block, succ))
    lights = []
    for n in nodes:
        if len(incoming[n]) <= 2:
            continue
        ns = tuple(f"{name[ln]}_0" for ln in incoming[n] if ln[0][1] == n[1])
        ew = tuple(f"{name[ln]}_0" for ln in incoming[n] if ln[0][0] == n[0])
        cycle = green + red
        if ns:
            lights.append(Light(f"tl{n[0]}{n[1]}_ns", ns, green, red, 0.0))
        if ew:
            # opposite phase: green while the north-south signal is red
            lights.append(Light(f"tl{n[0]}{n[1]}_ew", ew, red, green, (cycle - green) % cycle))
    net = RoadNetwork(roads, lanes, lights, {"type": "grid", "rows": rows, "cols": cols, "block": block})
    net.validate()
    return net


@dataclass(frozen=True)
class Departure:
    depart: float
    origin: str
    destination: Optional[str] = None
    desired_speed: float = 13.9


@dataclass
class DemandSchedule:
    departures: list[Departure] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.departures)

    def validate(self, network: RoadNetwork) -> None:
        last = float("-inf")
        for i, d in enumerate(self.departures):
            if d.depart < last:
                raise NetworkError(f"departure {i} at {d.depart} is earlier than its predecessor")
            last = d.depart
            if d.origin not in network.lane_map:
                raise NetworkError(f"departure {i}: unknown origin lane {d.origin}")
            if d.destination is not None and d.destination not in network.lane_map:
                raise NetworkError(f"departure {i}: unknown destination lane {d.destination}")
            if not d.desired_speed > 0:
                raise NetworkError(f"departure {i}: desired speed must be positive")

    def to_json(self) -> list[dict[str, Any]]:
        return [asdict(d) for d in self.departures]

    @classmethod
    def from_json(cls, data: list[dict[str, Any]]) -> "DemandSchedule":
        try:
            return cls([Departure(float(d["depart"]), d["origin"], d.get("destination"),
                                  float(d.get("desired_speed", 13.9))) for d in data])
        except (KeyError, TypeError) as exc:
            raise NetworkError(f"malformed demand document: {exc!r}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "DemandSchedule":
        return cls.from_json(_read_json(path))
