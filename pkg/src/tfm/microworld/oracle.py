"""Deterministic car-following oracle on a :class:`RoadNetwork`.

Acceleration follows the Intelligent Driver Model::

    a_IDM = a * (1 - (v / v0)^4 - (s* / s)^2),   s* = s0 + max(0, v T + v dv / (2 sqrt(a b)))

with ``s`` the bumper gap to the leader and ``dv`` the closing speed; without
a leader the interaction term is dropped. Commands are clipped to [-b, a]
and integrated ballistically over one tick. As a last line of defence a
vehicle never advances further than ``gap - s0 / 2`` in one tick, so gaps
stay above ``s0 / 2``; each time this cap binds it is counted in
``Trajectories.interventions``.

A red signal acts as a stopped obstacle at the end of the lanes it controls
for vehicles that can still stop there decelerating no harder than ``b``.
Vehicles entering the same lane from different approaches queue by their
distance to the merge point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .. import kernels
from .network import DemandSchedule, Departure, RoadNetwork

LOOKAHEAD = 200.0  # metres scanned for a leader


class InfeasibleDemand(RuntimeError):
    """Raised in strict mode when a departure cannot be inserted on time."""


@dataclass
class OracleConfig:
    a: float = 1.5        # max acceleration m/s^2
    b: float = 2.0        # comfortable deceleration m/s^2
    s0: float = 2.0       # jam gap m
    T: float = 1.5        # time headway s
    v_max: float = 13.9   # m/s
    delta: float = 4.0
    length: float = 5.0   # vehicle length m
    tick: float = 1.0     # s, equals the event-log step duration
    depart_speed: str = "zero"  # or "safe", see _insertion_speed

    def validate(self) -> None:
        for name in ("a", "b", "s0", "T", "v_max", "delta", "length", "tick"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.depart_speed not in ("zero", "safe"):
            raise ValueError(f"depart_speed must be 'zero' or 'safe', got {self.depart_speed!r}")


@dataclass(frozen=True)
class TrajectoryPoint:
    time: float
    lane: str
    position: float
    speed: float
    accel: float


@dataclass(frozen=True)
class DelayedInsertion:
    vehicle: str
    scheduled: float
    inserted: Optional[float]  # None when the run ended first


@dataclass
class Trajectories:
    tick: float
    times: list[float] = field(default_factory=list)
    vehicles: dict[str, list[TrajectoryPoint]] = field(default_factory=dict)
    phases: dict[str, list[tuple[float, bool, float]]] = field(default_factory=dict)
    delayed: list[DelayedInsertion] = field(default_factory=list)
    arrived: dict[str, float] = field(default_factory=dict)
    interventions: int = 0

    def points_at(self) -> dict[float, list[tuple[str, TrajectoryPoint]]]:
        out: dict[float, list[tuple[str, TrajectoryPoint]]] = {t: [] for t in self.times}
        for vid, pts in self.vehicles.items():
            for p in pts:
                out.setdefault(p.time, []).append((vid, p))
        return out


class _Vehicle:
    __slots__ = ("vid", "lane", "pos", "v", "desired", "route", "ridx", "dest")

    def __init__(self, vid: str, dep: Departure, route: Optional[list[str]]):
        self.vid = vid
        self.lane = dep.origin
        self.pos = 0.0
        self.v = 0.0
        self.desired = dep.desired_speed
        self.route = route
        self.ridx = 0
        self.dest = dep.destination


class _World:
    def __init__(self, net: RoadNetwork, cfg: OracleConfig):
        self.net = net
        self.cfg = cfg
        self.active: list[_Vehicle] = []
        self._green: dict[str, bool] = {}

    def upcoming(self, veh: _Vehicle) -> Iterator[str]:
        """Lanes after the current one along the vehicle's path."""
        if veh.route is not None:
            yield from veh.route[veh.ridx + 1:]
            return
        lane = veh.lane
        while True:
            succ = self.net.lane_map[lane].successors
            if not succ:
                return
            lane = succ[0]
            yield lane

    def next_lane(self, veh: _Vehicle) -> Optional[str]:
        return next(self.upcoming(veh), None)

    def by_lane(self) -> dict[str, list[_Vehicle]]:
        lanes: dict[str, list[_Vehicle]] = {}
        for veh in self.active:
            lanes.setdefault(veh.lane, []).append(veh)
        for vs in lanes.values():
            vs.sort(key=lambda x: x.pos)
        return lanes

    def leader(self, veh: _Vehicle, lanes: dict[str, list[_Vehicle]],
               nxt: dict[str, Optional[str]]) -> tuple[float, float] | None:
        """(bumper gap, leader speed) of whatever the vehicle must not hit, or None."""
        length = self.cfg.length
        best: tuple[float, float] | None = None
        for other in lanes.get(veh.lane, ()):
            if other is not veh and other.pos > veh.pos:
                best = (other.pos - length - veh.pos, other.v)
                break
        if best is None:
            offset = self.net.lane_map[veh.lane].length - veh.pos
            for lane in self.upcoming(veh):
                if offset > LOOKAHEAD:
                    break
                ahead = [o for o in lanes.get(lane, ()) if o is not veh]
                if ahead:
                    best = (offset + ahead[0].pos - length, ahead[0].v)
                    break
                offset += self.net.lane_map[lane].length
        # vehicles converging on the same next lane from another approach
        my_next = nxt[veh.vid]
        d_me = self.net.lane_map[veh.lane].length - veh.pos
        if my_next is not None and d_me < LOOKAHEAD:
            for other in self.active:
                if other is veh or other.lane == veh.lane or nxt[other.vid] != my_next:
                    continue
                d_o = self.net.lane_map[other.lane].length - other.pos
                if d_o < d_me or (d_o == d_me and other.vid < veh.vid):
                    cand = (d_me - d_o - length, other.v)
                    if best is None or cand[0] < best[0]:
                        best = cand
        # red signal at the end of the current lane
        light = self.net.light_of.get(veh.lane)
        if light is not None and not self._green[light.id]:
            d = self.net.lane_map[veh.lane].length - veh.pos
            if veh.v * veh.v <= 2.0 * self.cfg.b * d + 1e-9:
                if best is None or d < best[0]:
                    best = (d, 0.0)
        return best

    def leaders(self) -> dict[str, tuple[float, float] | None]:
        lanes = self.by_lane()
        nxt = {v.vid: self.next_lane(v) for v in self.active}
        return {v.vid: self.leader(v, lanes, nxt) for v in self.active}


def run_oracle(network: RoadNetwork, demand: DemandSchedule, steps: int,
               config: OracleConfig | None = None, strict: bool = False) -> Trajectories:
    """Simulate ``steps`` ticks starting at t = 0 and record every vehicle at every tick."""
    cfg = config or OracleConfig()
    cfg.validate()
    network.validate()
    demand.validate(network)
    world = _World(network, cfg)
    out = Trajectories(tick=cfg.tick)
    for light in network.lights:
        out.phases[light.id] = []
    pending = list(enumerate(demand.departures))
    delayed: dict[str, float] = {}

    for k in range(steps):
        t = k * cfg.tick
        out.times.append(t)
        world._green = {}
        for light in network.lights:
            green, tip = light.phase(t)
            world._green[light.id] = green
            out.phases[light.id].append((t, green, tip))

        # insertions, first-come first-served per origin lane
        blocked: set[str] = set()
        still: list[tuple[int, Departure]] = []
        for idx, dep in pending:
            if dep.depart > t + 1e-9:
                still.append((idx, dep))
                continue
            vid = f"veh{idx}"
            speed = None if dep.origin in blocked else _insertion_speed(world, dep)
            if speed is None:
                blocked.add(dep.origin)
                delayed.setdefault(vid, dep.depart)
                still.append((idx, dep))
                continue
            route = network.route(dep.origin, dep.destination) if dep.destination else None
            veh = _Vehicle(vid, dep, route)
            veh.v = speed
            world.active.append(veh)
            blocked.add(dep.origin)  # one insertion per lane and tick
            out.vehicles[vid] = []
            if vid in delayed:
                out.delayed.append(DelayedInsertion(vid, delayed.pop(vid), t))
        if strict and delayed:
            vid, when = next(iter(delayed.items()))
            raise InfeasibleDemand(f"{vid} scheduled at {when} s cannot enter its origin lane at {t} s")
        pending = still

        if not world.active:
            continue
        lanes = world.by_lane()
        nxt = {v.vid: world.next_lane(v) for v in world.active}
        n = len(world.active)
        gap = np.full(n, 1e9)
        dv = np.zeros(n)
        has = np.zeros(n, dtype=np.uint8)
        for i, veh in enumerate(world.active):
            lead = world.leader(veh, lanes, nxt)
            if lead is not None:
                gap[i], dv[i], has[i] = lead[0], veh.v - lead[1], 1
        v = np.array([x.v for x in world.active])
        v0 = np.array([min(x.desired, cfg.v_max) for x in world.active])
        acc = kernels.idm_accel(v, v0, gap, dv, has, cfg.a, cfg.b, cfg.s0, cfg.T, cfg.delta)
        acc = np.clip(acc, -cfg.b, cfg.a)

        for i, veh in enumerate(world.active):
            out.vehicles[veh.vid].append(TrajectoryPoint(t, veh.lane, veh.pos, veh.v, float(acc[i])))

        survivors = []
        for i, veh in enumerate(world.active):
            a_i = float(acc[i])
            if veh.v + a_i * cfg.tick < 0.0:
                disp = -veh.v * veh.v / (2.0 * a_i)
                v_new = 0.0
            else:
                disp = veh.v * cfg.tick + 0.5 * a_i * cfg.tick * cfg.tick
                v_new = veh.v + a_i * cfg.tick
            if has[i]:
                cap = max(0.0, gap[i] - cfg.s0 / 2.0)
                if disp > cap:
                    disp = cap
                    v_new = min(v_new, cap / cfg.tick)
                    out.interventions += 1
            veh.v = min(v_new, cfg.v_max)
            veh.pos += disp
            if _advance(world, veh):
                survivors.append(veh)
            else:
                out.arrived[veh.vid] = t + cfg.tick
        world.active = survivors

    for idx, dep in pending:
        vid = f"veh{idx}"
        if vid in delayed:
            out.delayed.append(DelayedInsertion(vid, delayed[vid], None))
    return out


def _advance(world: _World, veh: _Vehicle) -> bool:
    """Carry the vehicle across lane ends; False once it has left its destination lane."""
    while True:
        length = world.net.lane_map[veh.lane].length
        if veh.pos < length:
            return True
        if veh.dest is not None and veh.lane == veh.dest:
            return False
        nxt = world.next_lane(veh)
        if nxt is None:
            return False
        veh.pos -= length
        veh.lane = nxt
        if veh.route is not None:
            veh.ridx += 1


def _insertion_speed(world: _World, dep: Departure) -> Optional[float]:
    """Entry speed at the lane start, or None when the vehicle does not fit yet.

    With ``depart_speed="zero"`` vehicles enter at rest. With ``"safe"`` they
    enter at the highest speed, up to their desired speed, that keeps a gap
    of ``s0 + v T`` to the leader. Either way, insertion waits while anyone
    is within one length plus ``s0`` of the lane start, while the leader gap
    is below ``s0``, or while a vehicle behind could not stop, braking at
    ``b``, before reaching the newcomer.
    """
    cfg = world.cfg
    if any(v.lane == dep.origin and v.pos < cfg.length + cfg.s0 for v in world.active):
        return None
    before = world.leaders()
    probe = _Vehicle("__probe__", dep, None)
    if dep.destination is not None:
        probe.route = world.net.route(dep.origin, dep.destination)
    world.active.append(probe)
    try:
        after = world.leaders()
    finally:
        world.active.remove(probe)
    own = after.pop(probe.vid)
    if own is not None and own[0] < cfg.s0:
        return None
    speed = 0.0
    if cfg.depart_speed == "safe":
        speed = min(dep.desired_speed, cfg.v_max)
        if own is not None:
            speed = min(speed, max(0.0, (own[0] - cfg.s0) / cfg.T))
    for veh in world.active:
        lead, old = after[veh.vid], before[veh.vid]
        if lead is not None and (old is None or lead[0] < old[0] - 1e-12):
            if lead[0] < cfg.s0 + max(0.0, veh.v * veh.v - speed * speed) / (2.0 * cfg.b):
                return None
    return speed


def steady_speed(traj: Trajectories, vehicle: str, tail: float = 10.0) -> float:
    """Mean speed over the last ``tail`` seconds of a vehicle's record."""
    pts = traj.vehicles[vehicle]
    end = pts[-1].time
    return float(np.mean([p.speed for p in pts if p.time >= end - tail]))


def mean_speed(traj: Trajectories, start: float = 0.0) -> float:
    speeds = [p.speed for pts in traj.vehicles.values() for p in pts if p.time >= start]
    return float(np.mean(speeds)) if speeds else math.nan
