"""Turn trajectories into an event log.

Node ids: roads, then lanes, then lights (network order), then vehicles in
order of first appearance. The static part (infrastructure nodes with their
LaneOfRoad, AdjacentLane and Controls edges) is stamped at the first tick.
Each tick then contains, in this order:

1. ``node_remove`` for vehicles that disappeared,
2. ``node_add`` for vehicles that appeared,
3. ``OnLane`` edges for inserted vehicles and lane changes,
4. ``Follows`` edges from each vehicle to its leader when the front-to-front
   headway is below the threshold, walked leader chain by leader chain
   (each chain starts at its rear-most vehicle),
5. a ``state`` update for every live node.

Lane state is [mean speed m/s, occupancy veh/km]; road state is
[flow veh/h] = sum over its lanes of occupancy x mean speed x 3.6; light state
is [green, red, seconds in phase].
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..graph.types import (
    EdgeAdd,
    EventLog,
    GraphEvent,
    InteractionEdge,
    NodeAdd,
    NodeKind,
    NodeRemove,
    Relation,
    StateUpdate,
    make_state,
)
from .network import Lane, RoadNetwork, Road
from .oracle import TrajectoryPoint, Trajectories

FOLLOW_THRESHOLD = 100.0  # metres, front-to-front


@dataclass
class NodeIndex:
    roads: dict[str, int] = field(default_factory=dict)
    lanes: dict[str, int] = field(default_factory=dict)
    lights: dict[str, int] = field(default_factory=dict)
    vehicles: dict[str, list[int]] = field(default_factory=dict)  # a re-appearing vehicle gets a new id

    def vehicle_names(self) -> dict[int, str]:
        return {nid: name for name, ids in self.vehicles.items() for nid in ids}


def network_from_trajectories(traj: Trajectories) -> RoadNetwork:
    """Best-effort network for data without one: each lane is as long as the furthest position seen.

    Roads are lane ids up to the last underscore (the SUMO convention); a lane's
    successors are the lanes vehicles were observed to move on to.
    """
    extent: dict[str, float] = {}
    succ: dict[str, list[str]] = {}
    for pts in traj.vehicles.values():
        for a, b in zip(pts, pts[1:] + [None]):
            extent[a.lane] = max(extent.get(a.lane, 0.0), a.position)
            if b is not None and b.lane != a.lane and b.lane not in succ.setdefault(a.lane, []):
                succ[a.lane].append(b.lane)
    lanes, roads = [], {}
    for lid in sorted(extent):
        road = lid.rsplit("_", 1)[0] if "_" in lid else lid
        length = max(extent[lid], 1.0)
        lanes.append(Lane(lid, road, length, tuple(succ.get(lid, ()))))
        roads.setdefault(road, []).append((lid, length))
    road_list = [Road(rid, max(l for _, l in ls), tuple(lid for lid, _ in ls)) for rid, ls in roads.items()]
    return RoadNetwork(road_list, lanes, [], {"type": "inferred"})


class _Emitter:
    def __init__(self, step_duration: float):
        self.log = EventLog([], step_duration)
        self.t: Optional[float] = None
        self.i = 0

    def emit(self, t: float, payload) -> None:
        if t != self.t:
            self.t, self.i = t, 0
        self.log.events.append(GraphEvent(t, self.i, payload))
        self.i += 1


def _leader_map(points: list[tuple[str, TrajectoryPoint]], net: RoadNetwork,
                next_lane: dict[str, Optional[str]]) -> dict[str, tuple[str, float]]:
    """vehicle -> (leader, front-to-front headway) for headways below the threshold."""
    by_lane: dict[str, list[tuple[float, str]]] = {}
    for vid, p in points:
        by_lane.setdefault(p.lane, []).append((p.position, vid))
    for lst in by_lane.values():
        lst.sort()
    where = {vid: p for vid, p in points}
    out: dict[str, tuple[str, float]] = {}
    for vid, p in points:
        found = None
        for pos, other in by_lane[p.lane]:
            if other != vid and pos > p.position:
                found = (other, pos - p.position)
                break
        if found is None:
            offset = net.lane_map[p.lane].length - p.position if p.lane in net.lane_map else 0.0
            lane = next_lane.get(vid)
            seen = 0
            while lane is not None and offset < FOLLOW_THRESHOLD and seen < 64:
                cands = [(pos, o) for pos, o in by_lane.get(lane, []) if o != vid]
                if cands:
                    found = (cands[0][1], offset + cands[0][0])
                    break
                offset += net.lane_map[lane].length if lane in net.lane_map else FOLLOW_THRESHOLD
                succ = net.lane_map[lane].successors if lane in net.lane_map else ()
                lane = succ[0] if len(succ) == 1 else None
                seen += 1
        if found is not None and found[1] < FOLLOW_THRESHOLD and found[0] in where:
            out[vid] = found
    return out


def follow_chain_order(leaders: dict[str, tuple[str, float]], start_key) -> list[tuple[str, str]]:
    """(follower, leader) pairs walked chain by chain; chains start at vehicles nobody follows."""
    followed = {l for l, _ in leaders.values()}
    heads = sorted((v for v in leaders if v not in followed), key=start_key)
    done: set[str] = set()
    order: list[tuple[str, str]] = []

    def walk(v: str) -> None:
        while v in leaders and v not in done:
            done.add(v)
            order.append((v, leaders[v][0]))
            v = leaders[v][0]

    for v in heads:
        walk(v)
    # what remains are closed loops (a fully occupied ring)
    for v in sorted((v for v in leaders if v not in done), key=start_key):
        walk(v)
    return order


def convert(traj: Trajectories, network: RoadNetwork | None = None) -> tuple[EventLog, NodeIndex]:
    net = network if network is not None else network_from_trajectories(traj)
    out = _Emitter(traj.tick)
    index = NodeIndex()
    nid = 0
    for r in net.roads:
        index.roads[r.id] = nid
        nid += 1
    for l in net.lanes:
        index.lanes[l.id] = nid
        nid += 1
    for g in net.lights:
        index.lights[g.id] = nid
        nid += 1

    at = traj.points_at()
    times = sorted(at)
    t0 = times[0] if times else 0.0
    phase_at = {gid: {t: (green, tip) for t, green, tip in trace} for gid, trace in traj.phases.items()}

    def light_state(gid: str, t: float):
        green, tip = phase_at.get(gid, {}).get(t, (True, 0.0))
        return make_state(NodeKind.TRAFFIC_LIGHT, [1.0 if green else 0.0, 0.0 if green else 1.0, tip])

    for r in net.roads:
        out.emit(t0, NodeAdd(index.roads[r.id], NodeKind.ROAD, make_state(NodeKind.ROAD, [0.0])))
    for l in net.lanes:
        out.emit(t0, NodeAdd(index.lanes[l.id], NodeKind.LANE, make_state(NodeKind.LANE, [0.0, 0.0])))
    for g in net.lights:
        out.emit(t0, NodeAdd(index.lights[g.id], NodeKind.TRAFFIC_LIGHT, light_state(g.id, t0)))
    for l in net.lanes:
        out.emit(t0, EdgeAdd(InteractionEdge(index.lanes[l.id], index.roads[l.road], Relation.LANE_OF_ROAD, t0)))
    for r in net.roads:
        for a, b in zip(r.lanes, r.lanes[1:]):
            out.emit(t0, EdgeAdd(InteractionEdge(index.lanes[a], index.lanes[b], Relation.ADJACENT_LANE, t0)))
    for g in net.lights:
        for lid in g.lanes:
            out.emit(t0, EdgeAdd(InteractionEdge(index.lights[g.id], index.lanes[lid], Relation.CONTROLS, t0)))

    # the lane each vehicle moves on to next, looking ahead in its own record
    future: dict[tuple[str, float], Optional[str]] = {}
    for vid, pts in traj.vehicles.items():
        nxt: Optional[str] = None
        later: Optional[TrajectoryPoint] = None
        for a in reversed(pts):
            if later is not None and later.lane != a.lane:
                nxt = later.lane
            future[(vid, a.time)] = nxt
            later = a
    appearance = {vid: i for i, vid in enumerate(traj.vehicles)}

    lane_rank = {lid: i for i, lid in enumerate(index.lanes)}
    live: dict[str, int] = {}
    lane_of: dict[str, str] = {}
    for t in times:
        pts = sorted(at[t], key=lambda x: appearance[x[0]])
        present = {vid for vid, _ in pts}
        for vid in sorted((v for v in live if v not in present), key=lambda v: live[v]):
            out.emit(t, NodeRemove(live.pop(vid)))
            lane_of.pop(vid, None)
        for vid, p in pts:
            if vid not in live:
                live[vid] = nid
                index.vehicles.setdefault(vid, []).append(nid)
                out.emit(t, NodeAdd(nid, NodeKind.VEHICLE, _vehicle_state(p)))
                nid += 1
        ordered = sorted(pts, key=lambda x: live[x[0]])
        for vid, p in ordered:
            if lane_of.get(vid) != p.lane and p.lane in index.lanes:
                out.emit(t, EdgeAdd(InteractionEdge(live[vid], index.lanes[p.lane], Relation.ON_LANE, t)))
            lane_of[vid] = p.lane
        next_lane = {}
        for vid, p in ordered:
            succ = net.lane_map[p.lane].successors if p.lane in net.lane_map else ()
            next_lane[vid] = succ[0] if len(succ) == 1 else future.get((vid, t))
        leaders = _leader_map(ordered, net, next_lane)
        where = dict(ordered)
        key = lambda v: (lane_rank.get(where[v].lane, len(lane_rank)), where[v].position, live[v])
        for f, l in follow_chain_order(leaders, key):
            out.emit(t, EdgeAdd(InteractionEdge(live[f], live[l], Relation.FOLLOWS, t)))
        # states
        for vid, p in ordered:
            out.emit(t, StateUpdate(live[vid], _vehicle_state(p)))
        lane_speeds: dict[str, list[float]] = {}
        for vid, p in ordered:
            lane_speeds.setdefault(p.lane, []).append(p.speed)
        lane_flow: dict[str, float] = {}
        for l in net.lanes:
            speeds = lane_speeds.get(l.id, [])
            mean_v = sum(speeds) / len(speeds) if speeds else 0.0
            occ = len(speeds) / (l.length / 1000.0)
            lane_flow[l.id] = occ * mean_v * 3.6
            out.emit(t, StateUpdate(index.lanes[l.id], make_state(NodeKind.LANE, [mean_v, occ])))
        for r in net.roads:
            flow = sum(lane_flow[lid] for lid in r.lanes)
            out.emit(t, StateUpdate(index.roads[r.id], make_state(NodeKind.ROAD, [flow])))
        for g in net.lights:
            out.emit(t, StateUpdate(index.lights[g.id], light_state(g.id, t)))
    # vehicles still live at the end stay in the graph; nothing to emit
    return out.log, index


def _vehicle_state(p: TrajectoryPoint):
    return make_state(NodeKind.VEHICLE, [p.speed, p.accel, p.position])


def to_graph_events(traj: Trajectories, network: RoadNetwork | None = None) -> EventLog:
    return convert(traj, network)[0]
