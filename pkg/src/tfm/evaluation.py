"""Network-level and vehicle-level evaluation of event logs.

Units: density is vehicles per lane-km, speed m/s, flow veh/h. Flow is
density x mean speed x 3.6 (veh/km x m/s -> veh/h), applied per bin.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .config import GeneratorConfig
from .generator import generate_step
from .graph.snapshot import GraphSnapshot, replay_steps
from .graph.types import ACCEL, SPEED, EventLog, NodeAdd, NodeKind, NodeRemove, StateUpdate
from .microworld.network import RoadNetwork
from .model import TFM
from .training import InsufficientData

FLOW_FACTOR = 3.6


class NoVehicleData(ValueError):
    pass


class UnknownVehicle(KeyError):
    pass


@dataclass(frozen=True)
class MfdPoint:
    bin_start: float
    density: float       # veh / lane-km
    speed: float         # m/s
    flow: float          # veh / h
    speed_var: float     # variance of the vehicle speeds in the bin
    samples: int         # vehicle state updates in the bin


def _lane_km(network: RoadNetwork | float) -> float:
    km = network.total_lane_km if isinstance(network, RoadNetwork) else float(network)
    if not km > 0:
        raise ValueError("total lane length must be positive")
    return km


def compute_mfd(log: EventLog, network: RoadNetwork | float, bin_seconds: float = 60.0) -> list[MfdPoint]:
    """Macroscopic fundamental diagram points, one per non-empty time bin.

    ``network`` may be a network or its total lane-km. Density averages the
    live vehicle count over the distinct event timestamps inside the bin.
    """
    if not bin_seconds > 0:
        raise ValueError("bin_seconds must be positive")
    km = _lane_km(network)
    vehicles: set[int] = set()
    counts: dict[int, list[int]] = {}
    speeds: dict[int, list[float]] = {}
    t0 = log.events[0].time if log.events else 0.0
    events = log.events
    i = 0
    while i < len(events):
        t = events[i].time
        b = int(math.floor((t - t0) / bin_seconds + 1e-9))
        while i < len(events) and events[i].time == t:
            p = events[i].payload
            if isinstance(p, NodeAdd) and p.kind == NodeKind.VEHICLE:
                vehicles.add(p.node)
            elif isinstance(p, NodeRemove):
                vehicles.discard(p.node)
            elif isinstance(p, StateUpdate) and p.node in vehicles:
                speeds.setdefault(b, []).append(p.state[SPEED])
            i += 1
        counts.setdefault(b, []).append(len(vehicles))
    if not speeds:
        raise NoVehicleData("the log contains no vehicle state updates")
    out = []
    for b in sorted(speeds):
        v = np.asarray(speeds[b])
        density = float(np.mean(counts[b])) / km
        mean_v = float(np.mean(v))
        out.append(MfdPoint(t0 + b * bin_seconds, density, mean_v, density * mean_v * FLOW_FACTOR,
                            float(np.var(v)), len(v)))
    return out


def mfd_spearman(points: Sequence[MfdPoint]) -> float:
    """Rank correlation between density and mean speed; nan with fewer than 3 bins or no spread."""
    if len(points) < 3:
        return math.nan
    d = [p.density for p in points]
    s = [p.speed for p in points]
    if len(set(d)) < 2 or len(set(s)) < 2:
        return math.nan
    return float(stats.spearmanr(d, s).statistic)


@dataclass(frozen=True)
class ProfilePoint:
    time: float
    speed: float
    accel: float


def micro_profile(log: EventLog, vehicle: int) -> list[ProfilePoint]:
    """The vehicle's (t, speed, accel) series from its state updates, in log order."""
    is_vehicle = any(isinstance(e.payload, NodeAdd) and e.payload.node == vehicle
                     and e.payload.kind == NodeKind.VEHICLE for e in log.events)
    if not is_vehicle:
        raise UnknownVehicle(f"node {vehicle} is never added as a vehicle")
    series = [ProfilePoint(e.time, e.payload.state[SPEED], e.payload.state[ACCEL]) for e in log.events
              if isinstance(e.payload, StateUpdate) and e.payload.node == vehicle]
    if not series:
        raise UnknownVehicle(f"vehicle {vehicle} has no state updates")
    return series


def trace_correlations(reference: EventLog, candidate: EventLog, vehicles: Iterable[int] | None = None,
                       min_points: int = 10) -> dict[int, float]:
    """Pearson correlation of speed traces per vehicle over the timestamps both logs share.

    Vehicles with fewer than ``min_points`` shared points, or a constant trace,
    are left out.
    """
    if vehicles is None:
        vehicles = sorted(p.node for p in (e.payload for e in reference.events)
                          if isinstance(p, NodeAdd) and p.kind == NodeKind.VEHICLE)
    out = {}
    for v in vehicles:
        try:
            a = {p.time: p.speed for p in micro_profile(reference, v)}
            b = {p.time: p.speed for p in micro_profile(candidate, v)}
        except UnknownVehicle:
            continue
        common = sorted(set(a) & set(b))
        if len(common) < min_points:
            continue
        x = np.array([a[t] for t in common])
        y = np.array([b[t] for t in common])
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            continue
        out[v] = float(stats.pearsonr(x, y).statistic)
    return out


def persistence_baseline(snapshot: GraphSnapshot) -> dict[int, tuple[float, ...]]:
    """Predict every node's next state to equal its current one."""
    return {n: rec.state for n, rec in snapshot.nodes.items()}


@dataclass
class StepError:
    step: int
    nodes: int
    model: float
    baseline: float


@dataclass
class MseReport:
    """Mean squared errors over identical (node, step) sets for model and baseline.

    ``model``/``baseline`` cover the vehicle speed and acceleration slots in raw
    units; the ``*_all`` fields cover every slot of every node in normalized units.
    """

    per_step: list[StepError] = field(default_factory=list)
    model: float = math.nan
    baseline: float = math.nan
    model_all: float = math.nan
    baseline_all: float = math.nan

    @property
    def improvement(self) -> float:
        """Relative reduction of the model's error against the baseline."""
        if not self.baseline > 0:
            return math.nan
        return 1.0 - self.model / self.baseline


DYNAMIC_SLOTS = (SPEED, ACCEL)


def next_state_mse(model: TFM, log: EventLog, start_step: int = 0, edges: str = "generated",
                   decoding: GeneratorConfig | None = None) -> MseReport:
    """One-step prediction error of the model and of persistence over a log.

    ``edges="generated"`` lets the model decode its own interactions (greedy by
    default) before predicting states; ``"true"`` feeds the logged ones.
    Transitions G_n -> G_{n+1} with n >= start_step are scored.
    """
    if edges not in ("generated", "true"):
        raise ValueError("edges must be 'generated' or 'true'")
    snaps = replay_steps(log, model.config.window)
    if len(snaps) - start_step < 2:
        raise InsufficientData("need at least two macro steps after start_step")
    decoding = decoding or GeneratorConfig()
    rng = np.random.default_rng(0)
    by_step = log.by_step()
    report = MseReport()
    sq_m = sq_b = sq_ma = sq_ba = 0.0
    n_dyn = n_all = 0
    for n in range(start_step, len(snaps) - 1):
        cur, nxt = snaps[n], snaps[n + 1]
        encoded = model.encode(cur)
        ids = [int(i) for i in encoded.inputs.ids]
        if not ids:
            continue
        working = model.working_graph(encoded, decoding.temperature, decoding.kind_mask)
        if edges == "generated":
            generate_step(working, decoding, nxt.time, rng)
        else:
            row = {i: r for r, i in enumerate(ids)}
            for ev in by_step.get(n + 1, []):
                e = getattr(ev.payload, "edge", None)
                if e is not None and e.source in row and e.target in row:
                    working.advance(row[e.source], row[e.target], int(e.rel))
        pred = model.commit_states(model.predict_states(encoded, working.h), encoded.inputs.kinds)
        keep = [r for r, i in enumerate(ids) if i in nxt.nodes]
        if not keep:
            continue
        truth = np.array([nxt.nodes[ids[r]].state for r in keep])
        base = np.array([cur.nodes[ids[r]].state for r in keep])
        mine = pred[keep]
        kinds = encoded.inputs.kinds[keep]
        veh = kinds == int(NodeKind.VEHICLE)
        em = (mine[veh][:, DYNAMIC_SLOTS] - truth[veh][:, DYNAMIC_SLOTS]) ** 2
        eb = (base[veh][:, DYNAMIC_SLOTS] - truth[veh][:, DYNAMIC_SLOTS]) ** 2
        scale = model.scale[kinds]
        sq_ma += float(np.sum(((mine - truth) / scale) ** 2))
        sq_ba += float(np.sum(((base - truth) / scale) ** 2))
        n_all += truth.size
        if em.size:
            sq_m += float(em.sum())
            sq_b += float(eb.sum())
            n_dyn += em.size
            report.per_step.append(StepError(n + 1, int(veh.sum()), float(em.mean()), float(eb.mean())))
    if n_dyn:
        report.model, report.baseline = sq_m / n_dyn, sq_b / n_dyn
    if n_all:
        report.model_all, report.baseline_all = sq_ma / n_all, sq_ba / n_all
    return report


# ------------------------------------------------------------------ output

MFD_FIELDS = ("bin_start", "density", "speed", "flow", "speed_var", "samples")


def write_mfd_csv(path: str | Path, series: dict[str, Sequence[MfdPoint]]) -> None:
    """One row per bin, labelled by series."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("label",) + MFD_FIELDS)
        for label, points in series.items():
            for p in points:
                w.writerow([label, repr(p.bin_start), repr(p.density), repr(p.speed), repr(p.flow),
                            repr(p.speed_var), p.samples])


def read_mfd_csv(path: str | Path) -> dict[str, list[MfdPoint]]:
    out: dict[str, list[MfdPoint]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"label", *MFD_FIELDS} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"metrics CSV lacks columns {sorted(missing)}")
        for row in reader:
            out.setdefault(row["label"], []).append(MfdPoint(
                float(row["bin_start"]), float(row["density"]), float(row["speed"]), float(row["flow"]),
                float(row["speed_var"]), int(row["samples"])))
    return out


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def mfd_svg(series: dict[str, Sequence[MfdPoint]], width: int = 480, height: int = 360) -> str:
    """Density-speed scatter as a standalone SVG document."""
    pts = [p for s in series.values() for p in s]
    x_max = max((p.density for p in pts), default=1.0) * 1.05 or 1.0
    y_max = max((p.speed for p in pts), default=1.0) * 1.05 or 1.0
    left, bottom, pad = 50, 40, 15
    pw, ph = width - left - pad, height - bottom - pad

    def sx(x: float) -> float:
        return left + pw * x / x_max

    def sy(y: float) -> float:
        return pad + ph * (1.0 - y / y_max)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{left}" y1="{pad + ph}" x2="{left + pw}" y2="{pad + ph}" stroke="black"/>',
             f'<line x1="{left}" y1="{pad}" x2="{left}" y2="{pad + ph}" stroke="black"/>',
             f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="12">'
             f'density (veh/lane-km), max {x_max:.3g}</text>',
             f'<text x="14" y="{pad + ph / 2:.1f}" text-anchor="middle" font-size="12" '
             f'transform="rotate(-90 14 {pad + ph / 2:.1f})">speed (m/s), max {y_max:.3g}</text>']
    for k, (label, s) in enumerate(series.items()):
        color = _COLORS[k % len(_COLORS)]
        parts.append(f'<text x="{left + 8}" y="{pad + 14 * (k + 1)}" font-size="11" fill="{color}">'
                     f'{label or "series"}</text>')
        for p in s:
            parts.append(f'<circle cx="{sx(p.density):.2f}" cy="{sy(p.speed):.2f}" r="3" fill="{color}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
