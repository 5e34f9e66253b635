"""Named scenario builders used by the CLI, the tests and the acceptance runs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import DemandSchedule, Departure, RoadNetwork, grid, ring
from .oracle import OracleConfig, Trajectories, run_oracle


@dataclass
class Scenario:
    network: RoadNetwork
    demand: DemandSchedule
    steps: int
    oracle: OracleConfig = field(default_factory=OracleConfig)

    def run(self) -> Trajectories:
        return run_oracle(self.network, self.demand, self.steps, self.oracle)


def _speeds(rng: np.random.Generator, n: int, low: float, high: float) -> list[float]:
    return [float(round(x, 3)) for x in rng.uniform(low, high, size=n)]


def ring_scenario(vehicles: int = 20, steps: int = 200, circumference: float = 1000.0,
                  spacing: float = 5.0, lights: int = 0, seed: int = 0,
                  speed_range: tuple[float, float] = (11.0, 13.9)) -> Scenario:
    """Vehicles enter one lane of a single-road ring every ``spacing`` s and circulate."""
    rng = np.random.default_rng(seed)
    segments = max(lights, 1)
    net = ring(circumference, lanes=1, segments=segments, lights=lights)
    speeds = _speeds(rng, vehicles, *speed_range)
    demand = DemandSchedule([Departure(spacing * i, "r0_0", None, speeds[i]) for i in range(vehicles)])
    return Scenario(net, demand, steps)


def ramp_scenario(vehicles: int = 20, steps: int = 200, circumference: float = 500.0,
                  first_gap: float = 5.0, last_gap: float = 5.0, lights: int = 1, seed: int = 0,
                  speed_range: tuple[float, float] = (11.0, 13.9), green: float = 20.0,
                  red: float = 20.0) -> Scenario:
    """Signalized ring that keeps filling up: density rises step after step.

    Departures are spaced from ``first_gap`` down to ``last_gap`` seconds and
    enter at the highest safe speed, so the ring can be loaded past the
    density at which queues from the signal stop clearing within a cycle.
    """
    rng = np.random.default_rng(seed)
    segments = max(lights, 1)
    net = ring(circumference, lanes=1, segments=segments, lights=lights, green=green, red=red)
    gaps = np.linspace(first_gap, last_gap, max(vehicles - 1, 1))
    times = np.concatenate([[0.0], np.cumsum(gaps)])[:vehicles]
    speeds = _speeds(rng, vehicles, *speed_range)
    demand = DemandSchedule([Departure(float(round(t, 3)), "r0_0", None, speeds[i])
                             for i, t in enumerate(times)])
    return Scenario(net, demand, steps, OracleConfig(depart_speed="safe"))


def grid_scenario(rows: int = 3, cols: int = 3, vehicles: int = 40, steps: int = 300,
                  interval: float = 3.0, block: float = 200.0, seed: int = 0) -> Scenario:
    """Random origin/destination trips on a signalized grid."""
    rng = np.random.default_rng(seed)
    net = grid(rows, cols, block)
    lanes = [l.id for l in net.lanes]
    deps = []
    for i in range(vehicles):
        o, d = rng.choice(len(lanes), size=2, replace=False)
        deps.append(Departure(interval * i, lanes[o], lanes[d], float(round(rng.uniform(10.0, 13.9), 3))))
    return Scenario(net, DemandSchedule(deps), steps)


SCENARIOS = {"ring": ring_scenario, "ramp": ramp_scenario, "grid": grid_scenario}
