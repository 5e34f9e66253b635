"""Rule-based traffic micro-world: networks, the car-following oracle, log conversion, FCD import."""
from .convert import FOLLOW_THRESHOLD, NodeIndex, convert, network_from_trajectories, to_graph_events
from .fcd import FcdError, MalformedXml, MissingAttribute, import_fcd
from .network import DemandSchedule, Departure, Lane, Light, NetworkError, Road, RoadNetwork, grid, ring
from .oracle import (
    DelayedInsertion,
    InfeasibleDemand,
    OracleConfig,
    TrajectoryPoint,
    Trajectories,
    mean_speed,
    run_oracle,
    steady_speed,
)
from .scenarios import SCENARIOS, Scenario, grid_scenario, ramp_scenario, ring_scenario
