"""Data models and schemas for SignalGraph."""

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd


class TscAction(IntEnum):
    """Binary decision taken by a traffic signal controller every second."""
    PROLONG = 0
    SWITCH = 1


class PhaseKind(str, Enum):
    GREEN = "green"
    YELLOW = "yellow"


class GraphMode(str, Enum):
    """Observation granularity: lane-level or vehicle-level features."""
    LANE = "lane"
    VEHICLE = "vehicle"


class NoiseMode(str, Enum):
    SAMPLED = "sampled"
    ZERO = "zero"


class TrainingSet(str, Enum):
    SPECIALIST = "specialist"
    GENERALIST = "generalist"


class Regime(str, Enum):
    LIGHT = "light"
    DEFAULT = "default"
    HEAVY = "heavy"


class NodeType(IntEnum):
    TSC = 0
    CONNECTION = 1
    LANE = 2
    VEHICLE = 3


class EdgeType(str, Enum):
    """Relation types of the observation graph.

    Each relation has a fixed source node type so every message-passing
    weight has a well-defined input width.
    """
    TSC_SELF = "tsc_self"
    CONNECTION_SELF = "connection_self"
    LANE_SELF = "lane_self"
    VEHICLE_SELF = "vehicle_self"
    TSC_TO_CONNECTION = "tsc_to_connection"
    CONNECTION_TO_TSC = "connection_to_tsc"
    ENTRY_LANE_TO_CONNECTION = "entry_lane_to_connection"
    CONNECTION_TO_ENTRY_LANE = "connection_to_entry_lane"
    EXIT_LANE_TO_CONNECTION = "exit_lane_to_connection"
    CONNECTION_TO_EXIT_LANE = "connection_to_exit_lane"
    VEHICLE_TO_LANE = "vehicle_to_lane"
    LANE_TO_VEHICLE = "lane_to_vehicle"

    @property
    def source_type(self) -> NodeType:
        return _EDGE_ENDPOINTS[self][0]

    @property
    def target_type(self) -> NodeType:
        return _EDGE_ENDPOINTS[self][1]


_EDGE_ENDPOINTS = {
    EdgeType.TSC_SELF: (NodeType.TSC, NodeType.TSC),
    EdgeType.CONNECTION_SELF: (NodeType.CONNECTION, NodeType.CONNECTION),
    EdgeType.LANE_SELF: (NodeType.LANE, NodeType.LANE),
    EdgeType.VEHICLE_SELF: (NodeType.VEHICLE, NodeType.VEHICLE),
    EdgeType.TSC_TO_CONNECTION: (NodeType.TSC, NodeType.CONNECTION),
    EdgeType.CONNECTION_TO_TSC: (NodeType.CONNECTION, NodeType.TSC),
    EdgeType.ENTRY_LANE_TO_CONNECTION: (NodeType.LANE, NodeType.CONNECTION),
    EdgeType.CONNECTION_TO_ENTRY_LANE: (NodeType.CONNECTION, NodeType.LANE),
    EdgeType.EXIT_LANE_TO_CONNECTION: (NodeType.LANE, NodeType.CONNECTION),
    EdgeType.CONNECTION_TO_EXIT_LANE: (NodeType.CONNECTION, NodeType.LANE),
    EdgeType.VEHICLE_TO_LANE: (NodeType.VEHICLE, NodeType.LANE),
    EdgeType.LANE_TO_VEHICLE: (NodeType.LANE, NodeType.VEHICLE),
}

VEHICLE_EDGE_TYPES = (EdgeType.VEHICLE_SELF, EdgeType.VEHICLE_TO_LANE, EdgeType.LANE_TO_VEHICLE)


def edge_types_for(mode: GraphMode) -> List[EdgeType]:
    """Relation types present in a graph of the given mode (12 or 9)."""
    if mode == GraphMode.VEHICLE:
        return list(EdgeType)
    return [e for e in EdgeType if e not in VEHICLE_EDGE_TYPES]


def node_types_for(mode: GraphMode) -> List[NodeType]:
    if mode == GraphMode.VEHICLE:
        return list(NodeType)
    return [NodeType.TSC, NodeType.CONNECTION, NodeType.LANE]


# ============================================================================
# ROAD NETWORK
# ============================================================================

@dataclass
class Intersection:
    id: str
    x: float
    y: float
    tsc: Optional[str] = None  # controller id, None when unsignalized


@dataclass
class Edge:
    id: str
    from_node: str
    to_node: str
    length: float  # meters
    lanes: int


@dataclass
class Lane:
    id: str
    edge: str
    index: int  # 0 is the rightmost lane
    length: float  # meters
    speed: float  # speed limit, m/s


@dataclass
class Connection:
    """A permitted movement from an entry lane to an exit lane."""
    id: str
    from_lane: str
    to_lane: str
    tsc: Optional[str]
    link_index: int  # position of this connection in its TSC's phase states


@dataclass
class Phase:
    """One step of a cyclic phase program.

    `state` has one character per controlled connection (ordered by
    link_index): 'G' open with priority, 'g' open without priority,
    'y' yellow, 'r' red.
    """
    kind: PhaseKind
    duration: int  # default duration in seconds
    state: str

    def is_open(self, link_index: int) -> bool:
        return self.state[link_index] in "Gg"

    def has_priority(self, link_index: int) -> bool:
        return self.state[link_index] == "G"


@dataclass
class RoadNetwork:
    """Static topology: intersections, edges, lanes, connections, programs."""
    intersections: Dict[str, Intersection] = field(default_factory=dict)
    edges: Dict[str, Edge] = field(default_factory=dict)
    lanes: Dict[str, Lane] = field(default_factory=dict)
    connections: Dict[str, Connection] = field(default_factory=dict)
    programs: Dict[str, List[Phase]] = field(default_factory=dict)

    @cached_property
    def tsc_ids(self) -> List[str]:
        return sorted(self.programs)

    @cached_property
    def tsc_connections(self) -> Dict[str, List[Connection]]:
        """Connections of every TSC ordered by link index."""
        result: Dict[str, List[Connection]] = {tsc: [] for tsc in self.tsc_ids}
        for conn in self.connections.values():
            if conn.tsc is not None:
                result.setdefault(conn.tsc, []).append(conn)
        for conns in result.values():
            conns.sort(key=lambda c: c.link_index)
        return result

    @cached_property
    def next_connection(self) -> Dict[Tuple[str, str], Connection]:
        """Connection linking (entry lane, exit lane)."""
        return {(c.from_lane, c.to_lane): c for c in self.connections.values()}

    @cached_property
    def outgoing_connections(self) -> Dict[str, List[Connection]]:
        result: Dict[str, List[Connection]] = {lane_id: [] for lane_id in self.lanes}
        for conn in self.connections.values():
            result[conn.from_lane].append(conn)
        return result

    @cached_property
    def inbound_lanes(self) -> Dict[str, List[str]]:
        """Entry lanes of every TSC's connections, sorted."""
        return {
            tsc: sorted({c.from_lane for c in conns})
            for tsc, conns in self.tsc_connections.items()
        }

    def lane_junction(self, lane_id: str) -> str:
        """Intersection at the downstream end of a lane."""
        return self.edges[self.lanes[lane_id].edge].to_node

    def describe(self) -> Dict[str, int]:
        return {
            "intersections": len(self.intersections),
            "tscs": len(self.programs),
            "edges": len(self.edges),
            "lanes": len(self.lanes),
            "connections": len(self.connections),
        }


# ============================================================================
# DEMAND
# ============================================================================

@dataclass(frozen=True)
class Trip:
    id: str
    depart: int  # seconds
    route: Tuple[str, ...]  # lane ids, at least two


@dataclass
class TripTable:
    trips: List[Trip] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.trips)

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "trip_id": [t.id for t in self.trips],
                "depart_s": [t.depart for t in self.trips],
                "n_lanes": [len(t.route) for t in self.trips],
            }
        )


# ============================================================================
# EVALUATION
# ============================================================================

@dataclass
class EpisodeResult:
    """Outcome of one closed-loop evaluation episode."""
    policy_id: str
    scenario_seed: int
    regime: str
    delays: np.ndarray  # total instantaneous delay per step
    queued: np.ndarray  # total queued vehicles per step
    n_vehicles: np.ndarray  # vehicles in the network per step
    n_blocked: np.ndarray  # trips waiting to enter per step
    trips: pd.DataFrame  # trip_id, depart_s, arrive_s, duration_s, censored

    @property
    def completed_durations(self) -> pd.Series:
        return self.trips.loc[~self.trips["censored"], "duration_s"]

    @property
    def n_censored(self) -> int:
        return int(self.trips["censored"].sum())
