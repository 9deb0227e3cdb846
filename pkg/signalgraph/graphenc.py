"""Observation graphs built from simulation states.

Every decision step the simulation is encoded as a typed graph: TSC,
connection, lane and (in vehicle mode) vehicle nodes, joined by typed
directed edges. Nodes are stored grouped by type (TSCs first, then
connections, lanes, vehicles) so each type owns one feature matrix and a
contiguous block of global indices.
"""

import logging
import os
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from . import parameters as prm
from .data_models import EdgeType, GraphMode, NodeType, RoadNetwork, edge_types_for, node_types_for
from .sim import SimState

logger = logging.getLogger(__name__)

FEATURE_NAMES = {
    (NodeType.TSC, GraphMode.LANE): ("time_since_last_switch",),
    (NodeType.CONNECTION, GraphMode.LANE): ("is_open", "has_priority", "n_switches_to_open", "next_opening_has_priority"),
    (NodeType.LANE, GraphMode.LANE): ("length", "n_vehicles", "avg_speed"),
    (NodeType.TSC, GraphMode.VEHICLE): ("time_since_last_switch",),
    (NodeType.CONNECTION, GraphMode.VEHICLE): ("is_open", "has_priority", "n_switches_to_open", "next_opening_has_priority"),
    (NodeType.LANE, GraphMode.VEHICLE): ("length",),
    (NodeType.VEHICLE, GraphMode.VEHICLE): ("speed", "position_fraction"),
}

NODE_PREFIX = {
    NodeType.TSC: "tsc",
    NodeType.CONNECTION: "conn",
    NodeType.LANE: "lane",
    NodeType.VEHICLE: "veh",
}


def feature_widths(mode: GraphMode) -> Dict[NodeType, int]:
    """Raw feature width of every node type present in `mode`."""
    return {t: len(FEATURE_NAMES[(t, mode)]) for t in node_types_for(mode)}


# ============================================================================
# FEATURE SCALING
# ============================================================================

@dataclass(frozen=True)
class FeatureScaling:
    """Fixed affine (divisive) scaling of raw node features."""
    length: float = prm.LENGTH_SCALE
    speed: float = prm.SPEED_SCALE
    count: float = prm.COUNT_SCALE
    time_since_switch: float = prm.TIME_SINCE_SWITCH_SCALE
    switches: float = prm.SWITCHES_TO_OPEN_SCALE

    def column_scales(self, node_type: NodeType, mode: GraphMode) -> np.ndarray:
        per_feature = {
            "time_since_last_switch": self.time_since_switch,
            "is_open": 1.0,
            "has_priority": 1.0,
            "n_switches_to_open": self.switches,
            "next_opening_has_priority": 1.0,
            "length": self.length,
            "n_vehicles": self.count,
            "avg_speed": self.speed,
            "speed": self.speed,
            "position_fraction": 1.0,
        }
        return np.array([per_feature[name] for name in FEATURE_NAMES[(node_type, mode)]], dtype=float)

    def scale(self, node_type: NodeType, mode: GraphMode, raw: np.ndarray) -> np.ndarray:
        return np.asarray(raw, dtype=float) / self.column_scales(node_type, mode)

    def unscale(self, node_type: NodeType, mode: GraphMode, scaled: np.ndarray) -> np.ndarray:
        return np.asarray(scaled, dtype=float) * self.column_scales(node_type, mode)

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, float]) -> "FeatureScaling":
        return cls(**{k: float(v) for k, v in values.items()})


DEFAULT_SCALING = FeatureScaling()


# ============================================================================
# GRAPH CONTAINER
# ============================================================================

@dataclass
class ObservationGraph:
    """Typed observation graph of one simulation step (or a batch of them)."""
    mode: GraphMode
    node_ids: List[str]
    counts: Dict[NodeType, int]
    features: Dict[NodeType, np.ndarray]  # scaled, one row per node of the type
    edges: Dict[EdgeType, Tuple[np.ndarray, np.ndarray]]  # global (src, dst) indices
    tsc_ids: List[str]  # controller id of every TSC node, in row order
    index_of: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index_of:
            self.index_of = {node_id: i for i, node_id in enumerate(self.node_ids)}

    @property
    def offsets(self) -> Dict[NodeType, int]:
        result, offset = {}, 0
        for node_type in node_types_for(self.mode):
            result[node_type] = offset
            offset += self.counts[node_type]
        return result

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_tsc(self) -> int:
        return self.counts[NodeType.TSC]

    @property
    def tsc_rows(self) -> np.ndarray:
        return np.arange(self.counts[NodeType.TSC])

    def node_type(self, index: int) -> NodeType:
        for node_type, offset in self.offsets.items():
            if offset <= index < offset + self.counts[node_type]:
                return node_type
        raise IndexError(index)

    def summary(self) -> pd.DataFrame:
        """Node and edge counts per type."""
        rows = [{"kind": "node", "type": t.name.lower(), "count": self.counts[t]} for t in node_types_for(self.mode)]
        rows += [{"kind": "edge", "type": e.value, "count": int(len(self.edges[e][0]))} for e in edge_types_for(self.mode)]
        return pd.DataFrame(rows)


# ============================================================================
# ENCODING
# ============================================================================

@lru_cache(maxsize=1024)
def opening_table(states: Tuple[str, ...]) -> np.ndarray:
    """Switches until each link next opens, and whether that opening has priority.

    Args:
        states: Phase state strings of one cyclic program

    Returns:
        Array (n_phases, n_links, 2); [..., 0] counts phase advances until
        the link is open (0 if open now, the program length if never) and
        [..., 1] is 1.0 when that opening has priority
    """
    n_phases = len(states)
    n_links = len(states[0]) if states else 0
    table = np.zeros((n_phases, n_links, 2))
    for p in range(n_phases):
        for link in range(n_links):
            table[p, link, 0] = n_phases
            for k in range(n_phases):
                ch = states[(p + k) % n_phases][link]
                if ch in "Gg":
                    table[p, link, 0] = k
                    table[p, link, 1] = 1.0 if ch == "G" else 0.0
                    break
    return table


def encode(
    state: SimState,
    network: RoadNetwork,
    mode: GraphMode,
    scaling: FeatureScaling = DEFAULT_SCALING,
) -> ObservationGraph:
    """Build the observation graph of a simulation state.

    Args:
        state: Simulation state
        network: Network the state runs on
        mode: LANE (no vehicle nodes) or VEHICLE
        scaling: Feature scaling constants

    Returns:
        ObservationGraph with scaled features
    """
    mode = GraphMode(mode)
    node_ids: List[str] = []
    raw: Dict[NodeType, List[List[float]]] = {t: [] for t in node_types_for(mode)}
    edges: Dict[EdgeType, Tuple[List[int], List[int]]] = {e: ([], []) for e in edge_types_for(mode)}

    tsc_ids = list(network.tsc_ids)
    for tsc in tsc_ids:
        node_ids.append(f"tsc:{tsc}")
        raw[NodeType.TSC].append([float(state.time_since_last_switch(tsc))])

    conns = [c for tsc in tsc_ids for c in network.tsc_connections[tsc]]
    for conn in conns:
        controller = state.controller(conn.tsc)
        program = network.programs[conn.tsc]
        phase = program[controller.phase_index]
        table = opening_table(tuple(p.state for p in program))
        switches, next_priority = table[controller.phase_index, conn.link_index]
        node_ids.append(f"conn:{conn.id}")
        raw[NodeType.CONNECTION].append(
            [
                float(phase.is_open(conn.link_index)),
                float(phase.has_priority(conn.link_index)),
                float(switches),
                float(next_priority),
            ]
        )

    for lane_id, lane in network.lanes.items():
        node_ids.append(f"lane:{lane_id}")
        if mode == GraphMode.LANE:
            speeds = [state.vehicles[v].speed for v in state.lane_vehicles[lane_id]]
            avg_speed = float(np.mean(speeds)) if speeds else 0.0
            raw[NodeType.LANE].append([lane.length, float(len(speeds)), avg_speed])
        else:
            raw[NodeType.LANE].append([lane.length])

    vehicle_lanes: List[str] = []
    if mode == GraphMode.VEHICLE:
        for lane_id, lane in network.lanes.items():
            for vid in state.lane_vehicles[lane_id]:
                vehicle = state.vehicles[vid]
                node_ids.append(f"veh:{vid}")
                raw[NodeType.VEHICLE].append([vehicle.speed, vehicle.position / lane.length])
                vehicle_lanes.append(lane_id)

    counts = {t: len(raw[t]) for t in node_types_for(mode)}
    index_of = {node_id: i for i, node_id in enumerate(node_ids)}

    def link(edge_type: EdgeType, src: int, dst: int) -> None:
        edges[edge_type][0].append(src)
        edges[edge_type][1].append(dst)

    self_types = {
        NodeType.TSC: EdgeType.TSC_SELF,
        NodeType.CONNECTION: EdgeType.CONNECTION_SELF,
        NodeType.LANE: EdgeType.LANE_SELF,
        NodeType.VEHICLE: EdgeType.VEHICLE_SELF,
    }
    for node_id, i in index_of.items():
        prefix = node_id.split(":", 1)[0]
        node_type = next(t for t, p in NODE_PREFIX.items() if p == prefix)
        link(self_types[node_type], i, i)

    for conn in conns:
        c = index_of[f"conn:{conn.id}"]
        t = index_of[f"tsc:{conn.tsc}"]
        entry = index_of[f"lane:{conn.from_lane}"]
        exit_ = index_of[f"lane:{conn.to_lane}"]
        link(EdgeType.TSC_TO_CONNECTION, t, c)
        link(EdgeType.CONNECTION_TO_TSC, c, t)
        link(EdgeType.ENTRY_LANE_TO_CONNECTION, entry, c)
        link(EdgeType.CONNECTION_TO_ENTRY_LANE, c, entry)
        link(EdgeType.EXIT_LANE_TO_CONNECTION, exit_, c)
        link(EdgeType.CONNECTION_TO_EXIT_LANE, c, exit_)

    if mode == GraphMode.VEHICLE:
        first_vehicle = len(node_ids) - counts[NodeType.VEHICLE]
        for k, lane_id in enumerate(vehicle_lanes):
            v = first_vehicle + k
            lane_index = index_of[f"lane:{lane_id}"]
            link(EdgeType.VEHICLE_TO_LANE, v, lane_index)
            link(EdgeType.LANE_TO_VEHICLE, lane_index, v)

    features = {
        t: scaling.scale(t, mode, np.array(raw[t], dtype=float).reshape(counts[t], len(FEATURE_NAMES[(t, mode)])))
        for t in node_types_for(mode)
    }
    return ObservationGraph(
        mode=mode,
        node_ids=node_ids,
        counts=counts,
        features=features,
        edges={e: (np.array(s, dtype=int), np.array(d, dtype=int)) for e, (s, d) in edges.items()},
        tsc_ids=tsc_ids,
        index_of=index_of,
    )


def union_graphs(graphs: Sequence[ObservationGraph]) -> ObservationGraph:
    """Disjoint union of graphs, keeping nodes grouped by type.

    TSC rows of the union follow the input order, so the TSCs of graph k
    occupy a contiguous block after those of graphs 0..k-1.
    """
    if not graphs:
        raise ValueError("cannot build the union of zero graphs")
    mode = graphs[0].mode
    types = node_types_for(mode)
    counts = {t: sum(g.counts[t] for g in graphs) for t in types}

    new_offsets, offset = {}, 0
    for t in types:
        new_offsets[t] = offset
        offset += counts[t]

    remaps = []
    node_ids: List[str] = [""] * offset
    seen = {t: 0 for t in types}
    for k, graph in enumerate(graphs):
        if graph.mode != mode:
            raise ValueError("cannot union graphs of different modes")
        remap = np.empty(graph.n_nodes, dtype=int)
        for t, old_offset in graph.offsets.items():
            n = graph.counts[t]
            start = new_offsets[t] + seen[t]
            remap[old_offset:old_offset + n] = np.arange(start, start + n)
            for j in range(n):
                node_ids[start + j] = f"g{k}/{graph.node_ids[old_offset + j]}"
            seen[t] += n
        remaps.append(remap)

    features = {t: np.concatenate([g.features[t] for g in graphs], axis=0) for t in types}
    edges = {}
    for e in edge_types_for(mode):
        edges[e] = (
            np.concatenate([remaps[k][g.edges[e][0]] for k, g in enumerate(graphs)]).astype(int),
            np.concatenate([remaps[k][g.edges[e][1]] for k, g in enumerate(graphs)]).astype(int),
        )
    tsc_ids = [tsc for g in graphs for tsc in g.tsc_ids]
    return ObservationGraph(mode=mode, node_ids=node_ids, counts=counts, features=features, edges=edges, tsc_ids=tsc_ids)


def dump_graph(graph: ObservationGraph, path: str) -> None:
    """Write the graph as an edge list: one `src dst edge_type` line per edge."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    lines = [f"# mode={graph.mode.value} nodes={graph.n_nodes}"]
    for t in node_types_for(graph.mode):
        lines.append(f"# {t.name.lower()}={graph.counts[t]}")
    for e in edge_types_for(graph.mode):
        for src, dst in zip(*graph.edges[e]):
            lines.append(f"{graph.node_ids[src]} {graph.node_ids[dst]} {e.value}")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")
    logger.info("Wrote graph dump (%d nodes) to %s", graph.n_nodes, path)


def local_tsc_features(graph: ObservationGraph, tsc_id: str) -> np.ndarray:
    """Flattened lane-mode features of one TSC's neighbourhood.

    Concatenates the TSC feature, the features of its connections and the
    traffic features (vehicle count, mean speed) of the lanes those
    connections touch. Lane lengths are left out since they never change
    for a given intersection.
    """
    if graph.mode != GraphMode.LANE:
        raise ValueError("local TSC features are defined on lane-mode graphs")
    row = graph.tsc_ids.index(tsc_id) + graph.offsets[NodeType.TSC]
    src, dst = graph.edges[EdgeType.TSC_TO_CONNECTION]
    conn_rows = np.sort(dst[src == row])
    lane_rows = set()
    for edge_type in (EdgeType.CONNECTION_TO_ENTRY_LANE, EdgeType.CONNECTION_TO_EXIT_LANE):
        c_src, c_dst = graph.edges[edge_type]
        lane_rows.update(c_dst[np.isin(c_src, conn_rows)].tolist())
    lanes = np.array(sorted(lane_rows), dtype=int)
    offsets = graph.offsets
    parts = [
        graph.features[NodeType.TSC][row - offsets[NodeType.TSC]],
        graph.features[NodeType.CONNECTION][conn_rows - offsets[NodeType.CONNECTION]].ravel(),
        graph.features[NodeType.LANE][lanes - offsets[NodeType.LANE]][:, 1:].ravel(),
    ]
    return np.concatenate(parts)
