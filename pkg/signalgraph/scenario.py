"""Deterministic generation of road networks and traffic demand.

This module creates:
- Random grid-like road networks with signalized intersections and fringe
  approaches, including synthesized phase programs
- Poisson trip demand whose origin/destination weights change every block
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import networkx as nx
import numpy as np

from . import parameters as prm
from .data_models import (
    Connection,
    Edge,
    Intersection,
    Lane,
    Phase,
    PhaseKind,
    RoadNetwork,
    Trip,
    TripTable,
)
from .errors import ScenarioError

logger = logging.getLogger(__name__)

# Grid directions: north, east, south, west
DIRECTIONS = ((0, 1), (1, 0), (0, -1), (-1, 0))


@dataclass(frozen=True)
class GenerationParams:
    """Bounds for random network generation."""
    min_intersections: int = prm.MIN_INTERSECTIONS
    max_intersections: int = prm.MAX_INTERSECTIONS
    min_edge_length: float = prm.MIN_EDGE_LENGTH
    max_edge_length: float = prm.MAX_EDGE_LENGTH
    min_lanes: int = prm.MIN_LANES_PER_EDGE
    max_lanes: int = prm.DEFAULT_MAX_GENERATED_LANES
    extra_link_probability: float = prm.EXTRA_LINK_PROBABILITY
    fringe_probability: float = prm.FRINGE_APPROACH_PROBABILITY

    def validate(self) -> None:
        if self.min_intersections < 1:
            raise ScenarioError("a network needs at least 1 intersection")
        if self.max_intersections < self.min_intersections:
            raise ScenarioError("max_intersections is below min_intersections")
        if not (prm.MIN_EDGE_LENGTH <= self.min_edge_length <= self.max_edge_length <= prm.MAX_EDGE_LENGTH):
            raise ScenarioError(
                f"edge lengths must satisfy {prm.MIN_EDGE_LENGTH} <= min <= max <= {prm.MAX_EDGE_LENGTH}"
            )
        if not (prm.MIN_LANES_PER_EDGE <= self.min_lanes <= self.max_lanes <= prm.MAX_LANES_PER_EDGE):
            raise ScenarioError(
                f"lanes per edge must satisfy {prm.MIN_LANES_PER_EDGE} <= min <= max <= {prm.MAX_LANES_PER_EDGE}"
            )
        for name in ("extra_link_probability", "fringe_probability"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ScenarioError(f"{name} must be within [0, 1]")

    def with_intersections(self, n: int) -> "GenerationParams":
        """Copy of these bounds with the intersection count fixed to n."""
        return GenerationParams(
            min_intersections=n,
            max_intersections=n,
            min_edge_length=self.min_edge_length,
            max_edge_length=self.max_edge_length,
            min_lanes=self.min_lanes,
            max_lanes=self.max_lanes,
            extra_link_probability=self.extra_link_probability,
            fringe_probability=self.fringe_probability,
        )


# ============================================================================
# NETWORK GENERATION
# ============================================================================

def _grow_cells(rng: np.random.Generator, n: int) -> Tuple[List[Tuple[int, int]], set]:
    """Grow a connected set of grid cells with a random spanning tree."""
    cells = [(0, 0)]
    occupied = {(0, 0)}
    links = set()
    while len(cells) < n:
        base = cells[int(rng.integers(len(cells)))]
        dx, dy = DIRECTIONS[int(rng.integers(4))]
        candidate = (base[0] + dx, base[1] + dy)
        if candidate in occupied:
            continue
        cells.append(candidate)
        occupied.add(candidate)
        links.add(frozenset((base, candidate)))
    return cells, links


def generate_network(seed: int, params: Optional[GenerationParams] = None) -> RoadNetwork:
    """Generate a random road network.

    Signalized intersections sit on grid cells joined by a random spanning
    tree plus optional extra links; free sides receive fringe approaches
    ending at unsignalized dead-end nodes. Every signalized intersection gets
    a synthesized phase program.

    Args:
        seed: Random seed; the network is a pure function of (seed, params)
        params: Generation bounds (defaults follow the desk-scale protocol)

    Returns:
        A validated RoadNetwork
    """
    params = params or GenerationParams()
    params.validate()
    rng = np.random.default_rng(seed)

    n = int(rng.integers(params.min_intersections, params.max_intersections + 1))
    cells, links = _grow_cells(rng, n)
    occupied = set(cells)

    # Extra links between adjacent cells (general connectivity)
    for i, a in enumerate(cells):
        for b in cells[i + 1:]:
            if abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1 and frozenset((a, b)) not in links:
                if rng.random() < params.extra_link_probability:
                    links.add(frozenset((a, b)))

    cell_ids = {cell: f"J{i}" for i, cell in enumerate(cells)}
    network = RoadNetwork()
    for cell, node_id in cell_ids.items():
        network.intersections[node_id] = Intersection(
            id=node_id, x=cell[0] * prm.GRID_SPACING, y=cell[1] * prm.GRID_SPACING, tsc=node_id
        )

    roads: List[Tuple[str, str]] = []
    for cell in cells:
        for dx, dy in DIRECTIONS:
            other = (cell[0] + dx, cell[1] + dy)
            if other in occupied and frozenset((cell, other)) in links and cell_ids[cell] < cell_ids[other]:
                roads.append((cell_ids[cell], cell_ids[other]))

    # Fringe approaches on free sides; every intersection gets at least 3 approaches
    fringe_count = 0
    for cell in cells:
        node_id = cell_ids[cell]
        degree = sum(1 for a, b in roads if node_id in (a, b))
        free_sides = [
            (dx, dy) for dx, dy in DIRECTIONS if (cell[0] + dx, cell[1] + dy) not in occupied
        ]
        chosen = [side for side in free_sides if rng.random() < params.fringe_probability]
        for side in free_sides:
            if degree + len(chosen) >= 3:
                break
            if side not in chosen:
                chosen.append(side)
        for dx, dy in sorted(chosen, key=DIRECTIONS.index):
            fringe_id = f"F{fringe_count}"
            fringe_count += 1
            network.intersections[fringe_id] = Intersection(
                id=fringe_id,
                x=(cell[0] + 0.6 * dx) * prm.GRID_SPACING,
                y=(cell[1] + 0.6 * dy) * prm.GRID_SPACING,
                tsc=None,
            )
            roads.append((node_id, fringe_id))

    for a, b in roads:
        length = round(float(rng.uniform(params.min_edge_length, params.max_edge_length)), 1)
        speed = float(prm.LANE_SPEED_LIMITS[int(rng.integers(len(prm.LANE_SPEED_LIMITS)))])
        for src, dst in ((a, b), (b, a)):
            n_lanes = int(rng.integers(params.min_lanes, params.max_lanes + 1))
            edge_id = f"{src}_{dst}"
            network.edges[edge_id] = Edge(id=edge_id, from_node=src, to_node=dst, length=length, lanes=n_lanes)
            for index in range(n_lanes):
                lane_id = f"{edge_id}_{index}"
                network.lanes[lane_id] = Lane(id=lane_id, edge=edge_id, index=index, length=length, speed=speed)

    _build_connections(network)
    network.programs.update(synthesize_programs(network))

    from .loaders import validate_network  # circular at module import time

    validate_network(network)
    logger.info("Generated network seed=%s: %s", seed, network.describe())
    return network


def _heading(network: RoadNetwork, edge: Edge) -> Tuple[float, float]:
    a = network.intersections[edge.from_node]
    b = network.intersections[edge.to_node]
    dx, dy = b.x - a.x, b.y - a.y
    norm = math.hypot(dx, dy) or 1.0
    return dx / norm, dy / norm


def turn_angle(network: RoadNetwork, in_edge: Edge, out_edge: Edge) -> float:
    """Signed heading change in degrees (positive turns left)."""
    hx, hy = _heading(network, in_edge)
    ox, oy = _heading(network, out_edge)
    return math.degrees(math.atan2(hx * oy - hy * ox, hx * ox + hy * oy))


def classify_turn(network: RoadNetwork, in_edge: Edge, out_edge: Edge) -> str:
    angle = turn_angle(network, in_edge, out_edge)
    if angle > prm.STRAIGHT_TOLERANCE_DEG:
        return "left"
    if angle < -prm.STRAIGHT_TOLERANCE_DEG:
        return "right"
    return "straight"


def _build_connections(network: RoadNetwork) -> None:
    """Create lane-to-lane connections at every signalized intersection."""
    turn_order = {"right": 0, "straight": 1, "left": 2}
    for node in network.intersections.values():
        if node.tsc is None:
            continue
        in_edges = [e for e in network.edges.values() if e.to_node == node.id]
        out_edges = [e for e in network.edges.values() if e.from_node == node.id]
        movements = []
        for e_in in in_edges:
            for e_out in out_edges:
                if e_out.to_node == e_in.from_node:
                    continue  # no U-turns
                turn = classify_turn(network, e_in, e_out)
                if turn == "right":
                    pairs = [(0, 0)]
                elif turn == "left":
                    pairs = [(e_in.lanes - 1, e_out.lanes - 1)]
                else:
                    pairs = [(i, min(i, e_out.lanes - 1)) for i in range(e_in.lanes)]
                for lane_in, lane_out in pairs:
                    movements.append((e_in.id, turn_order[turn], lane_in, e_out.id, lane_out))
        movements.sort()
        for link_index, (in_id, _, lane_in, out_id, lane_out) in enumerate(movements):
            conn_id = f"{node.id}_c{link_index}"
            network.connections[conn_id] = Connection(
                id=conn_id,
                from_lane=f"{in_id}_{lane_in}",
                to_lane=f"{out_id}_{lane_out}",
                tsc=node.tsc,
                link_index=link_index,
            )


# ============================================================================
# CONFLICTS AND PHASE PROGRAMS
# ============================================================================

def _bearing(network: RoadNetwork, center: str, other: str) -> float:
    a = network.intersections[center]
    b = network.intersections[other]
    return math.atan2(b.y - a.y, b.x - a.x)


def _chords_cross(a: Tuple[int, int], b: Tuple[int, int]) -> bool:
    lo, hi = sorted(a)
    inside = [lo < p < hi for p in b]
    if any(p in (lo, hi) for p in b):
        return False
    return inside[0] != inside[1]


def conflict_table(network: RoadNetwork) -> Dict[Tuple[str, str], str]:
    """Pairwise conflicts between connections sharing an intersection.

    Returns:
        Dict mapping (conn_a, conn_b) to "hard" or "yield"; "yield" means
        conn_a must give way to conn_b when both are open. Pairs without
        conflict are absent.
    """
    cached = network.__dict__.get("_conflicts")
    if cached is None:
        cached = _compute_conflicts(network)
        network.__dict__["_conflicts"] = cached
    return cached


def _compute_conflicts(network: RoadNetwork) -> Dict[Tuple[str, str], str]:
    by_junction: Dict[str, List[Connection]] = {}
    for conn in network.connections.values():
        junction = network.lane_junction(conn.from_lane)
        by_junction.setdefault(junction, []).append(conn)

    table: Dict[Tuple[str, str], str] = {}
    for junction, conns in by_junction.items():
        neighbours = set()
        for edge in network.edges.values():
            if edge.to_node == junction:
                neighbours.add(edge.from_node)
            if edge.from_node == junction:
                neighbours.add(edge.to_node)
        # Clockwise order of road ends; each end has an in slot then an out slot
        order = sorted(neighbours, key=lambda n: (-_bearing(network, junction, n), n))
        slot = {n: 2 * k for k, n in enumerate(order)}

        info = {}
        for conn in conns:
            e_in = network.edges[network.lanes[conn.from_lane].edge]
            e_out = network.edges[network.lanes[conn.to_lane].edge]
            info[conn.id] = (
                e_in,
                e_out,
                (slot[e_in.from_node], slot[e_out.to_node] + 1),
                classify_turn(network, e_in, e_out),
            )

        for i, a in enumerate(conns):
            in_a, out_a, chord_a, turn_a = info[a.id]
            for b in conns[i + 1:]:
                in_b, out_b, chord_b, turn_b = info[b.id]
                if in_a.id == in_b.id:
                    continue
                if not (out_a.id == out_b.id or _chords_cross(chord_a, chord_b)):
                    continue
                opposite = abs(turn_angle(network, in_a, in_b)) > prm.OPPOSITE_APPROACH_DEG
                if opposite and turn_a == "left" and turn_b != "left":
                    table[(a.id, b.id)] = "yield"
                    table[(b.id, a.id)] = "priority"
                elif opposite and turn_b == "left" and turn_a != "left":
                    table[(b.id, a.id)] = "yield"
                    table[(a.id, b.id)] = "priority"
                else:
                    table[(a.id, b.id)] = "hard"
                    table[(b.id, a.id)] = "hard"
    return table


def synthesize_programs(network: RoadNetwork) -> Dict[str, List[Phase]]:
    """Build a cyclic green/yellow program for every TSC.

    Connections are grouped into non-conflicting sets by greedy coloring of
    the hard-conflict graph; each group is then extended with every
    connection compatible with it. Movements that must give way within a
    phase are marked 'g' (open without priority).
    """
    conflicts = _compute_conflicts(network)
    programs: Dict[str, List[Phase]] = {}
    grouped: Dict[str, List[Connection]] = {}
    for conn in network.connections.values():
        if conn.tsc is not None:
            grouped.setdefault(conn.tsc, []).append(conn)
    for tsc in sorted(grouped):
        conns = sorted(grouped[tsc], key=lambda c: c.link_index)
        graph = nx.Graph()
        graph.add_nodes_from(c.id for c in conns)
        for a in conns:
            for b in conns:
                if conflicts.get((a.id, b.id)) == "hard":
                    graph.add_edge(a.id, b.id)
        ordered = [c.id for c in conns]
        coloring = nx.greedy_color(graph, strategy=lambda g, colors: iter(ordered))
        n_groups = max(coloring.values()) + 1

        phases: List[Phase] = []
        for group in range(n_groups):
            members = [cid for cid in ordered if coloring[cid] == group]
            for cid in ordered:
                if cid not in members and not any(graph.has_edge(cid, m) for m in members):
                    members.append(cid)
            member_set = set(members)
            green = []
            for conn in conns:
                if conn.id not in member_set:
                    green.append("r")
                elif any(conflicts.get((conn.id, other)) == "yield" for other in member_set):
                    green.append("g")
                else:
                    green.append("G")
            green_state = "".join(green)
            yellow_state = "".join("y" if ch in "Gg" else "r" for ch in green_state)
            phases.append(Phase(kind=PhaseKind.GREEN, duration=prm.DEFAULT_GREEN_DURATION, state=green_state))
            phases.append(Phase(kind=PhaseKind.YELLOW, duration=prm.YELLOW_DURATION, state=yellow_state))
        programs[tsc] = phases
    return programs


# ============================================================================
# DEMAND GENERATION
# ============================================================================

def lane_graph(network: RoadNetwork) -> nx.DiGraph:
    """Lane-level routing graph weighted by free-flow traversal time."""
    graph = nx.DiGraph()
    graph.add_nodes_from(network.lanes)
    for conn in network.connections.values():
        lane = network.lanes[conn.from_lane]
        graph.add_edge(conn.from_lane, conn.to_lane, weight=lane.length / lane.speed)
    return graph


def routable_pairs(network: RoadNetwork) -> Dict[str, Dict[str, List[str]]]:
    """Shortest free-flow route between every routable (origin, destination) lane pair."""
    paths = dict(nx.all_pairs_dijkstra_path(lane_graph(network), weight="weight"))
    return {
        origin: {dest: path for dest, path in targets.items() if len(path) >= 2}
        for origin, targets in paths.items()
        if any(len(path) >= 2 for path in targets.values())
    }


def sample_od_schedule(
    rng: np.random.Generator,
    n_origins: int,
    n_destinations: int,
    horizon: int,
) -> List[Tuple[int, np.ndarray, np.ndarray]]:
    """Draw origin and destination weights for every resampling block.

    Returns:
        List of (block_start_s, origin_weights, destination_weights)
    """
    n_blocks = math.ceil(horizon / prm.OD_RESAMPLE_PERIOD)
    schedule = []
    for block in range(n_blocks):
        w_origin = rng.dirichlet(np.full(n_origins, prm.OD_DIRICHLET_ALPHA))
        w_dest = rng.dirichlet(np.full(n_destinations, prm.OD_DIRICHLET_ALPHA))
        schedule.append((block * prm.OD_RESAMPLE_PERIOD, w_origin, w_dest))
    return schedule


def generate_demand(seed: int, network: RoadNetwork, rate: float, horizon: int) -> TripTable:
    """Generate a Poisson trip table over [0, horizon).

    The number of departures in every second is Poisson(rate). Origins and
    destinations are drawn from Dirichlet weights re-sampled every block;
    the route is the free-flow shortest lane path.

    Args:
        seed: Random seed
        network: Road network to route on
        rate: Expected trips per second
        horizon: Generation window in seconds

    Returns:
        TripTable with non-decreasing departure times
    """
    if rate <= 0:
        raise ScenarioError("demand rate must be positive")
    if horizon < 0:
        raise ScenarioError("demand horizon must be non-negative")
    routes = routable_pairs(network)
    if not routes:
        raise ScenarioError("no routable pairs")
    if horizon == 0:
        return TripTable()

    rng = np.random.default_rng(seed)
    origins = sorted(routes)
    destinations = list(network.lanes)
    dest_index = {lane_id: i for i, lane_id in enumerate(destinations)}
    reachable = {
        o: np.array([dest_index[d] for d in routes[o]], dtype=int) for o in origins
    }

    trips: List[Trip] = []
    for start, w_origin, w_dest in sample_od_schedule(rng, len(origins), len(destinations), horizon):
        for t in range(start, min(start + prm.OD_RESAMPLE_PERIOD, horizon)):
            for _ in range(int(rng.poisson(rate))):
                origin = origins[int(rng.choice(len(origins), p=w_origin))]
                candidates = reachable[origin]
                weights = w_dest[candidates]
                total = weights.sum()
                weights = weights / total if total > 0 else np.full(len(candidates), 1.0 / len(candidates))
                dest = destinations[int(candidates[int(rng.choice(len(candidates), p=weights))])]
                trips.append(Trip(id=f"t{len(trips):06d}", depart=t, route=tuple(routes[origin][dest])))

    logger.info("Generated %d trips (seed=%s, rate=%.2f/s, horizon=%ss)", len(trips), seed, rate, horizon)
    return TripTable(trips=trips)
