"""Loading and saving road networks and trip tables.

Both formats are line-oriented text: `#` starts a comment, records are
whitespace-separated `key=value` pairs. Network files group records under
`[intersection]`, `[edge]`, `[lane]`, `[connection]` and `[phase]` section
headers; phases are listed in program order per TSC. Trip files hold one
`trip <id> <depart> route=<lane>,<lane>,...` line per trip.
"""

import hashlib
import logging
import os
from typing import Dict, Iterator, List, Optional, Tuple

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
from .errors import NetworkValidationError, ParseError, TripValidationError

logger = logging.getLogger(__name__)

NETWORK_HEADER = "# signalgraph network v1"
TRIPS_HEADER = "# signalgraph trips v1"
NO_TSC = "-"

SECTION_KEYS = {
    "intersection": ("id", "x", "y", "tsc"),
    "edge": ("id", "from", "to", "length", "lanes"),
    "lane": ("id", "edge", "index", "length", "speed"),
    "connection": ("id", "from", "to", "tsc", "link"),
    "phase": ("tsc", "kind", "duration", "state"),
}
VALID_STATE_CHARS = set("Ggyr")


# ============================================================================
# NETWORK TEXT FORMAT
# ============================================================================

def _num(value: float) -> str:
    return repr(float(value))


def network_to_text(network: RoadNetwork) -> str:
    """Render a network in canonical text form."""
    lines = [NETWORK_HEADER, "[intersection]"]
    for node in network.intersections.values():
        tsc = node.tsc if node.tsc is not None else NO_TSC
        lines.append(f"id={node.id} x={_num(node.x)} y={_num(node.y)} tsc={tsc}")
    lines.append("[edge]")
    for edge in network.edges.values():
        lines.append(
            f"id={edge.id} from={edge.from_node} to={edge.to_node} "
            f"length={_num(edge.length)} lanes={edge.lanes}"
        )
    lines.append("[lane]")
    for lane in network.lanes.values():
        lines.append(
            f"id={lane.id} edge={lane.edge} index={lane.index} "
            f"length={_num(lane.length)} speed={_num(lane.speed)}"
        )
    lines.append("[connection]")
    for conn in network.connections.values():
        tsc = conn.tsc if conn.tsc is not None else NO_TSC
        lines.append(
            f"id={conn.id} from={conn.from_lane} to={conn.to_lane} tsc={tsc} link={conn.link_index}"
        )
    lines.append("[phase]")
    for tsc, program in network.programs.items():
        for phase in program:
            lines.append(
                f"tsc={tsc} kind={phase.kind.value} duration={phase.duration} state={phase.state}"
            )
    return "\n".join(lines) + "\n"


def network_signature(network: RoadNetwork) -> str:
    """SHA-256 of the canonical text form; identifies a topology."""
    return hashlib.sha256(network_to_text(network).encode("utf-8")).hexdigest()


def _records(text: str, path: Optional[str]) -> Iterator[Tuple[int, str, Dict[str, str]]]:
    """Yield (line number, section, fields) for every record line."""
    section = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SECTION_KEYS:
                raise ParseError(f"unknown section [{section}]", line=number, path=path)
            continue
        if section is None:
            raise ParseError("record before any section header", line=number, path=path)
        fields = {}
        for token in line.split():
            key, sep, value = token.partition("=")
            if not sep or not key or not value:
                raise ParseError(f"expected key=value, got {token!r}", line=number, path=path)
            if key in fields:
                raise ParseError(f"duplicate key {key!r}", line=number, path=path)
            fields[key] = value
        missing = [k for k in SECTION_KEYS[section] if k not in fields]
        unknown = [k for k in fields if k not in SECTION_KEYS[section]]
        if missing or unknown:
            raise ParseError(
                f"[{section}] record has missing keys {missing} / unknown keys {unknown}",
                line=number,
                path=path,
            )
        yield number, section, fields


def parse_network(text: str, path: Optional[str] = None, strict: bool = True) -> RoadNetwork:
    """Parse network text and validate it.

    Args:
        text: File contents
        path: Source path, used in error messages
        strict: Also enforce generator bounds on edge lengths and lane counts;
            turn off to import externally authored networks

    Returns:
        Validated RoadNetwork
    """
    network = RoadNetwork()
    for number, section, f in _records(text, path):
        try:
            if section == "intersection":
                tsc = None if f["tsc"] == NO_TSC else f["tsc"]
                _put(network.intersections, Intersection(f["id"], float(f["x"]), float(f["y"]), tsc), number, path)
            elif section == "edge":
                _put(
                    network.edges,
                    Edge(f["id"], f["from"], f["to"], float(f["length"]), int(f["lanes"])),
                    number,
                    path,
                )
            elif section == "lane":
                _put(
                    network.lanes,
                    Lane(f["id"], f["edge"], int(f["index"]), float(f["length"]), float(f["speed"])),
                    number,
                    path,
                )
            elif section == "connection":
                tsc = None if f["tsc"] == NO_TSC else f["tsc"]
                _put(
                    network.connections,
                    Connection(f["id"], f["from"], f["to"], tsc, int(f["link"])),
                    number,
                    path,
                )
            else:
                phase = Phase(PhaseKind(f["kind"]), int(f["duration"]), f["state"])
                network.programs.setdefault(f["tsc"], []).append(phase)
        except ValueError as exc:
            raise ParseError(str(exc), line=number, path=path) from exc
    validate_network(network, strict=strict)
    return network


def _put(table: Dict[str, object], item, number: int, path: Optional[str]) -> None:
    if item.id in table:
        raise ParseError(f"duplicate id {item.id!r}", line=number, path=path)
    table[item.id] = item


def save_network(network: RoadNetwork, path: str) -> None:
    """Write a network to a text file."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(network_to_text(network))
    logger.info("Saved network to %s", path)


def load_network(path: str, strict: bool = True) -> RoadNetwork:
    """Read and validate a network text file."""
    with open(path, "r", encoding="utf-8") as handle:
        text = handle.read()
    return parse_network(text, path=path, strict=strict)


# ============================================================================
# NETWORK VALIDATION
# ============================================================================

def validate_network(network: RoadNetwork, strict: bool = True) -> None:
    """Check every structural invariant of a road network.

    Raises:
        NetworkValidationError: naming the first violated invariant
    """
    nodes = network.intersections
    for edge in network.edges.values():
        if edge.from_node not in nodes or edge.to_node not in nodes:
            raise NetworkValidationError("edge-endpoints-exist", f"edge {edge.id} references a missing intersection")
        if edge.from_node == edge.to_node:
            raise NetworkValidationError("edge-endpoints-exist", f"edge {edge.id} is a self-loop")
        if edge.length <= 0 or edge.lanes < 1:
            raise NetworkValidationError("edge-positive", f"edge {edge.id} needs positive length and lanes")
        if strict and not prm.MIN_EDGE_LENGTH <= edge.length <= prm.MAX_EDGE_LENGTH:
            raise NetworkValidationError(
                "edge-length-range", f"edge {edge.id} length {edge.length} outside [{prm.MIN_EDGE_LENGTH}, {prm.MAX_EDGE_LENGTH}]"
            )
        if strict and not prm.MIN_LANES_PER_EDGE <= edge.lanes <= prm.MAX_LANES_PER_EDGE:
            raise NetworkValidationError(
                "edge-lane-count", f"edge {edge.id} has {edge.lanes} lanes, expected 1 to {prm.MAX_LANES_PER_EDGE}"
            )

    indices: Dict[str, List[int]] = {}
    for lane in network.lanes.values():
        edge = network.edges.get(lane.edge)
        if edge is None:
            raise NetworkValidationError("lane-edge-exists", f"lane {lane.id} references missing edge {lane.edge}")
        if lane.length != edge.length or lane.speed <= 0:
            raise NetworkValidationError("lane-edge-consistent", f"lane {lane.id} disagrees with edge {edge.id}")
        indices.setdefault(lane.edge, []).append(lane.index)
    for edge in network.edges.values():
        if sorted(indices.get(edge.id, [])) != list(range(edge.lanes)):
            raise NetworkValidationError(
                "lane-edge-consistent", f"edge {edge.id} declares {edge.lanes} lanes but lane indices are {sorted(indices.get(edge.id, []))}"
            )

    links: Dict[str, List[int]] = {}
    for conn in network.connections.values():
        if conn.from_lane not in network.lanes or conn.to_lane not in network.lanes:
            raise NetworkValidationError("connection-lanes-exist", f"connection {conn.id} references a missing lane")
        e_in = network.edges[network.lanes[conn.from_lane].edge]
        e_out = network.edges[network.lanes[conn.to_lane].edge]
        if e_in.id == e_out.id or e_in.to_node != e_out.from_node:
            raise NetworkValidationError(
                "connection-edges-meet", f"connection {conn.id} lanes do not meet at one intersection"
            )
        if conn.tsc != nodes[e_in.to_node].tsc:
            raise NetworkValidationError(
                "connection-tsc-consistent", f"connection {conn.id} controller differs from intersection {e_in.to_node}"
            )
        if conn.tsc is not None:
            links.setdefault(conn.tsc, []).append(conn.link_index)

    tscs = {node.tsc for node in nodes.values() if node.tsc is not None}
    for tsc in sorted(tscs | set(network.programs) | set(links)):
        if tsc not in tscs:
            raise NetworkValidationError("tsc-has-intersection", f"program or connection for unknown TSC {tsc}")
        program = network.programs.get(tsc)
        if not program:
            raise NetworkValidationError("tsc-has-program", f"TSC {tsc} has no phase program")
        n_links = len(links.get(tsc, []))
        if sorted(links.get(tsc, [])) != list(range(n_links)):
            raise NetworkValidationError("link-index-contiguous", f"TSC {tsc} link indices are not 0..{n_links - 1}")
        _validate_program(tsc, program, n_links)


def _validate_program(tsc: str, program: List[Phase], n_links: int) -> None:
    if len(program) % 2 != 0:
        raise NetworkValidationError("program-green-yellow", f"TSC {tsc} program must alternate green and yellow")
    for k, phase in enumerate(program):
        if len(phase.state) != n_links or set(phase.state) - VALID_STATE_CHARS:
            raise NetworkValidationError(
                "phase-state-width", f"TSC {tsc} phase {k} state {phase.state!r} does not cover {n_links} links"
            )
        expected = PhaseKind.GREEN if k % 2 == 0 else PhaseKind.YELLOW
        if phase.kind != expected:
            raise NetworkValidationError(
                "program-green-yellow", f"TSC {tsc} phase {k} should be {expected.value}"
            )
        if phase.kind == PhaseKind.YELLOW:
            if phase.duration != prm.YELLOW_DURATION:
                raise NetworkValidationError(
                    "yellow-duration", f"TSC {tsc} yellow phase {k} lasts {phase.duration}s, expected {prm.YELLOW_DURATION}s"
                )
            if "G" in phase.state or "g" in phase.state:
                raise NetworkValidationError("phase-state-width", f"TSC {tsc} yellow phase {k} opens a connection")
        elif phase.duration < prm.MIN_TIME_BETWEEN_SWITCHES or "y" in phase.state:
            raise NetworkValidationError(
                "green-duration", f"TSC {tsc} green phase {k} is shorter than {prm.MIN_TIME_BETWEEN_SWITCHES}s or shows yellow"
            )


# ============================================================================
# TRIPS
# ============================================================================

def trips_to_text(trips: TripTable) -> str:
    lines = [TRIPS_HEADER]
    for trip in trips.trips:
        lines.append(f"trip {trip.id} {trip.depart} route={','.join(trip.route)}")
    return "\n".join(lines) + "\n"


def parse_trips(text: str, path: Optional[str] = None, network: Optional[RoadNetwork] = None) -> TripTable:
    """Parse trip text; validate against `network` when given."""
    trips: List[Trip] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 4 or tokens[0] != "trip" or not tokens[3].startswith("route="):
            raise ParseError("expected 'trip <id> <depart> route=<lanes>'", line=number, path=path)
        try:
            depart = int(tokens[2])
        except ValueError as exc:
            raise ParseError(f"departure {tokens[2]!r} is not an integer", line=number, path=path) from exc
        route = tuple(lane for lane in tokens[3][len("route="):].split(",") if lane)
        trips.append(Trip(id=tokens[1], depart=depart, route=route))
    table = TripTable(trips=trips)
    validate_trips(table, network)
    return table


def validate_trips(trips: TripTable, network: Optional[RoadNetwork] = None) -> None:
    """Check trip-table invariants; route connectivity needs the network."""
    seen = set()
    last_depart = None
    for trip in trips.trips:
        if trip.id in seen:
            raise TripValidationError("trip-id-unique", f"duplicate trip id {trip.id}")
        seen.add(trip.id)
        if trip.depart < 0 or (last_depart is not None and trip.depart < last_depart):
            raise TripValidationError("depart-non-decreasing", f"trip {trip.id} departs at {trip.depart}")
        last_depart = trip.depart
        if len(trip.route) < 2:
            raise TripValidationError("route-min-lanes", f"trip {trip.id} route has fewer than 2 lanes")
        if network is None:
            continue
        for lane in trip.route:
            if lane not in network.lanes:
                raise TripValidationError("route-lanes-exist", f"trip {trip.id} uses unknown lane {lane}")
        for a, b in zip(trip.route, trip.route[1:]):
            if (a, b) not in network.next_connection:
                raise TripValidationError("route-connected", f"trip {trip.id} has no connection {a} -> {b}")


def save_trips(trips: TripTable, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(trips_to_text(trips))
    logger.info("Saved %d trips to %s", len(trips), path)


def load_trips(path: str, network: Optional[RoadNetwork] = None) -> TripTable:
    with open(path, "r", encoding="utf-8") as handle:
        text = handle.read()
    return parse_trips(text, path=path, network=network)
