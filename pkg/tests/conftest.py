"""Shared fixtures: hand-written networks, small generated networks and states."""

import os
from pathlib import Path

import pytest

from signalgraph.data_models import (
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
from signalgraph.loaders import load_network, load_trips
from signalgraph.scenario import GenerationParams, generate_network
from signalgraph.sim import Vehicle, reset

FIXTURES_DIR = Path(__file__).resolve().parent.parent / "data" / "fixtures"


def place_vehicle(state, vid, lane, position, speed, route=None, max_speed=15.0, depart=0):
    """Put a vehicle directly on a lane, keeping lane order front first."""
    route = tuple(route or (lane,))
    vehicle = Vehicle(
        id=vid,
        lane=lane,
        position=float(position),
        speed=float(speed),
        max_speed=float(max_speed),
        route=route,
        route_index=route.index(lane),
        depart=depart,
    )
    state.vehicles[vid] = vehicle
    state.lane_vehicles[lane].append(vid)
    state.lane_vehicles[lane].sort(key=lambda v: -state.vehicles[v].position)
    state.n_released += 1
    state.trips = state.trips + (Trip(vid, depart, route),)
    return vehicle


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES_DIR


@pytest.fixture
def one_net() -> RoadNetwork:
    """One TSC fed from west and south; links W->E, W->N, S->N, S->E."""
    return load_network(os.fspath(FIXTURES_DIR / "one_intersection.net.txt"))


@pytest.fixture
def one_trips(one_net) -> TripTable:
    return load_trips(os.fspath(FIXTURES_DIR / "one_intersection.trips.txt"), one_net)


@pytest.fixture
def corridor_net() -> RoadNetwork:
    """A -> J -> B: one TSC, one connection, two lanes of 150 m at 13.89 m/s."""
    network = RoadNetwork()
    network.intersections = {
        "A": Intersection("A", -150.0, 0.0),
        "J": Intersection("J", 0.0, 0.0, tsc="J"),
        "B": Intersection("B", 150.0, 0.0),
    }
    network.edges = {
        "A_J": Edge("A_J", "A", "J", 150.0, 1),
        "J_B": Edge("J_B", "J", "B", 150.0, 1),
    }
    network.lanes = {
        "A_J_0": Lane("A_J_0", "A_J", 0, 150.0, 13.89),
        "J_B_0": Lane("J_B_0", "J_B", 0, 150.0, 13.89),
    }
    network.connections = {"J_c0": Connection("J_c0", "A_J_0", "J_B_0", "J", 0)}
    network.programs = {
        "J": [
            Phase(PhaseKind.GREEN, 30, "G"),
            Phase(PhaseKind.YELLOW, 5, "y"),
            Phase(PhaseKind.GREEN, 30, "r"),
            Phase(PhaseKind.YELLOW, 5, "r"),
        ]
    }
    return network


@pytest.fixture
def corridor_state(corridor_net):
    """One vehicle on the inbound lane and two on the outbound lane."""
    state = reset(corridor_net, TripTable(), seed=0)
    route = ("A_J_0", "J_B_0")
    place_vehicle(state, "v0", "A_J_0", 120.0, 6.0, route)
    place_vehicle(state, "v1", "J_B_0", 90.0, 10.0, route)
    place_vehicle(state, "v2", "J_B_0", 40.0, 0.0, route)
    return state


@pytest.fixture
def two_tsc_net() -> RoadNetwork:
    return generate_network(7, GenerationParams().with_intersections(2))


@pytest.fixture
def three_tsc_net() -> RoadNetwork:
    return generate_network(3, GenerationParams().with_intersections(3))


@pytest.fixture
def left_turn_net() -> RoadNetwork:
    """J0 with a permissive left W->N ('g') opposed by a straight E->W ('G')."""
    network = RoadNetwork()
    network.intersections = {
        "J0": Intersection("J0", 0.0, 0.0, tsc="J0"),
        "W": Intersection("W", -150.0, 0.0),
        "E": Intersection("E", 150.0, 0.0),
        "N": Intersection("N", 0.0, 150.0),
    }
    network.edges = {
        "W_J0": Edge("W_J0", "W", "J0", 150.0, 1),
        "E_J0": Edge("E_J0", "E", "J0", 150.0, 1),
        "J0_N": Edge("J0_N", "J0", "N", 150.0, 1),
        "J0_W": Edge("J0_W", "J0", "W", 150.0, 1),
    }
    network.lanes = {
        f"{edge}_0": Lane(f"{edge}_0", edge, 0, 150.0, 13.89) for edge in network.edges
    }
    network.connections = {
        "J0_c0": Connection("J0_c0", "W_J0_0", "J0_N_0", "J0", 0),
        "J0_c1": Connection("J0_c1", "E_J0_0", "J0_W_0", "J0", 1),
    }
    network.programs = {
        "J0": [
            Phase(PhaseKind.GREEN, 30, "gG"),
            Phase(PhaseKind.YELLOW, 5, "yy"),
            Phase(PhaseKind.GREEN, 30, "rr"),
            Phase(PhaseKind.YELLOW, 5, "rr"),
        ]
    }
    return network
