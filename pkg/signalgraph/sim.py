"""Discrete-time traffic microsimulation with signal control.

The simulator advances in 1 s steps. Each step applies the controllers'
realized phase changes, moves vehicles with a safe-speed car-following
rule, transfers vehicles across open connections, records completed trips
and inserts due trips at their origin lanes when the lane entrance is clear.

Positions are measured from the lane start to the vehicle's front bumper;
the stop line sits at the lane length.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, FrozenSet, List, Optional, Tuple

import numpy as np

from . import parameters as prm
from .data_models import Phase, PhaseKind, RoadNetwork, Trip, TripTable, TscAction
from .errors import SimulationError
from .scenario import conflict_table

logger = logging.getLogger(__name__)


@dataclass
class Vehicle:
    id: str
    lane: str
    position: float  # front bumper, meters from lane start
    speed: float  # m/s
    max_speed: float  # m/s
    route: Tuple[str, ...]
    route_index: int
    depart: int  # scheduled departure, seconds

    @property
    def next_lane(self) -> Optional[str]:
        if self.route_index + 1 < len(self.route):
            return self.route[self.route_index + 1]
        return None


@dataclass
class ControllerState:
    phase_index: int = 0
    last_switch: int = -prm.MIN_TIME_BETWEEN_SWITCHES
    yellow_countdown: int = 0


@dataclass(frozen=True)
class CompletedTrip:
    id: str
    depart: int
    arrive: int

    @property
    def duration(self) -> int:
        return self.arrive - self.depart


@dataclass
class StepEvents:
    """What happened during one simulation step."""
    realized: Dict[str, TscAction]
    inserted: List[str] = field(default_factory=list)
    completed: List[str] = field(default_factory=list)


@dataclass
class SimState:
    """Dynamic state of one simulation; single owner, stepped in place."""
    network: RoadNetwork
    trips: Tuple[Trip, ...]
    seed: int
    clock: int = 0
    vehicles: Dict[str, Vehicle] = field(default_factory=dict)
    lane_vehicles: Dict[str, List[str]] = field(default_factory=dict)  # front vehicle first
    controllers: Dict[str, ControllerState] = field(default_factory=dict)
    blocked: Dict[str, Deque[Trip]] = field(default_factory=dict)  # origin lane -> waiting trips
    completed: List[CompletedTrip] = field(default_factory=list)
    n_released: int = 0
    rng: Optional[np.random.Generator] = None

    # ------------------------------------------------------------------
    # Controller views
    # ------------------------------------------------------------------

    def controller(self, tsc: str) -> ControllerState:
        try:
            return self.controllers[tsc]
        except KeyError:
            raise SimulationError(f"unknown TSC {tsc!r}") from None

    def current_phase(self, tsc: str) -> Phase:
        return self.network.programs[tsc][self.controller(tsc).phase_index]

    def time_since_last_switch(self, tsc: str) -> int:
        return self.clock - self.controller(tsc).last_switch

    def connection_state(self, conn_id: str) -> str:
        """Signal character of a connection ('G' for unsignalized)."""
        conn = self.network.connections[conn_id]
        if conn.tsc is None:
            return "G"
        return self.current_phase(conn.tsc).state[conn.link_index]

    # ------------------------------------------------------------------
    # Accounting
    # ------------------------------------------------------------------

    @property
    def n_blocked(self) -> int:
        return sum(len(queue) for queue in self.blocked.values())

    @property
    def n_pending(self) -> int:
        """Trips not yet due."""
        return len(self.trips) - self.n_released

    @property
    def done(self) -> bool:
        return self.n_pending == 0 and not self.vehicles and self.n_blocked == 0

    def fingerprint(self) -> Tuple:
        """Hashable snapshot of the dynamic state, for determinism checks."""
        vehicles = tuple(
            (v.id, v.lane, v.position, v.speed, v.max_speed, v.route_index)
            for v in sorted(self.vehicles.values(), key=lambda v: v.id)
        )
        controllers = tuple(
            (tsc, c.phase_index, c.last_switch, c.yellow_countdown)
            for tsc, c in sorted(self.controllers.items())
        )
        blocked = tuple((lane, tuple(t.id for t in q)) for lane, q in sorted(self.blocked.items()))
        return (self.clock, vehicles, controllers, blocked, tuple(self.completed), self.n_released)


# ============================================================================
# RESET AND ACTION FEASIBILITY
# ============================================================================

def reset(network: RoadNetwork, trips: TripTable, seed: int) -> SimState:
    """Start a simulation: clock 0, empty roads, every TSC on phase 0 and switchable."""
    state = SimState(
        network=network,
        trips=tuple(trips.trips),
        seed=seed,
        lane_vehicles={lane_id: [] for lane_id in network.lanes},
        controllers={tsc: ControllerState() for tsc in network.tsc_ids},
        rng=np.random.default_rng(seed),
    )
    return state


def switch_is_effective(state: SimState, tsc: str) -> bool:
    """A SWITCH changes the phase iff in green and the last switch is at least 5 s old."""
    controller = state.controller(tsc)
    phase = state.network.programs[tsc][controller.phase_index]
    return (
        phase.kind == PhaseKind.GREEN
        and state.clock - controller.last_switch >= prm.MIN_TIME_BETWEEN_SWITCHES
    )


def legal_actions(state: SimState, tsc: str) -> Tuple[FrozenSet[TscAction], bool]:
    """Actions an agent may request and whether SWITCH would take effect.

    Both actions are always legal; an ineffective SWITCH is realized as PROLONG.
    """
    return frozenset(TscAction), switch_is_effective(state, tsc)


def action_mask(state: SimState, tsc: str) -> np.ndarray:
    """Boolean mask over (PROLONG, SWITCH) of effective actions."""
    return np.array([True, switch_is_effective(state, tsc)])


def _apply_controllers(state: SimState, actions: Dict[str, TscAction]) -> Dict[str, TscAction]:
    if set(actions) != set(state.controllers):
        raise SimulationError(
            f"expected one action per TSC {sorted(state.controllers)}, got {sorted(actions)}"
        )
    realized = {}
    for tsc in sorted(state.controllers):
        controller = state.controllers[tsc]
        program = state.network.programs[tsc]
        phase = program[controller.phase_index]
        if phase.kind == PhaseKind.YELLOW:
            controller.yellow_countdown -= 1
            if controller.yellow_countdown <= 0:
                controller.phase_index = (controller.phase_index + 1) % len(program)
                controller.last_switch = state.clock
                controller.yellow_countdown = 0
            realized[tsc] = TscAction.PROLONG
        elif TscAction(actions[tsc]) == TscAction.SWITCH and switch_is_effective(state, tsc):
            controller.phase_index = (controller.phase_index + 1) % len(program)
            controller.last_switch = state.clock
            controller.yellow_countdown = prm.YELLOW_DURATION
            realized[tsc] = TscAction.SWITCH
        else:
            realized[tsc] = TscAction.PROLONG
    return realized


# ============================================================================
# CAR FOLLOWING
# ============================================================================

def safe_speed(gap: float) -> float:
    """Largest speed that still allows a full stop within `gap` meters."""
    if gap <= 0:
        return 0.0
    b, dt = prm.DECELERATION, prm.STEP_LENGTH
    return -b * dt + math.sqrt(b * b * dt * dt + 2.0 * b * gap)


def _priority_vehicle_near(state: SimState, conn_id: str) -> bool:
    conn = state.network.connections[conn_id]
    lane = state.network.lanes[conn.from_lane]
    for vid in state.lane_vehicles[conn.from_lane]:
        vehicle = state.vehicles[vid]
        if vehicle.next_lane != conn.to_lane:
            continue
        if lane.length - vehicle.position <= vehicle.speed * prm.YIELD_TIME_WINDOW:
            return True
    return False


def _must_yield(state: SimState, conn_id: str) -> bool:
    conflicts = conflict_table(state.network)
    for foe in state.network.connections.values():
        if foe.id == conn_id or (conn_id, foe.id) not in conflicts:
            continue
        if state.connection_state(foe.id) == "G" and _priority_vehicle_near(state, foe.id):
            return True
    return False


def connection_passable(state: SimState, vehicle: Vehicle, conn_id: str) -> bool:
    """Whether the front vehicle on a lane may cross into its next lane."""
    signal = state.connection_state(conn_id)
    if signal == "G":
        return True
    if signal == "g":
        return not _must_yield(state, conn_id)
    if signal == "y":
        distance = state.network.lanes[vehicle.lane].length - vehicle.position
        return vehicle.speed * vehicle.speed / (2.0 * prm.DECELERATION) > distance
    return False


def _gap_ahead(state: SimState, vehicle: Vehicle, leader: Optional[Vehicle]) -> float:
    """Free distance the vehicle may cover before it must be stopped."""
    lane = state.network.lanes[vehicle.lane]
    if leader is not None:
        return leader.position - prm.VEHICLE_LENGTH - vehicle.position - prm.MIN_GAP
    distance = lane.length - vehicle.position
    next_lane = vehicle.next_lane
    if next_lane is None:
        return math.inf
    conn = state.network.next_connection[(vehicle.lane, next_lane)]
    if not connection_passable(state, vehicle, conn.id):
        return distance
    queue = state.lane_vehicles[next_lane]
    if not queue:
        return math.inf
    last = state.vehicles[queue[-1]]
    return distance + last.position - prm.VEHICLE_LENGTH - prm.MIN_GAP


def _next_speed(state: SimState, vehicle: Vehicle, leader: Optional[Vehicle]) -> float:
    lane = state.network.lanes[vehicle.lane]
    speed = min(
        vehicle.speed + prm.ACCELERATION * prm.STEP_LENGTH,
        vehicle.max_speed,
        lane.speed,
        safe_speed(_gap_ahead(state, vehicle, leader)),
    )
    return max(0.0, speed)


# ============================================================================
# STEP
# ============================================================================

def step(state: SimState, actions: Dict[str, TscAction]) -> Tuple[SimState, StepEvents]:
    """Advance the simulation by one second.

    Args:
        state: Simulation state, updated in place
        actions: Requested action for every TSC

    Returns:
        (state, events) where events report realized actions, insertions
        and completions
    """
    network = state.network
    events = StepEvents(realized=_apply_controllers(state, actions))

    # Synchronous speed update against the previous positions
    moves: List[Tuple[Vehicle, float]] = []
    for lane_id in network.lanes:
        leader = None
        for vid in state.lane_vehicles[lane_id]:
            vehicle = state.vehicles[vid]
            moves.append((vehicle, _next_speed(state, vehicle, leader)))
            leader = vehicle
    for vehicle, speed in moves:
        vehicle.speed = speed
        vehicle.position += speed * prm.STEP_LENGTH

    # Transfers across lane ends
    crossing = []
    for vehicle, _ in moves:
        length = network.lanes[vehicle.lane].length
        if vehicle.position > length:
            crossing.append((vehicle.position - length, vehicle))
    crossing.sort(key=lambda item: (-item[0], item[1].id))
    new_lanes: Dict[str, List[Vehicle]] = {}
    for overflow, vehicle in crossing:
        old_lane = network.lanes[vehicle.lane]
        next_lane = vehicle.next_lane
        if next_lane is None:
            state.lane_vehicles[vehicle.lane].remove(vehicle.id)
            del state.vehicles[vehicle.id]
            state.completed.append(CompletedTrip(vehicle.id, vehicle.depart, state.clock + 1))
            events.completed.append(vehicle.id)
            continue
        occupants = [state.vehicles[v] for v in state.lane_vehicles[next_lane]] + new_lanes.get(next_lane, [])
        limit = min((v.position for v in occupants), default=math.inf) - prm.VEHICLE_LENGTH - prm.MIN_GAP
        target = min(overflow, limit)
        if target < 0:
            vehicle.position = old_lane.length
            vehicle.speed = 0.0
            continue
        state.lane_vehicles[vehicle.lane].remove(vehicle.id)
        vehicle.lane = next_lane
        vehicle.route_index += 1
        vehicle.position = target
        vehicle.speed = min(vehicle.speed, network.lanes[next_lane].speed)
        new_lanes.setdefault(next_lane, []).append(vehicle)
    for lane_id, arrivals in new_lanes.items():
        state.lane_vehicles[lane_id].extend(v.id for v in arrivals)
    for lane_id, vids in state.lane_vehicles.items():
        if len(vids) > 1:
            vids.sort(key=lambda v: (-state.vehicles[v].position, v))

    # Release due trips and insert at clear lane entrances
    while state.n_released < len(state.trips) and state.trips[state.n_released].depart <= state.clock:
        trip = state.trips[state.n_released]
        state.blocked.setdefault(trip.route[0], deque()).append(trip)
        state.n_released += 1
    for lane_id in sorted(state.blocked):
        queue = state.blocked[lane_id]
        if not queue:
            continue
        vids = state.lane_vehicles[lane_id]
        if vids and state.vehicles[vids[-1]].position - prm.VEHICLE_LENGTH < prm.INSERTION_CLEARANCE:
            continue
        trip = queue.popleft()
        vehicle = Vehicle(
            id=trip.id,
            lane=lane_id,
            position=0.0,
            speed=0.0,
            max_speed=float(state.rng.uniform(prm.MIN_VEHICLE_MAX_SPEED, prm.MAX_VEHICLE_MAX_SPEED)),
            route=trip.route,
            route_index=0,
            depart=trip.depart,
        )
        state.vehicles[trip.id] = vehicle
        vids.append(trip.id)
        events.inserted.append(trip.id)
    state.blocked = {lane: q for lane, q in state.blocked.items() if q}

    state.clock += 1
    return state, events


def check_invariants(state: SimState) -> None:
    """Raise SimulationError if a kinematic or accounting invariant is broken."""
    network = state.network
    for lane_id, vids in state.lane_vehicles.items():
        lane = network.lanes[lane_id]
        previous = None
        for vid in vids:
            vehicle = state.vehicles[vid]
            if not 0.0 <= vehicle.position <= lane.length:
                raise SimulationError(f"vehicle {vid} at {vehicle.position:.3f} outside lane {lane_id}")
            if vehicle.speed > min(vehicle.max_speed, lane.speed) + 1e-9:
                raise SimulationError(f"vehicle {vid} exceeds its speed cap")
            if previous is not None and previous.position - vehicle.position < prm.VEHICLE_LENGTH - 1e-9:
                raise SimulationError(f"vehicles {previous.id} and {vid} overlap on {lane_id}")
            previous = vehicle
    if state.n_released != len(state.vehicles) + len(state.completed) + state.n_blocked:
        raise SimulationError("vehicle conservation violated")
