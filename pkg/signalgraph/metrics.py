"""Traffic metrics computed from simulation states and trip outcomes.

This module provides the local queue reward used for learning, the
instantaneous delay used for evaluation, the stopped/moving split read by
the greedy baseline, and summary statistics over trip durations.
"""

from typing import Dict, Tuple

import numpy as np
import pandas as pd

from . import parameters as prm
from .sim import SimState


def _sensed_vehicles(state: SimState, lane_id: str):
    """Vehicles within the detection range upstream of the lane's stop line."""
    lane = state.network.lanes[lane_id]
    for vid in state.lane_vehicles[lane_id]:
        vehicle = state.vehicles[vid]
        if lane.length - vehicle.position <= prm.QUEUE_DETECTION_RANGE:
            yield vehicle


def queue_lengths(state: SimState, tsc: str) -> Tuple[Dict[str, int], float]:
    """Stopped-vehicle counts on a TSC's inbound lanes and its reward.

    A vehicle is queued when slower than 0.1 km/h and within 50 m of the
    stop line.

    Args:
        state: Simulation state
        tsc: Controller id

    Returns:
        (queue per inbound lane, reward = -sum of queues)
    """
    state.controller(tsc)
    queues = {
        lane_id: sum(1 for v in _sensed_vehicles(state, lane_id) if v.speed < prm.STOPPED_SPEED_THRESHOLD)
        for lane_id in state.network.inbound_lanes[tsc]
    }
    return queues, -float(sum(queues.values()))


def rewards(state: SimState) -> Dict[str, float]:
    """Local reward of every TSC."""
    return {tsc: queue_lengths(state, tsc)[1] for tsc in state.network.tsc_ids}


def approach_counts(state: SimState, tsc: str) -> Tuple[int, int]:
    """(stopped, moving) vehicles within the sensing window of a TSC's inbound lanes."""
    stopped = moving = 0
    for lane_id in state.network.inbound_lanes[tsc]:
        for vehicle in _sensed_vehicles(state, lane_id):
            if vehicle.speed < prm.STOPPED_SPEED_THRESHOLD:
                stopped += 1
            else:
                moving += 1
    return stopped, moving


def situational_max_speed(state: SimState, vehicle) -> float:
    return min(vehicle.max_speed, state.network.lanes[vehicle.lane].speed)


def instantaneous_delay(state: SimState) -> float:
    """Sum over vehicles of the relative speed deficit (s* - s) / s*."""
    total = 0.0
    for vehicle in state.vehicles.values():
        target = situational_max_speed(state, vehicle)
        total += (target - vehicle.speed) / target
    return total


def total_queued(state: SimState) -> int:
    return int(-sum(rewards(state).values()))


# ============================================================================
# TRIP DURATION SUMMARIES
# ============================================================================

def duration_summary(durations: pd.Series) -> Dict[str, float]:
    """Box-plot statistics of trip durations.

    Returns:
        Dict with count, mean, std, min, q1, median, q3, max
        (NaN entries when there are no durations)
    """
    values = np.asarray(durations, dtype=float)
    if values.size == 0:
        nan = float("nan")
        return {"count": 0, "mean": nan, "std": nan, "min": nan, "q1": nan, "median": nan, "q3": nan, "max": nan}
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    return {
        "count": int(values.size),
        "mean": float(values.mean()),
        "std": float(values.std(ddof=1)) if values.size > 1 else 0.0,
        "min": float(values.min()),
        "q1": float(q1),
        "median": float(median),
        "q3": float(q3),
        "max": float(values.max()),
    }
