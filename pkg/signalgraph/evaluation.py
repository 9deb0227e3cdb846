"""Closed-loop evaluation, paired trip comparisons and result reports.

Every policy is run on the same (network, seed) scenarios: demand for a
seed is generated once and shared, so trips can be paired across policies.
Trips still unfinished when an episode stops are censored: they are
reported, counted, and excluded from paired tests.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from . import parameters as prm
from .data_models import EpisodeResult, Regime, RoadNetwork, TripTable
from .errors import PairingError
from .metrics import duration_summary, instantaneous_delay, total_queued
from .scenario import generate_demand
from .sim import reset, step

logger = logging.getLogger(__name__)

TRIP_COLUMNS = ["policy_id", "scenario_seed", "regime", "trip_id", "depart_s", "arrive_s", "duration_s", "censored"]
DELAY_COLUMNS = ["policy_id", "scenario_seed", "regime", "t", "total_delay", "total_queued", "n_vehicles", "n_blocked"]
PAIRED_COLUMNS = [
    "policy_a", "policy_b", "regime", "n_pairs", "n_excluded", "mean_delta", "median_delta",
    "std_delta", "t_stat", "p_value", "t_defined", "significant",
]


# ============================================================================
# EPISODES
# ============================================================================

def run_episode(
    policy,
    network: RoadNetwork,
    trips: TripTable,
    seed: int,
    regime: str = Regime.DEFAULT.value,
    horizon: int = prm.EVALUATION_HORIZON,
    fixed_duration: Optional[int] = None,
) -> EpisodeResult:
    """Simulate one closed-loop episode.

    The episode ends when every trip has completed, at the completion cap
    (3x the demand horizon), or after `fixed_duration` seconds when given.

    Args:
        policy: Object with `act(state)` (and optionally `bind(network)`)
        network: Road network
        trips: Demand shared by every compared policy
        seed: Scenario seed (also seeds vehicle speed draws)
        regime: Regime tag stored with the result
        horizon: Demand generation horizon in seconds
        fixed_duration: Stop after this many seconds instead

    Returns:
        EpisodeResult with per-step curves and per-trip outcomes
    """
    if hasattr(policy, "bind"):
        policy.bind(network)
    limit = fixed_duration if fixed_duration is not None else prm.completion_cap(horizon)
    state = reset(network, trips, seed)
    delays, queued, n_vehicles, n_blocked = [0.0], [0], [0], [0]
    while state.clock < limit and not state.done:
        state, _ = step(state, policy.act(state))
        delays.append(instantaneous_delay(state))
        queued.append(total_queued(state))
        n_vehicles.append(len(state.vehicles))
        n_blocked.append(state.n_blocked)

    arrivals = {c.id: c.arrive for c in state.completed}
    rows = []
    for trip in trips.trips:
        arrive = arrivals.get(trip.id)
        if arrive is not None:
            rows.append((trip.id, trip.depart, float(arrive), float(arrive - trip.depart), False))
        else:
            rows.append((trip.id, trip.depart, np.nan, float(max(0, state.clock - trip.depart)), True))
    df_trips = pd.DataFrame(rows, columns=["trip_id", "depart_s", "arrive_s", "duration_s", "censored"])
    df_trips["censored"] = df_trips["censored"].astype(bool)

    policy_id = getattr(policy, "policy_id", type(policy).__name__)
    result = EpisodeResult(
        policy_id=policy_id,
        scenario_seed=seed,
        regime=str(Regime(regime).value),
        delays=np.array(delays),
        queued=np.array(queued),
        n_vehicles=np.array(n_vehicles),
        n_blocked=np.array(n_blocked),
        trips=df_trips,
    )
    if result.n_censored:
        logger.warning(
            "%s seed=%s: %d of %d trips censored at t=%d", policy_id, seed, result.n_censored, len(trips), state.clock
        )
    return result


def _episode_job(args) -> EpisodeResult:
    policy, network, seed, regime, horizon, fixed_duration = args
    trips = generate_demand(seed, network, prm.regime_rate(regime), horizon)
    return run_episode(policy, network, trips, seed, regime, horizon, fixed_duration)


def evaluate(
    policy,
    network: RoadNetwork,
    regime: str = Regime.DEFAULT.value,
    seeds: Sequence[int] = tuple(range(prm.EVALUATION_SEEDS)),
    horizon: int = prm.EVALUATION_HORIZON,
    jobs: int = 1,
    fixed_duration: Optional[int] = None,
) -> List[EpisodeResult]:
    """Evaluate a policy on one network over several demand seeds.

    Demand for each seed comes from `generate_demand(seed, network, rate,
    horizon)`, so every policy evaluated with the same seeds sees the same
    trips. Independent episodes run in worker processes when jobs > 1.
    """
    regime = Regime(regime).value
    if hasattr(policy, "bind"):
        policy.bind(network)
    jobs_args = [(policy, network, int(seed), regime, horizon, fixed_duration) for seed in seeds]
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_episode_job, jobs_args))
    else:
        results = [_episode_job(args) for args in jobs_args]
    for result in results:
        logger.info(
            "%s [%s] seed=%d: mean duration %.1fs over %d trips",
            result.policy_id,
            regime,
            result.scenario_seed,
            float(result.completed_durations.mean()) if len(result.completed_durations) else float("nan"),
            len(result.trips),
        )
    return results


# ============================================================================
# PAIRED COMPARISON
# ============================================================================

@dataclass
class PairedComparison:
    """Per-trip duration differences a - b and their paired t-test."""
    policy_a: str
    policy_b: str
    regime: str
    deltas: pd.DataFrame  # regime, scenario_seed, trip_id, duration_a, duration_b, delta
    n_excluded: int
    mean: float
    median: float
    std: float
    t_stat: float
    p_value: float
    t_defined: bool

    @property
    def n_pairs(self) -> int:
        return len(self.deltas)

    def histogram(self, bins: int = prm.HISTOGRAM_BINS):
        """(counts, bin_edges) of the deltas."""
        if self.deltas.empty:
            return np.zeros(0, dtype=int), np.zeros(0)
        return np.histogram(self.deltas["delta"].to_numpy(), bins=bins)

    def to_row(self) -> Dict[str, object]:
        return {
            "policy_a": self.policy_a,
            "policy_b": self.policy_b,
            "regime": self.regime,
            "n_pairs": self.n_pairs,
            "n_excluded": self.n_excluded,
            "mean_delta": self.mean,
            "median_delta": self.median,
            "std_delta": self.std,
            "t_stat": self.t_stat,
            "p_value": self.p_value,
            "t_defined": self.t_defined,
            "significant": bool(self.t_defined and self.p_value < prm.SIGNIFICANCE_LEVEL),
        }


def _trip_frame(results: Sequence[EpisodeResult]) -> pd.DataFrame:
    frames = []
    for r in results:
        df = r.trips.copy()
        df.insert(0, "scenario_seed", r.scenario_seed)
        df.insert(0, "regime", r.regime)
        frames.append(df)
    if not frames:
        return pd.DataFrame(columns=["regime", "scenario_seed", "trip_id", "depart_s", "arrive_s", "duration_s", "censored"])
    return pd.concat(frames, ignore_index=True)


def paired_differences(results_a: Sequence[EpisodeResult], results_b: Sequence[EpisodeResult]) -> PairedComparison:
    """Pair trips of two result sets by (regime, seed, trip id).

    Raises:
        PairingError: if the two sets do not contain exactly the same trips
    """
    a = _trip_frame(results_a)
    b = _trip_frame(results_b)
    keys = ["regime", "scenario_seed", "trip_id"]
    key_a = set(map(tuple, a[keys].itertuples(index=False, name=None)))
    key_b = set(map(tuple, b[keys].itertuples(index=False, name=None)))
    if key_a != key_b or len(key_a) != len(a) or len(key_b) != len(b):
        raise PairingError(
            f"trip sets differ ({len(key_a - key_b)} only in a, {len(key_b - key_a)} only in b); "
            "results must come from the same scenario seeds"
        )
    merged = a.merge(b, on=keys, suffixes=("_a", "_b"))
    censored = merged["censored_a"].astype(bool) | merged["censored_b"].astype(bool)
    paired = merged.loc[~censored, keys + ["duration_s_a", "duration_s_b"]].rename(
        columns={"duration_s_a": "duration_a", "duration_s_b": "duration_b"}
    )
    paired["delta"] = paired["duration_a"] - paired["duration_b"]
    paired = paired.reset_index(drop=True)

    deltas = paired["delta"].to_numpy(dtype=float)
    n = deltas.size
    mean = float(deltas.mean()) if n else float("nan")
    median = float(np.median(deltas)) if n else float("nan")
    std = float(deltas.std(ddof=1)) if n > 1 else float("nan")
    t_defined = n > 1 and std > 0
    if t_defined:
        t_stat = mean / (std / np.sqrt(n))
        p_value = float(2.0 * stats.t.sf(abs(t_stat), df=n - 1))
    else:
        t_stat, p_value = float("nan"), float("nan")

    policy_a = results_a[0].policy_id if results_a else "a"
    policy_b = results_b[0].policy_id if results_b else "b"
    regimes = sorted(set(a["regime"]))
    return PairedComparison(
        policy_a=policy_a,
        policy_b=policy_b,
        regime=",".join(regimes),
        deltas=paired,
        n_excluded=int(censored.sum()),
        mean=mean,
        median=median,
        std=std,
        t_stat=float(t_stat),
        p_value=p_value,
        t_defined=bool(t_defined),
    )


# ============================================================================
# TABLES AND REPORTS
# ============================================================================

def trips_table(results: Sequence[EpisodeResult]) -> pd.DataFrame:
    frames = []
    for r in results:
        df = r.trips.copy()
        df.insert(0, "regime", r.regime)
        df.insert(0, "scenario_seed", r.scenario_seed)
        df.insert(0, "policy_id", r.policy_id)
        frames.append(df)
    if not frames:
        return pd.DataFrame(columns=TRIP_COLUMNS)
    return pd.concat(frames, ignore_index=True)[TRIP_COLUMNS]


def delay_table(results: Sequence[EpisodeResult]) -> pd.DataFrame:
    frames = []
    for r in results:
        frames.append(
            pd.DataFrame(
                {
                    "policy_id": r.policy_id,
                    "scenario_seed": r.scenario_seed,
                    "regime": r.regime,
                    "t": np.arange(len(r.delays)),
                    "total_delay": r.delays,
                    "total_queued": r.queued,
                    "n_vehicles": r.n_vehicles,
                    "n_blocked": r.n_blocked,
                }
            )
        )
    if not frames:
        return pd.DataFrame(columns=DELAY_COLUMNS)
    return pd.concat(frames, ignore_index=True)[DELAY_COLUMNS]


def summary_table(results: Sequence[EpisodeResult]) -> pd.DataFrame:
    """Trip-duration statistics per (policy, regime), over all seeds."""
    trips = trips_table(results)
    delays = delay_table(results)
    rows = []
    for (policy_id, regime), group in trips.groupby(["policy_id", "regime"], sort=True):
        completed = group.loc[~group["censored"].astype(bool), "duration_s"]
        curve = delays[(delays["policy_id"] == policy_id) & (delays["regime"] == regime)]
        row = {
            "policy_id": policy_id,
            "regime": regime,
            "n_episodes": int(group["scenario_seed"].nunique()),
            "n_trips": int(len(group)),
            "n_censored": int(group["censored"].astype(bool).sum()),
        }
        row.update(duration_summary(completed))
        row["mean_total_delay"] = float(curve["total_delay"].mean()) if len(curve) else float("nan")
        rows.append(row)
    columns = ["policy_id", "regime", "n_episodes", "n_trips", "n_censored", "count", "mean", "std",
               "min", "q1", "median", "q3", "max", "mean_total_delay"]
    return pd.DataFrame(rows, columns=columns)


def compare_all(results: Sequence[EpisodeResult], reference: Optional[str] = None) -> List[PairedComparison]:
    """Paired comparison of every policy against the reference, per regime."""
    by_key: Dict[tuple, List[EpisodeResult]] = {}
    for r in results:
        by_key.setdefault((r.policy_id, r.regime), []).append(r)
    policies = sorted({r.policy_id for r in results})
    if reference is None or reference not in policies:
        return []
    comparisons = []
    for regime in sorted({r.regime for r in results}):
        ref = by_key.get((reference, regime))
        if not ref:
            continue
        for policy_id in policies:
            if policy_id == reference or (policy_id, regime) not in by_key:
                continue
            comparisons.append(paired_differences(by_key[(policy_id, regime)], ref))
    return comparisons


def paired_table(comparisons: Sequence[PairedComparison]) -> pd.DataFrame:
    return pd.DataFrame([c.to_row() for c in comparisons], columns=PAIRED_COLUMNS)


def emit_report(
    results: Sequence[EpisodeResult],
    path: str,
    reference: Optional[str] = None,
    write_svg: bool = True,
) -> Dict[str, str]:
    """Write trips.csv, delay.csv, summary.csv, paired.csv and report.svg to `path`.

    Returns:
        Mapping of artifact name to written file path
    """
    from .exports import write_report_svg

    os.makedirs(path, exist_ok=True)
    comparisons = compare_all(results, reference)
    outputs = {
        "trips": os.path.join(path, "trips.csv"),
        "delay": os.path.join(path, "delay.csv"),
        "summary": os.path.join(path, "summary.csv"),
        "paired": os.path.join(path, "paired.csv"),
    }
    trips_table(results).to_csv(outputs["trips"], index=False)
    delay_table(results).to_csv(outputs["delay"], index=False)
    summary_table(results).to_csv(outputs["summary"], index=False)
    paired_table(comparisons).to_csv(outputs["paired"], index=False)
    if write_svg:
        outputs["report"] = os.path.join(path, "report.svg")
        write_report_svg(results, comparisons, outputs["report"])
    logger.info("Wrote evaluation report for %d episodes to %s", len(results), path)
    return outputs


def load_results(path: str) -> List[EpisodeResult]:
    """Rebuild EpisodeResults from the trips.csv and delay.csv of a report directory."""
    trips = pd.read_csv(os.path.join(path, "trips.csv"), dtype={"trip_id": str, "policy_id": str, "regime": str})
    delays = pd.read_csv(os.path.join(path, "delay.csv"), dtype={"policy_id": str, "regime": str})
    results = []
    keys = ["policy_id", "scenario_seed", "regime"]
    for (policy_id, seed, regime), group in trips.groupby(keys, sort=True):
        curve = delays[
            (delays["policy_id"] == policy_id) & (delays["scenario_seed"] == seed) & (delays["regime"] == regime)
        ].sort_values("t")
        df = group[["trip_id", "depart_s", "arrive_s", "duration_s", "censored"]].reset_index(drop=True)
        df["censored"] = df["censored"].astype(bool)
        results.append(
            EpisodeResult(
                policy_id=policy_id,
                scenario_seed=int(seed),
                regime=regime,
                delays=curve["total_delay"].to_numpy(dtype=float),
                queued=curve["total_queued"].to_numpy(),
                n_vehicles=curve["n_vehicles"].to_numpy(),
                n_blocked=curve["n_blocked"].to_numpy(),
                trips=df,
            )
        )
    return results


def _select_policy(results: List[EpisodeResult], policy_id: Optional[str], path: str) -> List[EpisodeResult]:
    policies = sorted({r.policy_id for r in results})
    if policy_id is None:
        if len(policies) != 1:
            raise PairingError(f"{path} holds results of {policies}; choose one policy")
        return results
    selected = [r for r in results if r.policy_id == policy_id]
    if not selected:
        raise PairingError(f"{path} has no results for policy {policy_id!r} (found {policies})")
    return selected


def compare_result_dirs(
    path_a: str,
    path_b: str,
    policy_a: Optional[str] = None,
    policy_b: Optional[str] = None,
) -> List[PairedComparison]:
    """Paired comparison of two saved report directories, one per regime.

    Each directory must hold a single policy unless `policy_a` / `policy_b`
    select one.
    """
    results_a = _select_policy(load_results(path_a), policy_a, path_a)
    results_b = _select_policy(load_results(path_b), policy_b, path_b)
    regimes_a = {r.regime for r in results_a}
    regimes_b = {r.regime for r in results_b}
    if regimes_a != regimes_b:
        raise PairingError(f"regimes differ: {sorted(regimes_a)} vs {sorted(regimes_b)}")
    return [
        paired_differences(
            [r for r in results_a if r.regime == regime],
            [r for r in results_b if r.regime == regime],
        )
        for regime in sorted(regimes_a)
    ]
