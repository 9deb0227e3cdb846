"""Reference controllers: fixed-time, greedy and per-intersection Q-learning.

All baselines act through the same simulator pathway as learned policies,
so an infeasible SWITCH is realized as PROLONG for every controller alike.
"""

import logging
from typing import Dict, Optional

from .agent import LearnedPolicy, PerTscMlpModel, Trainer, TrainingResult
from .config import TrainingConfig
from .data_models import PhaseKind, RoadNetwork, TrainingSet, TscAction
from .errors import ConfigError, TransferError
from .metrics import approach_counts
from .sim import SimState

logger = logging.getLogger(__name__)


def fixed_time_action(state: SimState, tsc: str) -> TscAction:
    """SWITCH once the current green phase has run its default duration."""
    phase = state.current_phase(tsc)
    if phase.kind == PhaseKind.YELLOW:
        return TscAction.PROLONG
    if state.time_since_last_switch(tsc) >= phase.duration:
        return TscAction.SWITCH
    return TscAction.PROLONG


def greedy_action(state: SimState, tsc: str) -> TscAction:
    """SWITCH when stopped vehicles outnumber moving ones near the intersection."""
    stopped, moving = approach_counts(state, tsc)
    return TscAction.SWITCH if stopped > moving else TscAction.PROLONG


class FixedTimePolicy:
    policy_id = "fixed_time"

    def bind(self, network: RoadNetwork) -> None:
        pass

    def act(self, state: SimState) -> Dict[str, TscAction]:
        return {tsc: fixed_time_action(state, tsc) for tsc in state.network.tsc_ids}


class GreedyPolicy:
    policy_id = "greedy"

    def bind(self, network: RoadNetwork) -> None:
        pass

    def act(self, state: SimState) -> Dict[str, TscAction]:
        return {tsc: greedy_action(state, tsc) for tsc in state.network.tsc_ids}


BASELINE_POLICIES = {
    "fixed_time": FixedTimePolicy,
    "greedy": GreedyPolicy,
}


def baseline_policy(name: str):
    try:
        return BASELINE_POLICIES[name]()
    except KeyError:
        raise ConfigError("policy", f"unknown baseline {name!r}; expected one of {sorted(BASELINE_POLICIES)}") from None


# ============================================================================
# MARL-IQL
# ============================================================================

def marl_train(config: TrainingConfig, network: RoadNetwork, out_dir: Optional[str] = None) -> TrainingResult:
    """Train one MLP per TSC of `network` with the shared Q-learning machinery.

    Every setting (double Q, dueling noisy head, action correction, gamma,
    learning rate, batch, target sync) is the one used for the graph model;
    only the function approximator differs.
    """
    if config.training_set != TrainingSet.SPECIALIST.value:
        raise ConfigError("training_set", "per-intersection models can only train as specialists")
    model = PerTscMlpModel(network)
    logger.info("Training MARL-IQL with %d per-TSC networks", len(model.tsc_ids))
    return Trainer(config, [network], model, out_dir=out_dir).run()


def marl_policy(result: TrainingResult, network: RoadNetwork, policy_id: str = "MARL-IQL") -> LearnedPolicy:
    """Greedy per-TSC policy from trained MARL parameters, bound to `network`."""
    model = PerTscMlpModel(network)
    if result.network_signature is not None and result.network_signature != model.network_signature:
        raise TransferError("MARL parameters are network-specific")
    return LearnedPolicy(model, result.params, policy_id)


def marl_act(policy: LearnedPolicy, state: SimState) -> Dict[str, TscAction]:
    """Per-TSC greedy actions; refuses states of any other network."""
    policy.bind(state.network)
    return policy.act(state)
