"""Decentralized deep Q-learning over all signal controllers.

One function approximator scores every TSC: either a single relational
GCN shared by all controllers of all networks, or (for the MARL baseline)
one MLP per TSC bound to a single network. Both plug into the same
collector/learner loop with double Q-learning, a dueling noisy head,
experience replay, a periodically synced target network and action
correction.
"""

import logging
import os
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import parameters as prm
from .config import TrainingConfig, save_config
from .data_models import GraphMode, NoiseMode, RoadNetwork, TrainingSet, TripTable, TscAction
from .errors import ModelShapeError, TransferError
from .graphenc import DEFAULT_SCALING, FeatureScaling, ObservationGraph, encode, local_tsc_features, union_graphs
from .loaders import load_network, network_signature
from .metrics import rewards as tsc_rewards
from .nn import (
    AdamOptimizer,
    Gradients,
    ModelParams,
    Tape,
    backward,
    init_mlp_params,
    init_params,
    load_checkpoint,
    mlp_forward,
    q_head,
    rgcn_forward,
    save_checkpoint,
    td_loss,
)
from .scenario import generate_demand, generate_network
from .sim import SimState, action_mask, reset, step

logger = logging.getLogger(__name__)

ParamSets = Dict[str, ModelParams]
SHARED = "shared"


@dataclass(frozen=True)
class Transition:
    """One decentralized experience of a single TSC.

    Graphs are shared by every transition collected at the same step.
    """
    graph: ObservationGraph
    tsc_id: str
    action: int  # realized action when action correction is on
    reward: float
    next_graph: ObservationGraph
    next_mask: np.ndarray  # effective actions in the next state (PROLONG, SWITCH)


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling.

    Appends and samples are serialized by a lock; an append is visible to
    every sample that starts after it returns.
    """

    def __init__(self, capacity: int, seed: int = 0):
        if capacity <= 0:
            raise ValueError("replay capacity must be positive")
        self.capacity = capacity
        self._items: List[Transition] = []
        self._next = 0
        self._lock = threading.Lock()
        self._rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)

    def append(self, transition: Transition) -> None:
        with self._lock:
            if len(self._items) < self.capacity:
                self._items.append(transition)
            else:
                self._items[self._next] = transition
            self._next = (self._next + 1) % self.capacity

    def extend(self, transitions: Sequence[Transition]) -> None:
        for transition in transitions:
            self.append(transition)

    def sample(self, batch_size: int) -> List[Transition]:
        with self._lock:
            if not self._items:
                raise ValueError("cannot sample from an empty replay buffer")
            replace = len(self._items) < batch_size
            picks = self._rng.choice(len(self._items), size=batch_size, replace=replace)
            return [self._items[i] for i in picks]


# ============================================================================
# FUNCTION APPROXIMATORS
# ============================================================================

class SharedGraphModel:
    """One relational GCN shared by every TSC; parameters live under "shared"."""

    architecture = "rgcn"

    def __init__(self, mode: GraphMode, scaling: FeatureScaling = DEFAULT_SCALING):
        self.mode = GraphMode(mode)
        self.scaling = scaling

    def set_for(self, tsc_id: str) -> str:
        return SHARED

    def init_sets(self, seed: int, hidden_width: int = prm.HIDDEN_WIDTH, normalize: bool = False) -> ParamSets:
        return {SHARED: init_params(self.mode, seed, hidden_width, normalize=normalize, scaling=self.scaling)}

    def check_network(self, network: RoadNetwork) -> None:
        """Shared parameters transfer to any network."""

    def _forward(self, params: ModelParams, items: Sequence[Tuple[ObservationGraph, str]], tape: Tape):
        graphs: List[ObservationGraph] = []
        first_row: Dict[int, int] = {}
        for graph, _ in items:
            if id(graph) not in first_row:
                first_row[id(graph)] = sum(g.n_tsc for g in graphs)
                graphs.append(graph)
        batch = graphs[0] if len(graphs) == 1 else union_graphs(graphs)
        embedding, tape = rgcn_forward(batch, params, tape)
        rows = np.array(
            [first_row[id(graph)] + graph.tsc_ids.index(tsc) for graph, tsc in items], dtype=int
        )
        return tape.gather_rows(embedding, rows)

    def q_values(
        self,
        sets: ParamSets,
        items: Sequence[Tuple[ObservationGraph, str]],
        noise_mode: NoiseMode = NoiseMode.ZERO,
        rng: Optional[np.random.Generator] = None,
    ) -> np.ndarray:
        """Q-values (len(items), 2) without gradients."""
        tape = Tape()
        embedding = self._forward(sets[SHARED], items, tape)
        return q_head(embedding, sets[SHARED], noise_mode, tape, rng=rng).data

    def gradients(
        self,
        sets: ParamSets,
        items: Sequence[Tuple[ObservationGraph, str]],
        actions: np.ndarray,
        targets: np.ndarray,
        noise_mode: NoiseMode,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[float, Dict[str, Gradients]]:
        """Mean squared TD loss over the batch and its gradients."""
        params = sets[SHARED]
        tape = Tape()
        embedding = self._forward(params, items, tape)
        q = q_head(embedding, params, noise_mode, tape, rng=rng)
        loss = td_loss(tape, q, actions, targets)
        grads = backward(tape, loss)
        return grads.loss, {SHARED: grads}


class PerTscMlpModel:
    """Independent MLP per TSC on flattened local features (MARL-IQL).

    Parameters are tied to the topology they were trained on through the
    network signature.
    """

    architecture = "mlp"

    def __init__(self, network: RoadNetwork, scaling: FeatureScaling = DEFAULT_SCALING):
        self.mode = GraphMode.LANE
        self.scaling = scaling
        self.network_signature = network_signature(network)
        self.tsc_ids = list(network.tsc_ids)
        self._empty_graph = encode(reset(network, TripTable(), 0), network, GraphMode.LANE, scaling)

    def set_for(self, tsc_id: str) -> str:
        return tsc_id

    def input_width(self, tsc_id: str) -> int:
        return int(local_tsc_features(self._empty_graph, tsc_id).size)

    def init_sets(self, seed: int, hidden_width: int = prm.HIDDEN_WIDTH, normalize: bool = False) -> ParamSets:
        return {
            tsc: init_mlp_params(self.input_width(tsc), seed + k, scaling=self.scaling)
            for k, tsc in enumerate(self.tsc_ids)
        }

    def check_network(self, network: RoadNetwork) -> None:
        if network_signature(network) != self.network_signature:
            raise TransferError("MARL parameters are network-specific")

    def _grouped(self, items: Sequence[Tuple[ObservationGraph, str]]) -> Dict[str, List[int]]:
        groups: Dict[str, List[int]] = {}
        for k, (_, tsc) in enumerate(items):
            groups.setdefault(tsc, []).append(k)
        return groups

    def _inputs(self, items, indices: List[int]) -> np.ndarray:
        return np.stack([local_tsc_features(items[k][0], items[k][1]) for k in indices])

    def q_values(self, sets: ParamSets, items, noise_mode=NoiseMode.ZERO, rng=None) -> np.ndarray:
        out = np.zeros((len(items), prm.N_ACTIONS))
        for tsc, indices in self._grouped(items).items():
            hidden, tape = mlp_forward(self._inputs(items, indices), sets[tsc])
            out[indices] = q_head(hidden, sets[tsc], noise_mode, tape, rng=rng).data
        return out

    def gradients(self, sets: ParamSets, items, actions, targets, noise_mode, rng=None):
        n = len(items)
        total = 0.0
        grads: Dict[str, Gradients] = {}
        for tsc, indices in self._grouped(items).items():
            hidden, tape = mlp_forward(self._inputs(items, indices), sets[tsc])
            q = q_head(hidden, sets[tsc], noise_mode, tape, rng=rng)
            loss = td_loss(tape, q, np.asarray(actions)[indices], np.asarray(targets)[indices])
            weight = len(indices) / n
            grads[tsc] = backward(tape, loss, upstream=weight)
            total += weight * grads[tsc].loss
        for tsc in sets:
            if tsc not in grads:
                grads[tsc] = Gradients({k: np.zeros_like(v) for k, v in sets[tsc].tensors.items()}, 0.0)
        return total, grads


# ============================================================================
# ACTING AND TARGETS
# ============================================================================

def greedy_from_q(q: np.ndarray) -> TscAction:
    """Argmax over (PROLONG, SWITCH); ties go to PROLONG."""
    return TscAction.SWITCH if q[TscAction.SWITCH] > q[TscAction.PROLONG] else TscAction.PROLONG


def select_actions(
    graph: ObservationGraph,
    params,
    noise_mode: NoiseMode = NoiseMode.ZERO,
    rng: Optional[np.random.Generator] = None,
    model=None,
) -> Dict[str, TscAction]:
    """Choose an action for every TSC of a graph with one forward pass.

    Args:
        graph: Observation graph of the current step
        params: ModelParams of the shared model, or parameter sets of `model`
        noise_mode: SAMPLED for noisy exploration, ZERO for greedy acting
        rng: Noise source (SAMPLED only)
        model: Function approximator (shared graph model by default)

    Returns:
        Action per TSC id
    """
    if isinstance(params, ModelParams):
        if params.mode != graph.mode:
            raise ModelShapeError(f"graph mode {graph.mode.value} != model mode {params.mode.value}")
        model = model or SharedGraphModel(params.mode, params.scaling)
        params = {SHARED: params}
    items = [(graph, tsc) for tsc in graph.tsc_ids]
    q = model.q_values(params, items, noise_mode, rng)
    return {tsc: greedy_from_q(q[k]) for k, tsc in enumerate(graph.tsc_ids)}


def td_targets(
    batch: Sequence[Transition],
    online: ParamSets,
    target: ParamSets,
    gamma: float,
    model,
    use_mask: bool = True,
) -> np.ndarray:
    """Double-Q targets r + gamma * Q_target(s', argmax_feasible Q_online(s', .)).

    Both networks are evaluated with zero noise. With `use_mask`, actions
    that would have no effect in s' are excluded from the argmax.
    """
    if not batch:
        raise ValueError("td_targets needs a non-empty batch")
    items = [(t.next_graph, t.tsc_id) for t in batch]
    q_online = model.q_values(online, items, NoiseMode.ZERO)
    q_target = model.q_values(target, items, NoiseMode.ZERO)
    if use_mask:
        mask = np.stack([np.asarray(t.next_mask, dtype=bool) for t in batch])
    else:
        mask = np.ones_like(q_online, dtype=bool)
    if not mask.any(axis=1).all():
        raise ValueError("a transition has no feasible next action")
    best = np.argmax(np.where(mask, q_online, -np.inf), axis=1)
    rewards = np.array([t.reward for t in batch], dtype=float)
    return rewards + gamma * q_target[np.arange(len(batch)), best]


def batch_loss(batch, online, target, gamma, model, use_mask=True) -> float:
    """Noise-free TD loss of a batch (used on the frozen reference batch)."""
    targets = td_targets(batch, online, target, gamma, model, use_mask)
    q = model.q_values(online, [(t.graph, t.tsc_id) for t in batch], NoiseMode.ZERO)
    chosen = q[np.arange(len(batch)), [t.action for t in batch]]
    return float(np.mean((chosen - targets) ** 2))


# ============================================================================
# TRAINING
# ============================================================================

@dataclass
class _Simulation:
    network: RoadNetwork
    state: Optional[SimState] = None
    graph: Optional[ObservationGraph] = None
    episode: int = 0
    steps: int = 0
    episode_reward: float = 0.0


@dataclass
class TrainingResult:
    params: ParamSets
    log: pd.DataFrame
    updates: int
    env_steps: int
    buffer_size: int
    episode_rewards: List[float] = field(default_factory=list)
    network_signature: Optional[str] = None


def generalist_networks(config: TrainingConfig, exclude: Sequence[RoadNetwork] = ()) -> List[RoadNetwork]:
    """Distinct random training networks, never including an excluded topology."""
    excluded = {network_signature(network) for network in exclude}
    params = config.generation_params()
    rng = np.random.default_rng(config.seed + 1)
    networks, signatures = [], set()
    attempts = 0
    while len(networks) < config.n_generalist_networks:
        attempts += 1
        if attempts > 50 * config.n_generalist_networks:
            raise RuntimeError("could not generate enough distinct training networks")
        network = generate_network(int(rng.integers(2**31 - 1)), params)
        signature = network_signature(network)
        if signature in excluded or signature in signatures:
            continue
        signatures.add(signature)
        networks.append(network)
    return networks


def target_network(config: TrainingConfig) -> RoadNetwork:
    if config.target_network:
        return load_network(config.target_network)
    params = config.generation_params()
    if config.target_intersections is not None:
        params = params.with_intersections(config.target_intersections)
    return generate_network(config.target_network_seed, params)


class Trainer:
    """Round-robin collector over several simulations plus a single learner.

    Each collected step appends one transition per TSC; once the buffer
    holds `warmup` items every collected step is followed by one update.
    """

    def __init__(self, config: TrainingConfig, networks: Sequence[RoadNetwork], model, out_dir: Optional[str] = None):
        if not networks:
            raise ValueError("training needs at least one network")
        self.config = config
        self.model = model
        self.out_dir = out_dir
        self.rng = np.random.default_rng(config.seed)
        self.buffer = ReplayBuffer(config.replay_capacity, seed=config.seed)
        self.online: ParamSets = model.init_sets(config.seed, config.hidden_width, config.normalize_messages)
        self.target: ParamSets = dict(self.online)
        self.optimizers = {name: AdamOptimizer(learning_rate=config.learning_rate) for name in self.online}
        self.sims = [_Simulation(network=networks[k % len(networks)]) for k in range(config.n_simulations)]
        self.updates = 0
        self.env_steps = 0
        self.episode_rewards: List[float] = []
        self.reference_batch: Optional[List[Transition]] = None
        self.log_rows: List[Dict[str, float]] = []

    # -- collection -----------------------------------------------------

    def _start_episode(self, sim: _Simulation) -> None:
        seed = int(self.rng.integers(2**31 - 1))
        trips = generate_demand(seed, sim.network, self.config.demand_rate, self.config.episode_length)
        sim.state = reset(sim.network, trips, seed)
        sim.graph = encode(sim.state, sim.network, self.model.mode, self.model.scaling)
        sim.steps = 0
        sim.episode_reward = 0.0

    @property
    def epsilon(self) -> float:
        c = self.config
        fraction = min(1.0, self.env_steps / c.epsilon_decay_steps)
        return c.epsilon_start + fraction * (c.epsilon_end - c.epsilon_start)

    def _explore(self, graph: ObservationGraph) -> Dict[str, TscAction]:
        if self.config.exploration == "noisy":
            return select_actions(graph, self.online, NoiseMode.SAMPLED, self.rng, model=self.model)
        actions = select_actions(graph, self.online, NoiseMode.ZERO, model=self.model)
        for tsc in actions:
            if self.rng.random() < self.epsilon:
                actions[tsc] = TscAction(int(self.rng.integers(prm.N_ACTIONS)))
        return actions

    def collect(self, sim: _Simulation) -> List[Transition]:
        """Advance one simulation by one step and store its transitions."""
        if sim.state is None or sim.steps >= self.config.episode_length:
            self._start_episode(sim)
        graph = sim.graph
        requested = self._explore(graph)
        state, events = step(sim.state, requested)
        next_graph = encode(state, sim.network, self.model.mode, self.model.scaling)
        step_rewards = tsc_rewards(state)
        transitions = []
        for tsc in graph.tsc_ids:
            action = events.realized[tsc] if self.config.action_correction else requested[tsc]
            transitions.append(
                Transition(
                    graph=graph,
                    tsc_id=tsc,
                    action=int(action),
                    reward=step_rewards[tsc],
                    next_graph=next_graph,
                    next_mask=action_mask(state, tsc),
                )
            )
        self.buffer.extend(transitions)
        sim.graph = next_graph
        sim.steps += 1
        sim.episode_reward += sum(step_rewards.values())
        self.env_steps += 1
        if sim.steps >= self.config.episode_length:
            self.episode_rewards.append(sim.episode_reward)
            sim.episode += 1
        return transitions

    # -- learning -------------------------------------------------------

    def update(self) -> float:
        """One optimizer step on a uniformly sampled batch."""
        c = self.config
        batch = self.buffer.sample(c.batch_size)
        targets = td_targets(batch, self.online, self.target, c.gamma, self.model, c.action_correction)
        noise_mode = NoiseMode.SAMPLED if c.exploration == "noisy" else NoiseMode.ZERO
        loss, grads = self.model.gradients(
            self.online,
            [(t.graph, t.tsc_id) for t in batch],
            np.array([t.action for t in batch]),
            targets,
            noise_mode,
            self.rng,
        )
        self.online = {name: self.optimizers[name].step(self.online[name], grads[name]) for name in self.online}
        self.updates += 1
        if self.updates % c.target_update_every == 0:
            self.sync_target()
        return loss

    def sync_target(self) -> None:
        self.target = dict(self.online)

    def reference_loss(self) -> float:
        if self.reference_batch is None:
            return float("nan")
        return batch_loss(
            self.reference_batch, self.online, self.target, self.config.gamma, self.model, self.config.action_correction
        )

    def mean_episode_reward(self) -> float:
        window = self.episode_rewards[-prm.REWARD_WINDOW_EPISODES:]
        return float(np.mean(window)) if window else float("nan")

    def run(self) -> TrainingResult:
        c = self.config
        last_loss = float("nan")
        last_reference = float("nan")
        while self.env_steps < c.total_steps:
            sim = self.sims[self.env_steps % len(self.sims)]
            self.collect(sim)
            if len(self.buffer) < c.warmup:
                continue
            if self.reference_batch is None:
                self.reference_batch = self.buffer.sample(min(c.heldout_size, len(self.buffer)))
                last_reference = self.reference_loss()
                self._log(last_loss, last_reference)
            last_loss = self.update()
            if self.updates % c.heldout_every == 0:
                last_reference = self.reference_loss()
            if self.updates % c.log_every == 0:
                self._log(last_loss, last_reference)
            if self.out_dir and self.updates % c.checkpoint_every == 0:
                self.save(os.path.join(self.out_dir, f"checkpoint_{self.updates}.npz"))
        if self.updates % c.log_every != 0 or not self.log_rows:
            self._log(last_loss, self.reference_loss())
        log = pd.DataFrame(
            self.log_rows,
            columns=["update", "loss", "mean_episode_reward", "heldout_loss", "env_steps", "epsilon"],
        )
        if self.out_dir:
            os.makedirs(self.out_dir, exist_ok=True)
            log.to_csv(os.path.join(self.out_dir, "training_log.csv"), index=False)
            self.save(os.path.join(self.out_dir, "final.npz"))
            save_config(c, os.path.join(self.out_dir, "config.yaml"))
        logger.info(
            "Training finished: %d env steps, %d updates, buffer %d", self.env_steps, self.updates, len(self.buffer)
        )
        return TrainingResult(
            params=self.online,
            log=log,
            updates=self.updates,
            env_steps=self.env_steps,
            buffer_size=len(self.buffer),
            episode_rewards=list(self.episode_rewards),
            network_signature=getattr(self.model, "network_signature", None),
        )

    def _log(self, loss: float, reference: float) -> None:
        row = {
            "update": self.updates,
            "loss": loss,
            "mean_episode_reward": self.mean_episode_reward(),
            "heldout_loss": reference,
            "env_steps": self.env_steps,
            "epsilon": self.epsilon if self.config.exploration == "epsilon" else 0.0,
        }
        self.log_rows.append(row)
        logger.info(
            "update=%d loss=%.4f heldout=%.4f reward=%.1f", row["update"], loss, reference, row["mean_episode_reward"]
        )

    def save(self, path: str) -> None:
        save_checkpoint(
            path,
            self.online,
            network_signature=getattr(self.model, "network_signature", None),
            extra={"updates": self.updates, "env_steps": self.env_steps, "model": self.config.model},
        )


def train(
    config: TrainingConfig, out_dir: Optional[str] = None, exclude: Sequence[RoadNetwork] = ()
) -> TrainingResult:
    """Train the shared graph model (specialist or generalist) from a config.

    Generalist training sets never contain the target network nor any
    network in `exclude`.
    """
    config.validate()
    target = target_network(config)
    if config.model == "marl":
        from .baselines import marl_train

        return marl_train(config, target, out_dir)
    if config.training_set == TrainingSet.GENERALIST.value:
        networks = generalist_networks(config, exclude=[target, *exclude])
    else:
        networks = [target]
    logger.info(
        "Training %s-%s on %d network(s), %d simulations", config.training_set, config.mode, len(networks), config.n_simulations
    )
    trainer = Trainer(config, networks, SharedGraphModel(config.graph_mode), out_dir=out_dir)
    return trainer.run()


# ============================================================================
# POLICIES
# ============================================================================

class LearnedPolicy:
    """Greedy (noise-free) acting with trained parameters."""

    def __init__(self, model, params: ParamSets, policy_id: str = "learned"):
        self.model = model
        self.params = params
        self.policy_id = policy_id
        self.mode = model.mode

    def bind(self, network: RoadNetwork) -> None:
        self.model.check_network(network)

    def act(self, state: SimState) -> Dict[str, TscAction]:
        graph = encode(state, state.network, self.mode, self.model.scaling)
        return select_actions(graph, self.params, NoiseMode.ZERO, model=self.model)


def load_policy(path: str, network: Optional[RoadNetwork] = None, policy_id: Optional[str] = None) -> LearnedPolicy:
    """Build a policy from a checkpoint; per-TSC checkpoints need their network."""
    param_sets, meta = load_checkpoint(path)
    policy_id = policy_id or os.path.splitext(os.path.basename(path))[0]
    first = next(iter(param_sets.values()))
    if meta["architecture"] == "mlp":
        if network is None:
            raise TransferError("MARL parameters are network-specific")
        model = PerTscMlpModel(network, first.scaling)
        if meta.get("network_signature") != model.network_signature:
            raise TransferError("MARL parameters are network-specific")
        return LearnedPolicy(model, param_sets, policy_id)
    return LearnedPolicy(SharedGraphModel(first.mode, first.scaling), param_sets, policy_id)
