"""Dense tensors with reverse-mode differentiation, and the Q-network.

A `Tape` records every operation of a forward pass; `backward` walks it in
reverse and returns the gradient of a scalar output with respect to every
model parameter bound to the tape. On top of this sit the relational graph
convolution over observation graphs, the per-intersection MLP, the noisy
dueling Q-head, the Adam optimizer and checkpoint files.
"""

import json
import logging
import os
from dataclasses import dataclass, field, replace as dc_replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import parameters as prm
from .data_models import GraphMode, NodeType, NoiseMode, edge_types_for
from .errors import ModelShapeError, NonFiniteGradientError, TapeError
from .graphenc import DEFAULT_SCALING, FeatureScaling, ObservationGraph, feature_widths

logger = logging.getLogger(__name__)

NOISY_STREAMS = ("value", "adv")
STREAM_OUTPUTS = {"value": 1, "adv": prm.N_ACTIONS}


# ============================================================================
# TENSORS AND TAPE
# ============================================================================

class Tensor:
    """A float64 array with an accumulated gradient and a backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, name={self.name})"


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Records operations for one forward pass; single use."""

    def __init__(self):
        self.nodes: List[Tensor] = []
        self.params: Dict[str, Tensor] = {}
        self.consumed = False

    def _record(self, data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
        if self.consumed:
            raise TapeError("tape already consumed by backward")
        out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
        if out.requires_grad:
            out._backward = backward
            self.nodes.append(out)
        return out

    # -- leaves ---------------------------------------------------------

    def bind(self, params: "ModelParams") -> Dict[str, Tensor]:
        """Create (once) a differentiable leaf for every parameter tensor."""
        for name, value in params.tensors.items():
            if name not in self.params:
                self.params[name] = Tensor(value, requires_grad=True, name=name)
        return self.params

    @staticmethod
    def constant(data) -> Tensor:
        return Tensor(data)

    # -- operations -----------------------------------------------------

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        def backward(g):
            _accumulate(a, _unbroadcast(g, a.shape))
            _accumulate(b, _unbroadcast(g, b.shape))
        return self._record(a.data + b.data, (a, b), backward)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        def backward(g):
            _accumulate(a, _unbroadcast(g, a.shape))
            _accumulate(b, _unbroadcast(-g, b.shape))
        return self._record(a.data - b.data, (a, b), backward)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        def backward(g):
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
            _accumulate(b, _unbroadcast(g * a.data, b.shape))
        return self._record(a.data * b.data, (a, b), backward)

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        def backward(g):
            _accumulate(a, g @ b.data.T)
            _accumulate(b, a.data.T @ g)
        return self._record(a.data @ b.data, (a, b), backward)

    def relu(self, a: Tensor) -> Tensor:
        mask = a.data > 0

        def backward(g):
            _accumulate(a, g * mask)
        return self._record(a.data * mask, (a,), backward)

    def square(self, a: Tensor) -> Tensor:
        def backward(g):
            _accumulate(a, 2.0 * a.data * g)
        return self._record(a.data * a.data, (a,), backward)

    def mean(self, a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
        size = a.data.size if axis is None else a.data.shape[axis]

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.shape) / size)
        return self._record(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)

    def gather_rows(self, a: Tensor, index: np.ndarray) -> Tensor:
        def backward(g):
            grad = np.zeros_like(a.data)
            np.add.at(grad, index, g)
            _accumulate(a, grad)
        return self._record(a.data[index], (a,), backward)

    def scatter_rows(self, a: Tensor, index: np.ndarray, n_rows: int) -> Tensor:
        """Sum rows of `a` into an (n_rows, width) array at `index`."""
        out = np.zeros((n_rows,) + a.shape[1:])
        np.add.at(out, index, a.data)

        def backward(g):
            _accumulate(a, g[index])
        return self._record(out, (a,), backward)

    def pick(self, a: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
        def backward(g):
            grad = np.zeros_like(a.data)
            np.add.at(grad, (rows, cols), g)
            _accumulate(a, grad)
        return self._record(a.data[rows, cols], (a,), backward)


@dataclass
class Gradients:
    """Gradient of a scalar loss with respect to every parameter."""
    values: Dict[str, np.ndarray]
    loss: float = 0.0

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.values.values())))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.values.values())

    def scaled(self, factor: float) -> "Gradients":
        return Gradients({k: v * factor for k, v in self.values.items()}, self.loss)


def backward(tape: Tape, output: Tensor, upstream=1.0) -> Gradients:
    """Reverse-mode pass from `output`; consumes the tape.

    Args:
        tape: Tape of the forward pass that produced `output`
        output: Tensor to differentiate (usually the scalar loss)
        upstream: Gradient of the final objective w.r.t. `output`

    Returns:
        Gradients for every parameter bound to the tape (zero when unused)
    """
    if tape.consumed:
        raise TapeError("backward called twice on the same tape")
    tape.consumed = True
    output.grad = np.broadcast_to(np.asarray(upstream, dtype=np.float64), output.shape).copy()
    for node in reversed(tape.nodes):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)
    values = {
        name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
        for name, leaf in tape.params.items()
    }
    loss = float(output.data) if output.data.size == 1 else float("nan")
    return Gradients(values=values, loss=loss)


# ============================================================================
# MODEL PARAMETERS
# ============================================================================

@dataclass(frozen=True)
class ModelParams:
    """Immutable snapshot of all learnable tensors of one Q-network."""
    mode: GraphMode
    tensors: Dict[str, np.ndarray]
    architecture: str = "rgcn"  # "rgcn" (shared graph model) or "mlp" (per-TSC)
    normalize: bool = False
    scaling: FeatureScaling = DEFAULT_SCALING

    def __post_init__(self):
        for array in self.tensors.values():
            array.setflags(write=False)

    @property
    def names(self) -> List[str]:
        return sorted(self.tensors)

    @property
    def hidden_width(self) -> int:
        return int(self.tensors["value_w_mu"].shape[0])

    @property
    def n_layers(self) -> int:
        prefix = "gcn" if self.architecture == "rgcn" else "mlp"
        return len({n.split("/", 1)[0] for n in self.tensors if n.startswith(prefix)})

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for a in self.tensors.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[n].ravel() for n in self.names])

    def replace(self, tensors: Dict[str, np.ndarray]) -> "ModelParams":
        """Copy with new tensor values (same names and shapes)."""
        if set(tensors) != set(self.tensors):
            raise ModelShapeError("replacement tensors do not match parameter names")
        fresh = {}
        for name, value in tensors.items():
            value = np.array(value, dtype=np.float64)
            if value.shape != self.tensors[name].shape:
                raise ModelShapeError(f"{name}: shape {value.shape} != {self.tensors[name].shape}")
            fresh[name] = value
        return dc_replace(self, tensors=fresh)


def _glorot(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


def _noisy_head(rng: np.random.Generator, width: int) -> Dict[str, np.ndarray]:
    bound = 1.0 / np.sqrt(width)
    tensors = {}
    for stream in NOISY_STREAMS:
        n_out = STREAM_OUTPUTS[stream]
        tensors[f"{stream}_w_mu"] = rng.uniform(-bound, bound, size=(width, n_out))
        tensors[f"{stream}_w_sigma"] = np.full((width, n_out), prm.NOISY_SIGMA_INIT)
        tensors[f"{stream}_b_mu"] = rng.uniform(-bound, bound, size=(n_out,))
        tensors[f"{stream}_b_sigma"] = np.full((n_out,), prm.NOISY_SIGMA_INIT)
    return tensors


def init_params(
    mode: GraphMode,
    seed: int,
    hidden_width: int = prm.HIDDEN_WIDTH,
    normalize: bool = False,
    scaling: FeatureScaling = DEFAULT_SCALING,
    n_layers: Optional[int] = None,
) -> ModelParams:
    """Initialize a relational GCN Q-network.

    Layer 0 owns one weight per edge type mapping that type's source
    features to the hidden width; later layers map hidden to hidden.
    """
    mode = GraphMode(mode)
    if n_layers is None:
        n_layers = prm.LANE_MODE_LAYERS if mode == GraphMode.LANE else prm.VEHICLE_MODE_LAYERS
    rng = np.random.default_rng(seed)
    widths = feature_widths(mode)
    tensors = {}
    for layer in range(n_layers):
        for edge_type in edge_types_for(mode):
            n_in = widths[edge_type.source_type] if layer == 0 else hidden_width
            tensors[f"gcn{layer}/{edge_type.value}"] = _glorot(rng, n_in, hidden_width)
    tensors.update(_noisy_head(rng, hidden_width))
    return ModelParams(mode=mode, tensors=tensors, architecture="rgcn", normalize=normalize, scaling=scaling)


def init_mlp_params(
    input_width: int,
    seed: int,
    hidden_layers: Sequence[int] = prm.MARL_HIDDEN_LAYERS,
    scaling: FeatureScaling = DEFAULT_SCALING,
) -> ModelParams:
    """Initialize one per-intersection MLP Q-network (lane-mode features)."""
    rng = np.random.default_rng(seed)
    tensors = {}
    n_in = input_width
    for layer, width in enumerate(hidden_layers):
        tensors[f"mlp{layer}/w"] = _glorot(rng, n_in, width)
        tensors[f"mlp{layer}/b"] = np.zeros(width)
        n_in = width
    tensors.update(_noisy_head(rng, n_in))
    return ModelParams(mode=GraphMode.LANE, tensors=tensors, architecture="mlp", scaling=scaling)


# ============================================================================
# FORWARD PASSES
# ============================================================================

def _check_graph(graph: ObservationGraph, params: ModelParams) -> None:
    if params.architecture != "rgcn":
        raise ModelShapeError("graph forward needs rgcn parameters")
    if GraphMode(graph.mode) != params.mode:
        raise ModelShapeError(f"graph mode {graph.mode.value} != model mode {params.mode.value}")
    for edge_type in edge_types_for(params.mode):
        expected = params.tensors[f"gcn0/{edge_type.value}"].shape[0]
        actual = graph.features[edge_type.source_type].shape[1]
        if expected != actual:
            raise ModelShapeError(
                f"{edge_type.value}: feature width {actual} != weight input width {expected}"
            )


def rgcn_forward(
    graph: ObservationGraph,
    params: ModelParams,
    tape: Optional[Tape] = None,
    return_all: bool = False,
):
    """Relational graph convolution over an observation graph.

    Each layer computes, for every node i,
    h_i' = relu(sum over edge types e and e-neighbours j of h_j @ W_e),
    where self-loop edge types make every node its own neighbour. With
    `normalize` set, each edge type's messages are averaged instead of summed.

    Args:
        graph: Observation graph (or disjoint union of graphs)
        params: R-GCN parameters of the same mode
        tape: Tape to record on (a new one when omitted)
        return_all: Also return every layer's node embeddings

    Returns:
        (TSC embeddings, tape), or (TSC embeddings, tape, layer embeddings)
    """
    _check_graph(graph, params)
    tape = tape or Tape()
    leaves = tape.bind(params)
    offsets = graph.offsets
    n_nodes = graph.n_nodes
    inputs = {t: Tape.constant(x) for t, x in graph.features.items()}

    hidden: Optional[Tensor] = None
    layers: List[Tensor] = []
    for layer in range(params.n_layers):
        total: Optional[Tensor] = None
        for edge_type in edge_types_for(params.mode):
            src, dst = graph.edges[edge_type]
            if len(src) == 0:
                continue
            if layer == 0:
                rows = tape.gather_rows(inputs[edge_type.source_type], src - offsets[edge_type.source_type])
            else:
                rows = tape.gather_rows(hidden, src)
            messages = tape.matmul(rows, leaves[f"gcn{layer}/{edge_type.value}"])
            if params.normalize:
                degree = np.bincount(dst, minlength=n_nodes)[dst].astype(float)
                messages = tape.mul(messages, Tape.constant((1.0 / degree)[:, None]))
            summed = tape.scatter_rows(messages, dst, n_nodes)
            total = summed if total is None else tape.add(total, summed)
        if total is None:
            total = Tape.constant(np.zeros((n_nodes, params.hidden_width)))
        hidden = tape.relu(total)
        layers.append(hidden)

    embeddings = tape.gather_rows(hidden, graph.tsc_rows + offsets[NodeType.TSC])
    if return_all:
        return embeddings, tape, layers
    return embeddings, tape


def mlp_forward(inputs: np.ndarray, params: ModelParams, tape: Optional[Tape] = None) -> Tuple[Tensor, Tape]:
    """Per-intersection MLP trunk; `inputs` is (n, input_width)."""
    if params.architecture != "mlp":
        raise ModelShapeError("mlp forward needs mlp parameters")
    expected = params.tensors["mlp0/w"].shape[0]
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[1] != expected:
        raise ModelShapeError(f"input width {inputs.shape[1]} != {expected}")
    tape = tape or Tape()
    leaves = tape.bind(params)
    hidden = Tape.constant(inputs)
    for layer in range(params.n_layers):
        hidden = tape.relu(tape.add(tape.matmul(hidden, leaves[f"mlp{layer}/w"]), leaves[f"mlp{layer}/b"]))
    return hidden, tape


def sample_noise(params: ModelParams, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """Independent standard Gaussian noise for every noisy head tensor."""
    noise = {}
    for stream in NOISY_STREAMS:
        for part in ("w", "b"):
            noise[f"{stream}_{part}"] = rng.standard_normal(params.tensors[f"{stream}_{part}_mu"].shape)
    return noise


def q_head(
    embedding: Tensor,
    params: ModelParams,
    noise_mode: NoiseMode,
    tape: Tape,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[Dict[str, np.ndarray]] = None,
) -> Tensor:
    """Noisy dueling head: Q(a) = V + A(a) - mean(A).

    Effective weights are mu + sigma * eps. ZERO noise uses eps = 0; SAMPLED
    draws eps once (shared by every row) unless `noise` is given.

    Returns:
        Tensor (n, 2) of Q-values ordered (PROLONG, SWITCH)
    """
    if embedding.shape[1] != params.hidden_width:
        raise ModelShapeError(f"embedding width {embedding.shape[1]} != {params.hidden_width}")
    leaves = tape.bind(params)
    if NoiseMode(noise_mode) == NoiseMode.SAMPLED and noise is None:
        noise = sample_noise(params, rng if rng is not None else np.random.default_rng())

    outputs = {}
    for stream in NOISY_STREAMS:
        weights = {}
        for part in ("w", "b"):
            mu = leaves[f"{stream}_{part}_mu"]
            if NoiseMode(noise_mode) == NoiseMode.ZERO:
                weights[part] = mu
            else:
                sigma = leaves[f"{stream}_{part}_sigma"]
                weights[part] = tape.add(mu, tape.mul(sigma, Tape.constant(noise[f"{stream}_{part}"])))
        outputs[stream] = tape.add(tape.matmul(embedding, weights["w"]), weights["b"])
    advantage = outputs["adv"]
    centered = tape.sub(advantage, tape.mean(advantage, axis=1, keepdims=True))
    return tape.add(outputs["value"], centered)


def graph_q_values(
    graph: ObservationGraph,
    params: ModelParams,
    noise_mode: NoiseMode = NoiseMode.ZERO,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Q-values (n_tsc, 2) of every TSC in a graph, without gradients."""
    embedding, tape = rgcn_forward(graph, params)
    return q_head(embedding, params, noise_mode, tape, rng=rng).data


def td_loss(tape: Tape, q: Tensor, actions: np.ndarray, targets: np.ndarray) -> Tensor:
    """Mean squared TD error of Q(s, a) against fixed targets."""
    rows = np.arange(len(actions))
    chosen = tape.pick(q, rows, np.asarray(actions, dtype=int))
    return tape.mean(tape.square(tape.sub(chosen, Tape.constant(targets))))


# ============================================================================
# OPTIMIZER
# ============================================================================

@dataclass
class AdamOptimizer:
    """Adam with global-norm gradient clipping."""
    learning_rate: float = prm.LEARNING_RATE
    beta1: float = prm.ADAM_BETA1
    beta2: float = prm.ADAM_BETA2
    epsilon: float = prm.ADAM_EPSILON
    clip_norm: Optional[float] = prm.GRADIENT_CLIP_NORM
    timestep: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: ModelParams, grads: Gradients) -> ModelParams:
        if set(grads.values) != set(params.tensors):
            raise ModelShapeError("gradients do not match parameter names")
        if not grads.is_finite():
            raise NonFiniteGradientError("non-finite gradient; aborting update")
        norm = grads.global_norm()
        if self.clip_norm is not None and norm > self.clip_norm:
            grads = grads.scaled(self.clip_norm / norm)

        self.timestep += 1
        correction1 = 1.0 - self.beta1 ** self.timestep
        correction2 = 1.0 - self.beta2 ** self.timestep
        updated = {}
        for name, value in params.tensors.items():
            g = grads.values[name]
            m = self.first_moment.get(name, np.zeros_like(value))
            v = self.second_moment.get(name, np.zeros_like(value))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.first_moment[name] = m
            self.second_moment[name] = v
            step = self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.epsilon)
            updated[name] = value - step
        return params.replace(updated)


def optimizer_step(params: ModelParams, grads: Gradients, optimizer: AdamOptimizer) -> ModelParams:
    return optimizer.step(params, grads)


# ============================================================================
# CHECKPOINTS
# ============================================================================

def _npz_key(set_name: str, tensor_name: str) -> str:
    return f"{set_name}@{tensor_name.replace('/', '.')}"


def save_checkpoint(
    path: str,
    param_sets: Dict[str, ModelParams],
    network_signature: Optional[str] = None,
    extra: Optional[Dict] = None,
) -> None:
    """Save one or more parameter sets with self-describing metadata.

    Args:
        path: Output .npz path
        param_sets: {"shared": params} for the graph model, or one entry per TSC
        network_signature: Topology the parameters are bound to (per-TSC models)
        extra: Additional JSON-serializable metadata
    """
    if not param_sets:
        raise ValueError("nothing to save")
    first = next(iter(param_sets.values()))
    meta = {
        "version": prm.CHECKPOINT_FORMAT_VERSION,
        "architecture": first.architecture,
        "mode": first.mode.value,
        "hidden_width": first.hidden_width,
        "normalize": first.normalize,
        "scaling": first.scaling.to_dict(),
        "network_signature": network_signature,
        "sets": sorted(param_sets),
        "extra": extra or {},
    }
    arrays = {"__meta__": np.array(json.dumps(meta, sort_keys=True))}
    for set_name, params in param_sets.items():
        for name, value in params.tensors.items():
            arrays[_npz_key(set_name, name)] = value
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as handle:
        np.savez(handle, **arrays)
    logger.info("Saved checkpoint %s (%d parameter sets)", path, len(param_sets))


def load_checkpoint(path: str, expected_mode: Optional[GraphMode] = None) -> Tuple[Dict[str, ModelParams], Dict]:
    """Load parameter sets and metadata, rejecting unknown versions and mode mismatches."""
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["__meta__"]))
        if meta.get("version") != prm.CHECKPOINT_FORMAT_VERSION:
            raise ModelShapeError(f"unsupported checkpoint version {meta.get('version')!r}")
        mode = GraphMode(meta["mode"])
        if expected_mode is not None and GraphMode(expected_mode) != mode:
            raise ModelShapeError(f"checkpoint mode {mode.value} != requested mode {GraphMode(expected_mode).value}")
        scaling = FeatureScaling.from_dict(meta["scaling"])
        grouped: Dict[str, Dict[str, np.ndarray]] = {name: {} for name in meta["sets"]}
        for key in archive.files:
            if key == "__meta__":
                continue
            set_name, tensor_name = key.split("@", 1)
            grouped[set_name][tensor_name.replace(".", "/")] = np.array(archive[key], dtype=np.float64)
    param_sets = {
        name: ModelParams(
            mode=mode,
            tensors=tensors,
            architecture=meta["architecture"],
            normalize=bool(meta["normalize"]),
            scaling=scaling,
        )
        for name, tensors in grouped.items()
    }
    return param_sets, meta
