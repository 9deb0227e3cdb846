import json
from dataclasses import replace

import numpy as np
import pytest

from signalgraph.data_models import EdgeType, GraphMode, NodeType, NoiseMode, TripTable, TscAction, edge_types_for
from signalgraph.errors import ModelShapeError, NonFiniteGradientError, TapeError
from signalgraph.graphenc import ObservationGraph, encode, union_graphs
from signalgraph.nn import (
    AdamOptimizer,
    Gradients,
    ModelParams,
    Tape,
    Tensor,
    backward,
    graph_q_values,
    init_mlp_params,
    init_params,
    load_checkpoint,
    mlp_forward,
    q_head,
    rgcn_forward,
    sample_noise,
    save_checkpoint,
    td_loss,
)
from signalgraph.scenario import GenerationParams, generate_demand, generate_network
from signalgraph.sim import reset, step


# ============================================================================
# HELPERS
# ============================================================================

def _head(width, value=None, adv=None):
    value = np.zeros((width, 1)) if value is None else np.asarray(value, dtype=float)
    adv = np.zeros((width, 2)) if adv is None else np.asarray(adv, dtype=float)
    return {
        "value_w_mu": value,
        "value_w_sigma": np.zeros_like(value),
        "value_b_mu": np.zeros(1),
        "value_b_sigma": np.zeros(1),
        "adv_w_mu": adv,
        "adv_w_sigma": np.zeros_like(adv),
        "adv_b_mu": np.zeros(2),
        "adv_b_sigma": np.zeros(2),
    }


def _toy_graph(tsc_features, conn_features, edges):
    """Lane-mode graph with TSC nodes first and connection nodes after them."""
    tsc_features = np.atleast_2d(np.asarray(tsc_features, dtype=float))
    conn_features = np.asarray(conn_features, dtype=float).reshape(-1, tsc_features.shape[1])
    n_tsc, n_conn = len(tsc_features), len(conn_features)
    all_edges = {e: (np.array([], dtype=int), np.array([], dtype=int)) for e in edge_types_for(GraphMode.LANE)}
    for edge_type, (src, dst) in edges.items():
        all_edges[edge_type] = (np.array(src, dtype=int), np.array(dst, dtype=int))
    return ObservationGraph(
        mode=GraphMode.LANE,
        node_ids=[f"tsc:T{i}" for i in range(n_tsc)] + [f"conn:C{i}" for i in range(n_conn)],
        counts={NodeType.TSC: n_tsc, NodeType.CONNECTION: n_conn, NodeType.LANE: 0},
        features={
            NodeType.TSC: tsc_features,
            NodeType.CONNECTION: conn_features,
            NodeType.LANE: np.zeros((0, tsc_features.shape[1])),
        },
        edges=all_edges,
        tsc_ids=[f"T{i}" for i in range(n_tsc)],
    )


def _identity_params(width=2, normalize=False):
    tensors = {f"gcn0/{e.value}": np.eye(width) for e in edge_types_for(GraphMode.LANE)}
    tensors.update(_head(width))
    return ModelParams(mode=GraphMode.LANE, tensors=tensors, normalize=normalize)


def _reference_embeddings(graph, params):
    """Dense per-edge evaluation of the relational convolution."""
    offsets = graph.offsets
    h = {}
    for node_type, offset in offsets.items():
        for k in range(graph.counts[node_type]):
            h[offset + k] = graph.features[node_type][k]
    for layer in range(params.n_layers):
        new = {i: np.zeros(params.hidden_width) for i in range(graph.n_nodes)}
        for edge_type in edge_types_for(graph.mode):
            weight = params.tensors[f"gcn{layer}/{edge_type.value}"]
            for s, d in zip(*graph.edges[edge_type]):
                new[int(d)] = new[int(d)] + h[int(s)] @ weight
        h = {i: np.maximum(v, 0.0) for i, v in new.items()}
    return np.array([h[offsets[NodeType.TSC] + k] for k in range(graph.n_tsc)])


def _simulated_graph(network, mode, seed, n_steps):
    trips = generate_demand(seed, network, 2.0, 120)
    state = reset(network, trips, seed)
    rng = np.random.default_rng(seed)
    for _ in range(n_steps):
        state, _ = step(state, {tsc: TscAction(int(rng.integers(2))) for tsc in network.tsc_ids})
    return encode(state, network, mode)


# ============================================================================
# FORWARD
# ============================================================================

def test_single_node_identity_layer():
    graph = _toy_graph([[1.0, -2.0]], [], {EdgeType.TSC_SELF: ([0], [0])})
    embeddings, _ = rgcn_forward(graph, _identity_params())
    np.testing.assert_array_equal(embeddings.data, [[1.0, 0.0]])


def test_two_node_sum():
    a, b = np.array([0.5, -3.0]), np.array([1.0, 1.0])
    graph = _toy_graph(
        [b],
        [a],
        {
            EdgeType.TSC_SELF: ([0], [0]),
            EdgeType.CONNECTION_SELF: ([1], [1]),
            EdgeType.CONNECTION_TO_TSC: ([1], [0]),
        },
    )
    embeddings, _, layers = rgcn_forward(graph, _identity_params(), return_all=True)
    np.testing.assert_allclose(embeddings.data, [np.maximum(a + b, 0.0)])
    np.testing.assert_allclose(layers[-1].data[1], np.maximum(a, 0.0))


def test_normalized_messages_are_averaged():
    a1, a2, b = np.array([2.0, 4.0]), np.array([0.0, -2.0]), np.array([1.0, 1.0])
    graph = _toy_graph(
        [b],
        [a1, a2],
        {EdgeType.TSC_SELF: ([0], [0]), EdgeType.CONNECTION_TO_TSC: ([1, 2], [0, 0])},
    )
    summed, _ = rgcn_forward(graph, _identity_params())
    averaged, _ = rgcn_forward(graph, _identity_params(normalize=True))
    np.testing.assert_allclose(summed.data, [[3.0, 3.0]])
    np.testing.assert_allclose(averaged.data, [[2.0, 2.0]])


@pytest.mark.parametrize("mode", [GraphMode.LANE, GraphMode.VEHICLE])
def test_forward_matches_dense_reference(one_net, mode):
    graph = _simulated_graph(one_net, mode, seed=0, n_steps=15)
    params = init_params(mode, seed=0)
    embeddings, _ = rgcn_forward(graph, params)
    assert embeddings.shape == (1, 32)
    np.testing.assert_allclose(embeddings.data, _reference_embeddings(graph, params), atol=1e-10)


def test_forward_reference_on_multi_tsc_network(three_tsc_net):
    graph = _simulated_graph(three_tsc_net, GraphMode.VEHICLE, seed=1, n_steps=40)
    params = init_params(GraphMode.VEHICLE, seed=0)
    embeddings, _ = rgcn_forward(graph, params)
    np.testing.assert_allclose(embeddings.data, _reference_embeddings(graph, params), atol=1e-10)


def test_union_block_matches_single_graph(one_net, two_tsc_net):
    g1 = _simulated_graph(one_net, GraphMode.LANE, seed=2, n_steps=10)
    g2 = _simulated_graph(two_tsc_net, GraphMode.LANE, seed=3, n_steps=30)
    params = init_params(GraphMode.LANE, seed=4)
    alone1, _ = rgcn_forward(g1, params)
    alone2, _ = rgcn_forward(g2, params)
    reordered, _ = rgcn_forward(union_graphs([g2, g1]), params)
    np.testing.assert_allclose(reordered.data[: g2.n_tsc], alone2.data, atol=1e-12)
    np.testing.assert_allclose(reordered.data[g2.n_tsc:], alone1.data, atol=1e-12)


def _permuted(graph, rng):
    """Same graph with nodes shuffled within each type and edges listed in another order."""
    remap = np.empty(graph.n_nodes, dtype=int)
    features, node_ids, orders = {}, [""] * graph.n_nodes, {}
    for node_type, offset in graph.offsets.items():
        order = rng.permutation(graph.counts[node_type])
        orders[node_type] = order
        features[node_type] = graph.features[node_type][order]
        for new, old in enumerate(order):
            remap[offset + old] = offset + new
            node_ids[offset + new] = graph.node_ids[offset + old]
    edges = {}
    for edge_type, (src, dst) in graph.edges.items():
        shuffle = rng.permutation(len(src))
        src, dst = np.asarray(src, dtype=int), np.asarray(dst, dtype=int)
        edges[edge_type] = (remap[src][shuffle], remap[dst][shuffle])
    tsc_order = orders[NodeType.TSC]
    permuted = ObservationGraph(
        mode=graph.mode,
        node_ids=node_ids,
        counts=dict(graph.counts),
        features=features,
        edges=edges,
        tsc_ids=[graph.tsc_ids[i] for i in tsc_order],
    )
    return permuted, tsc_order


@pytest.mark.parametrize("mode", list(GraphMode))
@pytest.mark.parametrize("normalize", [False, True])
def test_forward_is_invariant_to_node_order(three_tsc_net, mode, normalize):
    graph = _simulated_graph(three_tsc_net, mode, seed=5, n_steps=40)
    params = init_params(mode, seed=2, normalize=normalize)
    reference, _ = rgcn_forward(graph, params)
    rng = np.random.default_rng(0)
    for _ in range(3):
        permuted, tsc_order = _permuted(graph, rng)
        embeddings, _ = rgcn_forward(permuted, params)
        np.testing.assert_allclose(embeddings.data, reference.data[tsc_order], atol=1e-10)


def test_parameter_size_independent_of_network(one_net):
    params = init_params(GraphMode.VEHICLE, seed=0)
    nbytes = params.nbytes
    networks = [one_net] + [generate_network(n, GenerationParams().with_intersections(n)) for n in (3, 6)]
    for seed, network in enumerate(networks):
        graph = _simulated_graph(network, GraphMode.VEHICLE, seed=seed, n_steps=20)
        embeddings, _ = rgcn_forward(graph, params)
        assert embeddings.shape == (len(network.tsc_ids), 32)
        assert params.nbytes == nbytes


def test_layer_counts_and_sigma_init():
    lane = init_params(GraphMode.LANE, seed=0)
    vehicle = init_params(GraphMode.VEHICLE, seed=0)
    assert lane.n_layers == 2 and vehicle.n_layers == 3
    assert lane.hidden_width == vehicle.hidden_width == 32
    assert np.all(lane.tensors["adv_w_sigma"] == 0.017)
    assert lane.tensors["gcn0/tsc_self"].shape == (1, 32)
    assert lane.tensors["gcn0/entry_lane_to_connection"].shape == (3, 32)
    assert vehicle.tensors["gcn0/entry_lane_to_connection"].shape == (1, 32)
    assert vehicle.tensors["gcn2/vehicle_to_lane"].shape == (32, 32)


def test_mode_and_width_mismatch(corridor_state, corridor_net):
    graph = encode(corridor_state, corridor_net, GraphMode.VEHICLE)
    with pytest.raises(ModelShapeError):
        rgcn_forward(graph, init_params(GraphMode.LANE, seed=0))
    params = init_params(GraphMode.VEHICLE, seed=0)
    wide = replace(graph, features={**graph.features, NodeType.LANE: np.ones((2, 3))})
    with pytest.raises(ModelShapeError):
        rgcn_forward(wide, params)


def test_mlp_forward_shapes():
    params = init_mlp_params(25, seed=0)
    hidden, _ = mlp_forward(np.zeros((3, 25)), params)
    assert hidden.shape == (3, 64)
    with pytest.raises(ModelShapeError):
        mlp_forward(np.zeros((1, 24)), params)


# ============================================================================
# Q HEAD
# ============================================================================

def test_dueling_combination():
    params = ModelParams(mode=GraphMode.LANE, tensors=_head(1, value=[[3.0]], adv=[[1.0, -1.0]]))
    q = q_head(Tensor([[1.0]]), params, NoiseMode.ZERO, Tape())
    np.testing.assert_allclose(q.data, [[4.0, 2.0]])


def test_equal_advantages_give_value():
    params = ModelParams(mode=GraphMode.LANE, tensors=_head(1, value=[[3.0]], adv=[[0.7, 0.7]]))
    q = q_head(Tensor([[2.0]]), params, NoiseMode.ZERO, Tape())
    np.testing.assert_allclose(q.data, [[6.0, 6.0]])


def test_zero_sigma_sampled_equals_zero(one_net):
    params = init_params(GraphMode.LANE, seed=0)
    params = params.replace({
        name: (np.zeros_like(value) if name.endswith("_sigma") else value)
        for name, value in params.tensors.items()
    })
    graph = _simulated_graph(one_net, GraphMode.LANE, seed=0, n_steps=10)
    sampled = graph_q_values(graph, params, NoiseMode.SAMPLED, np.random.default_rng(5))
    zero = graph_q_values(graph, params, NoiseMode.ZERO)
    np.testing.assert_array_equal(sampled, zero)


def test_sampled_noise_changes_q(one_net):
    params = init_params(GraphMode.LANE, seed=0)
    graph = _simulated_graph(one_net, GraphMode.LANE, seed=0, n_steps=10)
    a = graph_q_values(graph, params, NoiseMode.SAMPLED, np.random.default_rng(1))
    b = graph_q_values(graph, params, NoiseMode.SAMPLED, np.random.default_rng(2))
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(graph_q_values(graph, params), graph_q_values(graph, params))


def test_head_rejects_wrong_width():
    params = init_params(GraphMode.LANE, seed=0)
    with pytest.raises(ModelShapeError):
        q_head(Tensor(np.zeros((1, 8))), params, NoiseMode.ZERO, Tape())


# ============================================================================
# BACKWARD
# ============================================================================

def test_linear_gradient_is_residual_times_input():
    params = ModelParams(mode=GraphMode.LANE, tensors={"w": np.array([[2.0]])})
    tape = Tape()
    w = tape.bind(params)["w"]
    q = tape.matmul(Tape.constant([[3.0]]), w)
    residual = tape.sub(q, Tape.constant([[4.0]]))
    loss = tape.mul(Tape.constant(0.5), tape.mean(tape.square(residual)))
    grads = backward(tape, loss)
    assert grads.loss == pytest.approx(2.0)
    np.testing.assert_allclose(grads.values["w"], [[6.0]])


def test_zero_upstream_gives_zero_gradients(one_net):
    params = init_params(GraphMode.LANE, seed=0)
    graph = _simulated_graph(one_net, GraphMode.LANE, seed=0, n_steps=10)
    embedding, tape = rgcn_forward(graph, params)
    q = q_head(embedding, params, NoiseMode.ZERO, tape)
    loss = td_loss(tape, q, np.array([1]), np.array([0.5]))
    grads = backward(tape, loss, upstream=0.0)
    assert set(grads.values) == set(params.tensors)
    assert all(not np.any(g) for g in grads.values.values())


def test_tape_cannot_be_reused():
    params = ModelParams(mode=GraphMode.LANE, tensors={"w": np.array([[1.0]])})
    tape = Tape()
    w = tape.bind(params)["w"]
    out = tape.square(w)
    backward(tape, out)
    with pytest.raises(TapeError):
        backward(tape, out)
    with pytest.raises(TapeError):
        tape.square(w)


def _evaluate(graph, params, actions, targets, noise):
    embedding, tape, layers = rgcn_forward(graph, params, return_all=True)
    q = q_head(embedding, params, NoiseMode.SAMPLED, tape, noise=noise)
    loss = td_loss(tape, q, actions, targets)
    pattern = tuple((layer.data > 0).tobytes() for layer in layers)
    return tape, loss, pattern


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    mode = GraphMode.LANE if seed % 2 == 0 else GraphMode.VEHICLE
    network = generate_network(seed, GenerationParams().with_intersections(2))
    graph = _simulated_graph(network, mode, seed, n_steps=10 + seed)
    jittered = {t: x + rng.normal(0.0, 0.05, x.shape) for t, x in graph.features.items()}
    graph = replace(graph, features=jittered)

    params = init_params(mode, seed=seed, hidden_width=4)
    noise = sample_noise(params, rng)
    actions = rng.integers(0, 2, size=graph.n_tsc)
    targets = rng.normal(0.0, 1.0, size=graph.n_tsc)

    tape, loss, pattern = _evaluate(graph, params, actions, targets, noise)
    grads = backward(tape, loss).values

    h = 1e-4
    analytic, numeric = [], []
    for name in params.names:
        value = params.tensors[name]
        for flat in rng.choice(value.size, size=min(3, value.size), replace=False):
            index = np.unravel_index(flat, value.shape)
            shifted, patterns = [], set()
            for sign in (1.0, -1.0):
                perturbed = value.copy()
                perturbed[index] += sign * h
                candidate = params.replace({**params.tensors, name: perturbed})
                _, shifted_loss, shifted_pattern = _evaluate(graph, candidate, actions, targets, noise)
                shifted.append(float(shifted_loss.data))
                patterns.add(shifted_pattern)
            if patterns != {pattern}:
                continue  # a ReLU changed side
            numeric.append((shifted[0] - shifted[1]) / (2 * h))
            analytic.append(grads[name][index])
    assert analytic
    analytic, numeric = np.array(analytic), np.array(numeric)
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    assert np.linalg.norm(analytic - numeric) / scale < 1e-4


# ============================================================================
# OPTIMIZER
# ============================================================================

def _scalar_params(value=1.0):
    return ModelParams(mode=GraphMode.LANE, tensors={"x": np.array([value])})


def test_adam_zero_gradient_keeps_params():
    optimizer = AdamOptimizer()
    params = _scalar_params()
    updated = optimizer.step(params, Gradients({"x": np.zeros(1)}))
    np.testing.assert_array_equal(updated.tensors["x"], params.tensors["x"])
    assert optimizer.timestep == 1


def test_adam_descends_monotonically():
    optimizer = AdamOptimizer()
    params = _scalar_params()
    values = [1.0]
    for _ in range(20):
        params = optimizer.step(params, Gradients({"x": np.ones(1)}))
        values.append(float(params.tensors["x"][0]))
    assert all(b < a for a, b in zip(values, values[1:]))
    assert values[1] == pytest.approx(1.0 - 0.001)


def test_adam_is_deterministic():
    def run():
        optimizer = AdamOptimizer()
        params = init_params(GraphMode.LANE, seed=0, hidden_width=4)
        rng = np.random.default_rng(0)
        for _ in range(5):
            grads = Gradients({n: rng.normal(size=v.shape) for n, v in params.tensors.items()})
            params = optimizer.step(params, grads)
        return params.flat()

    np.testing.assert_array_equal(run(), run())


def test_adam_rejects_non_finite():
    with pytest.raises(NonFiniteGradientError):
        AdamOptimizer().step(_scalar_params(), Gradients({"x": np.array([np.nan])}))
    with pytest.raises(ModelShapeError):
        AdamOptimizer().step(_scalar_params(), Gradients({"y": np.zeros(1)}))


def test_params_are_immutable():
    params = _scalar_params()
    with pytest.raises(ValueError):
        params.tensors["x"][0] = 5.0
    with pytest.raises(ModelShapeError):
        params.replace({"x": np.zeros(2)})


# ============================================================================
# CHECKPOINTS
# ============================================================================

def test_checkpoint_round_trip(tmp_path):
    params = init_params(GraphMode.VEHICLE, seed=3, normalize=True)
    path = tmp_path / "ckpt" / "model.npz"
    save_checkpoint(str(path), {"shared": params}, extra={"updates": 7})
    loaded, meta = load_checkpoint(str(path), expected_mode=GraphMode.VEHICLE)
    restored = loaded["shared"]
    assert meta["extra"] == {"updates": 7}
    assert restored.mode == GraphMode.VEHICLE
    assert restored.normalize
    assert restored.scaling == params.scaling
    assert restored.names == params.names
    np.testing.assert_array_equal(restored.flat(), params.flat())


def test_checkpoint_rejects_mode_mismatch(tmp_path):
    path = str(tmp_path / "lane.npz")
    save_checkpoint(path, {"shared": init_params(GraphMode.LANE, seed=0)})
    with pytest.raises(ModelShapeError):
        load_checkpoint(path, expected_mode=GraphMode.VEHICLE)


def test_checkpoint_rejects_unknown_version(tmp_path):
    path = tmp_path / "old.npz"
    meta = {"version": 99, "mode": "lane", "sets": []}
    with open(path, "wb") as handle:
        np.savez(handle, __meta__=np.array(json.dumps(meta)))
    with pytest.raises(ModelShapeError):
        load_checkpoint(str(path))
