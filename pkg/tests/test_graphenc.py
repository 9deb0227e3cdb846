import numpy as np
import pytest

from signalgraph.data_models import EdgeType, GraphMode, NodeType, TripTable, TscAction, edge_types_for
from signalgraph.graphenc import (
    DEFAULT_SCALING,
    FeatureScaling,
    dump_graph,
    encode,
    feature_widths,
    local_tsc_features,
    opening_table,
    union_graphs,
)
from signalgraph.sim import reset, step


def test_empty_state_has_static_nodes_only(one_net):
    state = reset(one_net, TripTable(), 0)
    graph = encode(state, one_net, GraphMode.VEHICLE)
    assert graph.counts == {NodeType.TSC: 1, NodeType.CONNECTION: 4, NodeType.LANE: 4, NodeType.VEHICLE: 0}
    assert graph.features[NodeType.VEHICLE].shape == (0, 2)
    assert len(graph.edges[EdgeType.VEHICLE_TO_LANE][0]) == 0
    assert len(graph.edges) == 12
    assert len(encode(state, one_net, GraphMode.LANE).edges) == 9


def test_vehicle_mode_node_and_edge_counts(corridor_state, corridor_net):
    graph = encode(corridor_state, corridor_net, GraphMode.VEHICLE)
    assert graph.n_nodes == 7
    assert graph.counts[NodeType.VEHICLE] == 3
    vehicle_lane_edges = len(graph.edges[EdgeType.VEHICLE_TO_LANE][0]) + len(graph.edges[EdgeType.LANE_TO_VEHICLE][0])
    assert vehicle_lane_edges == 6
    src, dst = graph.edges[EdgeType.VEHICLE_TO_LANE]
    lanes = [graph.node_ids[d] for d in dst]
    assert sorted(lanes) == ["lane:A_J_0", "lane:J_B_0", "lane:J_B_0"]
    for s in src:
        assert graph.node_type(s) == NodeType.VEHICLE


def test_every_node_has_a_self_edge(corridor_state, corridor_net):
    graph = encode(corridor_state, corridor_net, GraphMode.VEHICLE)
    n_self = sum(
        len(graph.edges[e][0])
        for e in (EdgeType.TSC_SELF, EdgeType.CONNECTION_SELF, EdgeType.LANE_SELF, EdgeType.VEHICLE_SELF)
    )
    assert n_self == graph.n_nodes


def test_edges_respect_endpoint_types(three_tsc_net):
    state = reset(three_tsc_net, TripTable(), 0)
    graph = encode(state, three_tsc_net, GraphMode.LANE)
    for edge_type in edge_types_for(GraphMode.LANE):
        for s, d in zip(*graph.edges[edge_type]):
            assert graph.node_type(s) == edge_type.source_type
            assert graph.node_type(d) == edge_type.target_type


def test_open_connection_features(corridor_state, corridor_net):
    graph = encode(corridor_state, corridor_net, GraphMode.LANE)
    is_open, has_priority, switches, next_priority = graph.features[NodeType.CONNECTION][0]
    assert (is_open, has_priority, switches, next_priority) == (1.0, 1.0, 0.0, 1.0)


def test_scaled_static_and_tsc_features(corridor_state, corridor_net):
    graph = encode(corridor_state, corridor_net, GraphMode.LANE)
    assert graph.features[NodeType.TSC][0, 0] == pytest.approx(5 / 60)
    lanes = graph.features[NodeType.LANE]
    np.testing.assert_allclose(lanes[:, 0], [0.75, 0.75])
    # A_J_0: one vehicle at 6 m/s; J_B_0: two at 10 and 0 m/s
    np.testing.assert_allclose(lanes[0, 1:], [0.1, 6 / 15])
    np.testing.assert_allclose(lanes[1, 1:], [0.2, 5 / 15])


def test_vehicle_features(corridor_state, corridor_net):
    graph = encode(corridor_state, corridor_net, GraphMode.VEHICLE)
    offset = graph.offsets[NodeType.VEHICLE]
    row = graph.index_of["veh:v0"] - offset
    np.testing.assert_allclose(graph.features[NodeType.VEHICLE][row], [6 / 15, 120 / 150])


def test_connection_features_follow_phase(corridor_net):
    state = reset(corridor_net, TripTable(), 0)
    state, _ = step(state, {"J": TscAction.SWITCH})
    graph = encode(state, corridor_net, GraphMode.LANE)
    is_open, _, switches, _ = graph.features[NodeType.CONNECTION][0]
    assert is_open == 0.0
    assert switches == pytest.approx(3 / 8)


def test_opening_table():
    table = opening_table(("G", "y", "r", "g"))
    assert table[:, 0, 0].tolist() == [0, 2, 1, 0]
    assert table[:, 0, 1].tolist() == [1.0, 0.0, 0.0, 0.0]
    never = opening_table(("r", "y"))
    assert never[:, 0, 0].tolist() == [2, 2]


def test_custom_scaling_round_trip():
    scaling = FeatureScaling(length=100.0)
    raw = np.array([[150.0, 4.0, 7.5]])
    scaled = scaling.scale(NodeType.LANE, GraphMode.LANE, raw)
    np.testing.assert_allclose(scaled, [[1.5, 0.4, 0.5]])
    np.testing.assert_allclose(scaling.unscale(NodeType.LANE, GraphMode.LANE, scaled), raw)
    assert FeatureScaling.from_dict(DEFAULT_SCALING.to_dict()) == DEFAULT_SCALING


def test_feature_widths():
    assert feature_widths(GraphMode.LANE) == {NodeType.TSC: 1, NodeType.CONNECTION: 4, NodeType.LANE: 3}
    assert feature_widths(GraphMode.VEHICLE)[NodeType.LANE] == 1
    assert feature_widths(GraphMode.VEHICLE)[NodeType.VEHICLE] == 2


def test_union_keeps_types_grouped(corridor_state, corridor_net, one_net):
    g1 = encode(corridor_state, corridor_net, GraphMode.LANE)
    g2 = encode(reset(one_net, TripTable(), 0), one_net, GraphMode.LANE)
    union = union_graphs([g1, g2])
    assert union.counts == {NodeType.TSC: 2, NodeType.CONNECTION: 5, NodeType.LANE: 6}
    assert union.tsc_ids == ["J", "J0"]
    src, dst = union.edges[EdgeType.TSC_TO_CONNECTION]
    assert src.tolist() == [0, 1, 1, 1, 1]
    assert dst.tolist() == [2, 3, 4, 5, 6]
    np.testing.assert_array_equal(union.features[NodeType.LANE][:2], g1.features[NodeType.LANE])
    np.testing.assert_array_equal(union.features[NodeType.LANE][2:], g2.features[NodeType.LANE])


def test_union_rejects_empty():
    with pytest.raises(ValueError):
        union_graphs([])


def test_union_rejects_mixed_modes(corridor_state, corridor_net):
    lane = encode(corridor_state, corridor_net, GraphMode.LANE)
    vehicle = encode(corridor_state, corridor_net, GraphMode.VEHICLE)
    with pytest.raises(ValueError):
        union_graphs([lane, vehicle])


def test_local_tsc_features(one_net):
    graph = encode(reset(one_net, TripTable(), 0), one_net, GraphMode.LANE)
    features = local_tsc_features(graph, "J0")
    # 1 TSC feature + 4 connections x 4 + 4 lanes x 2 traffic features
    assert features.shape == (25,)
    with pytest.raises(ValueError):
        local_tsc_features(encode(reset(one_net, TripTable(), 0), one_net, GraphMode.VEHICLE), "J0")


def test_summary_and_dump(tmp_path, corridor_state, corridor_net):
    graph = encode(corridor_state, corridor_net, GraphMode.VEHICLE)
    summary = graph.summary()
    nodes = summary[summary["kind"] == "node"].set_index("type")["count"]
    assert nodes.to_dict() == {"tsc": 1, "connection": 1, "lane": 2, "vehicle": 3}

    path = tmp_path / "graphs" / "corridor.txt"
    dump_graph(graph, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "# mode=vehicle nodes=7"
    n_edges = sum(len(s) for s, _ in graph.edges.values())
    assert len(lines) == 1 + 4 + n_edges
    assert "veh:v0 lane:A_J_0 vehicle_to_lane" in lines
