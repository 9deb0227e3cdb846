import numpy as np
import pytest

from signalgraph import parameters as prm
from signalgraph.errors import ScenarioError
from signalgraph.loaders import network_to_text, validate_network
from signalgraph.scenario import (
    GenerationParams,
    classify_turn,
    conflict_table,
    generate_demand,
    generate_network,
    routable_pairs,
    sample_od_schedule,
)


def test_generation_is_deterministic():
    assert network_to_text(generate_network(7)) == network_to_text(generate_network(7))


def test_different_seeds_give_different_networks():
    assert network_to_text(generate_network(7)) != network_to_text(generate_network(8))


def test_two_intersections_within_bounds(two_tsc_net):
    signalized = [n for n in two_tsc_net.intersections.values() if n.tsc is not None]
    assert len(signalized) == 2
    assert len(two_tsc_net.tsc_ids) == 2
    for edge in two_tsc_net.edges.values():
        assert prm.MIN_EDGE_LENGTH <= edge.length <= prm.MAX_EDGE_LENGTH
        assert prm.MIN_LANES_PER_EDGE <= edge.lanes <= prm.DEFAULT_MAX_GENERATED_LANES


@pytest.mark.parametrize("seed", range(8))
def test_generated_networks_are_valid(seed):
    network = generate_network(seed)
    validate_network(network)
    assert prm.MIN_INTERSECTIONS <= len(network.tsc_ids) <= prm.MAX_INTERSECTIONS
    for conn in network.connections.values():
        e_in = network.edges[network.lanes[conn.from_lane].edge]
        e_out = network.edges[network.lanes[conn.to_lane].edge]
        assert e_out.to_node != e_in.from_node


@pytest.mark.parametrize("seed", range(8))
def test_programs_alternate_green_and_yellow(seed):
    network = generate_network(seed)
    for tsc, program in network.programs.items():
        assert len(program) % 2 == 0
        for k in range(0, len(program), 2):
            green, yellow = program[k], program[k + 1]
            assert yellow.duration == prm.YELLOW_DURATION
            assert green.duration == prm.DEFAULT_GREEN_DURATION
            assert yellow.state == "".join("y" if ch in "Gg" else "r" for ch in green.state)


@pytest.mark.parametrize("seed", range(8))
def test_every_connection_opens_in_some_phase(seed):
    network = generate_network(seed)
    for tsc, conns in network.tsc_connections.items():
        for conn in conns:
            assert any(p.is_open(conn.link_index) for p in network.programs[tsc])


@pytest.mark.parametrize("seed", range(8))
def test_green_phases_never_open_hard_conflicts(seed):
    network = generate_network(seed)
    conflicts = conflict_table(network)
    for tsc, conns in network.tsc_connections.items():
        for phase in network.programs[tsc]:
            open_ids = [c.id for c in conns if phase.is_open(c.link_index)]
            for a in open_ids:
                for b in open_ids:
                    assert conflicts.get((a, b)) != "hard"


def test_turn_classification(one_net):
    edges = one_net.edges
    assert classify_turn(one_net, edges["W_J0"], edges["J0_E"]) == "straight"
    assert classify_turn(one_net, edges["W_J0"], edges["J0_N"]) == "left"
    assert classify_turn(one_net, edges["S_J0"], edges["J0_E"]) == "right"


def test_invalid_bounds_raise():
    with pytest.raises(ScenarioError):
        generate_network(0, GenerationParams(min_intersections=4, max_intersections=3))
    with pytest.raises(ScenarioError):
        generate_network(0, GenerationParams(min_edge_length=50.0))


def test_demand_count_matches_poisson_rate(two_tsc_net):
    trips = generate_demand(0, two_tsc_net, 1.0, 3600)
    assert 3400 <= len(trips) <= 3800


def test_doubling_rate_doubles_trips(two_tsc_net):
    single = len(generate_demand(5, two_tsc_net, 1.0, 1800))
    double = len(generate_demand(5, two_tsc_net, 2.0, 1800))
    assert 1.8 < double / single < 2.2


def test_demand_is_deterministic_and_ordered(two_tsc_net):
    a = generate_demand(3, two_tsc_net, 1.0, 600)
    b = generate_demand(3, two_tsc_net, 1.0, 600)
    assert a.trips == b.trips
    departs = [t.depart for t in a.trips]
    assert departs == sorted(departs)
    assert all(0 <= d < 600 for d in departs)
    assert len({t.id for t in a.trips}) == len(a)


def test_routes_follow_connections(two_tsc_net):
    trips = generate_demand(1, two_tsc_net, 1.0, 300)
    for trip in trips.trips:
        assert len(trip.route) >= 2
        for a, b in zip(trip.route, trip.route[1:]):
            assert (a, b) in two_tsc_net.next_connection


def test_zero_horizon_gives_empty_table(two_tsc_net):
    assert len(generate_demand(0, two_tsc_net, 1.0, 0)) == 0


def test_non_positive_rate_rejected(two_tsc_net):
    with pytest.raises(ScenarioError):
        generate_demand(0, two_tsc_net, 0.0, 100)


def test_network_without_routes_rejected(one_net):
    one_net.connections.clear()
    with pytest.raises(ScenarioError, match="no routable pairs"):
        generate_demand(0, one_net, 1.0, 100)


def test_routable_pairs_on_fixture(one_net):
    routes = routable_pairs(one_net)
    assert set(routes) == {"W_J0_0", "S_J0_0"}
    assert routes["W_J0_0"]["J0_N_0"] == ["W_J0_0", "J0_N_0"]


def test_od_schedule_resamples_every_block():
    rng = np.random.default_rng(0)
    schedule = sample_od_schedule(rng, 3, 4, 300)
    assert [start for start, _, _ in schedule] == [0, 120, 240]
    for _, w_origin, w_dest in schedule:
        assert w_origin.shape == (3,) and w_dest.shape == (4,)
        assert np.isclose(w_origin.sum(), 1.0) and np.isclose(w_dest.sum(), 1.0)


def test_regime_rates_are_ordered():
    assert prm.regime_rate("default") == 1.0
    assert prm.regime_rate("heavy") == 2 * prm.regime_rate("default")
    assert prm.regime_rate("light") == 0.5 * prm.regime_rate("default")
