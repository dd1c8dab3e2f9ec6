import pytest

from conftest import case_fleet, data_text, sample_network
from minerail.physnet import (
    DUMMY,
    LOADING,
    LOADOUT_IN,
    SIDING_NODE,
    TimeGrid,
    load_fleet,
    load_network,
    validate_fleet,
)
from minerail.tsnet import (
    DISAPPEARING,
    STARTING,
    TRANSIT,
    WAITING,
    apportion,
    build_tsnet,
    expand,
    insert_siding_nodes,
    split_loadouts,
    subdivide_by_capacity,
)


def line3():
    net = load_network(data_text("line3-network.json"))
    legs = validate_fleet(load_fleet(data_text("line3-fleet.json")), net)
    return net, legs


def test_line3_counts_match_hand_enumeration():
    # A, B, G.in, G.out over 4 instants; one source, one sink
    # transit: A-B 3+3, B->G.in 3, G.out->B 3, loading 3
    # waiting: loop capacity 2 gives one dwell arc per step at G.in
    # disappearing: A, B (stations) and G.out (destination) at every instant
    # starting: T1 may leave A at any of the 4 instants
    net, legs = line3()
    tsn = build_tsnet(net, net.grid, legs)
    assert tsn.counts() == {
        "nodes": 18, "timed_nodes": 16, "arcs": 34,
        TRANSIT: 15, WAITING: 3, STARTING: 4, DISAPPEARING: 12, "deferral": 0,
    }


@pytest.mark.parametrize("case, starting, deferral", [(1, 5, 0), (2, 10, 0), (3, 13, 0), (4, 13, 0)])
def test_sample_counts(case, starting, deferral):
    net = sample_network()
    legs = validate_fleet(case_fleet(case, net), net)
    c = build_tsnet(net, net.grid, legs).counts()
    assert c["timed_nodes"] == 30  # A, B, F, G.in, G.out, siding node over 5 instants
    assert c[TRANSIT] == 44
    assert c[WAITING] == 8
    assert c[DISAPPEARING] == 20
    assert c[STARTING] == starting
    assert c["deferral"] == deferral


def test_loadout_split():
    net = split_loadouts(sample_network())
    load = net.link("G.load")
    assert load.kind == LOADING and load.oneway
    assert load.fwd_q == 1  # ceil(5 / 5)
    assert net.node("G.in").kind == LOADOUT_IN
    into, out = net.link("F-G>"), net.link("F-G<")
    assert (into.from_, into.to) == ("F", "G.in")
    assert (out.from_, out.to) == ("G.out", "F")
    assert into.group == out.group == "F-G"


@pytest.mark.parametrize("p, q", [(5, 1), (6, 2), (10, 2), (11, 3)])
def test_loading_link_duration_rounds_up(p, q):
    doc = {
        "grid": {"instant_len_min": 5, "horizon_instants": 5},
        "nodes": [{"id": "A", "kind": "station"}, {"id": "G", "kind": "loadout", "loading_time_min": p}],
        "links": [{"from": "A", "to": "G", "kind": "mainline", "capacity": 1, "travel_fwd_min": 5, "travel_bwd_min": 5}],
    }
    assert split_loadouts(load_network(doc)).link("G.load").fwd_q == q


def cap_net(cap, minutes=20):
    return load_network({
        "grid": {"instant_len_min": 5, "horizon_instants": 8},
        "nodes": [{"id": "A", "kind": "station"}, {"id": "B", "kind": "station"}],
        "links": [{"from": "A", "to": "B", "kind": "mainline", "capacity": cap,
                   "travel_fwd_min": minutes, "travel_bwd_min": 10}],
    })


@pytest.mark.parametrize("cap, dummies", [(1, 0), (2, 1), (3, 2), (2.5, 1), (4, 3)])
def test_capacity_gives_floor_c_minus_one_dummies(cap, dummies):
    net = subdivide_by_capacity(cap_net(cap))
    assert len([n for n in net.nodes if n.kind == DUMMY]) == dummies
    segs = net.links
    assert len(segs) == dummies + 1
    assert all(s.capacity == 1 for s in segs)
    # durations add up to the parent's, except each segment takes an instant at least
    assert sum(s.fwd_q for s in segs) == max(4, len(segs))
    assert sum(s.bwd_q for s in segs) == max(2, len(segs))
    assert len({s.group for s in segs}) == len(segs)  # each segment is its own track


def test_apportion():
    assert apportion(4, 2) == [2, 2]
    assert apportion(5, 2) == [3, 2]
    assert apportion(3, 3) == [1, 1, 1]
    assert sum(apportion(7, 3)) == 7
    assert apportion(2, 3) == [1, 1, 1]  # never below one instant


def test_siding_split_halves_each_direction():
    net = insert_siding_nodes(sample_network())
    mid = net.node("B-F.sd'")
    assert mid.kind == SIDING_NODE
    h1, h2 = net.link("B-F.sd/h1"), net.link("B-F.sd/h2")
    assert (h1.from_, h1.to, h2.from_, h2.to) == ("B", "B-F.sd'", "B-F.sd'", "F")
    assert h1.travel_fwd_min + h2.travel_fwd_min == 10
    assert h1.fwd_q == h2.fwd_q == 1 and h1.bwd_q == h2.bwd_q == 1
    assert h1.group == h2.group == "B-F.sd"


def test_expand_is_idempotent():
    once = expand(sample_network())
    assert expand(once) == once


def test_waiting_only_at_sidings_and_loops():
    net = sample_network()
    tsn = build_tsnet(net, net.grid, validate_fleet(case_fleet(1, net), net))
    at = {tsn.nodes[a.tail].phys for a in tsn.arcs if a.klass == WAITING}
    assert at == {"B-F.sd'", "G.in"}


def test_no_train_network_has_no_sources():
    net = sample_network()
    tsn = build_tsnet(net, net.grid, [])
    assert not tsn.sources
    assert tsn.counts()[STARTING] == 0


def test_fixed_start_allows_one_starting_arc():
    from dataclasses import replace
    net = sample_network()
    legs = validate_fleet(case_fleet(1, net), net)
    legs = [replace(legs[0], dep_q=2, fixed_start=True)]
    tsn = build_tsnet(net, net.grid, legs)
    starts = [a for a in tsn.arcs if a.klass == STARTING]
    assert [a.l for a in starts] == [2]


def test_chained_leg_gets_deferral_arc():
    net = sample_network()
    fleet = load_fleet([{"name": "R", "dep_node": "A", "dep_q": 0, "loadout_seq": ["G"]}])
    legs = validate_fleet(fleet, net)
    tsn = build_tsnet(net, net.grid, legs)
    defer = [a for a in tsn.arcs if a.klass == "deferral"]
    assert [a.train for a in defer] == ["R#2"]


def test_arc_keys_are_stable_across_rebuilds():
    net = sample_network()
    legs = validate_fleet(case_fleet(3, net), net)
    a = build_tsnet(net, net.grid, legs)
    b = build_tsnet(net, net.grid, legs)
    assert [a.arc_key(x) for x in a.arcs] == [b.arc_key(x) for x in b.arcs]


def test_dot_export_is_deterministic():
    net = sample_network()
    legs = validate_fleet(case_fleet(2, net), net)
    assert build_tsnet(net, net.grid, legs).to_dot() == build_tsnet(net, net.grid, legs).to_dot()


def test_grid_override():
    net = sample_network().with_grid(TimeGrid(5, 3))
    tsn = build_tsnet(net, net.grid, [])
    assert tsn.counts()["timed_nodes"] == 18
