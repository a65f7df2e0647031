import itertools
import json

import pytest
from hypothesis import given, settings, strategies as st

from twinsim.core import Topic
from twinsim.overlay import NodeKind, OverlayError, OverlayGraph
from twinsim.rtps import Guid


def graph_with(n_twins, domain=0, seed=0, k=2):
    g = OverlayGraph(seed=seed, k_peers=k)
    gw = g.add_domain(domain)
    twins = [g.register_twin(Guid(100 * domain + i), domain) for i in range(n_twins)]
    return g, gw, twins


def bare(n, domain=0):
    """Nodes with no links except those added by hand (gateway is node 0)."""
    g = OverlayGraph(seed=1)
    g.add_domain(domain)
    ids = [g._add_node(Guid(i), domain, NodeKind.TWIN_MODEL).node_id for i in range(n)]
    return g, ids


def test_first_node_links_only_gateway():
    g, gw, (t,) = graph_with(1)
    assert g.neighbors(t) == {gw}


def test_fourth_node_has_gateway_plus_k_peers():
    g, gw, twins = graph_with(4)
    assert len(g.neighbors(twins[3])) == 3
    assert gw in g.neighbors(twins[3])


def test_duplicate_guid_rejected():
    g, _, _ = graph_with(1)
    with pytest.raises(OverlayError):
        g.register_twin(Guid(0), 0)


def test_underlay_paths_have_one_to_three_hops():
    g, _, _ = graph_with(20)
    assert all(1 <= len(l.underlay_path) <= 3 for l in g.links.values())


def test_remove_leaf_keeps_connectivity():
    g, _, twins = graph_with(5)
    assert g.remove_node(twins[-1]) == []
    assert g.is_connected(0)


def test_remove_bridge_adds_repair():
    g, (a, b, c) = bare(3)
    g.connect(a, b)
    g.connect(b, c)
    g.connect(0, a)
    repairs = g.remove_node(b)
    assert [(l.a, l.b) for l in repairs] == [(0, c)]
    assert g.is_connected(0)


def test_remove_bridge_path_abc():
    g = OverlayGraph(seed=3)
    g.add_domain(0)
    del g.gateways[0]
    g.remove_node(0)  # drop the gateway to leave a bare A-B-C path
    a, b, c = (g._add_node(Guid(i), 0, NodeKind.TWIN_MODEL).node_id for i in range(1, 4))
    g.connect(a, b)
    g.connect(b, c)
    repairs = g.remove_node(b)
    assert [(l.a, l.b) for l in repairs] == [(a, c)]


def test_remove_unknown_node():
    g, _, _ = graph_with(1)
    with pytest.raises(OverlayError):
        g.remove_node(999)


def test_route_identity_and_path():
    g, (a, b, c) = bare(3)
    g.connect(a, b)
    g.connect(b, c)
    assert g.route(a, a) == [a]
    assert g.route(a, c) == [a, b, c]


def _all_shortest(g, src, dst):
    nodes = sorted(g.nodes)
    best = []
    for r in range(0, len(nodes)):
        for mid in itertools.permutations([n for n in nodes if n not in (src, dst)], r):
            path = [src, *mid, dst]
            if all(v in g.neighbors(u) for u, v in zip(path, path[1:])):
                best.append(path)
        if best:
            return best
    return best


def test_route_tie_break_matches_brute_force():
    # 5-node graph with two equal-length routes 1->4: via 2 or via 3
    g, ids = bare(4)
    n1, n2, n3, n4 = ids
    for u, v in [(n1, n2), (n1, n3), (n2, n4), (n3, n4), (0, n1)]:
        g.connect(u, v)
    for src, dst in itertools.permutations(sorted(g.nodes), 2):
        assert g.route(src, dst) == min(_all_shortest(g, src, dst))


def test_route_refuses_cross_domain():
    g = OverlayGraph()
    g.add_domain(0)
    g.add_domain(1)
    a = g.register_twin(Guid(1), 0)
    b = g.register_twin(Guid(2), 1)
    with pytest.raises(OverlayError):
        g.route(a, b)
    with pytest.raises(OverlayError):
        g.connect(a, b)


def test_propagate_update():
    g = OverlayGraph(seed=2)
    g.add_domain(0)
    g.add_domain(1)
    t = Topic("x", 0)
    assert g.propagate_update(t, g.register_twin(Guid(1), 0)) == {}
    subs = [g.register_twin(Guid(10 + i), 0, NodeKind.SERVICE_APP) for i in range(3)]
    for s in subs:
        g.subscribe(t, s)
    src = g.register_twin(Guid(2), 0)
    other = g.register_twin(Guid(3), 1, NodeKind.SERVICE_APP)
    with pytest.raises(OverlayError):
        g.subscribe(t, other)
    # a foreign node slipped into the table is still excluded
    g.subscriptions[t].add(other)
    out = g.propagate_update(t, src)
    assert set(out) == set(subs)
    for sub, links in out.items():
        assert links == g.underlay_route(g.route(src, sub))


def test_propagate_update_excludes_source():
    g, _, twins = graph_with(3)
    t = Topic("x", 0)
    g.subscribe(t, twins[0])
    g.subscribe(t, twins[1])
    assert set(g.propagate_update(t, twins[0])) == {twins[1]}


def test_on_join_callback():
    seen = []
    g = OverlayGraph()
    g.on_join.append(lambda n: seen.append(n.node_id))
    g.add_domain(0)
    g.register_twin(Guid(1), 0)
    assert seen == [1]


def test_snapshot_deterministic(tmp_path):
    a, _, _ = graph_with(12, seed=5)
    b, _, _ = graph_with(12, seed=5)
    a.export_snapshot(tmp_path / "a.json")
    b.export_snapshot(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert len(json.loads((tmp_path / "a.json").read_text())["nodes"]) == 13


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 25), st.lists(st.integers(0, 1000), max_size=15))
def test_connected_after_any_removals(seed, n, removals):
    g, gw, twins = graph_with(n, seed=seed)
    alive = [gw, *twins]
    for r in removals:
        if len(alive) <= 1:
            break
        victim = alive.pop(r % len(alive))
        g.remove_node(victim)
        assert g.is_connected(0)
        for src, dst in itertools.islice(itertools.permutations(alive, 2), 10):
            path = g.route(src, dst)
            assert len(path) == len(set(path))
            assert victim not in path
