import pytest
from hypothesis import given, settings, strategies as st

from twinsim.core import Topic
from twinsim.rtps import (BROADCAST, Guid, Primitive, RtpsMessage, announce, check_liveliness,
                          format_trace, handle, heartbeat, make_view, match_endpoints,
                          run_discovery_rounds, state_sync)

T0 = Topic("t", 0)
T1 = Topic("t", 1)


def kinds(msgs):
    return [m.primitive for m in msgs]


def test_announce_writer():
    v = make_view(1, 0)
    v.add_writer(T0)
    assert kinds(announce(v, 0)) == [Primitive.DATA_AVAILABLE, Primitive.INFO, Primitive.DATA_W]


def test_announce_no_endpoints():
    assert kinds(announce(make_view(1, 0), 0)) == [Primitive.DATA_AVAILABLE, Primitive.INFO]


def test_announce_two_readers():
    v = make_view(1, 0)
    v.add_reader(T0)
    v.add_reader(Topic("u", 0))
    assert kinds(announce(v, 0)) == [Primitive.DATA_AVAILABLE, Primitive.INFO,
                                     Primitive.DATA_R, Primitive.DATA_R]


def test_endpoint_topic_must_match_domain():
    with pytest.raises(ValueError):
        make_view(1, 0).add_writer(T1)


def test_unknown_sender_gets_announce_back():
    a, b = make_view(1, 0), make_view(2, 0)
    b.add_writer(T0)
    msg = announce(a, 0)[0]
    _, replies = handle(b, msg, 10)
    assert a.guid in b.known_participants
    assert kinds(replies) == kinds(announce(make_view(9, 0), 0)) + [Primitive.DATA_W]
    assert all(r.dst == a.guid for r in replies)


def test_heartbeat_from_known_sender_updates_lease_without_reply():
    a, b = make_view(1, 0), make_view(2, 0)
    handle(b, announce(a, 0)[0], 0)
    _, replies = handle(b, heartbeat(a, 5000), 5000)
    assert b.last_heartbeat[a.guid] == 5000
    assert replies == []


def test_publish_without_reader_is_silent():
    a, b = make_view(1, 0), make_view(2, 0)
    w = a.add_writer(T0)
    msg = a.emit(w, b.guid, Primitive.PUBLISH, 0, topic=T0, payload_bytes=10)
    _, replies = handle(b, msg, 1)
    assert replies == [] and b.inbox == []


def test_publish_reaches_matching_reader():
    a, b = make_view(1, 0), make_view(2, 0)
    w = a.add_writer(T0)
    r = b.add_reader(T0)
    handle(b, a.emit(w, b.guid, Primitive.PUBLISH, 0, topic=T0, payload_bytes=10), 1)
    assert [x[0] for x in b.inbox] == [r]


def test_cross_domain_message_dropped_and_counted():
    a, b = make_view(1, 0), make_view(2, 1)
    b.add_reader(T1)
    w = a.add_writer(T0)
    _, replies = handle(b, a.emit(w, b.guid, Primitive.PUBLISH, 0, topic=T0), 0)
    _, more = handle(b, announce(a, 0)[0], 0)
    assert replies == more == [] and b.inbox == []
    assert b.dropped == 2
    assert a.guid not in b.known_participants


def test_topic_primitives_need_a_topic():
    with pytest.raises(ValueError):
        RtpsMessage(1, Guid(1), BROADCAST, 0, Primitive.PUBLISH, None, 1, 0)


def test_match_exact():
    assert match_endpoints([(Guid(1, 1), T0)], [(Guid(2, 1), T0)]) == [(Guid(1, 1), Guid(2, 1))]


def test_match_domain_isolation():
    assert match_endpoints([(Guid(1, 1), T0)], [(Guid(2, 1), T1)]) == []


def test_match_cross_product():
    ws = [(Guid(i, 1), T0) for i in range(2)]
    rs = [(Guid(10 + i, 1), T0) for i in range(3)]
    assert len(match_endpoints(ws, rs)) == 6


@pytest.mark.parametrize("last, expired", [(0, True), (2000, False)])
def test_liveliness(last, expired):
    v = make_view(1, 0)
    peer = Guid(2)
    v.known_participants.add(peer)
    v.last_heartbeat[peer] = last
    assert (check_liveliness(v, 10_000, 9000) == [peer]) is expired


def test_liveliness_empty_view():
    assert check_liveliness(make_view(1, 0), 10_000, 9000) == []


def test_liveliness_removes_endpoints():
    a, b = make_view(1, 0), make_view(2, 0)
    a.add_writer(T0)
    run_discovery_rounds([a, b], 2)
    assert any(g.participant_id == 1 for g, _ in b.writers)
    check_liveliness(b, 10_000, 3000)
    assert not any(g.participant_id == 1 for g, _ in b.writers)


@pytest.mark.parametrize("peer, local, offset", [(1000, 1000, 0), (1500, 1000, 500),
                                                 (500, 1000, -500)])
def test_state_sync(peer, local, offset):
    assert state_sync(make_view(1, 0), peer, local).clock_offset_ms == offset


def test_state_sync_message_shifts_timestamps():
    a, b = make_view(1, 0), make_view(2, 0)
    handle(b, a.emit(a.guid, b.guid, Primitive.STATE_SYNC, 1500, body=(1500,)), 1000)
    assert b.clock_offset_ms == 500
    assert heartbeat(b, 1000).sent_at == 1500


def test_trace_format():
    v = make_view(3, 2)
    w = v.add_writer(Topic("x", 2))
    line = format_trace(12.7, v.emit(w, BROADCAST, Primitive.DATA_W, 0, topic=Topic("x", 2)))
    assert line == ("t_ms=12 seq=1 src=3:1 dst=* domain_id=2 primitive=DATA_W topic=x "
                    "payload_bytes=256")


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 50), st.data())
def test_two_round_convergence(k, data):
    views = [make_view(i, 0) for i in range(k)]
    for v in views:
        if data.draw(st.booleans()):
            v.add_writer(T0)
        else:
            v.add_reader(T0)
    run_discovery_rounds(views, 2)
    assert all(len(v.known_participants) == k for v in views)
    # endpoint symmetry: every participant sees the same matches
    ref = match_endpoints(views[0].writers, views[0].readers)
    for v in views:
        assert match_endpoints(v.writers, v.readers) == ref


def test_sequence_numbers_strictly_increase_per_source():
    v = make_view(1, 0)
    w = v.add_writer(T0)
    msgs = announce(v, 0) + [heartbeat(v, 1)] + [
        v.emit(w, BROADCAST, Primitive.PUBLISH, 2, topic=T0) for _ in range(3)]
    seqs = [m.seq for m in msgs]
    assert seqs == sorted(set(seqs))
