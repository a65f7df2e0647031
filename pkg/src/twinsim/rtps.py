"""RTPS-lite: the eight twin-layer primitives and the participant state machine.

Operations take a :class:`ParticipantView`, mutate it in place and return it
together with any outgoing messages. A view is owned by exactly one event
loop, so no locking is done here.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Iterable
from dataclasses import dataclass, field

from .core import Topic

DISCOVERY_PAYLOAD_BYTES = 256
HEARTBEAT_PERIOD_MS = 1000
LEASE_MS = 3 * HEARTBEAT_PERIOD_MS


class Primitive(enum.Enum):
    DATA_AVAILABLE = "DATA_AVAILABLE"
    INFO = "INFO"
    DATA_W = "DATA_W"
    DATA_R = "DATA_R"
    HEARTBEAT = "HEARTBEAT"
    PUBLISH = "PUBLISH"
    SUBSCRIBE = "SUBSCRIBE"
    STATE_SYNC = "STATE_SYNC"


DISCOVERY_PRIMITIVES = frozenset(
    {Primitive.DATA_AVAILABLE, Primitive.INFO, Primitive.DATA_W, Primitive.DATA_R,
     Primitive.HEARTBEAT}
)
TOPIC_PRIMITIVES = frozenset(
    {Primitive.PUBLISH, Primitive.SUBSCRIBE, Primitive.DATA_W, Primitive.DATA_R}
)


@dataclass(frozen=True, order=True)
class Guid:
    participant_id: int
    entity_id: int = 0

    @property
    def participant(self) -> Guid:
        return Guid(self.participant_id, 0)

    def __str__(self) -> str:
        return f"{self.participant_id}:{self.entity_id}"


# Destination of messages addressed to every participant of the domain.
BROADCAST = Guid(-1, -1)


@dataclass(frozen=True)
class RtpsMessage:
    seq: int
    src: Guid
    dst: Guid
    domain: int
    primitive: Primitive
    topic: Topic | None
    payload_bytes: int
    sent_at: float
    body: tuple = ()

    def __post_init__(self) -> None:
        if self.primitive in TOPIC_PRIMITIVES and self.topic is None:
            raise ValueError(f"{self.primitive.value} requires a topic")
        if self.payload_bytes < 0:
            raise ValueError("payload_bytes must be non-negative")

    def addressed(self, dst: Guid) -> RtpsMessage:
        """Copy of this message with a concrete destination (broadcast fan-out)."""
        return RtpsMessage(self.seq, self.src, dst, self.domain, self.primitive, self.topic,
                           self.payload_bytes, self.sent_at, self.body)


def format_trace(t_ms: float, msg: RtpsMessage) -> str:
    """One trace-log record for a delivered message."""
    topic = msg.topic.name if msg.topic is not None else "-"
    dst = "*" if msg.dst == BROADCAST else str(msg.dst)
    return (f"t_ms={math.floor(t_ms)} seq={msg.seq} src={msg.src} dst={dst} "
            f"domain_id={msg.domain} primitive={msg.primitive.value} topic={topic} "
            f"payload_bytes={msg.payload_bytes}")


@dataclass
class ParticipantView:
    guid: Guid
    domain: int
    known_participants: set[Guid] = field(default_factory=set)
    writers: set[tuple[Guid, Topic]] = field(default_factory=set)
    readers: set[tuple[Guid, Topic]] = field(default_factory=set)
    last_heartbeat: dict[Guid, float] = field(default_factory=dict)
    clock_offset_ms: float = 0
    local_writers: list[tuple[Guid, Topic]] = field(default_factory=list)
    local_readers: list[tuple[Guid, Topic]] = field(default_factory=list)
    next_seq: int = 1
    dropped: int = 0
    # (reader guid, message) for every PUBLISH handed to a local reader
    inbox: list[tuple[Guid, RtpsMessage]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.known_participants.add(self.guid)

    def add_writer(self, topic: Topic) -> Guid:
        return self._add_endpoint(topic, self.local_writers, self.writers)

    def add_reader(self, topic: Topic) -> Guid:
        return self._add_endpoint(topic, self.local_readers, self.readers)

    def _add_endpoint(self, topic, local, table) -> Guid:
        if topic.domain != self.domain:
            raise ValueError(f"topic {topic.name} belongs to domain {topic.domain}, "
                             f"participant is in {self.domain}")
        entity = 1 + len(self.local_writers) + len(self.local_readers)
        guid = Guid(self.guid.participant_id, entity)
        local.append((guid, topic))
        table.add((guid, topic))
        return guid

    def emit(self, src: Guid, dst: Guid, primitive: Primitive, now: float,
             topic: Topic | None = None, payload_bytes: int = DISCOVERY_PAYLOAD_BYTES,
             body: tuple = ()) -> RtpsMessage:
        msg = RtpsMessage(self.next_seq, src, dst, self.domain, primitive, topic,
                          payload_bytes, now + self.clock_offset_ms, body)
        self.next_seq += 1
        return msg


def make_view(participant_id: int, domain: int) -> ParticipantView:
    return ParticipantView(guid=Guid(participant_id, 0), domain=int(domain))


def announce(view: ParticipantView, now: float, dst: Guid = BROADCAST) -> list[RtpsMessage]:
    """Participant + endpoint discovery announcement set of ``view``."""
    n_endpoints = len(view.local_writers) + len(view.local_readers)
    out = [
        view.emit(view.guid, dst, Primitive.DATA_AVAILABLE, now),
        view.emit(view.guid, dst, Primitive.INFO, now,
                  body=(view.guid.participant_id, view.domain, n_endpoints)),
    ]
    for guid, topic in view.local_writers:
        out.append(view.emit(guid, dst, Primitive.DATA_W, now, topic=topic))
    for guid, topic in view.local_readers:
        out.append(view.emit(guid, dst, Primitive.DATA_R, now, topic=topic))
    return out


def heartbeat(view: ParticipantView, now: float) -> RtpsMessage:
    return view.emit(view.guid, BROADCAST, Primitive.HEARTBEAT, now)


def _first_contact(view: ParticipantView, sender: Guid, now: float) -> list[RtpsMessage]:
    view.last_heartbeat[sender] = now
    if sender in view.known_participants:
        return []
    view.known_participants.add(sender)
    return announce(view, now, dst=sender)


def handle(view: ParticipantView, msg: RtpsMessage,
           now: float) -> tuple[ParticipantView, list[RtpsMessage]]:
    if msg.domain != view.domain:
        view.dropped += 1
        return view, []
    sender = msg.src.participant
    if sender == view.guid:
        return view, []

    kind = msg.primitive
    replies: list[RtpsMessage] = []
    if kind in (Primitive.DATA_AVAILABLE, Primitive.INFO, Primitive.HEARTBEAT):
        replies = _first_contact(view, sender, now)
    elif kind is Primitive.DATA_W:
        if msg.topic.domain == view.domain:
            view.writers.add((msg.src, msg.topic))
    elif kind in (Primitive.DATA_R, Primitive.SUBSCRIBE):
        if msg.topic.domain == view.domain:
            view.readers.add((msg.src, msg.topic))
    elif kind is Primitive.PUBLISH:
        for reader, topic in view.local_readers:
            if topic == msg.topic:
                view.inbox.append((reader, msg))
    elif kind is Primitive.STATE_SYNC:
        peer = msg.body[0] if msg.body else msg.sent_at
        state_sync(view, peer, now)
    return view, replies


def match_endpoints(writers: Iterable[tuple[Guid, Topic]],
                    readers: Iterable[tuple[Guid, Topic]]) -> list[tuple[Guid, Guid]]:
    readers = list(readers)
    pairs = {
        (w, r)
        for w, wt in writers
        for r, rt in readers
        if wt == rt
    }
    return sorted(pairs)


def check_liveliness(view: ParticipantView, now: float, lease_ms: float = LEASE_MS) -> list[Guid]:
    if lease_ms <= 0:
        raise ValueError("lease_ms must be positive")
    expired = sorted(
        g for g in view.known_participants
        if g != view.guid and now - view.last_heartbeat.get(g, -math.inf) > lease_ms
    )
    gone = {g.participant_id for g in expired}
    for g in expired:
        view.known_participants.discard(g)
        view.last_heartbeat.pop(g, None)
    view.writers = {(g, t) for g, t in view.writers if g.participant_id not in gone}
    view.readers = {(g, t) for g, t in view.readers if g.participant_id not in gone}
    return expired


def state_sync(view: ParticipantView, peer_timestamp: float,
               local_timestamp: float) -> ParticipantView:
    view.clock_offset_ms = peer_timestamp - local_timestamp
    return view


def run_discovery_rounds(views: Iterable[ParticipantView], rounds: int,
                         now: float = 0) -> int:
    """Lossless, zero-delay round-synchronous discovery.

    Round 1 is every participant announcing; each later round delivers the
    replies produced by the previous one. Returns the number of messages
    delivered.
    """
    views = list(views)
    by_guid = {v.guid: v for v in views}
    pending = [m for v in views for m in announce(v, now)]
    delivered = 0
    for _ in range(rounds):
        nxt: list[RtpsMessage] = []
        for msg in pending:
            if msg.dst == BROADCAST:
                targets = [v for v in views if v.guid != msg.src.participant]
            else:
                targets = [by_guid[msg.dst]] if msg.dst in by_guid else []
            for target in targets:
                _, replies = handle(target, msg, now)
                delivered += 1
                nxt.extend(replies)
        pending = nxt
    return delivered
