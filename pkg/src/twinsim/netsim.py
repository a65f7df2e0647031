"""Deterministic discrete-event engine with store-and-forward FIFO links.

The engine clock is a float in milliseconds: transfers of a few hundred bytes
over a 100 Mbit/s link take well under a millisecond, so integer time would
erase the queueing the latency metric is supposed to expose. Events run in
``(at, seq)`` order where ``seq`` is a global insertion counter, which makes
every run with the same inputs replay identically.
"""

from __future__ import annotations

import enum
import heapq
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .rtps import RtpsMessage, format_trace


class SimulationError(RuntimeError):
    pass


class EventKind(enum.IntEnum):
    DELIVER = 0
    DEVICE_WAKE = 1
    HEARTBEAT_TICK = 2
    EPISODE_END = 3


class Phase(enum.Enum):
    DISCOVERY = "discovery"
    DATA_EXCHANGE = "data_exchange"


@dataclass(order=True)
class Event:
    at: float
    seq: int
    kind: EventKind = field(compare=False)
    data: object = field(compare=False, default=None)


@dataclass
class UnderlayLink:
    id: int
    bandwidth_bytes_per_ms: float
    prop_delay_ms: float
    busy_until: float = 0.0

    def __post_init__(self) -> None:
        if self.bandwidth_bytes_per_ms <= 0:
            raise ValueError("bandwidth must be positive")
        if self.prop_delay_ms < 0:
            raise ValueError("propagation delay must be non-negative")


def transfer_time(link: UnderlayLink, payload_bytes: float, now: float = 0.0) -> float:
    """Time from handing ``payload_bytes`` to ``link`` at ``now`` until it
    reaches the far end: queue residual + serialisation + propagation."""
    if payload_bytes < 0:
        raise ValueError("payload_bytes must be non-negative")
    residual = max(0.0, link.busy_until - now)
    return residual + payload_bytes / link.bandwidth_bytes_per_ms + link.prop_delay_ms


@dataclass(frozen=True)
class LatencySample:
    flow: int
    domain: int
    d_ms: float
    phase: Phase


def percentile(samples: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest sample."""
    n = len(samples)
    if n == 0:
        raise ValueError("percentile of an empty sample set")
    if not 0 < p <= 100:
        raise ValueError(f"p must lie in (0, 100], got {p}")
    rank = max(1, math.ceil(p * n / 100))
    return float(np.partition(np.asarray(samples, dtype=np.float64), rank - 1)[rank - 1])


def summarize(values: Sequence[float]) -> dict:
    if len(values) == 0:
        return {"count": 0, "mean": None, "p50": None, "p95": None}
    arr = np.asarray(values, dtype=np.float64)
    return {"count": int(arr.size), "mean": float(arr.mean()),
            "p50": percentile(arr, 50), "p95": percentile(arr, 95)}


@dataclass
class Statistics:
    samples: list[LatencySample]
    sent: int
    delivered: int
    dropped: int
    in_flight: int
    bytes_sent: int
    bytes_delivered: int

    def delays(self, phase: Phase | None = None, domain: int | None = None) -> list[float]:
        return [s.d_ms for s in self.samples
                if (phase is None or s.phase is phase)
                and (domain is None or s.domain == domain)]

    def to_dict(self) -> dict:
        phases = {ph.value: summarize(self.delays(ph)) for ph in Phase}
        domains = sorted({s.domain for s in self.samples})
        return {
            "overall": summarize(self.delays()),
            "phases": phases,
            "domains": {str(d): {ph.value: summarize(self.delays(ph, d)) for ph in Phase}
                        for d in domains},
            "messages": {"sent": self.sent, "delivered": self.delivered,
                         "dropped": self.dropped, "in_flight": self.in_flight},
            "bytes": {"sent": self.bytes_sent, "delivered": self.bytes_delivered},
        }


@dataclass
class Transfer:
    msg: RtpsMessage
    path: tuple[int, ...]
    phase: Phase
    injected_at: float
    flow: int
    on_deliver: Callable[[Transfer, float], bool] | None = None


class Engine:
    """Single-threaded event loop.

    ``on_deliver`` callbacks return ``False`` to report the message as
    dropped (e.g. a cross-domain arrival); anything else counts as delivered.
    """

    def __init__(self, links: Iterable[UnderlayLink] = (), trace: list[str] | None = None):
        self.clock = 0.0
        self.links: dict[int, UnderlayLink] = {l.id: l for l in links}
        self.handlers: dict[EventKind, Callable[[Engine, Event], None]] = {}
        self.trace = trace
        self._queue: list[Event] = []
        self._seq = 0
        self.samples: list[LatencySample] = []
        self.sent = self.delivered = self.dropped = 0
        self.bytes_sent = self.bytes_delivered = 0

    # -- scheduling ----------------------------------------------------
    def schedule(self, at: float, kind: EventKind, data: object = None) -> Event:
        if at < self.clock:
            raise SimulationError(f"event at {at} ms is before the clock ({self.clock} ms)")
        ev = Event(at, self._seq, kind, data)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def pending(self, kind: EventKind | None = None) -> int:
        return sum(1 for e in self._queue if kind is None or e.kind is kind)

    @property
    def in_flight(self) -> int:
        return self.sent - self.delivered - self.dropped

    # -- links ---------------------------------------------------------
    def add_link(self, link: UnderlayLink) -> None:
        self.links[link.id] = link

    def send(self, msg: RtpsMessage, path: Sequence[int], phase: Phase, flow: int = -1,
             at: float | None = None,
             on_deliver: Callable[[Transfer, float], bool] | None = None) -> Transfer:
        """Inject ``msg`` into the first underlay link of ``path`` at ``at``."""
        at = self.clock if at is None else at
        for lid in path:
            if lid not in self.links:
                raise SimulationError(f"unknown underlay link {lid}")
        tr = Transfer(msg, tuple(path), phase, at, flow, on_deliver)
        self.sent += 1
        self.bytes_sent += msg.payload_bytes
        self.schedule(at, EventKind.DELIVER, (tr, 0))
        return tr

    def _deliver(self, ev: Event) -> None:
        tr, hop = ev.data
        if hop < len(tr.path):
            link = self.links[tr.path[hop]]
            start = ev.at if ev.at > link.busy_until else link.busy_until
            finish = start + tr.msg.payload_bytes / link.bandwidth_bytes_per_ms
            link.busy_until = finish
            self.schedule(finish + link.prop_delay_ms, EventKind.DELIVER, (tr, hop + 1))
            return
        accepted = tr.on_deliver(tr, self.clock) if tr.on_deliver is not None else True
        if accepted is False:
            self.dropped += 1
            return
        self.delivered += 1
        self.bytes_delivered += tr.msg.payload_bytes
        self.samples.append(LatencySample(tr.flow, tr.msg.domain,
                                          self.clock - tr.injected_at, tr.phase))
        if self.trace is not None:
            self.trace.append(format_trace(self.clock, tr.msg))

    # -- running -------------------------------------------------------
    def step(self) -> Event | None:
        if not self._queue:
            return None
        ev = heapq.heappop(self._queue)
        self.clock = ev.at
        if ev.kind is EventKind.DELIVER:
            self._deliver(ev)
        else:
            handler = self.handlers.get(ev.kind)
            if handler is not None:
                handler(self, ev)
        return ev

    def run_until(self, t_end: float) -> Statistics:
        if t_end < self.clock:
            raise SimulationError(f"t_end {t_end} is before the clock ({self.clock})")
        while self._queue and self._queue[0].at <= t_end:
            self.step()
        self.clock = t_end
        return self.statistics()

    def run(self) -> Statistics:
        """Run until the queue is empty."""
        while self._queue:
            self.step()
        return self.statistics()

    def statistics(self) -> Statistics:
        return Statistics(list(self.samples), self.sent, self.delivered, self.dropped,
                          self.in_flight, self.bytes_sent, self.bytes_delivered)


def send_over_path(engine: Engine, msg: RtpsMessage, path: Sequence[int],
                   phase: Phase = Phase.DATA_EXCHANGE, flow: int = -1) -> LatencySample:
    """Send one message and run the engine until it arrives."""
    if not path:
        raise SimulationError("empty underlay path")
    done: list[float] = []

    def mark(tr: Transfer, t: float) -> bool:
        done.append(t)
        return True

    engine.send(msg, path, phase, flow, on_deliver=mark)
    while not done:
        if engine.step() is None:
            raise SimulationError("message never delivered")
    return engine.samples[-1]


def deliver_batch(links: dict[int, UnderlayLink], release: np.ndarray, size: np.ndarray,
                  paths: Sequence[Sequence[int]]) -> np.ndarray:
    """Bulk equivalent of ``Engine.send`` for a batch of messages.

    Same store-and-forward semantics and tie-breaking as injecting the batch
    (in input order) into an otherwise idle :class:`Engine`; link busy state
    is read from and written back to ``links``. Returns delivery times.
    """
    lens = np.fromiter((len(p) for p in paths), dtype=np.int64, count=len(paths))
    ptr = np.zeros(len(paths) + 1, dtype=np.int64)
    np.cumsum(lens, out=ptr[1:])
    flat = np.fromiter((l for p in paths for l in p), dtype=np.int64, count=int(ptr[-1]))
    return deliver_flat(links, release, size, ptr, flat)


def deliver_flat(links: dict[int, UnderlayLink], release: np.ndarray, size: np.ndarray,
                 ptr: np.ndarray, flat_link_ids: np.ndarray) -> np.ndarray:
    """:func:`deliver_batch` with paths given in CSR form (``ptr`` + link ids)."""
    ids = np.array(sorted(links), dtype=np.int64)
    bw = np.array([links[l].bandwidth_bytes_per_ms for l in ids.tolist()], dtype=np.float64)
    prop = np.array([links[l].prop_delay_ms for l in ids.tolist()], dtype=np.float64)
    busy = np.array([links[l].busy_until for l in ids.tolist()], dtype=np.float64)
    flat = np.searchsorted(ids, np.asarray(flat_link_ids, dtype=np.int64))
    if flat.size and (flat.max() >= ids.size or not np.array_equal(ids[flat], flat_link_ids)):
        raise SimulationError("path references an unknown underlay link")
    out = kernels.fifo_deliver(np.asarray(release, dtype=np.float64),
                               np.asarray(size, dtype=np.float64),
                               np.asarray(ptr, dtype=np.int64), flat.astype(np.int64),
                               bw, prop, busy)
    for lid, b in zip(ids.tolist(), busy.tolist()):
        links[lid].busy_until = b
    return out
