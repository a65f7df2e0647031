"""Scheduling environment: one step is one simulated day.

Each device transmits its daily reading at the minute chosen by the policy
(after the minimum-interval adjustment). The reading travels as a PUBLISH
through the overlay to every subscriber of the device's domain topic; the
worst subscriber delay of the day is the device's delay.
"""

from __future__ import annotations

import copy
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from . import energy, rtps
from .core import MINUTES_PER_DAY, MS_PER_DAY, MS_PER_MINUTE, Device, DeviceState, domain_topic
from .netsim import Engine, Event, EventKind, LatencySample, Phase, Transfer, percentile
from .overlay import OverlayGraph


class EnvError(RuntimeError):
    pass


@dataclass
class StateVector:
    batteries: np.ndarray
    last_tx_min: np.ndarray

    def __post_init__(self) -> None:
        self.batteries = np.asarray(self.batteries, dtype=np.float64)
        self.last_tx_min = np.asarray(self.last_tx_min, dtype=np.float64)
        if self.batteries.shape != self.last_tx_min.shape:
            raise ValueError("batteries and last_tx_min must have the same length")

    @property
    def n(self) -> int:
        return self.batteries.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.batteries, self.last_tx_min])

    def normalized(self) -> np.ndarray:
        """Network input: batteries / 100 and last transmissions / 1440."""
        return np.concatenate([self.batteries / 100.0, self.last_tx_min / MINUTES_PER_DAY])


@dataclass(frozen=True)
class ScheduleConstraint:
    dt_min_minutes: float = 30.0

    def __post_init__(self) -> None:
        if not 0 <= self.dt_min_minutes < MINUTES_PER_DAY:
            raise ValueError("dt_min_minutes must lie in [0, 1440)")


@dataclass(frozen=True)
class RewardBreakdown:
    r_energy: float
    r_timeliness: float
    r_consecutive: float
    r_total: float
    d_threshold_ms: float
    lam: float


def enforce_min_interval(a, last_tx, constraint: ScheduleConstraint) -> np.ndarray:
    """Per device: ``max(a_i + dt_min, last_tx_i)``."""
    a = np.asarray(a, dtype=np.float64)
    last_tx = np.asarray(last_tx, dtype=np.float64)
    if a.shape != last_tx.shape:
        raise ValueError("a and last_tx must have the same length")
    return np.maximum(a + constraint.dt_min_minutes, last_tx)


def reward_energy(batteries_after: Sequence[float]) -> float:
    return float(sum(batteries_after))


def reward_timeliness(delays_ms: Sequence[float], d_threshold_ms: float) -> float:
    return -float(sum(max(0.0, d - d_threshold_ms) for d in delays_ms))


def reward_consecutive(a, a_prime, constraint: ScheduleConstraint, lam: float) -> float:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    # max(0, dt - (a' - a)) written as (a + dt) - a' so that an a' produced by
    # enforce_min_interval gives exactly zero in floating point as well.
    a = np.asarray(a, dtype=np.float64)
    shortfall = np.maximum(0.0, (a + constraint.dt_min_minutes)
                           - np.asarray(a_prime, dtype=np.float64))
    return -lam * float(shortfall.sum())


def reward_total(r_energy: float, r_timeliness: float, r_consecutive: float,
                 d_threshold_ms: float = 180.0, lam: float = 0.3) -> RewardBreakdown:
    return RewardBreakdown(r_energy, r_timeliness, r_consecutive,
                           r_energy + r_timeliness + r_consecutive, d_threshold_ms, lam)


def whatif_generate(seed: int, n_states: int, n_devices: int,
                    ranges: dict | None = None) -> list[StateVector]:
    """Centred Latin-hypercube states.

    Every battery and last-transmission dimension is cut into ``n_states``
    equal bins; each state takes one bin midpoint per dimension, and the
    assignment of bins to states is an independent seeded permutation per
    dimension.
    """
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    ranges = ranges or {}
    b_lo, b_hi = ranges.get("battery", (0.0, 100.0))
    t_lo, t_hi = ranges.get("last_tx", (0.0, float(MINUTES_PER_DAY)))
    if not (0 <= b_lo <= b_hi <= 100 and 0 <= t_lo <= t_hi <= MINUTES_PER_DAY):
        raise ValueError("ranges must be sub-intervals of [0,100] and [0,1440]")
    rng = np.random.default_rng(seed)
    mids = (np.arange(n_states) + 0.5) / n_states
    cols = np.stack([rng.permutation(mids) for _ in range(2 * n_devices)], axis=1)
    batteries = b_lo + cols[:, :n_devices] * (b_hi - b_lo)
    last_tx = t_lo + cols[:, n_devices:] * (t_hi - t_lo)
    return [StateVector(batteries[k], last_tx[k]) for k in range(n_states)]


@dataclass
class EnvConfig:
    dt_min_minutes: float = 30.0
    d_threshold_ms: float = 180.0
    lam: float = 0.3
    rest_state: DeviceState = DeviceState.SLEEP
    sends_per_day: int = 1
    horizon_days: int = 30
    initial_battery_range: tuple[float, float] = (80.0, 100.0)
    # Bytes put on the overlay per daily send; None means the device's own
    # reading. Energy is always charged for the reading itself.
    wire_payload_bytes: float | None = None


@dataclass
class DayResult:
    state: StateVector
    reward: RewardBreakdown
    samples: list[LatencySample]
    delays_ms: np.ndarray
    a_prime: np.ndarray
    p95_ms: float


class SchedulingEnv:
    """Devices + overlay + engine + energy model driven one day at a time.

    ``devices`` must be indexed 0..N-1 and each device id must be registered
    in ``twin_nodes`` (device id -> overlay node id).
    """

    def __init__(self, devices: list[Device], graph: OverlayGraph, engine: Engine,
                 twin_nodes: dict[int, int], model: energy.BatteryModel | None = None,
                 config: EnvConfig | None = None, seed: int = 0):
        if [d.id for d in devices] != list(range(len(devices))):
            raise EnvError("device ids must be 0..N-1 in order")
        self.devices = devices
        self.graph = graph
        self.engine = engine
        self.twin_nodes = dict(twin_nodes)
        self.model = model or energy.BatteryModel()
        self.config = config or EnvConfig()
        self.constraint = ScheduleConstraint(self.config.dt_min_minutes)
        self.rng = np.random.default_rng(seed)
        self.views = {d.id: rtps.make_view(self.graph.nodes[self.twin_nodes[d.id]].guid.participant_id,
                                           d.domain) for d in devices}
        self._writers = {d.id: self.views[d.id].add_writer(domain_topic(d.domain))
                         for d in devices}
        self.sub_views: dict[int, rtps.ParticipantView] = {}
        for topic, subs in graph.subscriptions.items():
            for node_id in sorted(subs):
                node = graph.nodes[node_id]
                view = self.sub_views.setdefault(
                    node_id, rtps.make_view(node.guid.participant_id, node.domain))
                view.add_reader(topic)
        self._routes = {d.id: graph.propagate_update(domain_topic(d.domain),
                                                     self.twin_nodes[d.id])
                        for d in devices}
        self.engine.handlers[EventKind.DEVICE_WAKE] = self._on_wake
        self.day = 0
        self.days_since_reset = 0
        self.ledger = energy.EnergyLedger.for_devices(devices)
        self._energy_t = [0] * len(devices)
        self._day_delays: dict[int, float] = {}
        self.ready = False

    @property
    def n(self) -> int:
        return len(self.devices)

    # -- state ---------------------------------------------------------
    def reset(self) -> StateVector:
        """Fresh batteries drawn from the configured range; keeps the clock."""
        lo, hi = self.config.initial_battery_range
        levels = self.rng.uniform(lo, hi, self.n)
        day_start = self.day * MS_PER_DAY
        for d, level in zip(self.devices, levels):
            d.battery_pct = float(level)
            d.state = self.config.rest_state
            d.last_tx = day_start
            self.ledger.register(d)
            self._energy_t[d.id] = day_start
        self.days_since_reset = 0
        self.ready = True
        return self.state()

    def state(self) -> StateVector:
        day_start = self.day * MS_PER_DAY
        batteries = [d.battery_pct for d in self.devices]
        last = [((d.last_tx - day_start) / MS_PER_MINUTE) % MINUTES_PER_DAY
                if d.last_tx < day_start else (d.last_tx - day_start) / MS_PER_MINUTE
                for d in self.devices]
        return StateVector(batteries, last)

    def load_state(self, s: StateVector) -> None:
        """Overwrite device batteries and last transmissions (what-if probing).

        ``s.last_tx_min`` is read as the minute of yesterday's transmission.
        """
        day_start = self.day * MS_PER_DAY
        for d, b, t in zip(self.devices, s.batteries, s.last_tx_min):
            d.battery_pct = float(b)
            d.state = self.config.rest_state if b > 0 else DeviceState.SLEEP
            d.last_tx = day_start - MS_PER_DAY + int(round(t * MS_PER_MINUTE))
            self._energy_t[d.id] = day_start

    # -- events --------------------------------------------------------
    def _on_wake(self, engine: Engine, ev: Event) -> None:
        dev_id, payload, wire = ev.data
        dev = self.devices[dev_id]
        now = int(ev.at)
        energy.advance(dev, now - self._energy_t[dev_id], self.model, self.ledger)
        self._energy_t[dev_id] = now
        alive = dev.battery_pct > 0
        energy.wake_and_transmit(dev, self.model, payload, now, self.ledger,
                                 rest_state=self.config.rest_state)
        if not alive:
            return
        view = self.views[dev_id]
        writer = self._writers[dev_id]
        for sub, path in self._routes[dev_id].items():
            msg = view.emit(writer, self.graph.nodes[sub].guid, rtps.Primitive.PUBLISH, now,
                            topic=domain_topic(dev.domain), payload_bytes=wire)
            engine.send(msg, path, Phase.DATA_EXCHANGE, flow=dev_id,
                        on_deliver=self._make_receiver(sub))

    def _make_receiver(self, sub: int):
        view = self.sub_views[sub]

        def receive(tr: Transfer, t: float) -> bool:
            if tr.msg.domain != view.domain:
                rtps.handle(view, tr.msg, t)
                return False
            rtps.handle(view, tr.msg, t)
            view.inbox.clear()
            d = t - tr.injected_at
            self._day_delays[tr.flow] = max(self._day_delays.get(tr.flow, 0.0), d)
            return True

        return receive

    # -- stepping ------------------------------------------------------
    def send_times(self, a_exec: np.ndarray) -> list[list[float]]:
        k = self.config.sends_per_day
        if k == 1:
            return [[float(t)] for t in a_exec]
        step = MINUTES_PER_DAY / k
        return [sorted((float(t) + j * step) % MINUTES_PER_DAY for j in range(k))
                for t in a_exec]

    def step(self, action, dt_min_minutes: float | None = None) -> DayResult:
        if not self.ready:
            raise EnvError("environment not initialised; call reset() first")
        if self.days_since_reset >= self.config.horizon_days:
            self.reset()
        constraint = (self.constraint if dt_min_minutes is None
                      else ScheduleConstraint(dt_min_minutes))
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if not np.isfinite(a).all():
            raise EnvError("action contains non-finite minutes")
        a = np.clip(a, 0.0, MINUTES_PER_DAY)
        if a.shape[0] != self.n:
            raise EnvError(f"action has {a.shape[0]} entries, expected {self.n}")
        day_start = self.day * MS_PER_DAY
        last_rel = np.array([(d.last_tx - day_start) / MS_PER_MINUTE for d in self.devices])
        a_prime = enforce_min_interval(a, last_rel, constraint)
        a_exec = np.minimum(a_prime, MINUTES_PER_DAY)
        times = self.send_times(a_exec)
        share = self.config.sends_per_day

        batteries_after = []
        for d, ts in zip(self.devices, times):
            first = day_start + int(round(ts[0] * MS_PER_MINUTE))
            batteries_after.append(energy.battery_at(
                d, first, self.model, day_start, planned_state=self.config.rest_state,
                payload_bytes=d.payload_bytes / share))

        self._day_delays = {}
        n_samples = len(self.engine.samples)
        wire = self.config.wire_payload_bytes
        for d, ts in zip(self.devices, times):
            wire_bytes = int(np.ceil((d.payload_bytes if wire is None else wire) / share))
            for t in ts:
                at = day_start + int(round(t * MS_PER_MINUTE))
                self.engine.schedule(max(at, self.engine.clock), EventKind.DEVICE_WAKE,
                                     (d.id, d.payload_bytes / share, wire_bytes))
        day_end = day_start + MS_PER_DAY
        self.engine.run_until(day_end)
        while self.engine.pending(EventKind.DELIVER):
            self.engine.step()
        for d in self.devices:
            energy.advance(d, day_end - self._energy_t[d.id], self.model, self.ledger)
            self._energy_t[d.id] = day_end

        samples = self.engine.samples[n_samples:]
        delays = np.array([self._day_delays.get(d.id, 0.0) for d in self.devices])
        r = reward_total(reward_energy(batteries_after),
                         reward_timeliness(delays, self.config.d_threshold_ms),
                         reward_consecutive(a, a_prime, constraint, self.config.lam),
                         self.config.d_threshold_ms, self.config.lam)
        self.day += 1
        self.days_since_reset += 1
        p95 = percentile([s.d_ms for s in samples], 95) if samples else 0.0
        return DayResult(self.state(), r, samples, delays, a_prime, p95)

    # -- snapshots -----------------------------------------------------
    def snapshot(self) -> dict:
        eng = self.engine
        return {
            "devices": copy.deepcopy(self.devices),
            "views": copy.deepcopy((self.views, self.sub_views)),
            "links": {lid: l.busy_until for lid, l in eng.links.items()},
            "engine": (eng.clock, list(eng._queue), eng._seq, len(eng.samples),
                       len(eng.trace) if eng.trace is not None else 0,
                       eng.sent, eng.delivered, eng.dropped, eng.bytes_sent,
                       eng.bytes_delivered),
            "ledger": copy.deepcopy(self.ledger),
            "energy_t": list(self._energy_t),
            "day": (self.day, self.days_since_reset, self.ready),
            "rng": copy.deepcopy(self.rng.bit_generator.state),
        }

    def restore(self, snap: dict) -> None:
        for d, saved in zip(self.devices, snap["devices"]):
            d.__dict__.update(copy.deepcopy(saved.__dict__))
        views, sub_views = copy.deepcopy(snap["views"])
        for k, v in views.items():
            self.views[k].__dict__.update(v.__dict__)
        for k, v in sub_views.items():
            self.sub_views[k].__dict__.update(v.__dict__)
        eng = self.engine
        for lid, b in snap["links"].items():
            eng.links[lid].busy_until = b
        (eng.clock, queue, eng._seq, n_samples, n_trace, eng.sent, eng.delivered,
         eng.dropped, eng.bytes_sent, eng.bytes_delivered) = snap["engine"]
        eng._queue = list(queue)
        del eng.samples[n_samples:]
        if eng.trace is not None:
            del eng.trace[n_trace:]
        self.ledger = copy.deepcopy(snap["ledger"])
        self._energy_t = list(snap["energy_t"])
        self.day, self.days_since_reset, self.ready = snap["day"]
        self.rng.bit_generator.state = copy.deepcopy(snap["rng"])

    def probe(self, s: StateVector, action) -> DayResult:
        """Reward of ``action`` from what-if state ``s``; leaves the env untouched."""
        snap = self.snapshot()
        trace, self.engine.trace = self.engine.trace, None
        try:
            self.load_state(s)
            self.days_since_reset = 0
            return self.step(action)
        finally:
            self.engine.trace = trace
            self.restore(snap)

    # -- persistence ---------------------------------------------------
    def total_consumed(self) -> float:
        return energy.total_consumption(self.ledger)

    def conservation_error(self) -> float:
        """Largest |initial - current - consumed| over devices since the last reset."""
        led = self.ledger
        return max((abs(led.initial_pct[d.id] - d.battery_pct - led.consumed_pct[d.id])
                    for d in self.devices), default=0.0)

    def export_state(self) -> dict:
        """JSON-serialisable state at a day boundary (no message in flight)."""
        eng = self.engine
        if eng.pending():
            raise EnvError("cannot export while events are pending")
        return {
            "devices": [[d.battery_pct, d.state.value, d.last_tx] for d in self.devices],
            "seq": {str(k): v.next_seq for k, v in self.views.items()},
            "sub_seq": {str(k): [v.next_seq, v.dropped] for k, v in self.sub_views.items()},
            "links": [[lid, l.busy_until] for lid, l in sorted(eng.links.items())],
            "engine": [eng.clock, eng._seq, eng.sent, eng.delivered, eng.dropped,
                       eng.bytes_sent, eng.bytes_delivered],
            "ledger": [[k, self.ledger.initial_pct[k], self.ledger.consumed_pct[k],
                        self.ledger.skipped_tx[k]] for k in sorted(self.ledger.initial_pct)],
            "energy_t": list(self._energy_t),
            "day": [self.day, self.days_since_reset, self.ready],
            "rng": self.rng.bit_generator.state,
        }

    def import_state(self, st: dict) -> None:
        for d, (b, state, last) in zip(self.devices, st["devices"]):
            d.battery_pct, d.state, d.last_tx = b, DeviceState(state), last
        for k, seq in st["seq"].items():
            self.views[int(k)].next_seq = seq
        for k, (seq, dropped) in st["sub_seq"].items():
            self.sub_views[int(k)].next_seq, self.sub_views[int(k)].dropped = seq, dropped
        eng = self.engine
        for lid, busy in st["links"]:
            eng.links[lid].busy_until = busy
        (eng.clock, eng._seq, eng.sent, eng.delivered, eng.dropped,
         eng.bytes_sent, eng.bytes_delivered) = st["engine"]
        eng._queue = []
        self.ledger = energy.EnergyLedger()
        for k, init, used, skipped in st["ledger"]:
            self.ledger.initial_pct[k], self.ledger.consumed_pct[k] = init, used
            self.ledger.skipped_tx[k] = skipped
        self._energy_t = list(st["energy_t"])
        self.day, self.days_since_reset, self.ready = st["day"]
        self.rng.bit_generator.state = st["rng"]
