"""Battery dynamics and energy accounting (all quantities in battery percent)."""

from __future__ import annotations

import copy
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

from .core import MS_PER_MINUTE, Device, DeviceState


@dataclass(frozen=True)
class BatteryModel:
    sleep_drain_pct_per_min: float = 0.0005
    idle_drain_pct_per_min: float = 0.001
    active_drain_pct_per_min: float = 0.0018
    wake_cost_pct: float = 0.2
    tx_cost_pct_per_kb: float = 0.3

    def __post_init__(self) -> None:
        rates = (self.sleep_drain_pct_per_min, self.idle_drain_pct_per_min,
                 self.active_drain_pct_per_min, self.wake_cost_pct, self.tx_cost_pct_per_kb)
        if any(r < 0 for r in rates):
            raise ValueError("battery model coefficients must be non-negative")
        if not (self.sleep_drain_pct_per_min <= self.idle_drain_pct_per_min
                <= self.active_drain_pct_per_min):
            raise ValueError("drain rates must satisfy sleep <= idle <= active")

    def drain_rate(self, state: DeviceState) -> float:
        if state is DeviceState.SLEEP:
            return self.sleep_drain_pct_per_min
        if state is DeviceState.IDLE:
            return self.idle_drain_pct_per_min
        return self.active_drain_pct_per_min

    def tx_cost(self, payload_bytes: float) -> float:
        return self.tx_cost_pct_per_kb * payload_bytes / 1000.0


@dataclass
class EnergyLedger:
    initial_pct: dict[int, float] = field(default_factory=dict)
    consumed_pct: dict[int, float] = field(default_factory=dict)
    skipped_tx: dict[int, int] = field(default_factory=dict)

    @classmethod
    def for_devices(cls, devices: Iterable[Device]) -> EnergyLedger:
        ledger = cls()
        for d in devices:
            ledger.register(d)
        return ledger

    def register(self, device: Device) -> None:
        self.initial_pct[device.id] = device.battery_pct
        self.consumed_pct[device.id] = 0.0
        self.skipped_tx[device.id] = 0

    def charge(self, device_id: int, amount: float) -> None:
        if device_id in self.consumed_pct:
            self.consumed_pct[device_id] += amount


def _drop(device: Device, amount: float, ledger: EnergyLedger | None) -> float:
    before = device.battery_pct
    device.set_battery(before - amount)
    used = before - device.battery_pct
    if ledger is not None:
        ledger.charge(device.id, used)
    if device.battery_pct <= 0.0:
        device.state = DeviceState.SLEEP
    return used


def advance(device: Device, dt_ms: float, model: BatteryModel,
            ledger: EnergyLedger | None = None) -> Device:
    """Drain ``device`` for ``dt_ms`` in its current state."""
    if dt_ms < 0:
        raise ValueError("dt_ms must be non-negative")
    rate = model.drain_rate(device.state)
    if rate > 0 and dt_ms > 0 and device.battery_pct > 0:
        _drop(device, rate * dt_ms / MS_PER_MINUTE, ledger)
    return device


def wake_and_transmit(device: Device, model: BatteryModel, payload_bytes: float, now: int,
                      ledger: EnergyLedger | None = None,
                      rest_state: DeviceState = DeviceState.SLEEP) -> tuple[Device, float]:
    """Wake (unless already active), transmit and fall back to ``rest_state``.

    A dead device skips the transmission; the skip is counted in the ledger.
    """
    if device.battery_pct <= 0.0:
        if ledger is not None and device.id in ledger.skipped_tx:
            ledger.skipped_tx[device.id] += 1
        device.state = DeviceState.SLEEP
        return device, 0.0
    cost = model.tx_cost(payload_bytes)
    if device.state is not DeviceState.ACTIVE:
        cost += model.wake_cost_pct
    device.state = DeviceState.ACTIVE
    used = _drop(device, cost, ledger)
    device.last_tx = int(now)
    if device.battery_pct > 0.0:
        device.state = rest_state
    return device, used


def battery_at(device: Device, schedule_time: int, model: BatteryModel, day_start: int,
               planned_state: DeviceState | None = None,
               payload_bytes: float | None = None) -> float:
    """Battery level right after a transmission at ``schedule_time`` (ms).

    ``device`` is taken as it stands at ``day_start``; it is held in
    ``planned_state`` (default: its current state) until the transmission.
    """
    if schedule_time < day_start:
        raise ValueError("schedule_time precedes day_start")
    probe = copy.copy(device)
    rest = probe.state if planned_state is None else planned_state
    if probe.battery_pct > 0:
        probe.state = rest
    advance(probe, schedule_time - day_start, model)
    payload = probe.payload_bytes if payload_bytes is None else payload_bytes
    wake_and_transmit(probe, model, payload, schedule_time, rest_state=rest)
    return probe.battery_pct


def total_consumption(ledger: EnergyLedger) -> float:
    return float(sum(ledger.consumed_pct.values()))


def normalize(values: Sequence[float], reference_max: float) -> list[float]:
    if reference_max <= 0:
        raise ValueError(f"reference_max must be positive, got {reference_max}")
    return [v / reference_max for v in values]


def energy_report(ledger: EnergyLedger, devices: Iterable[Device]) -> dict:
    devices = sorted(devices, key=lambda d: d.id)
    return {
        "total_consumed_pct": total_consumption(ledger),
        "devices": [
            {"id": d.id, "domain": d.domain, "initial_pct": ledger.initial_pct[d.id],
             "battery_pct": d.battery_pct, "consumed_pct": ledger.consumed_pct[d.id],
             "skipped_tx": ledger.skipped_tx[d.id]}
            for d in devices
        ],
    }
