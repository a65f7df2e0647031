"""Shared domain types: devices, domains, topics and simulation time."""

from __future__ import annotations

import enum
from dataclasses import dataclass

MS_PER_MINUTE = 60_000
MINUTES_PER_DAY = 1440
MS_PER_DAY = MINUTES_PER_DAY * MS_PER_MINUTE


class ValidationError(ValueError):
    """Raised when a value violates a domain invariant."""


class DomainId(enum.IntEnum):
    AIR_Q_DOMAIN = 0
    TRANSPORT_DOMAIN = 1
    SMART_FARM_DOMAIN = 2


class DeviceState(enum.Enum):
    IDLE = "Idle"
    ACTIVE = "Active"
    SLEEP = "Sleep"


@dataclass(frozen=True, order=True)
class Topic:
    name: str
    domain: int


@dataclass
class Device:
    """A physical publisher.

    ``last_tx`` is the absolute simulation time (ms) of the most recent
    completed transmission; ``battery_pct`` only ever goes down.
    """

    id: int
    domain: int
    battery_pct: float
    payload_bytes: int
    state: DeviceState = DeviceState.IDLE
    last_tx: int = 0

    def set_battery(self, value: float) -> None:
        if value > self.battery_pct:
            raise ValidationError(
                f"device {self.id}: battery may not increase ({self.battery_pct} -> {value})"
            )
        self.battery_pct = max(0.0, value)


def make_device(id: int, domain: int, battery_pct: float, payload_bytes: int) -> Device:
    if not 0.0 <= battery_pct <= 100.0:
        raise ValidationError(f"battery_pct must lie in [0, 100], got {battery_pct}")
    if payload_bytes < 1:
        raise ValidationError(f"payload_bytes must be >= 1, got {payload_bytes}")
    return Device(id=id, domain=int(domain), battery_pct=float(battery_pct),
                  payload_bytes=int(payload_bytes))


def minutes_to_simtime(m: float) -> int:
    """Convert minutes to integer milliseconds since simulation start."""
    if m < 0:
        raise ValidationError(f"negative time: {m} min")
    return int(round(m * MS_PER_MINUTE))


def domain_topic(domain: int) -> Topic:
    """The readings topic every publisher of ``domain`` writes to."""
    return Topic(f"{DomainId(domain).name.lower()}/readings", int(domain))
