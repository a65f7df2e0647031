"""Seeded synthetic daily readings for the three city services.

Only the encoded size of a reading reaches the simulator (it becomes the
device's daily payload), but the values follow plausible diurnal shapes so
that dumped payloads look like what a sensor would send.
"""

from __future__ import annotations

import numpy as np

from ..core import DomainId

SAMPLES_PER_DAY = 48  # one sample every 30 minutes


def _diurnal(rng: np.random.Generator, base: float, amp: float, peak_hour: float,
             noise: float) -> np.ndarray:
    hours = np.arange(SAMPLES_PER_DAY) * 24.0 / SAMPLES_PER_DAY
    wave = np.cos((hours - peak_hour) / 24.0 * 2 * np.pi)
    return base + amp * wave + rng.normal(0.0, noise, SAMPLES_PER_DAY)


def air_quality(rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {
        "pm25": np.clip(_diurnal(rng, 18.0, 8.0, 8.5, 2.5), 0, None),
        "no2": np.clip(_diurnal(rng, 30.0, 12.0, 18.0, 4.0), 0, None),
        "o3": np.clip(_diurnal(rng, 40.0, 20.0, 15.0, 5.0), 0, None),
    }


def transport(rng: np.random.Generator) -> dict[str, np.ndarray]:
    flow = np.clip(_diurnal(rng, 300.0, 250.0, 17.0, 40.0), 0, None)
    return {
        "vehicles": np.round(flow),
        "mean_speed_kmh": np.clip(55.0 - flow / 20.0 + rng.normal(0, 3, SAMPLES_PER_DAY), 5, 90),
    }


def smart_farm(rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {
        "soil_moisture_pct": np.clip(_diurnal(rng, 32.0, 4.0, 6.0, 1.0), 0, 100),
        "air_temp_c": _diurnal(rng, 16.0, 7.0, 14.0, 0.8),
        "leaf_wetness": np.clip(_diurnal(rng, 0.4, 0.3, 5.0, 0.05), 0, 1),
    }


GENERATORS = {
    DomainId.AIR_Q_DOMAIN: air_quality,
    DomainId.TRANSPORT_DOMAIN: transport,
    DomainId.SMART_FARM_DOMAIN: smart_farm,
}


def encode(device_id: int, values: dict[str, np.ndarray]) -> bytes:
    cols = sorted(values)
    lines = [f"device={device_id}", "slot," + ",".join(cols)]
    for i in range(SAMPLES_PER_DAY):
        lines.append(f"{i}," + ",".join(f"{values[c][i]:.2f}" for c in cols))
    return ("\n".join(lines) + "\n").encode()


def daily_reading(domain: int, device_id: int, seed: int) -> bytes:
    rng = np.random.default_rng([seed, int(domain), device_id])
    return encode(device_id, GENERATORS[DomainId(domain)](rng))
