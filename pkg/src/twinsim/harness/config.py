"""Experiment configuration: YAML file -> nested dataclasses.

Unknown keys are rejected with the dotted path of the offending field, so a
typo never silently falls back to a default.
"""

from __future__ import annotations

import dataclasses
import enum
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..ddpg import Hyperparams
from ..energy import BatteryModel


class ConfigError(ValueError):
    pass


class Scenario(enum.Enum):
    ONE_SERVICE = "one_service"
    THREE_SERVICE = "three_service"


@dataclass
class UnderlayConfig:
    bandwidth_bytes_per_ms: float = 12_500.0
    prop_delay_ms: tuple[float, float] = (1.0, 5.0)
    max_hops: int = 3


@dataclass
class EnvSection:
    dt_min_minutes: float = 30.0
    dt_min_schedule: tuple[float, float] | None = None
    horizon_days: int = 30
    initial_battery: tuple[float, float] = (80.0, 100.0)


@dataclass
class TrainSection:
    episodes: int = 300
    eval_days: int = 50
    # Evaluation starts every run from the same battery level so that the
    # spread across seeds reflects the policy, not the initial draw.
    eval_initial_battery: tuple[float, float] = (100.0, 100.0)


@dataclass
class LatencySweepSection:
    volumes_bytes: list[int] = field(default_factory=lambda: [
        100_000, 300_000, 1_000_000, 3_000_000, 10_000_000, 30_000_000, 100_000_000,
        200_000_000, 400_000_000])
    discovery_cutover_bytes: int = 200_000_000
    discovery_share: float = 0.5
    n_publishers: int = 30
    scenarios: list[str] = field(default_factory=lambda: ["one_service", "three_service"])
    policies: list[str] = field(default_factory=lambda: ["ddpg", "periodic"])
    train_episodes: int = 60
    # Rewards here are dominated by large delay penalties; 0 = automatic scale.
    reward_scale: float = 0.0
    heartbeat_period_ms: float = 1000.0


@dataclass
class EnergySweepSection:
    publisher_counts: list[int] = field(default_factory=lambda: [0, 60, 120, 240, 360, 480, 600])
    days: int = 30
    policies: list[str] = field(default_factory=lambda: [
        "ddpg", "periodic", "uniform_random", "always_active"])
    train_episodes: int = 40
    # Rewards grow with the publisher count; 0 = automatic scale.
    reward_scale: float = 0.0


@dataclass
class ExperimentConfig:
    scenario: Scenario = Scenario.THREE_SERVICE
    n_publishers: int = 10
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    d_threshold_ms: float = 180.0
    penalty_lambda: float = 0.3
    apps_per_domain: int = 1
    k_peers: int = 2
    output_dir: str = "runs"
    workers: int = 1
    underlay: UnderlayConfig = field(default_factory=UnderlayConfig)
    battery: BatteryModel = field(default_factory=BatteryModel)
    env: EnvSection = field(default_factory=EnvSection)
    ddpg: Hyperparams = field(default_factory=Hyperparams)
    train: TrainSection = field(default_factory=TrainSection)
    latency_sweep: LatencySweepSection = field(default_factory=LatencySweepSection)
    energy_sweep: EnergySweepSection = field(default_factory=EnergySweepSection)

    def validate(self) -> ExperimentConfig:
        errors = []
        if not 0 <= self.n_publishers <= 600:
            errors.append("n_publishers: must lie in [0, 600]")
        if not self.seeds:
            errors.append("seeds: at least one seed is required")
        if self.d_threshold_ms < 0:
            errors.append("d_threshold_ms: must be non-negative")
        if self.penalty_lambda < 0:
            errors.append("penalty_lambda: must be non-negative")
        if self.apps_per_domain < 1:
            errors.append("apps_per_domain: must be >= 1")
        if self.workers < 1:
            errors.append("workers: must be >= 1")
        ls = self.latency_sweep
        vols = ls.volumes_bytes
        if any(v <= 0 for v in vols):
            errors.append("latency_sweep.volumes_bytes: volumes must be positive")
        if vols != sorted(vols) or len(set(vols)) != len(vols):
            errors.append("latency_sweep.volumes_bytes: must be strictly ascending")
        if vols and ls.discovery_cutover_bytes > vols[-1]:
            errors.append("latency_sweep.discovery_cutover_bytes: exceeds the largest volume")
        if not 0 < ls.discovery_share < 1:
            errors.append("latency_sweep.discovery_share: must lie in (0, 1)")
        for s in ls.scenarios:
            if s not in {x.value for x in Scenario}:
                errors.append(f"latency_sweep.scenarios: unknown scenario {s!r}")
        for p in ls.policies:
            if p not in POLICY_NAMES:
                errors.append(f"latency_sweep.policies: unknown policy {p!r}")
        for p in self.energy_sweep.policies:
            if p not in POLICY_NAMES:
                errors.append(f"energy_sweep.policies: unknown policy {p!r}")
        if any(not 0 <= c <= 600 for c in self.energy_sweep.publisher_counts):
            errors.append("energy_sweep.publisher_counts: counts must lie in [0, 600]")
        for name, (lo, hi) in (("env.initial_battery", self.env.initial_battery),
                               ("train.eval_initial_battery", self.train.eval_initial_battery)):
            if not 0 <= lo <= hi <= 100:
                errors.append(f"{name}: must be a sub-interval of [0, 100]")
        if self.train.episodes < 0 or self.train.eval_days < 1:
            errors.append("train: episodes must be >= 0 and eval_days >= 1")
        if errors:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
        return self


POLICY_NAMES = ("ddpg", "periodic", "uniform_random", "always_active")


def _convert(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, path)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        try:
            return tp(value)
        except ValueError:
            choices = ", ".join(repr(m.value) for m in tp)
            raise ConfigError(f"{path}: {value!r} is not one of {choices}") from None
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} values")
        return tuple(_convert(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return [_convert(args[0], v, f"{path}[{i}]") for i, v in enumerate(value)]
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, data, path: str = ""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError("unknown key(s): " + ", ".join(where + k for k in unknown))
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _convert(hints[key], value, f"{path}.{key}" if path else key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def config_from_dict(data: dict | None) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}).validate()


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return config_from_dict({})
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return config_from_dict(data)


def config_to_dict(cfg) -> dict:
    """Plain-data form of a config (round-trips through :func:`config_from_dict`)."""
    def plain(v):
        if dataclasses.is_dataclass(v):
            return {f.name: plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, enum.Enum):
            return v.value
        if isinstance(v, (list, tuple)):
            return [plain(x) for x in v]
        return v
    return plain(cfg)
