"""Scenario construction and scheduling policies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import DeviceState, Device, DomainId, domain_topic, make_device
from ..ddpg import MlpParams, actor_forward
from ..netsim import Engine, UnderlayLink
from ..overlay import NodeKind, OverlayGraph
from ..rtps import Guid
from ..scheduler import EnvConfig, SchedulingEnv, StateVector
from .config import ConfigError, ExperimentConfig, Scenario
from .readings import daily_reading

GATEWAY_PARTICIPANT_BASE = 900_000
APP_PARTICIPANT_BASE = 800_000


def scenario_domains(scenario: Scenario) -> list[int]:
    if scenario is Scenario.ONE_SERVICE:
        return [DomainId.AIR_Q_DOMAIN]
    return [DomainId.AIR_Q_DOMAIN, DomainId.TRANSPORT_DOMAIN, DomainId.SMART_FARM_DOMAIN]


def split_publishers(n: int, n_domains: int) -> list[int]:
    """Even split; the remainder goes to the lowest domain ids."""
    base, extra = divmod(n, n_domains)
    return [base + (1 if i < extra else 0) for i in range(n_domains)]


@dataclass
class Built:
    graph: OverlayGraph
    devices: list[Device]
    engine: Engine
    twin_nodes: dict[int, int]
    app_nodes: dict[int, list[int]]
    domains: list[int]


def build_network(cfg: ExperimentConfig, seed: int, n_publishers: int | None = None,
                  scenario: Scenario | None = None, trace: list[str] | None = None) -> Built:
    n = cfg.n_publishers if n_publishers is None else n_publishers
    scenario = cfg.scenario if scenario is None else scenario
    if not 0 <= n <= 600:
        raise ConfigError(f"n_publishers: {n} is outside [0, 600]")
    u = cfg.underlay
    graph = OverlayGraph(seed=seed, k_peers=cfg.k_peers,
                         bandwidth_bytes_per_ms=u.bandwidth_bytes_per_ms,
                         prop_delay_range_ms=tuple(u.prop_delay_ms), max_underlay_hops=u.max_hops)
    domains = [int(d) for d in scenario_domains(scenario)]
    app_nodes: dict[int, list[int]] = {}
    for d in domains:
        graph.add_domain(d, Guid(GATEWAY_PARTICIPANT_BASE + d))
        topic = domain_topic(d)
        app_nodes[d] = []
        for j in range(cfg.apps_per_domain):
            node = graph.register_twin(Guid(APP_PARTICIPANT_BASE + 100 * d + j), d,
                                       kind=NodeKind.SERVICE_APP)
            graph.subscribe(topic, node)
            app_nodes[d].append(node)

    devices: list[Device] = []
    twin_nodes: dict[int, int] = {}
    for d, count in zip(domains, split_publishers(n, len(domains))):
        for _ in range(count):
            dev_id = len(devices)
            payload = len(daily_reading(d, dev_id, seed))
            devices.append(make_device(dev_id, d, 100.0, payload))
            twin_nodes[dev_id] = graph.register_twin(Guid(dev_id), d)

    engine = Engine(trace=trace)
    for lid, p in sorted(graph.underlay.items()):
        engine.add_link(UnderlayLink(lid, p.bandwidth_bytes_per_ms, p.prop_delay_ms))
    return Built(graph, devices, engine, twin_nodes, app_nodes, domains)


def env_config(cfg: ExperimentConfig, rest_state: DeviceState = DeviceState.SLEEP,
               sends_per_day: int = 1, horizon_days: int | None = None) -> EnvConfig:
    return EnvConfig(dt_min_minutes=cfg.env.dt_min_minutes, d_threshold_ms=cfg.d_threshold_ms,
                     lam=cfg.penalty_lambda, rest_state=rest_state, sends_per_day=sends_per_day,
                     horizon_days=cfg.env.horizon_days if horizon_days is None else horizon_days,
                     initial_battery_range=tuple(cfg.env.initial_battery))


def build_scenario(cfg: ExperimentConfig, seed: int, n_publishers: int | None = None,
                   scenario: Scenario | None = None, rest_state: DeviceState = DeviceState.SLEEP,
                   sends_per_day: int = 1, horizon_days: int | None = None,
                   trace: list[str] | None = None):
    """Returns ``(overlay, devices, engine, env)``; the env is reset and ready."""
    built = build_network(cfg, seed, n_publishers, scenario, trace)
    env = SchedulingEnv(built.devices, built.graph, built.engine, built.twin_nodes,
                        model=cfg.battery,
                        config=env_config(cfg, rest_state, sends_per_day, horizon_days),
                        seed=seed)
    env.reset()
    return built.graph, built.devices, built.engine, env


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

class Policy:
    name = "policy"
    rest_state = DeviceState.IDLE
    sends_per_day = 1

    def act(self, state: StateVector, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


class PeriodicSynchronized(Policy):
    """Every device transmits at the same fixed minute; idle in between."""

    name = "periodic"

    def __init__(self, minute: float = 0.0):
        self.minute = minute

    def act(self, state, rng):
        return np.full(state.n, self.minute)


class UniformRandom(Policy):
    name = "uniform_random"

    def __init__(self, rest_state: DeviceState = DeviceState.IDLE):
        self.rest_state = rest_state

    def act(self, state, rng):
        return rng.uniform(0.0, 1440.0, state.n)


class AlwaysActive(Policy):
    """Never sleeps; sends the daily reading in 24 hourly chunks."""

    name = "always_active"
    rest_state = DeviceState.ACTIVE
    sends_per_day = 24

    def act(self, state, rng):
        return np.zeros(state.n)


class DdpgPolicy(Policy):
    name = "ddpg"
    rest_state = DeviceState.SLEEP

    def __init__(self, actor: MlpParams):
        self.actor = actor

    def act(self, state, rng):
        return actor_forward(self.actor, state.normalized())


def run_policy(env: SchedulingEnv, policy: Policy, days: int, rng: np.random.Generator):
    """Drive ``env`` with ``policy`` for ``days`` days; returns the day results."""
    return [env.step(policy.act(env.state(), rng)) for _ in range(days)]
