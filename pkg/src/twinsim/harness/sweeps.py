"""Experiment drivers: learning comparison, latency sweep, energy sweep.

Every driver works one seed at a time through a top-level function so that
seeds can run in worker processes; results are always reduced in seed order,
which keeps outputs independent of the worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy import stats as sstats

from ..core import MINUTES_PER_DAY, MS_PER_MINUTE, DeviceState, domain_topic
from ..ddpg import MlpParams, Trainer
from ..netsim import deliver_flat, percentile
from ..rtps import DISCOVERY_PAYLOAD_BYTES
from ..scheduler import ScheduleConstraint, enforce_min_interval
from .config import ExperimentConfig, Scenario
from .scenario import (AlwaysActive, Built, DdpgPolicy, PeriodicSynchronized, Policy,
                       UniformRandom, build_network, build_scenario, run_policy,
                       split_publishers)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def aggregate(values) -> dict:
    """Mean, min/max and a two-sided 95% Student-t interval across seeds."""
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    if n == 0:
        return {"n": 0, "mean": math.nan, "min": math.nan, "max": math.nan,
                "ci_lo": math.nan, "ci_hi": math.nan}
    mean = float(v.mean())
    if n > 1:
        half = float(sstats.t.ppf(0.975, n - 1) * v.std(ddof=1) / math.sqrt(n))
    else:
        half = 0.0
    return {"n": n, "mean": mean, "min": float(v.min()), "max": float(v.max()),
            "ci_lo": mean - half, "ci_hi": mean + half}


def map_seeds(fn, args_list: list[tuple], workers: int) -> list:
    if workers <= 1 or len(args_list) <= 1:
        return [fn(*a) for a in args_list]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *a) for a in args_list]
        return [f.result() for f in futures]


def write_csv(path: str | Path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def train_actor(cfg: ExperimentConfig, seed: int, episodes: int, n_publishers: int | None = None,
                scenario: Scenario | None = None, wire_payload_bytes: float | None = None
                ) -> Trainer:
    _, _, _, env = build_scenario(cfg, seed, n_publishers, scenario)
    env.config.wire_payload_bytes = wire_payload_bytes
    trainer = Trainer(env, cfg.ddpg, episodes, seed, cfg.env.dt_min_schedule)
    trainer.train()
    return trainer


def make_policy(name: str, actor: MlpParams | None = None) -> Policy:
    if name == "ddpg":
        if actor is None:
            raise ValueError("the ddpg policy needs a trained actor")
        return DdpgPolicy(actor)
    return {"periodic": PeriodicSynchronized, "uniform_random": UniformRandom,
            "always_active": AlwaysActive}[name]()


# ---------------------------------------------------------------------------
# learning efficacy
# ---------------------------------------------------------------------------

def learning_seed(cfg: ExperimentConfig, seed: int) -> dict:
    trainer = train_actor(cfg, seed, cfg.train.episodes)
    eval_cfg = dataclasses.replace(
        cfg, env=dataclasses.replace(cfg.env, initial_battery=cfg.train.eval_initial_battery))
    out = {"seed": seed}
    days = cfg.train.eval_days
    for pol in (DdpgPolicy(trainer.agent.actor), UniformRandom(DeviceState.SLEEP)):
        # Both policies see the same network and battery draw for a seed.
        _, _, _, env = build_scenario(eval_cfg, seed, rest_state=pol.rest_state,
                                      sends_per_day=pol.sends_per_day, horizon_days=days)
        res = run_policy(env, pol, days, np.random.default_rng([seed, 1]))
        out[pol.name] = float(np.mean([r.reward.r_total for r in res]))
        out["conservation_err"] = max(out.get("conservation_err", 0.0),
                                      env.conservation_error())
    return out


def learning_comparison(cfg: ExperimentConfig, seeds: list[int] | None = None) -> dict:
    seeds = cfg.seeds if seeds is None else seeds
    rows = map_seeds(learning_seed, [(cfg, s) for s in seeds], cfg.workers)
    return {"rows": rows,
            "ddpg": aggregate([r["ddpg"] for r in rows]),
            "uniform_random": aggregate([r["uniform_random"] for r in rows])}


# ---------------------------------------------------------------------------
# latency sweep
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class _Batch:
    release: list[np.ndarray] = dataclasses.field(default_factory=list)
    size: list[np.ndarray] = dataclasses.field(default_factory=list)
    lens: list[np.ndarray] = dataclasses.field(default_factory=list)
    flat: list[np.ndarray] = dataclasses.field(default_factory=list)
    phase: list[np.ndarray] = dataclasses.field(default_factory=list)

    def add(self, release, size, pair_paths: list[np.ndarray], pair_idx, phase: int) -> None:
        """Messages ``k`` crossing ``pair_paths[pair_idx[k]]``."""
        pair_idx = np.asarray(pair_idx, dtype=np.int64)
        pair_len = np.array([len(p) for p in pair_paths], dtype=np.int64)
        pair_off = np.zeros(len(pair_paths), dtype=np.int64)
        np.cumsum(pair_len[:-1], out=pair_off[1:])
        catalog = (np.concatenate(pair_paths) if pair_paths else np.zeros(0)).astype(np.int64)
        lens = pair_len[pair_idx]
        starts = np.zeros(len(lens), dtype=np.int64)
        np.cumsum(lens[:-1], out=starts[1:])
        idx = np.repeat(pair_off[pair_idx] - starts, lens) + np.arange(int(lens.sum()))
        self.release.append(np.asarray(release, dtype=np.float64))
        self.size.append(np.broadcast_to(np.asarray(size, dtype=np.float64), lens.shape).copy())
        self.lens.append(lens)
        self.flat.append(catalog[idx])
        self.phase.append(np.full(len(lens), phase, dtype=np.int8))

    def run(self, links) -> tuple[np.ndarray, np.ndarray]:
        if not self.release:
            return np.zeros(0), np.zeros(0, dtype=np.int8)
        release = np.concatenate(self.release)
        lens = np.concatenate(self.lens)
        ptr = np.zeros(len(lens) + 1, dtype=np.int64)
        np.cumsum(lens, out=ptr[1:])
        out = deliver_flat(links, release, np.concatenate(self.size), ptr,
                           np.concatenate(self.flat))
        return out - release, np.concatenate(self.phase)


DISCOVERY, DATA = 0, 1


def _discovery_traffic(batch: _Batch, built: Built, domain: int, volume: float,
                       period_ms: float, rng: np.random.Generator) -> None:
    """Announce/heartbeat traffic: every participant of the domain messages
    every other one once per period, with a seeded phase per participant,
    until ``volume`` bytes have been sent."""
    members = built.graph.domain_nodes(domain)
    if len(members) < 2 or volume <= 0:
        return
    offsets = rng.uniform(0.0, period_ms, len(members))
    src_i, dst_i = np.nonzero(~np.eye(len(members), dtype=bool))
    paths = [np.array(built.graph.underlay_route(built.graph.route(members[a], members[b])),
                      dtype=np.int64) for a, b in zip(src_i.tolist(), dst_i.tolist())]
    n_msgs = math.ceil(volume / DISCOVERY_PAYLOAD_BYTES)
    k = np.arange(n_msgs)
    pair = k % len(paths)
    rounds = k // len(paths)
    release = rounds * period_ms + offsets[src_i[pair]]
    batch.add(release, DISCOVERY_PAYLOAD_BYTES, paths, pair, DISCOVERY)


def _data_traffic(batch: _Batch, built: Built, domain: int, volume: float,
                  send_min: np.ndarray) -> None:
    devs = [d for d in built.devices if d.domain == domain]
    if not devs or volume <= 0:
        return
    per_pub = volume / len(devs)
    topic = domain_topic(domain)
    paths, pair, release = [], [], []
    for d in devs:
        for sub, links in built.graph.propagate_update(topic, built.twin_nodes[d.id]).items():
            pair.append(len(paths))
            paths.append(np.array(links, dtype=np.int64))
            release.append(send_min[d.id] * MS_PER_MINUTE)
    batch.add(np.array(release), per_pub, paths, pair, DATA)


def latency_point(built: Built, send_min: np.ndarray, volume: float, cfg: ExperimentConfig,
                  seed: int, mode: str = "auto") -> dict:
    """One volume point on a freshly built network.

    ``mode`` is ``auto`` (discovery below the cut-over, mixed above),
    ``discovery`` or ``data``. Volumes are per domain.
    """
    ls = cfg.latency_sweep
    if volume <= 0:
        raise ValueError("volume must be positive: a zero volume yields no samples")
    if mode == "auto":
        mode = "discovery" if volume < ls.discovery_cutover_bytes else "mixed"
    share = {"discovery": 1.0, "data": 0.0, "mixed": ls.discovery_share}[mode]
    rng = np.random.default_rng([seed, int(volume), 7])
    batch = _Batch()
    for dom in built.domains:
        _discovery_traffic(batch, built, dom, share * volume, ls.heartbeat_period_ms, rng)
        _data_traffic(batch, built, dom, (1.0 - share) * volume, send_min)
    links = {lid: l for lid, l in built.engine.links.items()}
    for l in links.values():
        l.busy_until = 0.0
    delays, phase = batch.run(links)
    disc, data = delays[phase == DISCOVERY], delays[phase == DATA]

    def p95(x):
        return percentile(x, 95) if len(x) else math.nan

    headline = p95(disc) if mode == "discovery" else p95(data)
    return {"mode": mode, "messages": int(len(delays)), "p95_ms": headline,
            "p95_overall_ms": p95(delays), "p95_discovery_ms": p95(disc),
            "p95_data_ms": p95(data)}


def schedule_minutes(policy: Policy, built: Built, seed: int, cfg: ExperimentConfig) -> np.ndarray:
    """Executed send minute of every device on the first simulated day."""
    _, _, _, env = build_scenario(cfg, seed, len(built.devices), None, horizon_days=1)
    s = env.state()
    a = np.clip(policy.act(s, np.random.default_rng([seed, 3])), 0.0, MINUTES_PER_DAY)
    last_rel = s.last_tx_min - MINUTES_PER_DAY
    a_prime = enforce_min_interval(a, last_rel, ScheduleConstraint(cfg.env.dt_min_minutes))
    return np.minimum(a_prime, MINUTES_PER_DAY)


def latency_seed(cfg: ExperimentConfig, seed: int, scenario_name: str) -> list[dict]:
    """Rows for every (volume, policy) of one scenario and seed.

    Below the cut-over each volume also gets a ``data_exchange`` row: the same
    volume carried as data by the synchronized schedule, so discovery-only
    points have a counterpart at equal volume.
    """
    ls = cfg.latency_sweep
    scenario = Scenario(scenario_name)
    n = ls.n_publishers
    rows = []
    per_domain = max(split_publishers(n, 1 if scenario is Scenario.ONE_SERVICE else 3))
    scen_cfg = dataclasses.replace(cfg, scenario=scenario, n_publishers=n,
                                   ddpg=dataclasses.replace(cfg.ddpg,
                                                            reward_scale=ls.reward_scale))
    schedules = {}
    for name in ls.policies:
        actor = None
        if name == "ddpg":
            wire = (1.0 - ls.discovery_share) * ls.volumes_bytes[-1] / max(1, per_domain)
            actor = train_actor(scen_cfg, seed, ls.train_episodes,
                                wire_payload_bytes=wire).agent.actor
        policy = make_policy(name, actor)
        schedules[name] = schedule_minutes(policy, build_network(scen_cfg, seed), seed, scen_cfg)
    sync = schedule_minutes(PeriodicSynchronized(), build_network(scen_cfg, seed), seed,
                            scen_cfg)
    for volume in ls.volumes_bytes:
        points = [(name, schedules[name], "auto") for name in ls.policies]
        if volume < ls.discovery_cutover_bytes:
            points.append(("data_exchange", sync, "data"))
        for name, send, mode in points:
            row = {"scenario": scenario_name, "policy": name, "seed": seed,
                   "volume_bytes": volume}
            row.update(latency_point(build_network(scen_cfg, seed), send, volume, scen_cfg,
                                     seed, mode))
            rows.append(row)
    return rows


def latency_sweep(cfg: ExperimentConfig, seeds: list[int] | None = None) -> dict:
    seeds = cfg.seeds if seeds is None else seeds
    jobs = [(cfg, s, sc) for sc in cfg.latency_sweep.scenarios for s in seeds]
    rows = [r for chunk in map_seeds(latency_seed, jobs, cfg.workers) for r in chunk]
    return {"rows": rows, "summary": summarize_rows(rows, ("scenario", "policy", "volume_bytes"),
                                                    "p95_ms")}


def summarize_rows(rows: list[dict], keys: tuple[str, ...], metric: str) -> list[dict]:
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        if r[metric] is None:
            continue
        groups.setdefault(tuple(r[k] for k in keys), []).append(r[metric])
    out = []
    for key, vals in groups.items():
        row = dict(zip(keys, key))
        row.update({f"{metric}_{k}": v for k, v in aggregate(vals).items()})
        out.append(row)
    return out


# ---------------------------------------------------------------------------
# energy sweep
# ---------------------------------------------------------------------------

def energy_seed(cfg: ExperimentConfig, seed: int, count: int) -> list[dict]:
    es = cfg.energy_sweep
    cfg = dataclasses.replace(cfg, scenario=Scenario.THREE_SERVICE,
                              ddpg=dataclasses.replace(cfg.ddpg, reward_scale=es.reward_scale))
    consumed, err = {}, {}
    for name in es.policies:
        actor = None
        if name == "ddpg" and count > 0:
            actor = train_actor(cfg, seed, es.train_episodes, count).agent.actor
        policy = make_policy(name, actor) if (name != "ddpg" or count > 0) else None
        if policy is None:
            consumed[name] = 0.0
            continue
        _, _, _, env = build_scenario(cfg, seed, count, rest_state=policy.rest_state,
                                      sends_per_day=policy.sends_per_day,
                                      horizon_days=es.days)
        run_policy(env, policy, es.days, np.random.default_rng([seed, count, 5]))
        consumed[name] = env.total_consumed()
        err[name] = env.conservation_error()
    top = max(consumed.values())
    return [{"publishers": count, "policy": name, "seed": seed, "consumed_pct": c,
             "normalized": (c / top) if top > 0 else None,
             "conservation_err": err.get(name, 0.0)}
            for name, c in consumed.items()]


def energy_sweep(cfg: ExperimentConfig, seeds: list[int] | None = None) -> dict:
    seeds = cfg.seeds if seeds is None else seeds
    jobs = [(cfg, s, c) for c in cfg.energy_sweep.publisher_counts for s in seeds]
    rows = [r for chunk in map_seeds(energy_seed, jobs, cfg.workers) for r in chunk]
    return {"rows": rows,
            "summary": summarize_rows(rows, ("publishers", "policy"), "consumed_pct"),
            "summary_normalized": summarize_rows(rows, ("publishers", "policy"), "normalized")}
