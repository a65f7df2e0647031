"""Command-line entry point: ``twinsim <command> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import filecmp
import json
import sys
import tempfile
from pathlib import Path

from ..ddpg import Trainer
from ..energy import energy_report
from ..scheduler import SchedulingEnv
from .config import ConfigError, ExperimentConfig, config_from_dict, config_to_dict, load_config
from .plot import write_chart
from .scenario import build_network, env_config
from .sweeps import energy_sweep, latency_sweep, learning_comparison, write_csv

RUN_FILES = ("learning_curve.csv", "episodes.csv", "checkpoint.bin", "trace.log",
             "stats.json", "energy.json", "topology.json", "run.json")
LEARNING_FIELDS = ("episode", "r_total", "r_energy", "r_timeliness", "r_consecutive",
                   "epsilon", "critic_loss")
EPISODE_FIELDS = ("seed", "episode", "r_energy", "r_timeliness", "r_consecutive", "r_total",
                  "p95_ms", "total_consumed_pct")


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# train / replay
# ---------------------------------------------------------------------------

def run_training(cfg: ExperimentConfig, seed: int, out: Path, episodes: int | None = None,
                 resume: Path | None = None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    episodes = cfg.train.episodes if episodes is None else episodes
    trace: list[str] = []
    built = build_network(cfg, seed, trace=trace)
    env = SchedulingEnv(built.devices, built.graph, built.engine, built.twin_nodes,
                        model=cfg.battery, config=env_config(cfg), seed=seed)
    if resume is not None:
        trainer = Trainer.load(resume, env)
    else:
        env.reset()
        trainer = Trainer(env, cfg.ddpg, episodes, seed, cfg.env.dt_min_schedule)
    trainer.train()

    rows = [dataclasses.asdict(p) for p in trainer.curve]
    write_csv(out / "learning_curve.csv", [{k: r[k] for k in LEARNING_FIELDS} for r in rows])
    write_csv(out / "episodes.csv",
              [{k: (seed if k == "seed" else r[k]) for k in EPISODE_FIELDS} for r in rows])
    trainer.save(out / "checkpoint.bin")
    (out / "trace.log").write_text("".join(line + "\n" for line in trace))
    _dump_json(out / "stats.json", env.engine.statistics().to_dict())
    _dump_json(out / "energy.json", energy_report(env.ledger, env.devices))
    _dump_json(out / "topology.json", built.graph.snapshot())
    _dump_json(out / "run.json", {"seed": seed, "episodes": trainer.episodes,
                                  "resumed_from": str(resume) if resume else None,
                                  "config": config_to_dict(cfg)})
    return out


def replay(run_dir: Path) -> tuple[bool, list[str]]:
    """Re-run a finished training run and compare every output file byte for byte."""
    meta = json.loads((run_dir / "run.json").read_text())
    cfg = config_from_dict(meta["config"])
    if meta.get("resumed_from"):
        raise ConfigError("replay of a resumed run is not supported; replay the original run")
    with tempfile.TemporaryDirectory() as tmp:
        fresh = run_training(cfg, meta["seed"], Path(tmp), meta["episodes"])
        diffs = [name for name in RUN_FILES
                 if not (run_dir / name).exists()
                 or not filecmp.cmp(run_dir / name, fresh / name, shallow=False)]
    return not diffs, diffs


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _seeds(cfg: ExperimentConfig, seed: int | None) -> list[int]:
    return cfg.seeds if seed is None else [seed]


def cmd_latency(cfg, seeds, out: Path) -> None:
    res = latency_sweep(cfg, seeds)
    write_csv(out / "latency_rows.csv", res["rows"])
    write_csv(out / "latency_summary.csv", res["summary"])
    for scen in cfg.latency_sweep.scenarios:
        series = {}
        for r in res["summary"]:
            if r["scenario"] == scen:
                series.setdefault(r["policy"], []).append((r["volume_bytes"], r["p95_ms_mean"]))
        write_chart(out / f"latency_{scen}.svg", series, f"p95 delay ({scen})",
                    "volume per service [bytes]", "p95 [ms]", logx=True)


def cmd_energy(cfg, seeds, out: Path) -> None:
    res = energy_sweep(cfg, seeds)
    write_csv(out / "energy_rows.csv", res["rows"])
    write_csv(out / "energy_summary.csv", res["summary"])
    write_csv(out / "energy_normalized.csv", res["summary_normalized"])
    series = {}
    for r in res["summary_normalized"]:
        series.setdefault(r["policy"], []).append((r["publishers"], r["normalized_mean"]))
    if any(series.values()):
        write_chart(out / "energy.svg", series, "normalized energy consumption",
                    "publishers", "normalized consumption")


def cmd_compare(cfg, seeds, out: Path) -> dict:
    res = learning_comparison(cfg, seeds)
    write_csv(out / "learning_comparison.csv", res["rows"])
    _dump_json(out / "learning_comparison.json",
               {"ddpg": res["ddpg"], "uniform_random": res["uniform_random"]})
    return res


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _global_flags(parser: argparse.ArgumentParser, default) -> None:
    parser.add_argument("--config", type=Path, default=default, help="YAML experiment config")
    parser.add_argument("--seed", type=int, default=default,
                        help="seed (train: default 0; sweeps: default all config seeds)")
    parser.add_argument("--out-dir", type=Path, default=default, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    # Global flags are accepted before or after the command; the copy on the
    # sub-parsers is SUPPRESSed so it does not clobber values given earlier.
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="twinsim",
                                description="Digital-twin IoT scheduling simulator")
    _global_flags(p, None)
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    t = sub.add_parser("train", parents=[common], help="train DDPG and write a run directory")
    t.add_argument("--episodes", type=int, default=None)
    t.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")
    sub.add_parser("latency-sweep", parents=[common], help="p95 delay vs data volume")
    sub.add_parser("energy-sweep", parents=[common], help="energy vs number of publishers")
    sub.add_parser("compare", parents=[common], help="trained policy vs UniformRandom")
    r = sub.add_parser("replay", parents=[common], help="re-run a training run and byte-compare")
    r.add_argument("run_dir", type=Path)
    sub.add_parser("validate-config", parents=[common], help="check a config file")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        cfg = load_config(ns.config)
        if ns.command == "validate-config":
            print(f"{ns.config or '<defaults>'}: OK")
            return 0
        out = ns.out_dir or Path(cfg.output_dir) / ns.command
        if ns.command == "train":
            seed = 0 if ns.seed is None else ns.seed
            run_training(cfg, seed, out, ns.episodes, ns.resume)
            print(f"wrote {out}")
        elif ns.command == "replay":
            ok, diffs = replay(ns.run_dir)
            print("IDENTICAL" if ok else "DIFFERENT: " + ", ".join(diffs))
            return 0 if ok else 1
        else:
            out.mkdir(parents=True, exist_ok=True)
            seeds = _seeds(cfg, ns.seed)
            if ns.command == "latency-sweep":
                cmd_latency(cfg, seeds, out)
            elif ns.command == "energy-sweep":
                cmd_energy(cfg, seeds, out)
            else:
                res = cmd_compare(cfg, seeds, out)
                for name in ("ddpg", "uniform_random"):
                    a = res[name]
                    print(f"{name}: mean={a['mean']:.4f} ci95=[{a['ci_lo']:.4f}, "
                          f"{a['ci_hi']:.4f}] n={a['n']}")
            print(f"wrote {out}")
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
