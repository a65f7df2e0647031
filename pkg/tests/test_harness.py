import dataclasses
import json
import math

import numpy as np
import pytest
import yaml

from twinsim.core import DeviceState
from twinsim.harness import cli
from twinsim.harness.config import (ConfigError, Scenario, config_from_dict, config_to_dict,
                                    load_config)
from twinsim.harness.plot import line_chart
from twinsim.harness.readings import daily_reading
from twinsim.harness.scenario import (AlwaysActive, PeriodicSynchronized, UniformRandom,
                                      build_network, build_scenario, run_policy,
                                      split_publishers)
from twinsim.harness.sweeps import (aggregate, energy_seed, latency_point, schedule_minutes,
                                    summarize_rows, write_csv)

FAST = {"n_publishers": 4, "seeds": [0, 1],
        "ddpg": {"batch_size": 8, "buffer_capacity": 64, "hidden": [8],
                 "whatif_per_episode": 2},
        "train": {"episodes": 3, "eval_days": 2},
        "latency_sweep": {"volumes_bytes": [100_000, 1_000_000, 4_000_000],
                          "discovery_cutover_bytes": 1_000_000, "n_publishers": 6,
                          "train_episodes": 2, "scenarios": ["one_service"]},
        "energy_sweep": {"publisher_counts": [0, 6], "days": 3, "train_episodes": 2}}


def fast_cfg(**over):
    data = json.loads(json.dumps(FAST))
    data.update(over)
    return config_from_dict(data)


# -- publisher split and network building ------------------------------------

@pytest.mark.parametrize("n, d, want", [(600, 3, [200, 200, 200]), (601, 3, [201, 200, 200]),
                                        (10, 3, [4, 3, 3]), (7, 1, [7]), (0, 3, [0, 0, 0])])
def test_split_publishers(n, d, want):
    assert split_publishers(n, d) == want


def test_one_service_uses_single_domain():
    built = build_network(fast_cfg(scenario="one_service"), 0, n_publishers=5)
    assert built.domains == [0] and all(d.domain == 0 for d in built.devices)


def test_three_service_device_order_and_payloads():
    built = build_network(fast_cfg(), 0, n_publishers=7)
    assert [d.domain for d in built.devices] == [0, 0, 0, 1, 1, 2, 2]
    assert [d.id for d in built.devices] == list(range(7))
    assert all(d.payload_bytes == len(daily_reading(d.domain, d.id, 0)) for d in built.devices)


def test_publisher_count_bounds():
    with pytest.raises(ConfigError):
        build_network(fast_cfg(), 0, n_publishers=601)


def test_readings_are_deterministic_per_seed():
    assert daily_reading(1, 3, 5) == daily_reading(1, 3, 5)
    assert daily_reading(1, 3, 5) != daily_reading(1, 3, 6)
    assert daily_reading(2, 0, 0).startswith(b"device=0\n")


# -- config --------------------------------------------------------------------

def test_defaults_validate():
    cfg = config_from_dict({})
    assert cfg.scenario is Scenario.THREE_SERVICE and cfg.d_threshold_ms == 180


def test_unknown_key_names_its_path():
    with pytest.raises(ConfigError, match="ddpg.learning_rte"):
        config_from_dict({"ddpg": {"learning_rte": 0.01}})


@pytest.mark.parametrize("data", [{"n_publishers": 700}, {"seeds": []},
                                  {"latency_sweep": {"volumes_bytes": [3, 2]}},
                                  {"ddpg": {"tau": 2.0}}, {"scenario": "two_service"},
                                  {"env": {"initial_battery": [90, 80]}},
                                  {"n_publishers": "ten"}])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_config_roundtrip_and_yaml(tmp_path):
    cfg = fast_cfg()
    assert config_from_dict(config_to_dict(cfg)) == cfg
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(config_to_dict(cfg)))
    assert load_config(path) == cfg
    path.write_text("a: [unclosed")
    with pytest.raises(ConfigError):
        load_config(path)


@pytest.mark.parametrize("name", ["desk.yaml", "full.yaml"])
def test_shipped_configs_validate(name):
    from pathlib import Path
    load_config(Path(__file__).resolve().parent.parent / "configs" / name)


# -- baselines -------------------------------------------------------------------

def test_baseline_actions():
    _, _, _, env = build_scenario(fast_cfg(), 0, 4)
    rng = np.random.default_rng(0)
    assert np.array_equal(PeriodicSynchronized().act(env.state(), rng), np.zeros(4))
    a = UniformRandom().act(env.state(), rng)
    assert a.shape == (4,) and np.all((a >= 0) & (a <= 1440))
    assert AlwaysActive().rest_state is DeviceState.ACTIVE


def test_always_active_uses_most_energy():
    cfg = fast_cfg()
    used = {}
    for pol in (PeriodicSynchronized(), AlwaysActive()):
        _, _, _, env = build_scenario(cfg, 0, 4, rest_state=pol.rest_state,
                                      sends_per_day=pol.sends_per_day, horizon_days=5)
        run_policy(env, pol, 3, np.random.default_rng(0))
        used[pol.name] = env.total_consumed()
    assert used["always_active"] > used["periodic"] > 0


# -- latency sweep -----------------------------------------------------------------

def test_smallest_point_is_discovery_only():
    cfg = fast_cfg()
    built = build_network(cfg, 0, n_publishers=6)
    send = schedule_minutes(PeriodicSynchronized(), built, 0, cfg)
    row = latency_point(built, send, 100_000, cfg, 0)
    assert row["mode"] == "discovery" and math.isnan(row["p95_data_ms"])
    assert row["p95_ms"] == row["p95_discovery_ms"] > 0


def test_zero_volume_rejected():
    cfg = fast_cfg()
    built = build_network(cfg, 0, n_publishers=6)
    with pytest.raises(ValueError):
        latency_point(built, np.zeros(6), 0, cfg, 0)


def test_periodic_delay_grows_with_volume():
    cfg = fast_cfg()
    send = schedule_minutes(PeriodicSynchronized(), build_network(cfg, 0, n_publishers=6), 0,
                            cfg)
    small = latency_point(build_network(cfg, 0, n_publishers=6), send, 1_000_000, cfg, 0,
                          mode="data")
    large = latency_point(build_network(cfg, 0, n_publishers=6), send, 4_000_000, cfg, 0,
                          mode="data")
    assert large["p95_ms"] >= small["p95_ms"]


def test_staggered_sends_beat_synchronized():
    cfg = fast_cfg(scenario="one_service")  # all six senders contend for one domain
    built = build_network(cfg, 0, n_publishers=6)
    same = latency_point(built, np.zeros(6), 4_000_000, cfg, 0, mode="data")
    built = build_network(cfg, 0, n_publishers=6)
    spread = latency_point(built, np.arange(6) * 60.0, 4_000_000, cfg, 0, mode="data")
    assert spread["p95_ms"] < same["p95_ms"]


def test_latency_point_deterministic():
    cfg = fast_cfg()
    rows = [latency_point(build_network(cfg, 3, n_publishers=6), np.zeros(6), 4_000_000, cfg, 3)
            for _ in range(2)]
    assert rows[0] == rows[1]


# -- energy sweep ------------------------------------------------------------------

def test_energy_zero_publishers_skips_normalization():
    rows = energy_seed(fast_cfg(), 0, 0)
    assert all(r["consumed_pct"] == 0 and r["normalized"] is None for r in rows)


def test_energy_normalized_peak_is_one():
    rows = energy_seed(fast_cfg(), 0, 6)
    norm = [r["normalized"] for r in rows]
    assert max(norm) == 1.0 and all(0 <= x <= 1 for x in norm)
    by = {r["policy"]: r["consumed_pct"] for r in rows}
    assert by["always_active"] == max(by.values())


# -- aggregation and output ------------------------------------------------------------

def test_aggregate():
    a = aggregate([1.0, 2.0, 3.0])
    assert a["mean"] == 2.0 and a["min"] == 1.0 and a["max"] == 3.0
    # t(0.975, 2) * 1 / sqrt(3)
    assert a["ci_hi"] - 2.0 == pytest.approx(4.302652729911275 / math.sqrt(3))
    one = aggregate([5.0])
    assert one["ci_lo"] == one["ci_hi"] == 5.0
    assert aggregate([])["n"] == 0


def test_summarize_rows_skips_missing():
    rows = [{"k": 1, "m": 2.0}, {"k": 1, "m": 4.0}, {"k": 2, "m": None}]
    (out,) = summarize_rows(rows, ("k",), "m")
    assert out["k"] == 1 and out["m_mean"] == 3.0 and out["m_n"] == 2


def test_write_csv_keeps_full_precision(tmp_path):
    write_csv(tmp_path / "x.csv", [{"a": 0.1 + 0.2, "b": "z"}])
    assert (tmp_path / "x.csv").read_text() == "a,b\n0.30000000000000004,z\n"


def test_line_chart_is_svg():
    svg = line_chart({"p": [(1, 2), (10, 3)]}, "t", "x", "y", logx=True)
    assert svg.startswith("<svg") and "polyline" in svg


# -- CLI -------------------------------------------------------------------------------

def write_cfg(tmp_path, **over):
    data = json.loads(json.dumps(FAST))
    data.update(over)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def test_cli_validate_config(tmp_path, capsys):
    assert cli.main(["validate-config", "--config", str(write_cfg(tmp_path))]) == 0
    assert "OK" in capsys.readouterr().out
    bad = tmp_path / "bad.yaml"
    bad.write_text("ddpg: {lr: 0.1}\n")
    assert cli.main(["--config", str(bad), "validate-config"]) == 1
    assert "ddpg.lr" in capsys.readouterr().err


def test_cli_usage_errors_exit_two():
    assert cli.main(["bogus"]) == 2
    assert cli.main([]) == 2


def test_cli_missing_config_file(tmp_path):
    assert cli.main(["validate-config", "--config", str(tmp_path / "none.yaml")]) == 1


def test_cli_train_and_replay(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg), "--seed", "7", "--out-dir", str(out)]) == 0
    for name in cli.RUN_FILES:
        assert (out / name).exists()
    capsys.readouterr()
    assert cli.main(["replay", str(out)]) == 0
    assert capsys.readouterr().out.strip() == "IDENTICAL"
    (out / "trace.log").write_text("tampered\n")
    assert cli.main(["replay", str(out)]) == 1
    assert "trace.log" in capsys.readouterr().out


def test_cli_resume_keeps_checkpoint_length(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    cli.main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "full")])
    cli.main(["train", "--config", str(cfg), "--resume", str(tmp_path / "full/checkpoint.bin"),
              "--out-dir", str(tmp_path / "again")])
    a = (tmp_path / "full/learning_curve.csv").read_bytes()
    assert a == (tmp_path / "again/learning_curve.csv").read_bytes()
    capsys.readouterr()
    assert cli.main(["replay", str(tmp_path / "again")]) == 1
    assert "resumed" in capsys.readouterr().err


def test_cli_sweeps_write_outputs(tmp_path, capsys):
    cfg = write_cfg(tmp_path, seeds=[0])
    assert cli.main(["latency-sweep", "--config", str(cfg), "--out-dir",
                     str(tmp_path / "lat")]) == 0
    assert cli.main(["energy-sweep", "--config", str(cfg), "--out-dir",
                     str(tmp_path / "en")]) == 0
    assert cli.main(["compare", "--config", str(cfg), "--out-dir", str(tmp_path / "cmp")]) == 0
    assert "uniform_random: mean=" in capsys.readouterr().out
    for d in ("lat", "en", "cmp"):
        assert any((tmp_path / d).glob("*.csv"))


def test_eval_config_uses_fixed_battery():
    cfg = fast_cfg()
    eval_cfg = dataclasses.replace(
        cfg, env=dataclasses.replace(cfg.env, initial_battery=cfg.train.eval_initial_battery))
    _, devices, _, _ = build_scenario(eval_cfg, 0, 4)
    assert all(d.battery_pct == 100.0 for d in devices)
