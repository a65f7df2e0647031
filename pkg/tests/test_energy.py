import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twinsim.core import DeviceState, make_device
from twinsim.energy import (BatteryModel, EnergyLedger, advance, battery_at, energy_report,
                            normalize, total_consumption, wake_and_transmit)

# Coefficients used by the worked examples.
EXAMPLE = BatteryModel(sleep_drain_pct_per_min=0.001, idle_drain_pct_per_min=0.01,
                       active_drain_pct_per_min=0.05, wake_cost_pct=0.2, tx_cost_pct_per_kb=0.3)
NO_SLEEP_DRAIN = BatteryModel(sleep_drain_pct_per_min=0.0)


def dev(battery=100.0, state=DeviceState.IDLE, payload=1000):
    d = make_device(0, 0, battery, payload)
    d.state = state
    return d


def test_idle_minute():
    d = advance(dev(), 60_000, EXAMPLE)
    assert d.battery_pct == pytest.approx(99.99, abs=1e-12)


def test_sleep_without_drain_is_unchanged():
    assert advance(dev(state=DeviceState.SLEEP), 10**7, NO_SLEEP_DRAIN).battery_pct == 100.0


def test_drain_clamps_at_zero_and_sleeps():
    d = advance(dev(battery=0.005), 60_000, EXAMPLE)
    assert d.battery_pct == 0.0 and d.state is DeviceState.SLEEP


def test_negative_interval_rejected():
    with pytest.raises(ValueError):
        advance(dev(), -1, EXAMPLE)


def test_wake_and_transmit_one_kb():
    d, used = wake_and_transmit(dev(), EXAMPLE, 1000, now=42)
    assert d.battery_pct == pytest.approx(99.5, abs=1e-12)
    assert used == pytest.approx(0.5) and d.last_tx == 42


def test_zero_payload_pays_only_wake():
    d, used = wake_and_transmit(dev(), EXAMPLE, 0, now=1)
    assert used == pytest.approx(0.2)


def test_active_device_pays_no_wake():
    d, used = wake_and_transmit(dev(state=DeviceState.ACTIVE), EXAMPLE, 1000, now=1,
                                rest_state=DeviceState.ACTIVE)
    assert used == pytest.approx(0.3) and d.state is DeviceState.ACTIVE


def test_dead_device_skips():
    ledger = EnergyLedger()
    d = dev(battery=0.0)
    ledger.register(d)
    d, used = wake_and_transmit(d, EXAMPLE, 1000, now=5, ledger=ledger)
    assert used == 0.0 and ledger.skipped_tx[0] == 1 and d.last_tx == 0


def test_battery_at_midnight():
    assert battery_at(dev(), 0, EXAMPLE, 0, DeviceState.SLEEP) == pytest.approx(99.5)


def test_battery_at_after_sleeping_100_minutes():
    got = battery_at(dev(), 100 * 60_000, EXAMPLE, 0, DeviceState.SLEEP)
    assert got == pytest.approx(100 - 0.1 - 0.5, abs=1e-12)


def test_battery_at_time_invariant_without_drain():
    d = dev()
    assert battery_at(d, 0, NO_SLEEP_DRAIN, 0, DeviceState.SLEEP) == \
        battery_at(d, 700 * 60_000, NO_SLEEP_DRAIN, 0, DeviceState.SLEEP)


def test_battery_at_leaves_device_untouched():
    d = dev()
    battery_at(d, 5 * 60_000, EXAMPLE, 0, DeviceState.SLEEP)
    assert d.battery_pct == 100.0 and d.state is DeviceState.IDLE


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1440), st.floats(0, 1440), st.floats(1, 100))
def test_later_schedule_never_leaves_more_battery(a, b, level):
    lo, hi = sorted((a, b))
    d = dev(battery=level)
    assert battery_at(d, lo * 60_000, EXAMPLE, 0, DeviceState.SLEEP) >= \
        battery_at(d, hi * 60_000, EXAMPLE, 0, DeviceState.SLEEP)


def test_total_consumption():
    assert total_consumption(EnergyLedger()) == 0
    ledger = EnergyLedger(consumed_pct={0: 1.5, 1: 2.5})
    assert total_consumption(ledger) == 4.0


def test_conservation_oracle_random_sequences():
    rng = np.random.default_rng(9)
    model = BatteryModel()
    devices = [make_device(i, 0, float(rng.uniform(0, 100)), int(rng.integers(1, 5000)))
               for i in range(20)]
    ledger = EnergyLedger.for_devices(devices)
    initial = {d.id: d.battery_pct for d in devices}
    previous_total = 0.0
    for t in range(2000):
        d = devices[int(rng.integers(len(devices)))]
        if rng.random() < 0.5:
            d.state = [DeviceState.IDLE, DeviceState.SLEEP, DeviceState.ACTIVE][
                int(rng.integers(3))] if d.battery_pct > 0 else d.state
            advance(d, float(rng.uniform(0, 3e6)), model, ledger)
        else:
            wake_and_transmit(d, model, float(rng.uniform(0, 4000)), t, ledger)
        for x in devices:
            assert abs(initial[x.id] - x.battery_pct - ledger.consumed_pct[x.id]) < 1e-9
        total = total_consumption(ledger)
        assert total >= previous_total
        previous_total = total
    report = energy_report(ledger, devices)
    assert report["total_consumed_pct"] == pytest.approx(
        sum(initial[d.id] - d.battery_pct for d in devices), abs=1e-9)


@pytest.mark.parametrize("values, ref, want", [([2, 4, 8], 8, [0.25, 0.5, 1.0]),
                                               ([0], 5, [0.0])])
def test_normalize(values, ref, want):
    assert normalize(values, ref) == want


def test_normalize_zero_reference():
    with pytest.raises(ValueError):
        normalize([1.0], 0)


def test_model_validation():
    with pytest.raises(ValueError):
        BatteryModel(sleep_drain_pct_per_min=0.1, idle_drain_pct_per_min=0.01)
    with pytest.raises(ValueError):
        BatteryModel(wake_cost_pct=-1)


def test_default_daily_budget_is_about_one_to_two_percent():
    model = BatteryModel()
    d = dev(state=DeviceState.SLEEP, payload=1000)
    advance(d, 600 * 60_000, model)
    wake_and_transmit(d, model, 1000, 600 * 60_000)
    advance(d, 840 * 60_000, model)
    assert 1.0 <= 100 - d.battery_pct <= 2.0
