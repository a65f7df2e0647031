import pytest
from hypothesis import given, strategies as st

from twinsim.core import (MS_PER_DAY, DeviceState, DomainId, ValidationError, domain_topic,
                          make_device, minutes_to_simtime)


def test_fresh_device_defaults():
    d = make_device(7, DomainId.TRANSPORT_DOMAIN, 100.0, 1024)
    assert d.state is DeviceState.IDLE
    assert d.last_tx == 0
    assert d.domain == 1


def test_dead_device_is_valid():
    assert make_device(1, DomainId.AIR_Q_DOMAIN, 0.0, 512).battery_pct == 0.0


@pytest.mark.parametrize("battery", [101.0, -0.1])
def test_battery_out_of_range_rejected(battery):
    with pytest.raises(ValidationError):
        make_device(2, DomainId.SMART_FARM_DOMAIN, battery, 512)


def test_payload_must_be_positive():
    with pytest.raises(ValidationError):
        make_device(0, 0, 50.0, 0)


def test_battery_never_increases():
    d = make_device(0, 0, 50.0, 10)
    d.set_battery(40.0)
    with pytest.raises(ValidationError):
        d.set_battery(41.0)
    d.set_battery(-3.0)
    assert d.battery_pct == 0.0


@pytest.mark.parametrize("m, ms", [(0, 0), (1440, 86_400_000), (0.5, 30_000)])
def test_minutes_to_simtime(m, ms):
    assert minutes_to_simtime(m) == ms


def test_one_day_constant():
    assert MS_PER_DAY == minutes_to_simtime(1440)


def test_negative_minutes_rejected():
    with pytest.raises(ValidationError):
        minutes_to_simtime(-1)


@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_minutes_to_simtime_monotone(a, b):
    lo, hi = sorted((a, b))
    assert minutes_to_simtime(lo) <= minutes_to_simtime(hi)


def test_domain_topics_are_distinct_and_tagged():
    topics = [domain_topic(d) for d in DomainId]
    assert len({t.name for t in topics}) == 3
    assert [t.domain for t in topics] == [0, 1, 2]
