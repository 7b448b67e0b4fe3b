from datetime import datetime, timedelta, timezone
from fractions import Fraction
from zoneinfo import ZoneInfo

import pytest
from hypothesis import given, settings, strategies as st

from broadrel.model import Hop, TraceObservation
from broadrel.reliability import (
    EmptyScopeError,
    NoTimezoneError,
    ProbeOutcome,
    ReachabilityClass,
    aggregate_stats,
    availability_by_window,
    classify_failures,
    classify_reachability,
    compute_stats,
    loss_cdf,
    peak_hour_filter,
    probes_from_rtts,
    reachability_distribution,
    reduce_stats,
    windowed_availability,
)
from conftest import T0, hourly, unit


def test_nine_hour_fixture(nine_hour):
    events = classify_failures(nine_hour, 0.05, "u1")
    assert len(events) == 1
    e = events[0]
    assert e.start_hour == T0 + timedelta(hours=6) and e.duration == 2
    assert e.max_loss == 0.06
    s = compute_stats(nine_hour, 0.05)
    assert (s.uptime_hours, s.downtime_hours, s.failures) == (7, 2, 1)
    assert s.mtbf_hours == 7 and s.mdt_hours == 2
    assert s.availability == Fraction(7, 9)


def test_nine_hour_at_one_percent(nine_hour):
    s = compute_stats(nine_hour, 0.01)
    assert s.failures == 2 and s.downtime_hours == 3
    assert s.mtbf_hours == 3 and s.mdt_hours == Fraction(3, 2)


def test_threshold_is_inclusive():
    assert len(classify_failures(hourly([0.05]), 0.05)) == 1
    assert classify_failures(hourly([0.0499]), 0.05) == []


def test_gap_splits_a_run():
    series = hourly([0.2, 0.2, 0.2], skip={1})
    events = classify_failures(series, 0.1)
    assert [e.duration for e in events] == [1, 1]
    s = compute_stats(series, 0.1)
    assert s.uptime_hours + s.downtime_hours == 2


def test_no_failures_has_undefined_mtbf():
    s = compute_stats(hourly([0, 0, 0]), 0.01)
    assert s.failures == 0 and s.mtbf_hours is None and s.availability == 1


def test_empty_series_raises():
    with pytest.raises(EmptyScopeError) as err:
        compute_stats([], 0.05)
    assert err.value.code == "empty-scope"


def test_bad_threshold():
    with pytest.raises(ValueError):
        classify_failures(hourly([0]), 0)


def test_integer_hour_keys():
    series = [(0, 0.0), (1, 0.2), (2, 0.2), (4, 0.2)]
    assert [e.duration for e in classify_failures(series, 0.1)] == [2, 1]


def test_pooled_mtbf_differs_from_mean_availability():
    # a: 48 up, one 2 h failure; b: 2 up, one 2 h failure
    a = compute_stats(hourly([0] * 48 + [0.5, 0.5]), 0.1, "a")
    b = compute_stats(hourly([0.0, 0.0, 0.5, 0.5]), 0.1, "b")
    g = reduce_stats([a, b], "group")
    assert g.failures == 2 and g.uptime_hours == 50
    assert g.mtbf_hours == 25
    assert g.availability == (a.availability + b.availability) / 2


def test_annual_downtime():
    s = compute_stats(hourly([0] * 99 + [1.0]), 0.1)
    assert s.annual_downtime_hours == Fraction(8760, 100)


def test_aggregate_by_isp_and_year():
    metas = {"a": unit("a", isp="X"), "b": unit("b", isp="Y")}
    series = {
        "a": hourly([0, 0.2, 0, 0]),
        "b": hourly([0, 0, 0, 0], start=datetime(2016, 12, 31, 22, tzinfo=timezone.utc)),
    }
    by_isp = aggregate_stats(series, metas, "isp", 0.1)
    assert by_isp["X"].availability == Fraction(3, 4) and by_isp["Y"].availability == 1
    assert by_isp["X"].scope == "isp=X"
    by_year = aggregate_stats(series, metas, "year", 0.1)
    assert sorted(by_year) == ["2015", "2016", "2017"]
    assert by_year["2016"].uptime_hours == 2


def test_aggregate_rejects_unknown_key():
    with pytest.raises(ValueError):
        aggregate_stats({}, {}, "colour", 0.1)


def test_peak_filter_uses_local_time():
    m = unit("a", timezone="America/New_York")
    series = hourly([0] * 48)
    kept = peak_hour_filter(series, m)
    assert len(kept) == 8
    ny = ZoneInfo("America/New_York")
    assert all(19 <= h.astimezone(ny).hour < 23 for h, _ in kept)
    with pytest.raises(NoTimezoneError):
        peak_hour_filter(series, unit("b"))


def test_peak_aggregate_skips_units_without_timezone():
    metas = {"a": unit("a", timezone="UTC"), "b": unit("b")}
    series = {"a": hourly([0] * 24), "b": hourly([1.0] * 24)}
    out = aggregate_stats(series, metas, "isp", 0.1, peak=True)
    assert out["A"].units == 1 and out["A"].uptime_hours == 4
    assert out["A"].scope == "isp=A|peak"


def test_windowed_availability():
    probes = [ProbeOutcome(t * 5.0, t not in (3, 4, 5)) for t in range(24)]
    # 2-minute windows hold 24 probes; 3 lost = 12.5%
    assert windowed_availability(probes, 120, 0.10) == 0
    assert windowed_availability(probes, 60, 0.2) == Fraction(1, 2)
    outs = availability_by_window(probes, [60, 120], 0.10)
    assert outs[60] == Fraction(1, 2) and outs[120] == 0


def test_probes_from_rtts_timeout():
    probes = probes_from_rtts([(0, 0.1), (5, None), (10, 3.5)], timeout=2.0)
    assert [p.answered for p in probes] == [True, False, False]


def test_loss_cdf():
    cdf = loss_cdf({"g": [0, 0, 0.02, 0.1]}, thresholds=(0.01, 0.1))["g"]
    assert cdf.points == ((0, Fraction(1, 2)), (0.02, Fraction(3, 4)), (0.1, Fraction(1)))
    assert cdf.exceedance == {0.01: Fraction(1, 2), 0.1: Fraction(1, 4)}
    assert cdf.at(0.05) == Fraction(3, 4) and cdf.at(-1) == 0


def _trace(*hops, gateway=None, prefixes=("96.120.0.0/16",)):
    return TraceObservation(
        "u", T0, tuple(Hop(i + 1, a is not None, a) for i, a in enumerate(hops)),
        gateway_address=gateway, provider_prefixes=prefixes,
    )


def test_reachability_classes():
    assert classify_reachability(_trace("192.168.1.1", None, None)) is ReachabilityClass.REACHED_LAN_GATEWAY
    assert classify_reachability(_trace("192.168.1.1", "96.120.4.1", None)) is ReachabilityClass.REACHED_PROVIDER_NETWORK
    assert classify_reachability(_trace("192.168.1.1", "10.0.0.1", "8.8.8.8")) is ReachabilityClass.LEFT_PROVIDER_NETWORK
    assert classify_reachability(_trace(None, None)) is ReachabilityClass.REACHED_LAN_GATEWAY


def test_reachability_distribution_sums_to_one():
    obs = [_trace("192.168.1.1"), _trace("192.168.1.1", "96.120.4.1"), _trace("192.168.1.1", "8.8.8.8")]
    dist = reachability_distribution(obs)
    assert sum(dist.values()) == 1
    assert all(v == Fraction(1, 3) for v in dist.values())


# -- properties ---------------------------------------------------------------

losses = st.one_of(st.just(0.0), st.floats(0, 1, allow_nan=False))
series_st = st.lists(st.tuples(losses, st.booleans()), min_size=1, max_size=60).map(
    lambda xs: [(i, x) for i, (x, keep) in enumerate(xs) if keep or i == 0]
)


@given(series_st, st.sampled_from([0.01, 0.05, 0.10]))
def test_hours_partition(series, t):
    s = compute_stats(series, t)
    assert s.uptime_hours + s.downtime_hours == len(series)
    assert 0 <= s.availability <= 1
    if s.failures:
        assert s.availability == s.mtbf_hours / (s.mtbf_hours + s.mdt_hours)


@given(series_st)
def test_monotone_in_threshold(series):
    a = [compute_stats(series, t).availability for t in (0.01, 0.05, 0.10)]
    assert a == sorted(a)


@settings(max_examples=50)
@given(series_st, st.sampled_from([0.01, 0.05, 0.10]))
def test_events_are_maximal_runs(series, t):
    hours = dict(series)
    for e in classify_failures(series, t):
        run = range(e.start_hour, e.start_hour + e.duration)
        assert all(h in hours and hours[h] >= t for h in run)
        assert not (e.start_hour - 1 in hours and hours[e.start_hour - 1] >= t)
        end = e.start_hour + e.duration
        assert not (end in hours and hours[end] >= t)
