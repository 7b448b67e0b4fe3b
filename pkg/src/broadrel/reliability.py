"""Failure detection and reliability metrics over hourly loss series.

A *series* is a sorted sequence of ``(hour, loss_rate)`` pairs for one unit.
Hours missing from the sequence are unobserved: they end any failure run in
progress and count as neither uptime nor downtime.

Ratios are kept as :class:`fractions.Fraction` so that the identities between
MTBF, MDT and availability hold exactly; rounding happens only when a report
is written.
"""

from __future__ import annotations

import bisect
import enum
import ipaddress
import logging
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence, Union

from .model import HOUR, TraceObservation, UnitMeta, parse_timezone

log = logging.getLogger(__name__)

HOURS_PER_YEAR = 8760
DEFAULT_THRESHOLDS = (0.01, 0.05, 0.10)
PEAK_WINDOW = (19, 23)  # local hours, half-open

HourKey = Union[datetime, int]
Series = Sequence[tuple[HourKey, float]]


class EmptyScopeError(ValueError):
    code = "empty-scope"


class NoTimezoneError(ValueError):
    code = "no-timezone"


class NotAFailureError(ValueError):
    code = "not-a-failure"


@dataclass(frozen=True)
class FailureEvent:
    unit_id: str
    start_hour: HourKey
    duration: int
    threshold: float
    max_loss: float


@dataclass(frozen=True)
class ReliabilityStats:
    scope: str
    threshold: float
    uptime_hours: int
    downtime_hours: int
    failures: int
    mtbf_hours: Optional[Fraction]
    mdt_hours: Optional[Fraction]
    availability: Fraction
    unavailability: Fraction
    units: int = 1

    @property
    def annual_downtime_hours(self) -> Fraction:
        return self.unavailability * HOURS_PER_YEAR


def _adjacent(a: HourKey, b: HourKey) -> bool:
    if isinstance(a, datetime):
        return b - a == HOUR
    return b - a == 1


def classify_failures(series: Series, threshold: float, unit_id: str = "") -> list[FailureEvent]:
    """Maximal runs of consecutive observed hours with loss at or above ``threshold``."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    events = []
    start = prev = None
    length = 0
    peak = 0.0
    for hour, loss in series:
        failing = loss >= threshold
        if failing and start is not None and _adjacent(prev, hour):
            length += 1
            peak = max(peak, loss)
        else:
            if start is not None:
                events.append(FailureEvent(unit_id, start, length, threshold, peak))
                start = None
            if failing:
                start, length, peak = hour, 1, loss
        prev = hour
    if start is not None:
        events.append(FailureEvent(unit_id, start, length, threshold, peak))
    return events


def _stats(scope, threshold, uptime, downtime, failures, units=1) -> ReliabilityStats:
    observed = uptime + downtime
    if observed == 0:
        raise EmptyScopeError(f"{scope or 'series'}: no observed hours")
    availability = Fraction(uptime, observed)
    if failures:
        mtbf = Fraction(uptime, failures)
        mdt = Fraction(downtime, failures)
    else:
        mtbf = mdt = None
    return ReliabilityStats(
        scope=scope,
        threshold=threshold,
        uptime_hours=uptime,
        downtime_hours=downtime,
        failures=failures,
        mtbf_hours=mtbf,
        mdt_hours=mdt,
        availability=availability,
        unavailability=1 - availability,
        units=units,
    )


def compute_stats(series: Series, threshold: float, scope: str = "") -> ReliabilityStats:
    """MTBF, MDT and availability for one series at one loss threshold."""
    events = classify_failures(series, threshold, scope)
    downtime = sum(e.duration for e in events)
    uptime = len(series) - downtime
    return _stats(scope, threshold, uptime, downtime, len(events))


def reduce_stats(stats: Sequence[ReliabilityStats], scope: str) -> ReliabilityStats:
    """Combine per-unit stats into one group row.

    Availability is the mean of the per-unit availabilities. Uptime, downtime
    and failures are pooled, so the group MTBF/MDT are pooled ratios and need
    not reproduce the averaged availability.
    """
    if not stats:
        raise EmptyScopeError(f"{scope}: no units")
    thresholds = {s.threshold for s in stats}
    if len(thresholds) != 1:
        raise ValueError("cannot pool stats computed at different thresholds")
    uptime = sum(s.uptime_hours for s in stats)
    downtime = sum(s.downtime_hours for s in stats)
    failures = sum(s.failures for s in stats)
    availability = sum((s.availability for s in stats), Fraction(0)) / len(stats)
    return ReliabilityStats(
        scope=scope,
        threshold=stats[0].threshold,
        uptime_hours=uptime,
        downtime_hours=downtime,
        failures=failures,
        mtbf_hours=Fraction(uptime, failures) if failures else None,
        mdt_hours=Fraction(downtime, failures) if failures else None,
        availability=availability,
        unavailability=1 - availability,
        units=sum(s.units for s in stats),
    )


GROUP_KEYS = ("unit", "isp", "technology", "tier", "year", "region")


def group_value(meta: UnitMeta, key: str) -> str:
    if key == "unit":
        return meta.unit_id
    if key == "isp":
        return meta.isp
    if key == "technology":
        return meta.technology.value
    if key == "tier":
        return meta.tier
    if key == "region":
        return meta.region
    raise ValueError(f"unknown grouping key {key!r}")


def split_by_year(series: Series) -> dict[int, list]:
    out: dict[int, list] = defaultdict(list)
    for hour, loss in series:
        out[hour.year].append((hour, loss))
    return dict(out)


def aggregate_stats(
    series_by_unit: Mapping[str, Series],
    metas: Mapping[str, UnitMeta],
    key: str,
    threshold: float,
    *,
    peak: bool = False,
    peak_window: tuple[int, int] = PEAK_WINDOW,
) -> dict[str, ReliabilityStats]:
    """Group-level stats keyed by group value.

    ``key="year"`` splits each unit's series by UTC calendar year, so one unit
    contributes to every year it reported in. With ``peak=True`` each series is
    first restricted to local peak hours; units without a timezone are left
    out with a warning.
    """
    if key not in GROUP_KEYS:
        raise ValueError(f"unknown grouping key {key!r}")
    per_group: dict[str, list[ReliabilityStats]] = defaultdict(list)
    for uid in sorted(series_by_unit):
        if uid not in metas:
            raise KeyError(f"unit {uid} has no metadata")
        meta = metas[uid]
        series = series_by_unit[uid]
        if peak:
            try:
                series = peak_hour_filter(series, meta, peak_window)
            except NoTimezoneError:
                log.warning("unit %s has no timezone; excluded from peak analysis", uid)
                continue
        if key == "year":
            parts = {str(y): s for y, s in split_by_year(series).items()}
        else:
            parts = {group_value(meta, key): series}
        for group, part in parts.items():
            if part:
                per_group[group].append(compute_stats(part, threshold, uid))
    suffix = "|peak" if peak else ""
    return {
        g: reduce_stats(stats, f"{key}={g}{suffix}")
        for g, stats in sorted(per_group.items())
    }


def peak_hour_filter(series: Series, unit: UnitMeta, window: tuple[int, int] = PEAK_WINDOW) -> list:
    """Keep hours whose local start time falls in ``[window[0]:00, window[1]:00)``."""
    if not unit.timezone:
        raise NoTimezoneError(f"unit {unit.unit_id} has no timezone")
    tz = parse_timezone(unit.timezone)
    lo, hi = window
    return [(h, loss) for h, loss in series if lo <= h.astimezone(tz).hour < hi]


# -- fine-grained probes ----------------------------------------------------


@dataclass(frozen=True)
class ProbeOutcome:
    t: float  # seconds
    answered: bool


def probes_from_rtts(samples: Iterable[tuple[float, Optional[float]]], timeout: float) -> list[ProbeOutcome]:
    """Turn ``(t, rtt)`` samples into outcomes; no reply or rtt above ``timeout`` is a loss."""
    return [ProbeOutcome(t, rtt is not None and rtt <= timeout) for t, rtt in samples]


def windowed_availability(
    probes: Sequence[ProbeOutcome], window: float, threshold: float, cadence: float = 5.0
) -> Fraction:
    """Fraction of windows whose loss rate is below ``threshold``.

    Windows are consecutive ``window``-second intervals starting at the first
    probe; windows without probes are skipped.
    """
    if window < cadence:
        raise ValueError(f"window {window}s is shorter than probe cadence {cadence}s")
    if not probes:
        raise EmptyScopeError("no probes")
    t0 = min(p.t for p in probes)
    sent: dict[int, int] = defaultdict(int)
    lost: dict[int, int] = defaultdict(int)
    for p in probes:
        w = int((p.t - t0) // window)
        sent[w] += 1
        if not p.answered:
            lost[w] += 1
    good = sum(1 for w in sent if Fraction(lost[w], sent[w]) < Fraction(threshold))
    return Fraction(good, len(sent))


def availability_by_window(
    probes: Sequence[ProbeOutcome], windows: Iterable[float], threshold: float, cadence: float = 5.0
) -> dict[float, Fraction]:
    return {w: windowed_availability(probes, w, threshold, cadence) for w in windows}


# -- loss distributions -----------------------------------------------------


@dataclass(frozen=True)
class LossCdf:
    group: str
    points: tuple[tuple[float, Fraction], ...]  # (loss, cumulative fraction of hours <= loss)
    exceedance: dict  # threshold -> fraction of hours with loss >= threshold
    hours: int

    def at(self, loss: float) -> Fraction:
        xs = [p[0] for p in self.points]
        i = bisect.bisect_right(xs, loss)
        return self.points[i - 1][1] if i else Fraction(0)


def loss_cdf(
    losses_by_group: Mapping[str, Sequence[float]], thresholds: Sequence[float] = DEFAULT_THRESHOLDS
) -> dict[str, LossCdf]:
    """Empirical CDF of hourly loss rates for each group."""
    out = {}
    for group in sorted(losses_by_group):
        values = sorted(losses_by_group[group])
        n = len(values)
        if n == 0:
            raise EmptyScopeError(f"group {group} has no hours")
        points = []
        for i, v in enumerate(values):
            if i + 1 < n and values[i + 1] == v:
                continue
            points.append((v, Fraction(i + 1, n)))
        exceed = {t: Fraction(n - bisect.bisect_left(values, t), n) for t in thresholds}
        out[group] = LossCdf(group, tuple(points), exceed, n)
    return out


def losses_by_group(series_by_unit: Mapping[str, Series], metas: Mapping[str, UnitMeta], key: str) -> dict:
    out: dict[str, list[float]] = defaultdict(list)
    for uid in sorted(series_by_unit):
        meta = metas[uid]
        if key == "year":
            for hour, loss in series_by_unit[uid]:
                out[str(hour.year)].append(loss)
        else:
            out[group_value(meta, key)].extend(loss for _, loss in series_by_unit[uid])
    return dict(out)


# -- traceroute reachability ------------------------------------------------


class ReachabilityClass(str, enum.Enum):
    REACHED_LAN_GATEWAY = "ReachedLanGateway"
    REACHED_PROVIDER_NETWORK = "ReachedProviderNetwork"
    LEFT_PROVIDER_NETWORK = "LeftProviderNetwork"


def _in_prefixes(addr, nets) -> bool:
    return any(addr.version == n.version and addr in n for n in nets)


def classify_reachability(obs: TraceObservation) -> ReachabilityClass:
    """How far a failed traceroute got.

    The gateway is ``obs.gateway_address`` or, when unknown, hop 1. Private
    and link-local addresses count as the home side. A responding hop that is
    neither home-side nor inside the provider prefixes means the probes left
    the provider's network. A trace where nothing past the gateway answered,
    including one where nothing answered at all, is a LAN-gateway failure.
    """
    if obs.destination_reached:
        raise NotAFailureError("traceroute reached its destination")
    nets = [ipaddress.ip_network(p, strict=False) for p in obs.provider_prefixes]
    reached_provider = False
    for hop in obs.hops:
        if not hop.responded or hop.address is None:
            continue
        if obs.gateway_address is not None:
            if hop.address == obs.gateway_address:
                continue
        elif hop.hop_index == 1:
            continue
        addr = ipaddress.ip_address(hop.address)
        if _in_prefixes(addr, nets):
            reached_provider = True
        elif addr.is_private or addr.is_link_local:
            continue
        else:
            return ReachabilityClass.LEFT_PROVIDER_NETWORK
    if reached_provider:
        return ReachabilityClass.REACHED_PROVIDER_NETWORK
    return ReachabilityClass.REACHED_LAN_GATEWAY


def reachability_distribution(observations: Iterable[TraceObservation]) -> dict[ReachabilityClass, Fraction]:
    counts = {c: 0 for c in ReachabilityClass}
    n = 0
    for obs in observations:
        counts[classify_reachability(obs)] += 1
        n += 1
    if n == 0:
        raise EmptyScopeError("no observations")
    return {c: Fraction(k, n) for c, k in counts.items()}
