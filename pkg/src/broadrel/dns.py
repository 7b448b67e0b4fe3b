"""DNS service availability, separated from access-link availability."""

from __future__ import annotations

import enum
from collections import Counter, defaultdict
from dataclasses import dataclass
from datetime import datetime
from fractions import Fraction
from typing import Iterable, Mapping, Optional

LINK_LOSS_MAX = 0.01
MAJORITY = Fraction(1, 2)


class DnsStatus(str, enum.Enum):
    ZERO_FAILED = "ZeroFailed"
    ONE_FAILED = "OneFailed"
    TWO_FAILED = "TwoFailed"
    EXCLUDED = "Excluded"


@dataclass(frozen=True)
class ServerCounts:
    queries: int
    failures: int

    def __post_init__(self):
        if not 0 <= self.failures <= self.queries:
            raise ValueError("failures must lie in [0, queries]")


@dataclass(frozen=True)
class DnsHour:
    unit_id: str
    hour_start: datetime
    primary: ServerCounts
    secondary: ServerCounts
    link_loss_rate: Optional[float]


class NoDataError(ValueError):
    code = "no-data"


def dns_hour_status(h: DnsHour, link_loss_max: float = LINK_LOSS_MAX) -> tuple[DnsStatus, Optional[str]]:
    """Classify one hour; returns ``(status, exclusion_reason)``.

    A server is down when strictly more than half its queries failed. Hours
    with link loss above ``link_loss_max`` are excluded so that access-link
    trouble is not counted against DNS; so are hours where a server got no
    queries, since its state is unknown.
    """
    if h.link_loss_rate is None:
        return DnsStatus.EXCLUDED, "no-link-data"
    if h.link_loss_rate > link_loss_max:
        return DnsStatus.EXCLUDED, "link-loss"
    if h.primary.queries == 0 or h.secondary.queries == 0:
        return DnsStatus.EXCLUDED, "no-queries"
    down = sum(Fraction(s.failures, s.queries) > MAJORITY for s in (h.primary, h.secondary))
    return (DnsStatus.ZERO_FAILED, DnsStatus.ONE_FAILED, DnsStatus.TWO_FAILED)[down], None


@dataclass(frozen=True)
class DnsProbabilities:
    isp: str
    p_one: Fraction
    p_two: Fraction
    hours_used: int
    hours_excluded: int
    exclusions: dict

    @property
    def simultaneous_more_likely(self) -> bool:
        """Both servers failing together is more frequent than exactly one failing."""
        return self.p_two > self.p_one


def dns_failure_probabilities(
    hours_by_isp: Mapping[str, Iterable[DnsHour]], link_loss_max: float = LINK_LOSS_MAX
) -> dict[str, DnsProbabilities]:
    """Per-ISP probability that exactly one, or both, servers are down in an hour."""
    out = {}
    for isp in sorted(hours_by_isp):
        counts: Counter = Counter()
        reasons: Counter = Counter()
        for h in hours_by_isp[isp]:
            status, reason = dns_hour_status(h, link_loss_max)
            counts[status] += 1
            if reason:
                reasons[reason] += 1
        used = counts[DnsStatus.ZERO_FAILED] + counts[DnsStatus.ONE_FAILED] + counts[DnsStatus.TWO_FAILED]
        if used == 0:
            raise NoDataError(f"{isp}: every hour excluded")
        out[isp] = DnsProbabilities(
            isp=isp,
            p_one=Fraction(counts[DnsStatus.ONE_FAILED], used),
            p_two=Fraction(counts[DnsStatus.TWO_FAILED], used),
            hours_used=used,
            hours_excluded=counts[DnsStatus.EXCLUDED],
            exclusions=dict(sorted(reasons.items())),
        )
    return out


def build_dns_hours(
    dns: Mapping[tuple[str, datetime], Mapping[str, tuple[int, int]]],
    loss: Mapping[tuple[str, datetime], float],
    isp_of: Mapping[str, str],
) -> dict[str, list[DnsHour]]:
    """Group ingested DNS counters by ISP, attaching the hour's link loss.

    A server with no row for the hour is treated as having zero queries.
    """
    out: dict[str, list[DnsHour]] = defaultdict(list)
    for key in sorted(dns):
        uid, hour = key
        if uid not in isp_of:
            continue
        servers = dns[key]
        p = servers.get("primary", (0, 0))
        s = servers.get("secondary", (0, 0))
        out[isp_of[uid]].append(
            DnsHour(uid, hour, ServerCounts(*p), ServerCounts(*s), loss.get(key))
        )
    return dict(out)
