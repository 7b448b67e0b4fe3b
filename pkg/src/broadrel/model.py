"""Domain records shared by every analysis.

All timestamps are timezone-aware UTC datetimes truncated to the hour.
Records are frozen so they can be shared freely once built.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone, tzinfo
from typing import Optional
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

HOUR = timedelta(hours=1)


class Technology(str, enum.Enum):
    FIBER = "Fiber"
    CABLE = "Cable"
    CABLE_BUSINESS = "CableBusiness"
    DSL = "DSL"
    SATELLITE = "Satellite"
    WIRELESS = "Wireless"

    @classmethod
    def parse(cls, text: str) -> "Technology":
        key = re.sub(r"[\s_()-]", "", text).lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ValueError(f"unknown technology {text!r}")


@dataclass(frozen=True)
class UnitMeta:
    unit_id: str
    isp: str
    technology: Technology
    down_capacity: float  # bits/sec
    up_capacity: float  # bits/sec
    region: str = ""
    block_group: str = ""
    timezone: Optional[str] = None
    active: bool = True

    def __post_init__(self):
        if self.down_capacity <= 0 or self.up_capacity <= 0:
            raise ValueError(f"{self.unit_id}: capacities must be positive")

    @property
    def tier(self) -> str:
        """Service tier label, e.g. ``"50/10"`` (Mbps down/up)."""
        return f"{self.down_capacity / 1e6:g}/{self.up_capacity / 1e6:g}"


@dataclass(frozen=True)
class PingHourRaw:
    unit_id: str
    hour_start: datetime
    target: str
    probes_sent: int
    probes_lost: int
    rtt_summary: Optional[tuple[float, float, float]] = None  # (min, mean, max) usec

    def __post_init__(self):
        if self.probes_sent <= 0:
            raise ValueError("probes_sent must be positive")
        if not 0 <= self.probes_lost <= self.probes_sent:
            raise ValueError("probes_lost must lie in [0, probes_sent]")

    @property
    def loss_rate(self) -> float:
        return self.probes_lost / self.probes_sent


@dataclass(frozen=True)
class HourlyRecord:
    unit_id: str
    hour_start: datetime
    loss_rate: float
    bytes_down: Optional[int] = None  # None: no traffic counters for the hour
    bytes_up: Optional[int] = None
    dns_queries: int = 0
    dns_failures: int = 0
    dns_primary_failed: Optional[bool] = None
    dns_secondary_failed: Optional[bool] = None

    def __post_init__(self):
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ValueError(f"loss_rate {self.loss_rate} outside [0, 1]")
        if self.dns_failures > self.dns_queries:
            raise ValueError("dns_failures exceeds dns_queries")
        for v in (self.bytes_down, self.bytes_up):
            if v is not None and v < 0:
                raise ValueError("byte counters must be non-negative")

    @property
    def bytes_total(self) -> Optional[int]:
        if self.bytes_down is None or self.bytes_up is None:
            return None
        return self.bytes_down + self.bytes_up


@dataclass(frozen=True)
class Hop:
    hop_index: int
    responded: bool
    address: Optional[str] = None


@dataclass(frozen=True)
class TraceObservation:
    unit_id: str
    timestamp: datetime
    hops: tuple[Hop, ...]
    destination_reached: bool = False
    gateway_address: Optional[str] = None
    provider_prefixes: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        idx = [h.hop_index for h in self.hops]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("hop_index must be strictly increasing")


def as_utc_hour(ts: datetime) -> datetime:
    """Normalise to an aware UTC datetime truncated to the hour."""
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    else:
        ts = ts.astimezone(timezone.utc)
    return ts.replace(minute=0, second=0, microsecond=0)


_OFFSET_RE = re.compile(r"^(?:UTC|GMT)?\s*([+-])\s*(\d{1,2})(?::?(\d{2}))?$", re.I)


def parse_timezone(name: str) -> tzinfo:
    """Resolve an IANA zone name or a fixed offset such as ``UTC-5`` or ``+05:30``."""
    text = name.strip().replace("−", "-")
    if text.upper() in ("UTC", "GMT", "Z"):
        return timezone.utc
    m = _OFFSET_RE.match(text)
    if m:
        sign = -1 if m.group(1) == "-" else 1
        delta = timedelta(hours=int(m.group(2)), minutes=int(m.group(3) or 0))
        return timezone(sign * delta)
    try:
        return ZoneInfo(text)
    except (ZoneInfoNotFoundError, ValueError) as exc:
        raise ValueError(f"unknown timezone {name!r}") from exc
