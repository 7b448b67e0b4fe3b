"""Deterministic synthetic gateway traces.

The generator emits the same raw rows the ingest path reads (per-target ping
counts, traffic counters, per-server DNS counts) and derives the in-memory
records from them with the ingest functions, so writing a trace to disk and
loading it back reproduces the records exactly.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional, Sequence

from .ingest import (
    DnsHourRaw,
    TrafficHourRaw,
    assemble_records,
    ingest_dns,
    ingest_pings,
    ingest_traffic,
    write_dns,
    write_pings,
    write_traffic,
    write_units,
)
from .model import HourlyRecord, PingHourRaw, Technology, UnitMeta, parse_timezone

EPOCH = datetime(2015, 1, 1, tzinfo=timezone.utc)
TIMEZONES = ("America/New_York", "America/Chicago", "America/Denver", "America/Los_Angeles")


@dataclass(frozen=True)
class LossProcess:
    """Per-hour loss model.

    ``chronic_levels``/``chronic_weights`` pick a unit's background loss level;
    each hour is lossy with probability ``lossy_prob`` and then draws
    uniformly from ``[0, 2 * level]``. Outage episodes start with
    probability ``event_rate`` per hour, last a geometric number of hours
    with mean ``event_mean_hours`` and draw loss from ``event_loss``.
    """

    chronic_levels: tuple[float, ...] = (0.0, 0.007, 0.015, 0.03)
    chronic_weights: tuple[float, ...] = (0.55, 0.15, 0.15, 0.15)
    lossy_prob: float = 0.5
    clean_noise: float = 0.0002
    event_rate: float = 0.001
    event_mean_hours: float = 2.0
    event_loss: tuple[float, float] = (0.05, 1.0)

    @classmethod
    def zero(cls) -> "LossProcess":
        return cls(chronic_levels=(0.0,), chronic_weights=(1.0,), clean_noise=0.0, event_rate=0.0)


@dataclass(frozen=True)
class IspProfile:
    name: str
    technology: Technology
    tiers: tuple[tuple[float, float], ...]  # (down, up) Mbps
    event_scale: float = 1.0
    dns_p_one: float = 0.001
    dns_p_two: float = 0.001


DEFAULT_ISPS = (
    IspProfile("FiberNet", Technology.FIBER, ((50, 25), (100, 100)), 0.4, 0.0005, 0.0005),
    IspProfile("CableOne", Technology.CABLE, ((25, 5), (50, 10)), 1.0, 0.0005, 0.005),
    IspProfile("CableTwo", Technology.CABLE, ((25, 5), (50, 10)), 1.5, 0.002, 0.001),
    IspProfile("DslCo", Technology.DSL, ((6, 1), (12, 1)), 2.0, 0.003, 0.002),
    IspProfile("SkyLink", Technology.SATELLITE, ((12, 3),), 12.0, 0.004, 0.004),
)


@dataclass(frozen=True)
class InjectedOutage:
    unit: str
    start_hour: int  # offset from the trace start
    duration: int
    loss: float


@dataclass
class SynthSpec:
    units: int = 40
    hours: int = 24 * 28
    seed: int = 0
    start: datetime = EPOCH
    loss: LossProcess = field(default_factory=LossProcess)
    isps: Sequence[IspProfile] = DEFAULT_ISPS
    outages: Sequence[InjectedOutage] = ()
    regions: int = 2
    blocks_per_region: int = 3
    targets: int = 2
    probes_per_hour: int = 600
    missing_prob: float = 0.005
    loss_sensitivity: float = 8.0  # relative demand drop per unit of mean loss
    dns_queries: int = 10

    def __post_init__(self):
        if self.hours <= 0:
            raise ValueError("hours must be positive")
        if self.units <= 0:
            raise ValueError("units must be positive")

    @classmethod
    def from_dict(cls, d) -> "SynthSpec":
        d = dict(d)
        if "loss" in d:
            lp = {k: tuple(v) if isinstance(v, list) else v for k, v in d["loss"].items()}
            d["loss"] = LossProcess(**lp)
        if "outages" in d:
            d["outages"] = tuple(InjectedOutage(**o) for o in d["outages"])
        if "isps" in d:
            d["isps"] = tuple(
                IspProfile(
                    i["name"],
                    Technology.parse(i["technology"]),
                    tuple(tuple(t) for t in i["tiers"]),
                    i.get("event_scale", 1.0),
                    i.get("dns_p_one", 0.001),
                    i.get("dns_p_two", 0.001),
                )
                for i in d["isps"]
            )
        if "start" in d:
            d["start"] = datetime.fromisoformat(d["start"].replace("Z", "+00:00"))
        return cls(**d)


@dataclass
class SyntheticTrace:
    units: list[UnitMeta]
    records: list[HourlyRecord]
    pings: list[PingHourRaw]
    traffic: list[TrafficHourRaw]
    dns: list[DnsHourRaw]

    def write(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_units(d / "units.csv", self.units)
        write_pings(d / "pings.csv", self.pings)
        write_traffic(d / "traffic.csv", self.traffic)
        write_dns(d / "dns.csv", self.dns)


def _geometric(rng: random.Random, mean: float) -> int:
    if mean <= 1:
        return 1
    p = 1.0 / mean
    return 1 + int(math.log(1.0 - rng.random()) / math.log(1.0 - p))


def _diurnal(local_hour: int) -> float:
    # low overnight, peak in the evening
    return 0.35 + 0.65 * (0.5 - 0.5 * math.cos(2 * math.pi * ((local_hour - 3) % 24) / 24)) ** 1.5


def generate_synthetic(spec: SynthSpec) -> SyntheticTrace:
    rng = random.Random(spec.seed)
    lp = spec.loss
    metas = []
    for i in range(spec.units):
        isp = spec.isps[i % len(spec.isps)]
        region = rng.randrange(spec.regions)
        down, up = rng.choice(isp.tiers)
        metas.append(
            UnitMeta(
                unit_id=f"u{i + 1:04d}",
                isp=isp.name,
                technology=isp.technology,
                down_capacity=down * 1e6,
                up_capacity=up * 1e6,
                region=f"R{region + 1}",
                block_group=f"R{region + 1}-B{rng.randrange(spec.blocks_per_region) + 1}",
                timezone=TIMEZONES[region % len(TIMEZONES)],
                active=True,
            )
        )
    profile = {p.name: p for p in spec.isps}
    injected: dict[str, dict[int, float]] = {}
    for o in spec.outages:
        slot = injected.setdefault(o.unit, {})
        for h in range(o.start_hour, o.start_hour + o.duration):
            if 0 <= h < spec.hours:
                slot[h] = o.loss

    pings, traffic, dns = [], [], []
    for meta in metas:
        prof = profile[meta.isp]
        level = rng.choices(lp.chronic_levels, lp.chronic_weights)[0]
        event_rate = lp.event_rate * prof.event_scale
        tz = parse_timezone(meta.timezone)
        base_demand = rng.lognormvariate(math.log(150e6), 0.5)
        demand_factor = max(0.2, 1.0 - spec.loss_sensitivity * (level + event_rate * lp.event_mean_hours * 0.5))
        event_left = 0
        forced = injected.get(meta.unit_id, {})
        for h in range(spec.hours):
            hour = spec.start + timedelta(hours=h)
            if event_left == 0 and event_rate and rng.random() < event_rate:
                event_left = _geometric(rng, lp.event_mean_hours)
            if event_left:
                loss = rng.uniform(*lp.event_loss)
                event_left -= 1
            elif level and rng.random() < lp.lossy_prob:
                loss = rng.uniform(0.0, 2 * level)
            elif lp.clean_noise and rng.random() < 0.02:
                loss = rng.uniform(0.0, lp.clean_noise * 50)
            else:
                loss = 0.0
            if h in forced:
                loss = forced[h]
            elif rng.random() < spec.missing_prob:
                continue
            sent = spec.probes_per_hour
            for t in range(spec.targets):
                lost = math.ceil(loss * sent) if h in forced else round(loss * sent)
                if t and h not in forced:
                    lost += rng.randrange(3)
                pings.append(PingHourRaw(meta.unit_id, hour, f"target{t + 1}", sent, min(lost, sent)))

            local = hour.astimezone(tz).hour
            vol = base_demand * demand_factor * _diurnal(local) * rng.lognormvariate(0.0, 0.3)
            vol *= 1.0 - min(loss, 1.0)
            down_b = int(vol * 0.9)
            up_b = int(vol * 0.1)
            test_d = rng.randrange(1_000_000, 20_000_000)
            test_u = rng.randrange(100_000, 2_000_000)
            traffic.append(TrafficHourRaw(meta.unit_id, hour, down_b + test_d, up_b + test_u, test_d, test_u))

            q = spec.dns_queries
            u = rng.random()
            if u < prof.dns_p_two:
                fp, fs = q, q
            elif u < prof.dns_p_two + prof.dns_p_one:
                fp, fs = (q, 0) if rng.random() < 0.5 else (0, q)
            else:
                fp = fs = 0
            dns.append(DnsHourRaw(meta.unit_id, hour, "primary", q, fp))
            dns.append(DnsHourRaw(meta.unit_id, hour, "secondary", q, fs))

    loss_map = ingest_pings(pings)
    records = assemble_records(loss_map, ingest_traffic(traffic), ingest_dns(dns))
    return SyntheticTrace(metas, records, pings, traffic, dns)


def load_spec(path: Optional[str]) -> SynthSpec:
    if path is None:
        return SynthSpec()
    with open(path) as fh:
        return SynthSpec.from_dict(json.load(fh))
