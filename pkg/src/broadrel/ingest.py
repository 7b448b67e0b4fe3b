"""Read and clean gateway telemetry.

Input files are delimited text with a header row::

    pings.csv    unit_id,dtime,target,probes_sent,probes_lost
    traffic.csv  unit_id,dtime,bytes_down_total,bytes_up_total,bytes_down_test,bytes_up_test
    dns.csv      unit_id,dtime,server_role,queries,failures
    units.csv    unit_id,isp,technology,down_kbps,up_kbps,region,block_group,timezone,active

Rows that cannot be used are rejected and logged to an :class:`IngestReport`
with their line number; nothing is silently dropped.
"""

from __future__ import annotations

import csv
import ipaddress
import json
import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .model import HourlyRecord, PingHourRaw, Technology, UnitMeta, as_utc_hour

log = logging.getLogger(__name__)

PING_COLUMNS = ("unit_id", "dtime", "target", "probes_sent", "probes_lost")
TRAFFIC_COLUMNS = (
    "unit_id",
    "dtime",
    "bytes_down_total",
    "bytes_up_total",
    "bytes_down_test",
    "bytes_up_test",
)
DNS_COLUMNS = ("unit_id", "dtime", "server_role", "queries", "failures")
UNIT_COLUMNS = (
    "unit_id",
    "isp",
    "technology",
    "down_kbps",
    "up_kbps",
    "region",
    "block_group",
    "timezone",
    "active",
)

HourKey = tuple[str, datetime]


class IngestError(Exception):
    """An input file is missing or lacks a required column."""

    def __init__(self, path, message: str, column: Optional[str] = None):
        self.path = str(path)
        self.column = column
        where = f"{self.path}" + (f" (column {column!r})" if column else "")
        super().__init__(f"{where}: {message}")


@dataclass
class IngestReport:
    """Rejected and flagged rows, one entry per row."""

    entries: list[dict] = field(default_factory=list)

    def add(self, source, line: int, action: str, reason: str, **extra) -> None:
        entry = {"file": str(source), "line": line, "action": action, "reason": reason}
        entry.update(extra)
        self.entries.append(entry)
        log.warning("%s:%d %s (%s)", source, line, action, reason)

    def extend(self, other: "IngestReport") -> None:
        self.entries.extend(other.entries)

    def rejected(self) -> list[dict]:
        return [e for e in self.entries if e["action"] == "rejected"]

    def flagged(self) -> list[dict]:
        return [e for e in self.entries if e["action"] == "flagged"]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.entries)

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl())


# -- parsing helpers --------------------------------------------------------


def parse_time(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return as_utc_hour(datetime.fromisoformat(text))


def format_time(ts: datetime) -> str:
    return as_utc_hour(ts).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "t", "yes", "y"):
        return True
    if t in ("0", "false", "f", "no", "n"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _count(text: str) -> int:
    v = int(text)
    if v < 0:
        raise ValueError("negative count")
    return v


def read_table(path, columns: Sequence[str]) -> Iterable[tuple[int, dict]]:
    """Yield ``(line_number, row)`` pairs; header is line 1."""
    path = Path(path)
    if not path.exists():
        raise IngestError(path, "input file not found")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in columns:
            if col not in header:
                raise IngestError(path, "required column missing", column=col)
        for row in reader:
            yield reader.line_num, row


# -- pings ------------------------------------------------------------------


def parse_ping_rows(path, report: IngestReport) -> list[PingHourRaw]:
    rows = []
    for line, row in read_table(path, PING_COLUMNS):
        try:
            sent = _count(row["probes_sent"])
            lost = _count(row["probes_lost"])
            if sent == 0:
                report.add(path, line, "rejected", "no-probes")
                continue
            if lost > sent:
                report.add(path, line, "rejected", "lost-exceeds-sent")
                continue
            rows.append(
                PingHourRaw(
                    unit_id=row["unit_id"].strip(),
                    hour_start=parse_time(row["dtime"]),
                    target=row["target"].strip(),
                    probes_sent=sent,
                    probes_lost=lost,
                )
            )
        except (AttributeError, TypeError, ValueError) as exc:
            report.add(path, line, "rejected", "malformed", detail=str(exc))
    return rows


def ingest_pings(rows: Iterable[PingHourRaw]) -> dict[HourKey, float]:
    """Per unit-hour loss rate, taking the least lossy target.

    Selecting the minimum keeps a single failed measurement server from
    inflating the unit's loss.
    """
    out: dict[HourKey, float] = {}
    for r in rows:
        key = (r.unit_id, as_utc_hour(r.hour_start))
        rate = r.loss_rate
        prev = out.get(key)
        if prev is None or rate < prev:
            out[key] = rate
    return out


def _parse_ping_shard(path):
    report = IngestReport()
    rows = parse_ping_rows(path, report)
    return rows, report


def ingest_ping_files(paths: Sequence, report: IngestReport, jobs: int = 1) -> dict[HourKey, float]:
    """Parse ping shards (optionally in parallel) and merge them in path order."""
    if jobs > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_parse_ping_shard, paths))
    else:
        results = [_parse_ping_shard(p) for p in paths]
    merged: list[PingHourRaw] = []
    for rows, shard_report in results:
        merged.extend(rows)
        report.extend(shard_report)
    return ingest_pings(merged)


# -- traffic ----------------------------------------------------------------


@dataclass(frozen=True)
class TrafficHourRaw:
    unit_id: str
    hour_start: datetime
    bytes_down_total: int
    bytes_up_total: int
    bytes_down_test: int
    bytes_up_test: int
    line: Optional[int] = field(default=None, compare=False)


def parse_traffic_rows(path, report: IngestReport) -> list[TrafficHourRaw]:
    rows = []
    for line, row in read_table(path, TRAFFIC_COLUMNS):
        try:
            rows.append(
                TrafficHourRaw(
                    unit_id=row["unit_id"].strip(),
                    hour_start=parse_time(row["dtime"]),
                    bytes_down_total=_count(row["bytes_down_total"]),
                    bytes_up_total=_count(row["bytes_up_total"]),
                    bytes_down_test=_count(row["bytes_down_test"]),
                    bytes_up_test=_count(row["bytes_up_test"]),
                    line=line,
                )
            )
        except (AttributeError, TypeError, ValueError) as exc:
            report.add(path, line, "rejected", "malformed", detail=str(exc))
    return rows


def ingest_traffic(
    rows: Iterable[TrafficHourRaw], report: Optional[IngestReport] = None, source="traffic"
) -> dict[HourKey, tuple[int, int]]:
    """User traffic per unit-hour: total counters minus the active-test counters.

    A test counter larger than the total is a sensor glitch; the value is
    clamped to zero and the row flagged, so the hour's loss data survives.
    """
    out: dict[HourKey, tuple[int, int]] = {}
    for i, r in enumerate(rows, start=1):
        down = r.bytes_down_total - r.bytes_down_test
        up = r.bytes_up_total - r.bytes_up_test
        if (down < 0 or up < 0) and report is not None:
            report.add(source, r.line or i, "flagged", "test-exceeds-total", unit_id=r.unit_id)
        out[(r.unit_id, as_utc_hour(r.hour_start))] = (max(down, 0), max(up, 0))
    return out


# -- dns --------------------------------------------------------------------


@dataclass(frozen=True)
class DnsHourRaw:
    unit_id: str
    hour_start: datetime
    server_role: str  # "primary" | "secondary"
    queries: int
    failures: int


def parse_dns_rows(path, report: IngestReport) -> list[DnsHourRaw]:
    rows = []
    for line, row in read_table(path, DNS_COLUMNS):
        try:
            role = row["server_role"].strip().lower()
            if role not in ("primary", "secondary"):
                raise ValueError(f"unknown server_role {role!r}")
            q = _count(row["queries"])
            f = _count(row["failures"])
            if f > q:
                report.add(path, line, "rejected", "failures-exceed-queries")
                continue
            rows.append(DnsHourRaw(row["unit_id"].strip(), parse_time(row["dtime"]), role, q, f))
        except (AttributeError, TypeError, ValueError) as exc:
            report.add(path, line, "rejected", "malformed", detail=str(exc))
    return rows


def ingest_dns(rows: Iterable[DnsHourRaw]) -> dict[HourKey, dict[str, tuple[int, int]]]:
    """(unit, hour) -> {role: (queries, failures)}; repeated rows are summed."""
    out: dict[HourKey, dict[str, tuple[int, int]]] = defaultdict(dict)
    for r in rows:
        slot = out[(r.unit_id, as_utc_hour(r.hour_start))]
        q, f = slot.get(r.server_role, (0, 0))
        slot[r.server_role] = (q + r.queries, f + r.failures)
    return dict(out)


# -- units ------------------------------------------------------------------


def parse_units(path, report: IngestReport) -> list[UnitMeta]:
    units = []
    seen = set()
    for line, row in read_table(path, UNIT_COLUMNS):
        try:
            uid = row["unit_id"].strip()
            if not uid:
                raise ValueError("empty unit_id")
            if uid in seen:
                report.add(path, line, "rejected", "duplicate-unit", unit_id=uid)
                continue
            tz = row["timezone"].strip() or None
            units.append(
                UnitMeta(
                    unit_id=uid,
                    isp=row["isp"].strip(),
                    technology=Technology.parse(row["technology"]),
                    down_capacity=float(row["down_kbps"]) * 1000,
                    up_capacity=float(row["up_kbps"]) * 1000,
                    region=row["region"].strip(),
                    block_group=row["block_group"].strip(),
                    timezone=tz,
                    active=parse_bool(row["active"]),
                )
            )
            seen.add(uid)
        except (AttributeError, TypeError, ValueError) as exc:
            report.add(path, line, "rejected", "malformed", detail=str(exc))
    return units


def validate_units(
    meta: Iterable[UnitMeta],
    dns_config: Optional[Mapping[str, Sequence[str]]] = None,
    isp_prefixes: Optional[Mapping[str, Sequence[str]]] = None,
    observed_units: Iterable[str] = (),
) -> tuple[list[UnitMeta], list[tuple[str, str]]]:
    """Split units into accepted and ``(unit_id, reason)`` rejections.

    Reasons: ``flagged`` (inactive in the metadata), ``isp-mismatch`` (no
    configured resolver inside the claimed ISP's prefixes) and ``no-meta``
    (unit seen in measurements but absent from the metadata). The resolver
    check only runs when both ``dns_config`` and ``isp_prefixes`` are given,
    and only for units whose ISP and resolvers are known.
    """
    accepted, rejected = [], []
    nets = {
        isp: [ipaddress.ip_network(p, strict=False) for p in prefixes]
        for isp, prefixes in (isp_prefixes or {}).items()
    }
    known = set()
    for m in meta:
        known.add(m.unit_id)
        if not m.active:
            rejected.append((m.unit_id, "flagged"))
            continue
        resolvers = (dns_config or {}).get(m.unit_id)
        if nets and resolvers and m.isp in nets:
            addrs = [ipaddress.ip_address(r) for r in resolvers]
            if not any(a in n for a in addrs for n in nets[m.isp] if a.version == n.version):
                rejected.append((m.unit_id, "isp-mismatch"))
                continue
        accepted.append(m)
    for uid in sorted(set(observed_units) - known):
        rejected.append((uid, "no-meta"))
    return accepted, rejected


def read_pairs_csv(path, key_col: str, value_col: str) -> dict[str, list[str]]:
    """Read a two-column many-valued mapping such as ``isp,prefix``."""
    out: dict[str, list[str]] = defaultdict(list)
    for _, row in read_table(path, (key_col, value_col)):
        out[row[key_col].strip()].append(row[value_col].strip())
    return dict(out)


# -- assembly ---------------------------------------------------------------


def assemble_records(
    loss: Mapping[HourKey, float],
    traffic: Optional[Mapping[HourKey, tuple[int, int]]] = None,
    dns: Optional[Mapping[HourKey, Mapping[str, tuple[int, int]]]] = None,
) -> list[HourlyRecord]:
    """Join the per-hour maps into records, one per hour with an observed loss rate.

    Hours without probes are absent rather than zero-loss.
    """
    traffic = traffic or {}
    dns = dns or {}
    out = []
    for key in sorted(loss):
        down, up = traffic.get(key, (None, None))
        servers = dns.get(key, {})
        q = sum(v[0] for v in servers.values())
        f = sum(v[1] for v in servers.values())

        def failed(role):
            if role not in servers or servers[role][0] == 0:
                return None
            sq, sf = servers[role]
            return sf / sq > 0.5

        out.append(
            HourlyRecord(
                unit_id=key[0],
                hour_start=key[1],
                loss_rate=loss[key],
                bytes_down=down,
                bytes_up=up,
                dns_queries=q,
                dns_failures=f,
                dns_primary_failed=failed("primary"),
                dns_secondary_failed=failed("secondary"),
            )
        )
    return out


def series_by_unit(records: Iterable[HourlyRecord]) -> dict[str, list[tuple[datetime, float]]]:
    out: dict[str, list[tuple[datetime, float]]] = defaultdict(list)
    for r in records:
        out[r.unit_id].append((r.hour_start, r.loss_rate))
    return {u: sorted(s) for u, s in out.items()}


def records_by_unit(records: Iterable[HourlyRecord]) -> dict[str, list[HourlyRecord]]:
    out: dict[str, list[HourlyRecord]] = defaultdict(list)
    for r in records:
        out[r.unit_id].append(r)
    return {u: sorted(rs, key=lambda r: r.hour_start) for u, rs in out.items()}


@dataclass
class Dataset:
    units: list[UnitMeta]
    records: list[HourlyRecord]
    dns: dict[HourKey, dict[str, tuple[int, int]]]
    loss: dict[HourKey, float]
    rejected_units: list[tuple[str, str]]
    report: IngestReport


def load_dataset(
    directory,
    *,
    jobs: int = 1,
    resolvers_file=None,
    prefixes_file=None,
) -> Dataset:
    """Load a directory of canonical CSVs; traffic.csv and dns.csv are optional."""
    d = Path(directory)
    report = IngestReport()
    units = parse_units(d / "units.csv", report)
    ping_files = sorted(d.glob("pings*.csv"))
    if not ping_files:
        raise IngestError(d / "pings.csv", "input file not found")
    loss = ingest_ping_files(ping_files, report, jobs=jobs)
    traffic = {}
    if (d / "traffic.csv").exists():
        traffic = ingest_traffic(parse_traffic_rows(d / "traffic.csv", report), report, d / "traffic.csv")
    dns = {}
    if (d / "dns.csv").exists():
        dns = ingest_dns(parse_dns_rows(d / "dns.csv", report))

    dns_config = read_pairs_csv(resolvers_file, "unit_id", "resolver") if resolvers_file else None
    prefixes = read_pairs_csv(prefixes_file, "isp", "prefix") if prefixes_file else None
    observed = {u for u, _ in loss}
    accepted, rejected = validate_units(units, dns_config, prefixes, observed)
    keep = {m.unit_id for m in accepted}
    loss = {k: v for k, v in loss.items() if k[0] in keep}
    dns = {k: v for k, v in dns.items() if k[0] in keep}
    records = assemble_records(loss, traffic, dns)
    return Dataset(accepted, records, dns, loss, rejected, report)


# -- serialisation ----------------------------------------------------------


def _write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_units(path, units: Iterable[UnitMeta]) -> None:
    _write_csv(
        path,
        UNIT_COLUMNS,
        (
            (
                u.unit_id,
                u.isp,
                u.technology.value,
                f"{u.down_capacity / 1000:g}",
                f"{u.up_capacity / 1000:g}",
                u.region,
                u.block_group,
                u.timezone or "",
                "true" if u.active else "false",
            )
            for u in units
        ),
    )


def write_pings(path, rows: Iterable[PingHourRaw]) -> None:
    _write_csv(
        path,
        PING_COLUMNS,
        ((r.unit_id, format_time(r.hour_start), r.target, r.probes_sent, r.probes_lost) for r in rows),
    )


def write_traffic(path, rows: Iterable[TrafficHourRaw]) -> None:
    _write_csv(
        path,
        TRAFFIC_COLUMNS,
        (
            (
                r.unit_id,
                format_time(r.hour_start),
                r.bytes_down_total,
                r.bytes_up_total,
                r.bytes_down_test,
                r.bytes_up_test,
            )
            for r in rows
        ),
    )


def write_dns(path, rows: Iterable[DnsHourRaw]) -> None:
    _write_csv(
        path,
        DNS_COLUMNS,
        ((r.unit_id, format_time(r.hour_start), r.server_role, r.queries, r.failures) for r in rows),
    )
