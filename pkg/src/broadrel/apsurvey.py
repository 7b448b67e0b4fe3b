"""Neighbouring access points seen in wireless scans.

Scan entries are grouped into physical APs by BSSID similarity, groups that
are obviously not home gateways (printers, media sticks, range extenders) are
discarded, and the remaining neighbours are counted per scan. AP ownership is
guessed from provider-branded SSIDs.
"""

from __future__ import annotations

import csv
import fnmatch
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .ingest import parse_bool, read_table

log = logging.getLogger(__name__)

DEFAULT_BLOCKLIST = ("*HP-Print*", "*Chromecast*", "EXT*", "*EXT", "almond*", "*almond")
VIABLE_SIGNAL = 40
MAX_DIGIT_DIFF = 4
NEAR_DIGIT_DIFF = 5

_HEX = re.compile(r"^[0-9A-F]{12}$")


@dataclass(frozen=True)
class ScanEntry:
    ssid: str
    bssid: str
    signal_pct: float

    def __post_init__(self):
        if not 0 <= self.signal_pct <= 100:
            raise ValueError(f"signal {self.signal_pct} outside [0, 100]")


@dataclass(frozen=True)
class ApScan:
    client_id: str
    timestamp: str
    entries: tuple[ScanEntry, ...]
    current_bssid: Optional[str] = None
    current_signal_pct: Optional[float] = None

    def __post_init__(self):
        if not self.entries:
            raise ValueError("scan has no entries")


@dataclass(frozen=True)
class ApGroup:
    group_id: int
    member_bssids: frozenset
    ssids: frozenset
    inferred_isp: Optional[str] = None
    max_signal_pct: float = 0.0


@dataclass(frozen=True)
class IspRule:
    pattern: str
    isp: str
    with_others: bool = False


def normalize_mac(mac: str) -> str:
    """12 upper-case hex digits; raises ``ValueError`` on anything else."""
    digits = re.sub(r"[:\-.\s]", "", mac).upper()
    if not _HEX.match(digits):
        raise ValueError(f"malformed MAC {mac!r}")
    return digits


def _matches(ssid: str, pattern: str) -> bool:
    return fnmatch.fnmatchcase(ssid.lower(), pattern.lower())


def is_non_gateway(ssid: str, blocklist: Sequence[str] = DEFAULT_BLOCKLIST) -> bool:
    return any(_matches(ssid, p) for p in blocklist)


def filter_non_gateways(entries: Iterable[ScanEntry], blocklist: Sequence[str] = DEFAULT_BLOCKLIST) -> list[ScanEntry]:
    """Drop entries whose SSID matches a blocklist glob (case-insensitive)."""
    return [e for e in entries if not is_non_gateway(e.ssid, blocklist)]


def digit_difference(a: str, b: str) -> int:
    return sum(x != y for x, y in zip(a, b))


def same_ap(a: str, b: str) -> bool:
    """BSSIDs differ in at most four hex positions, or only in the low 24 bits."""
    return digit_difference(a, b) <= MAX_DIGIT_DIFF or a[:6] == b[:6]


class _DisjointSet:
    def __init__(self, items):
        self.parent = {i: i for i in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def group_bssids(entries: Iterable[ScanEntry], rules: Optional[Sequence[IspRule]] = None) -> list[ApGroup]:
    """Partition the scan's BSSIDs into APs (transitive closure of :func:`same_ap`).

    Groups are numbered by their smallest BSSID, so the result does not
    depend on entry order. Malformed MACs are dropped with a warning.
    """
    ssids: dict[str, set] = defaultdict(set)
    signal: dict[str, float] = {}
    for e in entries:
        try:
            mac = normalize_mac(e.bssid)
        except ValueError:
            log.warning("dropping entry with malformed BSSID %r", e.bssid)
            continue
        ssids[mac].add(e.ssid)
        signal[mac] = max(signal.get(mac, 0.0), e.signal_pct)
    macs = sorted(ssids)
    ds = _DisjointSet(macs)
    for i, a in enumerate(macs):
        for b in macs[i + 1 :]:
            if same_ap(a, b):
                ds.union(a, b)
    members: dict[str, list[str]] = defaultdict(list)
    for m in macs:
        members[ds.find(m)].append(m)
    groups = []
    for gid, root in enumerate(sorted(members)):
        ms = members[root]
        g = ApGroup(
            group_id=gid,
            member_bssids=frozenset(ms),
            ssids=frozenset(s for m in ms for s in ssids[m]),
            max_signal_pct=max(signal[m] for m in ms),
        )
        if rules is not None:
            g = ApGroup(g.group_id, g.member_bssids, g.ssids, infer_isp(g, rules), g.max_signal_pct)
        groups.append(g)
    return groups


def near_threshold_pairs(bssids: Iterable[str]) -> list[tuple[str, str]]:
    """Pairs just outside the grouping rules: five differing hex digits, different OUI."""
    macs = sorted({normalize_mac(b) for b in bssids})
    out = []
    for i, a in enumerate(macs):
        for b in macs[i + 1 :]:
            if a[:6] != b[:6] and digit_difference(a, b) == NEAR_DIGIT_DIFF:
                out.append((a, b))
    return out


def infer_isp(group: ApGroup, rules: Sequence[IspRule]) -> Optional[str]:
    """ISP of the first rule matching any of the group's SSIDs, if any."""
    ssids = sorted(group.ssids)
    for rule in rules:
        hits = [s for s in ssids if _matches(s, rule.pattern)]
        if not hits:
            continue
        if rule.with_others and len(ssids) == len(hits):
            continue
        return rule.isp
    return None


def parse_isp_rules(text: str) -> list[IspRule]:
    rules = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < 2 or not parts[0] or not parts[1]:
            raise ValueError(f"bad rule line {line!r}")
        flags = set(parts[2:])
        unknown = flags - {"with-others", ""}
        if unknown:
            raise ValueError(f"unknown rule flag(s) {sorted(unknown)}")
        rules.append(IspRule(parts[0], parts[1], "with-others" in flags))
    return rules


def load_isp_rules(path=None) -> list[IspRule]:
    if path is None:
        text = resources.files("broadrel").joinpath("data/isp_rules.txt").read_text()
    else:
        text = Path(path).read_text()
    return parse_isp_rules(text)


# -- per-scan analysis ------------------------------------------------------


@dataclass
class ScanView:
    scan: ApScan
    alternatives: list[ApGroup]

    @property
    def strongest_alt(self) -> Optional[float]:
        return max((g.max_signal_pct for g in self.alternatives), default=None)


def analyse_scan(
    scan: ApScan, rules: Sequence[IspRule], blocklist: Sequence[str] = DEFAULT_BLOCKLIST
) -> ScanView:
    """Neighbouring gateway groups: everything except the client's own AP
    and groups advertising a non-gateway SSID."""
    groups = group_bssids(scan.entries, rules)
    current = None
    if scan.current_bssid:
        try:
            current = normalize_mac(scan.current_bssid)
        except ValueError:
            log.warning("scan %s/%s: malformed current BSSID", scan.client_id, scan.timestamp)
    alts = [
        g
        for g in groups
        if current not in g.member_bssids and not any(is_non_gateway(s, blocklist) for s in g.ssids)
    ]
    return ScanView(scan, alts)


@dataclass
class ApReport:
    scans: int
    frac_ge1_alt: Fraction
    frac_ge2_alt: Fraction
    alt_count_hist: dict
    strongest_alt_signals: list
    frac_viable: Optional[Fraction]
    frac_inferred_alt: Fraction
    frac_different_isp: Optional[Fraction]
    inferred_alt_aps: int
    near_threshold_pairs: int
    viable_cutoff: float = VIABLE_SIGNAL
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        f = lambda x: None if x is None else float(x)  # noqa: E731
        return {
            "alt_count_hist": {str(k): v for k, v in sorted(self.alt_count_hist.items())},
            "frac_different_isp_among_inferred": f(self.frac_different_isp),
            "frac_scans_ge1_alt": f(self.frac_ge1_alt),
            "frac_scans_ge2_alt": f(self.frac_ge2_alt),
            "frac_scans_inferred_isp_alt": f(self.frac_inferred_alt),
            "frac_strongest_alt_viable": f(self.frac_viable),
            "inferred_alt_aps": self.inferred_alt_aps,
            "near_threshold_pairs": self.near_threshold_pairs,
            "notes": self.notes,
            "scans": self.scans,
            "strongest_alt_signal_pct": sorted(self.strongest_alt_signals),
            "viable_cutoff_pct": self.viable_cutoff,
        }


def scan_report(
    scans: Sequence[ApScan],
    client_isp: Mapping[str, str],
    rules: Optional[Sequence[IspRule]] = None,
    blocklist: Sequence[str] = DEFAULT_BLOCKLIST,
    viable_cutoff: float = VIABLE_SIGNAL,
) -> ApReport:
    """Summarise neighbour availability over all scans.

    Viability (strongest neighbour signal >= ``viable_cutoff``) is a fraction
    of the scans that have a neighbour. The different-ISP share counts
    neighbour APs with an inferred ISP, among clients whose own ISP is known.
    """
    if not scans:
        raise ValueError("no scans")
    rules = load_isp_rules() if rules is None else rules
    hist: dict[int, int] = defaultdict(int)
    strongest = []
    ge1 = ge2 = with_inferred = 0
    inferred_aps = different = 0
    near = 0
    for scan in scans:
        view = analyse_scan(scan, rules, blocklist)
        n = len(view.alternatives)
        hist[n] += 1
        ge1 += n >= 1
        ge2 += n >= 2
        if n:
            strongest.append(view.strongest_alt)
        inferred = [g for g in view.alternatives if g.inferred_isp]
        if inferred:
            with_inferred += 1
        own = client_isp.get(scan.client_id)
        if own is not None:
            inferred_aps += len(inferred)
            different += sum(g.inferred_isp != own for g in inferred)
        valid = []
        for e in scan.entries:
            try:
                valid.append(normalize_mac(e.bssid))
            except ValueError:
                pass
        near += len(near_threshold_pairs(valid))
    total = len(scans)
    return ApReport(
        scans=total,
        frac_ge1_alt=Fraction(ge1, total),
        frac_ge2_alt=Fraction(ge2, total),
        alt_count_hist=dict(hist),
        strongest_alt_signals=strongest,
        frac_viable=Fraction(sum(s >= viable_cutoff for s in strongest), len(strongest)) if strongest else None,
        frac_inferred_alt=Fraction(with_inferred, total),
        frac_different_isp=Fraction(different, inferred_aps) if inferred_aps else None,
        inferred_alt_aps=inferred_aps,
        near_threshold_pairs=near,
        viable_cutoff=viable_cutoff,
    )


SCAN_COLUMNS = ("client_id", "timestamp", "bssid", "ssid", "signal_pct", "is_current")


def read_scans(path) -> list[ApScan]:
    """Rows of ``scans.csv`` grouped into one scan per (client, timestamp)."""
    grouped: dict[tuple[str, str], list[dict]] = defaultdict(list)
    for _, row in read_table(path, SCAN_COLUMNS):
        grouped[(row["client_id"].strip(), row["timestamp"].strip())].append(row)
    scans = []
    for (client, ts), rows in sorted(grouped.items()):
        entries = []
        current = current_sig = None
        for row in rows:
            e = ScanEntry(row["ssid"], row["bssid"].strip(), float(row["signal_pct"]))
            entries.append(e)
            if parse_bool(row["is_current"]):
                current, current_sig = e.bssid, e.signal_pct
        scans.append(ApScan(client, ts, tuple(entries), current, current_sig))
    return scans


def write_scans(path, scans: Iterable[ApScan]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCAN_COLUMNS)
        for s in scans:
            for e in s.entries:
                w.writerow([s.client_id, s.timestamp, e.bssid, e.ssid, f"{e.signal_pct:g}",
                            "true" if e.bssid == s.current_bssid else "false"])
