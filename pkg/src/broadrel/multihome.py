"""Simulated multihoming from pairs of neighbouring gateways.

Two units in the same census block group that were online at the same time
stand in for one household with two uplinks: for every hour both reported,
the multihomed loss is the smaller of the two.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .model import UnitMeta
from .reliability import (
    DEFAULT_THRESHOLDS,
    EmptyScopeError,
    ReliabilityStats,
    Series,
    compute_stats,
    reduce_stats,
)

MIN_OVERLAP = 24

COHORTS = ("NotMultihomed", "SameISP", "DifferentISP")


@dataclass(frozen=True)
class SimPair:
    unit_a: str
    unit_b: str
    same_isp: bool
    combined: tuple  # ((hour, loss), ...) over hours both units reported

    @property
    def overlap_hours(self) -> int:
        return len(self.combined)

    @property
    def cohort(self) -> str:
        return "SameISP" if self.same_isp else "DifferentISP"


def combine(series_a: Series, series_b: Series) -> list:
    """Hour-wise minimum loss over the hours present in both series."""
    b = dict(series_b)
    return [(h, min(loss, b[h])) for h, loss in series_a if h in b]


def build_pairs(
    metas: Iterable[UnitMeta],
    series_by_unit: Mapping[str, Series],
    min_overlap: int = MIN_OVERLAP,
) -> list[SimPair]:
    """Every unordered same-block pair with at least ``min_overlap`` shared hours."""
    blocks: dict[str, list[UnitMeta]] = defaultdict(list)
    for m in metas:
        if m.block_group and m.unit_id in series_by_unit:
            blocks[m.block_group].append(m)
    pairs = []
    for block in sorted(blocks):
        members = sorted(blocks[block], key=lambda m: m.unit_id)
        for a, b in itertools.combinations(members, 2):
            combined = combine(series_by_unit[a.unit_id], series_by_unit[b.unit_id])
            if len(combined) >= min_overlap:
                pairs.append(SimPair(a.unit_id, b.unit_id, a.isp == b.isp, tuple(combined)))
    return pairs


@dataclass(frozen=True)
class CohortRow:
    cohort: str
    threshold: float
    stats: ReliabilityStats
    pairs: int


def sim_report(
    pairs: Sequence[SimPair],
    series_by_unit: Mapping[str, Series],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> tuple[list[CohortRow], list[str]]:
    """Stats per cohort and threshold, plus notes for cohorts left out.

    The NotMultihomed baseline uses the original series of every unit that
    appears in at least one pair. Pairs are weighted equally, so a unit in
    several pairs contributes to each.
    """
    rows, notes = [], []
    members = sorted({u for p in pairs for u in (p.unit_a, p.unit_b)})
    for threshold in thresholds:
        cohorts = {
            "NotMultihomed": [(u, series_by_unit[u]) for u in members],
            "SameISP": [(f"{p.unit_a}+{p.unit_b}", p.combined) for p in pairs if p.same_isp],
            "DifferentISP": [(f"{p.unit_a}+{p.unit_b}", p.combined) for p in pairs if not p.same_isp],
        }
        for name in COHORTS:
            entries = cohorts[name]
            if not entries:
                notes.append(f"{name}: no pairs at threshold {threshold:g}")
                continue
            stats = []
            for label, series in entries:
                try:
                    stats.append(compute_stats(series, threshold, label))
                except EmptyScopeError:
                    continue
            if not stats:
                notes.append(f"{name}: no observed hours at threshold {threshold:g}")
                continue
            n_pairs = len(pairs) if name == "NotMultihomed" else len(entries)
            rows.append(CohortRow(name, threshold, reduce_stats(stats, name), n_pairs))
    return rows, notes
