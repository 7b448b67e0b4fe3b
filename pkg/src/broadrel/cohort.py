"""Cross-sectional statistics: demographic correlation and feature ranking."""

from __future__ import annotations

import math
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Optional, Sequence

from .model import UnitMeta


@dataclass(frozen=True)
class RegionIndicator:
    region: str
    urban_fraction: float
    population_density: float
    gsp_per_capita: float

    def __post_init__(self):
        if not 0 <= self.urban_fraction <= 1:
            raise ValueError("urban_fraction must lie in [0, 1]")
        if self.population_density < 0 or self.gsp_per_capita < 0:
            raise ValueError("indicators must be non-negative")


@dataclass(frozen=True)
class CorrelationResult:
    x_name: str
    y_name: str
    r: float
    n: int


class DegenerateError(ValueError):
    code = "degenerate"


def pearson(x: Sequence[float], y: Sequence[float], x_name: str = "x", y_name: str = "y") -> CorrelationResult:
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValueError("need at least two points")
    try:
        r = statistics.correlation(x, y)
    except statistics.StatisticsError as exc:
        raise DegenerateError(str(exc)) from exc
    return CorrelationResult(x_name, y_name, max(-1.0, min(1.0, r)), len(x))


def region_correlations(
    failure_rate_by_region: Mapping[str, float], indicators: Iterable[RegionIndicator]
) -> list[CorrelationResult]:
    """Correlate a per-region failure rate with each census covariate."""
    rows = [i for i in indicators if i.region in failure_rate_by_region]
    rows.sort(key=lambda i: i.region)
    y = [failure_rate_by_region[i.region] for i in rows]
    out = []
    for name in ("urban_fraction", "population_density", "gsp_per_capita"):
        out.append(pearson([getattr(i, name) for i in rows], y, name, "failure_rate"))
    return out


# -- information gain -------------------------------------------------------


def entropy(labels: Iterable[Hashable]) -> float:
    counts = Counter(labels)
    n = sum(counts.values())
    return -sum(c / n * math.log2(c / n) for c in counts.values() if c)


def information_gain(records: Sequence[Mapping], attribute: str, target: str = "availability_bin") -> float:
    """Reduction in target entropy (bits) from conditioning on ``attribute``."""
    if not records:
        raise ValueError("no records")
    base = entropy(r[target] for r in records)
    if base == 0:
        return 0.0
    split: dict = defaultdict(list)
    for r in records:
        split[r[attribute]].append(r[target])
    n = len(records)
    cond = sum(len(v) / n * entropy(v) for v in split.values())
    # clamp float residue so the gain stays inside [0, H(target)]
    return min(base, max(0.0, base - cond))


def rank_attributes(
    records: Sequence[Mapping], attributes: Sequence[str], target: str = "availability_bin"
) -> list[tuple[str, float]]:
    """Attributes by descending gain; equal gains are ordered by name."""
    gains = [(a, information_gain(records, a, target)) for a in attributes]
    return sorted(gains, key=lambda ag: (-round(ag[1], 12), ag[0]))


def quantile_edges(values: Sequence[float], q: int = 4) -> list[float]:
    """Interior cut points splitting ``values`` into ``q`` groups (default quartiles)."""
    if len(set(values)) < 2:
        return []
    return sorted(set(statistics.quantiles(values, n=q, method="inclusive")))


def bin_value(value: float, edges: Sequence[float]) -> int:
    """Index of the bin holding ``value``; bin i is ``(edges[i-1], edges[i]]``."""
    for i, e in enumerate(edges):
        if value <= e:
            return i
    return len(edges)


def capacity_bin(bits_per_sec: float) -> int:
    """Power-of-two Mbps bucket: 1-2 Mbps -> 0, 2-4 -> 1, ..."""
    return math.floor(math.log2(bits_per_sec / 1e6))


def unit_feature_records(
    metas: Iterable[UnitMeta],
    availability: Mapping[str, float],
    edges: Optional[Sequence[float]] = None,
) -> list[dict]:
    """One record per unit with the attributes used for ranking.

    Availability is binned at ``edges`` when given, otherwise at the quartiles
    of the observed availabilities.
    """
    metas = [m for m in metas if m.unit_id in availability]
    if edges is None:
        edges = quantile_edges([availability[m.unit_id] for m in metas])
    return [
        {
            "unit_id": m.unit_id,
            "isp": m.isp,
            "technology": m.technology.value,
            "capacity": capacity_bin(m.down_capacity),
            "region": m.region,
            "availability_bin": bin_value(availability[m.unit_id], edges),
        }
        for m in sorted(metas, key=lambda m: m.unit_id)
    ]


ATTRIBUTES = ("capacity", "isp", "region", "technology")
