"""Natural experiments: cohort construction, matching and binomial significance.

Units are binned by a loss metric into control and treatment cohorts, each
treatment unit is paired with a comparable control unit (same region, link
capacities within a tolerance), and the hypothesis "treatment uses less
traffic than control" is scored per pair. The share of pairs where it holds
is tested against the 50% null with a one-tailed binomial test.
"""

from __future__ import annotations

import enum
import json
import math
import statistics
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .model import HourlyRecord, UnitMeta, parse_timezone
from .reliability import PEAK_WINDOW

ALPHA = 0.05
PRACTICAL_DELTA = 0.02
CAPACITY_TOLERANCE = 0.10
HIGH_LOSS = 0.05
_EXACT_N = 5000


class Metric(str, enum.Enum):
    AVG_LOSS_RATE = "AvgLossRate"
    HIGH_LOSS_HOUR_FRACTION = "HighLossHourFraction"


class NoMatchesError(ValueError):
    code = "no-matches"


@dataclass(frozen=True)
class CohortSpec:
    """A loss-metric bin ``(lower, upper]``; ``lower_inclusive`` closes the left end."""

    metric: Metric
    lower: float
    upper: float
    label: str = ""
    lower_inclusive: bool = False

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"bin lower {self.lower} must be below upper {self.upper}")

    def contains(self, value) -> bool:
        above = value > self.lower or (self.lower_inclusive and value == self.lower)
        return above and value <= self.upper

    def overlaps(self, other: "CohortSpec") -> bool:
        return self.lower < other.upper and other.lower < self.upper

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "lower": self.lower,
            "lower_inclusive": self.lower_inclusive,
            "metric": self.metric.value,
            "upper": None if math.isinf(self.upper) else self.upper,
        }

    @classmethod
    def from_dict(cls, metric: Metric, d: Mapping) -> "CohortSpec":
        upper = d.get("upper")
        return cls(
            metric=metric,
            lower=float(d["lower"]),
            upper=math.inf if upper is None else float(upper),
            label=d.get("label", ""),
            lower_inclusive=bool(d.get("lower_inclusive", float(d["lower"]) == 0.0)),
        )


def _bin(metric, lo, hi, label, closed=False):
    return CohortSpec(metric, lo, hi, label, closed)


AVG = Metric.AVG_LOSS_RATE
HLF = Metric.HIGH_LOSS_HOUR_FRACTION

AVG_LOSS_CONTROL = _bin(AVG, 0.0, 0.000625, "(0%, 0.0625%)", True)
AVG_LOSS_TREATMENTS = (
    _bin(AVG, 0.005, 0.01, "(0.5%, 1%)"),
    _bin(AVG, 0.01, 0.02, "(1%, 2%)"),
    _bin(AVG, 0.02, math.inf, ">2%"),
)
HIGH_LOSS_BINS = (
    _bin(HLF, 0.0, 0.001, "(0%, 0.1%)", True),
    _bin(HLF, 0.001, 0.005, "(0.1%, 0.5%)"),
    _bin(HLF, 0.005, 0.01, "(0.5%, 1%)"),
    _bin(HLF, 0.01, 0.10, "(1%, 10%)"),
    _bin(HLF, 0.10, math.inf, ">10%"),
)


@dataclass(frozen=True)
class ExperimentResult:
    control: CohortSpec
    treatment: CohortSpec
    pairs: int
    h_holds: int
    h_holds_pct: float
    p_value: float
    significant: bool
    practically_important: bool
    dropped_pairs: int = 0

    def to_dict(self) -> dict:
        return {
            "control": self.control.to_dict(),
            "treatment": self.treatment.to_dict(),
            "pairs": self.pairs,
            "h_holds": self.h_holds,
            "h_holds_pct": self.h_holds_pct,
            "p_value": self.p_value,
            "significant": self.significant,
            "practically_important": self.practically_important,
            "dropped_pairs": self.dropped_pairs,
        }


# -- significance -----------------------------------------------------------


def binom_one_tailed(n: int, k: int) -> float:
    """``P(X >= k)`` for ``X ~ Binomial(n, 1/2)``, summed term by term.

    Up to n = 5000 the tail is an exact integer sum over ``2**n``; beyond that
    terms are generated by ratio recurrence from the largest one, whose log is
    taken from ``lgamma``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0 <= k <= n:
        raise ValueError("k must lie in [0, n]")
    if k == 0:
        return 1.0
    if n <= _EXACT_N:
        c = math.comb(n, k)
        total = 0
        for i in range(k, n + 1):
            total += c
            c = c * (n - i) // (i + 1)
        return float(Fraction(total, 1 << n))
    m = max(k, n // 2)
    log_tm = math.lgamma(n + 1) - math.lgamma(m + 1) - math.lgamma(n - m + 1) - n * math.log(2)
    s = 1.0
    t = 1.0
    for i in range(m, n):
        t *= (n - i) / (i + 1)
        s += t
        if t < 1e-18 * s:
            break
    t = 1.0
    for i in range(m, k, -1):
        t *= i / (n - i + 1)
        s += t
        if t < 1e-18 * s:
            break
    return min(1.0, math.exp(log_tm) * s)


def summarize(control: CohortSpec, treatment: CohortSpec, pairs: int, holds: int, dropped: int = 0) -> ExperimentResult:
    if pairs == 0:
        raise NoMatchesError("no pairs left to evaluate")
    pct = holds / pairs
    p = binom_one_tailed(pairs, holds)
    return ExperimentResult(
        control=control,
        treatment=treatment,
        pairs=pairs,
        h_holds=holds,
        h_holds_pct=pct,
        p_value=p,
        significant=p < ALPHA,
        practically_important=abs(pct - 0.5) > PRACTICAL_DELTA,
        dropped_pairs=dropped,
    )


# -- cohorts ----------------------------------------------------------------


def mean_loss(losses: Sequence[float]) -> float:
    return statistics.fmean(losses)


def high_loss_fraction(losses: Sequence[float], loss_threshold: float = HIGH_LOSS) -> Fraction:
    return Fraction(sum(1 for x in losses if x > loss_threshold), len(losses))


def _assign(values: Mapping[str, object], bins: Sequence[CohortSpec]) -> dict[str, CohortSpec]:
    for i, a in enumerate(bins):
        for b in bins[i + 1 :]:
            if a.overlaps(b):
                raise ValueError(f"bins {a.label} and {b.label} overlap")
    out = {}
    for uid in sorted(values):
        for b in bins:
            if b.contains(values[uid]):
                out[uid] = b
                break
    return out


def avg_loss_cohorts(
    losses_by_unit: Mapping[str, Sequence[float]],
    bins: Sequence[CohortSpec] = (AVG_LOSS_CONTROL, *AVG_LOSS_TREATMENTS),
) -> dict[str, CohortSpec]:
    """Bin each unit by its lifetime mean hourly loss; units outside every bin are omitted."""
    return _assign({u: mean_loss(v) for u, v in losses_by_unit.items() if v}, bins)


def high_loss_fraction_cohorts(
    losses_by_unit: Mapping[str, Sequence[float]],
    loss_threshold: float = HIGH_LOSS,
    bins: Sequence[CohortSpec] = HIGH_LOSS_BINS,
) -> dict[str, CohortSpec]:
    """Bin each unit by the share of its hours with loss strictly above ``loss_threshold``."""
    return _assign(
        {u: high_loss_fraction(v, loss_threshold) for u, v in losses_by_unit.items() if v}, bins
    )


# -- matching ---------------------------------------------------------------


def capacity_close(a: float, b: float, tolerance: float = CAPACITY_TOLERANCE) -> bool:
    """Relative difference against the larger value, so the rule is symmetric."""
    return abs(a - b) <= tolerance * max(a, b)


def comparable(t: UnitMeta, c: UnitMeta, tolerance: float = CAPACITY_TOLERANCE) -> bool:
    return (
        t.region == c.region
        and capacity_close(t.down_capacity, c.down_capacity, tolerance)
        and capacity_close(t.up_capacity, c.up_capacity, tolerance)
    )


def match_pairs(
    treatment: Iterable[UnitMeta], control: Iterable[UnitMeta], tolerance: float = CAPACITY_TOLERANCE
) -> list[tuple[str, str]]:
    """Greedy one-to-one matching.

    Treatment units are visited by descending download capacity; each takes
    the unused comparable control closest in download (then upload)
    capacity. Ties fall back to unit id, so the result is deterministic.
    """
    treatment = sorted(treatment, key=lambda m: (-m.down_capacity, -m.up_capacity, m.unit_id))
    free = sorted(control, key=lambda m: m.unit_id)
    pairs = []
    for t in treatment:
        best = None
        for c in free:
            if not comparable(t, c, tolerance):
                continue
            key = (abs(t.down_capacity - c.down_capacity), abs(t.up_capacity - c.up_capacity), c.unit_id)
            if best is None or key < best[0]:
                best = (key, c)
        if best is not None:
            free.remove(best[1])
            pairs.append((t.unit_id, best[1].unit_id))
    if not pairs:
        raise NoMatchesError("no comparable treatment/control pairs")
    return pairs


# -- evaluation -------------------------------------------------------------

ScopeFn = Callable[[HourlyRecord, UnitMeta], bool]


def scope_all(rec: HourlyRecord, meta: UnitMeta) -> bool:
    return True


def scope_no_loss(rec: HourlyRecord, meta: UnitMeta) -> bool:
    return rec.loss_rate == 0


def scope_peak_no_loss(rec: HourlyRecord, meta: UnitMeta) -> bool:
    if rec.loss_rate != 0 or not meta.timezone:
        return False
    lo, hi = PEAK_WINDOW
    return lo <= rec.hour_start.astimezone(parse_timezone(meta.timezone)).hour < hi


SCOPES: dict[str, ScopeFn] = {
    "all": scope_all,
    "no_loss": scope_no_loss,
    "peak_no_loss": scope_peak_no_loss,
}


def mean_demand(records: Iterable[HourlyRecord], meta: UnitMeta, scope: ScopeFn) -> Optional[float]:
    """Mean bytes (down + up) per in-scope hour that has traffic counters."""
    vols = [r.bytes_total for r in records if r.bytes_total is not None and scope(r, meta)]
    return statistics.fmean(vols) if vols else None


def evaluate_hypothesis(
    pairs: Sequence[tuple[str, str]],
    records_by_unit: Mapping[str, Sequence[HourlyRecord]],
    metas: Mapping[str, UnitMeta],
    control: CohortSpec,
    treatment: CohortSpec,
    scope: ScopeFn = scope_all,
) -> ExperimentResult:
    """Score "treatment demand < control demand" over matched pairs.

    Pairs where either side has no in-scope hours are dropped and counted.
    """
    holds = used = dropped = 0
    for t, c in pairs:
        dt = mean_demand(records_by_unit.get(t, ()), metas[t], scope)
        dc = mean_demand(records_by_unit.get(c, ()), metas[c], scope)
        if dt is None or dc is None:
            dropped += 1
            continue
        used += 1
        holds += dt < dc
    return summarize(control, treatment, used, holds, dropped)


# -- configured runs --------------------------------------------------------


@dataclass
class ExperimentConfig:
    metric: Metric = Metric.AVG_LOSS_RATE
    comparisons: list[tuple[CohortSpec, CohortSpec]] = field(default_factory=list)
    scope: str = "all"
    tolerance: float = CAPACITY_TOLERANCE
    loss_threshold: float = HIGH_LOSS

    def __post_init__(self):
        if self.scope not in SCOPES:
            raise ValueError(f"unknown scope {self.scope!r}")
        if not self.comparisons:
            self.comparisons = default_comparisons(self.metric)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        metric = Metric(d.get("metric", Metric.AVG_LOSS_RATE.value))
        comps = [
            (CohortSpec.from_dict(metric, c["control"]), CohortSpec.from_dict(metric, c["treatment"]))
            for c in d.get("comparisons", [])
        ]
        default_scope = "all" if metric is Metric.AVG_LOSS_RATE else "peak_no_loss"
        return cls(
            metric=metric,
            comparisons=comps,
            scope=d.get("scope", default_scope),
            tolerance=float(d.get("tolerance", CAPACITY_TOLERANCE)),
            loss_threshold=float(d.get("loss_threshold", HIGH_LOSS)),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "comparisons": [{"control": c.to_dict(), "treatment": t.to_dict()} for c, t in self.comparisons],
            "loss_threshold": self.loss_threshold,
            "metric": self.metric.value,
            "scope": self.scope,
            "tolerance": self.tolerance,
        }


def default_comparisons(metric: Metric) -> list[tuple[CohortSpec, CohortSpec]]:
    if metric is Metric.AVG_LOSS_RATE:
        return [(AVG_LOSS_CONTROL, t) for t in AVG_LOSS_TREATMENTS]
    b = HIGH_LOSS_BINS
    return [(c, b[3]) for c in b[2::-1]] + [(c, b[4]) for c in b[3::-1]]


def run_experiment(
    config: ExperimentConfig,
    metas: Sequence[UnitMeta],
    records_by_unit: Mapping[str, Sequence[HourlyRecord]],
) -> dict:
    """Run every configured comparison; comparisons without matches are reported, not fatal."""
    by_id = {m.unit_id: m for m in metas}
    losses = {u: [r.loss_rate for r in rs] for u, rs in records_by_unit.items() if u in by_id and rs}
    if config.metric is Metric.AVG_LOSS_RATE:
        value = {u: mean_loss(v) for u, v in losses.items()}
    else:
        value = {u: high_loss_fraction(v, config.loss_threshold) for u, v in losses.items()}
    scope = SCOPES[config.scope]
    results, failures = [], []
    for control, treatment in config.comparisons:
        if control.overlaps(treatment):
            raise ValueError(f"control {control.label} overlaps treatment {treatment.label}")
        t_units = [by_id[u] for u in sorted(value) if treatment.contains(value[u])]
        c_units = [by_id[u] for u in sorted(value) if control.contains(value[u])]
        try:
            pairs = match_pairs(t_units, c_units, config.tolerance)
            res = evaluate_hypothesis(pairs, records_by_unit, by_id, control, treatment, scope)
        except NoMatchesError as exc:
            failures.append({"control": control.label, "treatment": treatment.label, "error": exc.code})
            continue
        row = res.to_dict()
        row["treatment_units"] = len(t_units)
        row["control_units"] = len(c_units)
        row["unmatched_treatment_units"] = len(t_units) - len(pairs)
        results.append(row)
    return {
        "config": config.to_dict(),
        "matching": "one-to-one greedy (descending treatment download capacity, nearest control)",
        "no_match_comparisons": failures,
        "results": results,
    }
