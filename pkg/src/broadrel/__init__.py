"""Reliability analysis for residential broadband measurements."""

__version__ = "0.1.0"

from .model import HourlyRecord, Technology, UnitMeta  # noqa: E402
from .reliability import ReliabilityStats, classify_failures, compute_stats  # noqa: E402

__all__ = [
    "HourlyRecord",
    "ReliabilityStats",
    "Technology",
    "UnitMeta",
    "__version__",
    "classify_failures",
    "compute_stats",
]
