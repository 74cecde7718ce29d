"""Run metrics for Gaugecal.

This module provides a small counter/histogram collector whose snapshot
is written into the run manifest.
"""

from __future__ import annotations

import math
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any

# ============================================================================
# Histogram Buckets
# ============================================================================

# Default histogram buckets for fit durations (in milliseconds)
DEFAULT_BUCKETS = (1, 5, 10, 50, 100, 500, 1000, 5000, 10000, 60000, float("inf"))


def _bucket_label(bound: float) -> str:
    return "+Inf" if math.isinf(bound) else f"{bound:g}"


# ============================================================================
# Metric Types
# ============================================================================


@dataclass
class HistogramValue:
    """Histogram metric with bucket counts."""

    sum: float = 0.0
    """Sum of all observed values."""

    count: int = 0
    """Number of observations."""

    buckets: dict[float, int] = field(default_factory=dict)
    """Bucket counts (upper bound -> cumulative count)."""

    @property
    def mean(self) -> float:
        """Mean observed value (0 when empty)."""
        return self.sum / self.count if self.count else 0.0


# ============================================================================
# Metrics Collector
# ============================================================================


class RunMetrics:
    """Counters and histograms for one calibration run.

    Example:
        >>> metrics = RunMetrics()
        >>> metrics.inc_counter("fits_total", model="emos", status="converged")
        >>> metrics.observe_histogram("fit_duration_ms", 12.5, model="emos")
        >>> metrics.snapshot()["counters"]
        {'gaugecal_fits_total{model="emos",status="converged"}': 1.0}
    """

    def __init__(self, prefix: str = "gaugecal") -> None:
        self._prefix = prefix
        self._counters: dict[str, float] = defaultdict(float)
        self._histograms: dict[str, HistogramValue] = {}

    def _make_key(self, name: str, labels: dict[str, str]) -> str:
        """Create a unique key from name and labels."""
        full_name = f"{self._prefix}_{name}"
        if not labels:
            return full_name

        label_str = ",".join(f'{k}="{v}"' for k, v in sorted(labels.items()))
        return f"{full_name}{{{label_str}}}"

    # ========================================================================
    # Counter Operations
    # ========================================================================

    def inc_counter(self, name: str, value: float = 1.0, **labels: str) -> None:
        """Increment a counter.

        Args:
            name: Counter name (without prefix).
            value: Amount to increment (must be non-negative).
            **labels: Label key-value pairs.

        Raises:
            ValueError: If value is negative.
        """
        if value < 0:
            raise ValueError("Counter increment must be non-negative")
        self._counters[self._make_key(name, labels)] += value

    def get_counter(self, name: str, **labels: str) -> float:
        """Get current counter value (0 if never incremented)."""
        return self._counters.get(self._make_key(name, labels), 0.0)

    # ========================================================================
    # Histogram Operations
    # ========================================================================

    def observe_histogram(self, name: str, value: float, **labels: str) -> None:
        """Record a histogram observation.

        Args:
            name: Histogram name (without prefix).
            value: Observed value.
            **labels: Label key-value pairs.
        """
        key = self._make_key(name, labels)
        if key not in self._histograms:
            self._histograms[key] = HistogramValue(buckets={b: 0 for b in DEFAULT_BUCKETS})

        hist = self._histograms[key]
        hist.sum += value
        hist.count += 1
        for bucket in hist.buckets:
            if value <= bucket:
                hist.buckets[bucket] += 1

    def get_histogram(self, name: str, **labels: str) -> HistogramValue | None:
        """Get histogram data, or None if nothing was recorded."""
        return self._histograms.get(self._make_key(name, labels))

    # ========================================================================
    # Export
    # ========================================================================

    def snapshot(self) -> dict[str, Any]:
        """Plain-dict view for the run manifest, keys sorted.

        Histogram buckets are keyed by their upper bound ("+Inf" for the
        last) and hold cumulative counts.
        """
        return {
            "counters": {k: self._counters[k] for k in sorted(self._counters)},
            "histograms": {
                k: {
                    "count": h.count,
                    "sum": round(h.sum, 3),
                    "mean": round(h.mean, 3),
                    "buckets": {_bucket_label(b): n for b, n in sorted(h.buckets.items())},
                }
                for k, h in sorted(self._histograms.items())
            },
        }

    def merge(self, other: RunMetrics) -> None:
        """Fold another collector's values into this one."""
        for key, value in other._counters.items():
            self._counters[key] += value
        for key, hist in other._histograms.items():
            mine = self._histograms.setdefault(
                key, HistogramValue(buckets={b: 0 for b in DEFAULT_BUCKETS})
            )
            mine.sum += hist.sum
            mine.count += hist.count
            for bucket, count in hist.buckets.items():
                mine.buckets[bucket] = mine.buckets.get(bucket, 0) + count

    def reset(self) -> None:
        """Reset all metrics to their initial state."""
        self._counters.clear()
        self._histograms.clear()


# ============================================================================
# Timer
# ============================================================================


class Timer:
    """Context manager for timing operations.

    Example:
        >>> with Timer() as t:
        ...     do_something()
        >>> print(f"Took {t.duration_ms:.2f}ms")
    """

    def __init__(self) -> None:
        self._start: float = 0.0
        self._end: float = 0.0

    def __enter__(self) -> Timer:
        self._start = time.perf_counter()
        return self

    def __exit__(self, *args: Any) -> None:
        self._end = time.perf_counter()

    @property
    def duration_ms(self) -> float:
        """Get duration in milliseconds."""
        return (self._end - self._start) * 1000
