"""Tests for the metrics module."""

from __future__ import annotations

import time

import pytest

from gaugecal.metrics import DEFAULT_BUCKETS, HistogramValue, RunMetrics, Timer

# ============================================================================
# HistogramValue Tests
# ============================================================================


class TestHistogramValue:
    """Tests for HistogramValue dataclass."""

    def test_default_values(self) -> None:
        """HistogramValue has sensible defaults."""
        hist = HistogramValue()

        assert hist.sum == 0.0
        assert hist.count == 0
        assert hist.buckets == {}
        assert hist.mean == 0.0

    def test_mean(self) -> None:
        """The mean divides the sum by the count."""
        assert HistogramValue(sum=30.0, count=4).mean == 7.5


# ============================================================================
# Counter Tests
# ============================================================================


class TestCounters:
    """Tests for counter metrics."""

    @pytest.fixture
    def fresh_metrics(self) -> RunMetrics:
        """Create a fresh metrics instance."""
        return RunMetrics()

    def test_inc_counter_basic(self, fresh_metrics: RunMetrics) -> None:
        """Counter can be incremented."""
        fresh_metrics.inc_counter("fits_total")
        fresh_metrics.inc_counter("fits_total")

        assert fresh_metrics.get_counter("fits_total") == 2.0

    def test_inc_counter_with_value(self, fresh_metrics: RunMetrics) -> None:
        """Counter can be incremented by a specific value."""
        fresh_metrics.inc_counter("targets_total", value=40)
        fresh_metrics.inc_counter("targets_total", value=2)

        assert fresh_metrics.get_counter("targets_total") == 42.0

    def test_inc_counter_with_labels(self, fresh_metrics: RunMetrics) -> None:
        """Counters with labels track separately."""
        fresh_metrics.inc_counter("fits_total", model="emos", status="converged")
        fresh_metrics.inc_counter("fits_total", model="bma_naive", status="failed")
        fresh_metrics.inc_counter("fits_total", status="converged", model="emos")

        assert fresh_metrics.get_counter("fits_total", model="emos", status="converged") == 2.0
        assert fresh_metrics.get_counter("fits_total", model="bma_naive", status="failed") == 1.0

    def test_inc_counter_negative_raises(self, fresh_metrics: RunMetrics) -> None:
        """Counter cannot be decremented."""
        with pytest.raises(ValueError, match="non-negative"):
            fresh_metrics.inc_counter("fits_total", value=-1)

    def test_get_counter_unset(self, fresh_metrics: RunMetrics) -> None:
        """Unset counter returns 0."""
        assert fresh_metrics.get_counter("nonexistent") == 0.0


# ============================================================================
# Histogram Tests
# ============================================================================


class TestHistograms:
    """Tests for histogram metrics."""

    @pytest.fixture
    def fresh_metrics(self) -> RunMetrics:
        """Create a fresh metrics instance."""
        return RunMetrics()

    def test_observe_histogram_basic(self, fresh_metrics: RunMetrics) -> None:
        """Histogram records sum and count."""
        for value in (10.0, 20.0, 30.0):
            fresh_metrics.observe_histogram("fit_duration_ms", value)

        hist = fresh_metrics.get_histogram("fit_duration_ms")
        assert hist is not None
        assert hist.count == 3
        assert hist.sum == 60.0
        assert hist.mean == 20.0

    def test_histogram_buckets(self, fresh_metrics: RunMetrics) -> None:
        """Bucket counts are cumulative."""
        for value in (3.0, 7.0, 40.0, 2000.0):
            fresh_metrics.observe_histogram("fit_duration_ms", value)

        hist = fresh_metrics.get_histogram("fit_duration_ms")
        assert hist is not None
        assert set(hist.buckets) == set(DEFAULT_BUCKETS)
        assert hist.buckets[5] == 1
        assert hist.buckets[10] == 2
        assert hist.buckets[50] == 3
        assert hist.buckets[5000] == 4
        assert hist.buckets[float("inf")] == 4

    def test_get_histogram_unset(self, fresh_metrics: RunMetrics) -> None:
        """Unset histogram returns None."""
        assert fresh_metrics.get_histogram("nonexistent") is None


# ============================================================================
# Snapshot and Merge Tests
# ============================================================================


class TestSnapshot:
    """Tests for snapshot, merge and reset."""

    def test_snapshot_keys(self) -> None:
        """Snapshot keys carry the prefix and sorted labels."""
        m = RunMetrics()
        m.inc_counter("fits_total", status="converged", model="emos")
        m.observe_histogram("fit_duration_ms", 12.3456, model="emos")

        snap = m.snapshot()
        assert snap["counters"] == {'gaugecal_fits_total{model="emos",status="converged"}': 1.0}
        hist = snap["histograms"]['gaugecal_fit_duration_ms{model="emos"}']
        assert (hist["count"], hist["sum"], hist["mean"]) == (1, 12.346, 12.346)

    def test_snapshot_buckets(self) -> None:
        """Snapshot buckets are cumulative and labelled by upper bound."""
        m = RunMetrics()
        for value in (0.5, 7.0, 70_000.0):
            m.observe_histogram("fit_duration_ms", value)

        buckets = m.snapshot()["histograms"]["gaugecal_fit_duration_ms"]["buckets"]
        assert list(buckets)[:3] == ["1", "5", "10"]
        assert buckets["1"] == 1
        assert buckets["5"] == 1
        assert buckets["10"] == 2
        assert buckets["60000"] == 2
        assert buckets["+Inf"] == 3

    def test_merge(self) -> None:
        """Merging adds counters and histograms."""
        total, part = RunMetrics(), RunMetrics()
        total.inc_counter("fits_total", model="emos")
        part.inc_counter("fits_total", model="emos")
        part.inc_counter("fits_total", model="bma_naive")
        part.observe_histogram("fit_duration_ms", 8.0)

        total.merge(part)

        assert total.get_counter("fits_total", model="emos") == 2.0
        assert total.get_counter("fits_total", model="bma_naive") == 1.0
        hist = total.get_histogram("fit_duration_ms")
        assert hist is not None
        assert hist.count == 1
        assert hist.buckets[10] == 1

    def test_reset_clears_all(self) -> None:
        """reset() clears counters and histograms."""
        m = RunMetrics()
        m.inc_counter("fits_total")
        m.observe_histogram("fit_duration_ms", 10.0)

        m.reset()

        assert m.get_counter("fits_total") == 0.0
        assert m.get_histogram("fit_duration_ms") is None
        assert m.snapshot() == {"counters": {}, "histograms": {}}


# ============================================================================
# Timer Tests
# ============================================================================


class TestTimer:
    """Tests for Timer context manager."""

    def test_timer_measures_duration(self) -> None:
        """Timer measures duration."""
        with Timer() as t:
            time.sleep(0.01)

        assert t.duration_ms >= 10
        assert t.duration_ms < 1000
