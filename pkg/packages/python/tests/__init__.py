"""Gaugecal test suite."""
