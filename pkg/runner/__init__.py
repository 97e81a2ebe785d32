"""Scenario execution: validation, sweep dispatch and CSV/manifest output."""
