"""Toolkit for road-graph preparation, label extraction and scoring of traffic forecasts."""

__version__ = "0.1.0"
