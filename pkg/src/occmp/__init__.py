"""Occupancy-weighted max-pressure signal control on a store-and-forward grid simulator."""

from __future__ import annotations

__version__ = "0.1.0"
