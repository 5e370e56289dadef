"""Cluster-based D2D relaying for machine-type uplink traffic: a seeded system-level simulator."""

__version__ = "0.1.0"
