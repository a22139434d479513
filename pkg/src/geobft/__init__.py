"""Geo-replicated BFT replication framework with a deterministic simulator."""

__version__ = "0.1.0"
