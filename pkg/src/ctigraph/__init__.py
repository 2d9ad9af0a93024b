"""Threat-report ingestion pipeline and security knowledge graph."""

__version__ = "0.1.0"
