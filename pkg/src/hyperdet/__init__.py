"""Rumor source detection on hypergraphs: cascade simulation, feature construction and attention models."""

__version__ = "0.1.0"
