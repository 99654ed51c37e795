"""Desk-scale lab for temporal knowledge-graph question answering."""

__version__ = "0.1.0"
