"""Stem-based knowledge-graph retrieval and VQA evaluation toolkit."""

__version__ = "0.1.0"
