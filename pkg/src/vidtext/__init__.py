"""Hierarchical video+subtitle encoder with pre-training objectives,
downstream task heads, and retrieval metrics, runnable end-to-end on
synthetic corpora at desk scale."""

__version__ = "0.1.0"
