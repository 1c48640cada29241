"""Structured sparse scene-graph generation: set matching, two-stage
pseudo-label assignment, head arithmetic, imbalance-aware losses and the
SGDet metric suite, at desk scale."""

__version__ = "0.1.0"
