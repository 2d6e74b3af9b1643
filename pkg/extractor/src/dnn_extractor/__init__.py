"""Offline adapter that turns image datasets and torch models into the
files the core toolkit consumes: feature matrices (FMAT1 + CSV),
activation traces (ATRC1) with training profiles (JSON), prediction
outcomes (CSV), and low-dimensional embeddings (CSV + sidecar).

This package only produces files; it never computes adequacy metrics.
"""

__version__ = "0.1.0"
