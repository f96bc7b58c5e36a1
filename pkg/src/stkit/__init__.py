"""Spatial-temporal data toolkit.

One coherent pipeline for urban spatio-temporal experiments: a family of
atomic CSV tables as the interchange format, tensorization into dense
time-major arrays, leakage-safe preprocessing, classic forecasting baselines,
HMM map matching, a full metric suite, and a reproducible benchmark harness
with a small CLI.
"""

from . import (
    atomic,
    baselines,
    config,
    dataset,
    evaluate,
    mapmatch,
    pipeline,
    runner,
    search,
    synthetic,
    tensorize,
)
from .exceptions import StkitError

__version__ = "0.1.0"

__all__ = [
    "atomic",
    "baselines",
    "config",
    "dataset",
    "evaluate",
    "mapmatch",
    "pipeline",
    "runner",
    "search",
    "synthetic",
    "tensorize",
    "StkitError",
    "__version__",
]
