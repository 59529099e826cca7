"""aqpcal: sampling-accuracy calibration for spatial selectivity estimation.

Generates synthetic spatial point datasets, measures how accurate
sample-based range counting is at a given sampling ratio, and trains a
dual-branch neural model that predicts accuracy from a sampling ratio or
recommends a sampling ratio for a target accuracy.
"""

__version__ = "0.1.0"
