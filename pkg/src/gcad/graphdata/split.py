"""Deterministic train/valid/test splitting."""

import math

import numpy as np

from gcad.graphdata.graph import Dataset


def split_sizes(n, fractions):
    """Sizes for (train, valid, test): valid/test floored, remainder to train.

    Valid and test get at least one unit each when their fraction is positive.
    """
    fv, ft = fractions[1], fractions[2]
    n_valid = max(1, math.floor(n * fv + 1e-9)) if fv > 0 else 0
    n_test = max(1, math.floor(n * ft + 1e-9)) if ft > 0 else 0
    return n - n_valid - n_test, n_valid, n_test


def make_split(ds, fractions=(0.7, 0.1, 0.2), seed=0):
    """Return a copy of ``ds`` with a fresh split over its units.

    Multi-graph datasets split whole graphs; single-graph datasets split the
    labeled nodes.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    units = ds.units()
    if len(units) < 3:
        raise ValueError(f"need at least 3 units to split, got {len(units)}")
    n_train, n_valid, _ = split_sizes(len(units), fractions)
    if n_train < 1:
        raise ValueError(f"split leaves no training units for {len(units)} units")
    perm = np.random.default_rng(seed).permutation(len(units))
    shuffled = [units[i] for i in perm]
    split = {
        "train": sorted(shuffled[:n_train]),
        "valid": sorted(shuffled[n_train:n_train + n_valid]),
        "test": sorted(shuffled[n_train + n_valid:]),
    }
    return Dataset(ds.mode, ds.graphs, split)
