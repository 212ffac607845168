"""Benchmark dataset construction: (weight, style, content) triples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAIN_RANGE = (50.0, 2000.0)
AGGRESSIVE_RANGE = (2000.0, 10000.0)
DEFAULT_N_WEIGHTS = 20
DEFAULT_PAIRS_PER_WEIGHT = 15


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Triple:
    weight: float
    style_id: str
    content_id: str


def build_dataset(kind: str, styles, contents, seed: int = 0, n_weights: int = DEFAULT_N_WEIGHTS, pairs_per_weight: int = DEFAULT_PAIRS_PER_WEIGHT):
    """Main: evenly spaced weights; Aggressive: uniform-random weights.

    Each weight gets `pairs_per_weight` style/content pairs drawn uniformly
    (with replacement) by the seeded generator.
    """
    style_ids = sorted(styles)
    content_ids = sorted(contents)
    if not style_ids or not content_ids:
        raise DatasetError("empty style or content pool")
    rng = np.random.default_rng(seed)
    if kind == "Main":
        weights = np.linspace(*MAIN_RANGE, n_weights)
    elif kind == "Aggressive":
        weights = rng.uniform(*AGGRESSIVE_RANGE, n_weights)
    else:
        raise DatasetError(f"unknown dataset kind {kind!r}")
    triples = []
    for w in weights:
        si = rng.integers(0, len(style_ids), pairs_per_weight)
        ci = rng.integers(0, len(content_ids), pairs_per_weight)
        for a, b in zip(si, ci):
            triples.append(Triple(weight=float(w), style_id=style_ids[a], content_id=content_ids[b]))
    return triples
