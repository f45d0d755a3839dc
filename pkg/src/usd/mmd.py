"""Squared MMD between weighted clouds as a distance of mean embeddings."""

from __future__ import annotations

import numpy as np

from .embeddings import WeightedParticles, mean_embedding
from .features import FeatureMap, build_rff

EVAL_FEATURES = 300


def mmd2(p: WeightedParticles, q: WeightedParticles, fm: FeatureMap) -> float:
    """|mu(p) - mu(q)|^2 with the weights taken as-is (no normalization)."""
    diff = mean_embedding(p, fm) - mean_embedding(q, fm)
    return float(diff @ diff)


def build_eval_map(d: int, seed: int = 0) -> FeatureMap:
    """Frozen evaluation map: 300 random features, bandwidth sqrt(d)."""
    return build_rff(d, EVAL_FEATURES, bandwidth=float(np.sqrt(d)), seed=seed)
