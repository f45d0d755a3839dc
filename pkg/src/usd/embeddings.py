"""Weighted particle sets and their feature-space statistics.

For a weighted cloud q = sum_j w_j delta_{x_j} and a feature map Phi:

    mean embedding      mu(q)   = sum_j w_j Phi(x_j)
    covariance          C_g(q)  = sum_j w_j Phi(x_j) Phi(x_j)^T - g mu mu^T
    Jacobian Gramian    D(q)    = sum_j w_j JPhi(x_j)^T JPhi(x_j)

Weights are used as given. They need not sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError
from .features import FeatureMap, feature_jacobian, featurize


@dataclass(frozen=True, eq=False)
class WeightedParticles:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError(f"points must be a nonempty (n, d) array, got shape {pts.shape}")
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != pts.shape[0]:
            raise DimensionMismatchError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(w))):
            raise ValueError("points and weights must be finite")
        if np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be nonnegative with at least one positive")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "WeightedParticles":
        pts = np.asarray(points, dtype=float)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def normalized(self) -> "WeightedParticles":
        return WeightedParticles(self.points, self.weights / self.weights.sum())

    def with_weights(self, weights) -> "WeightedParticles":
        return WeightedParticles(self.points, weights)


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    mean: np.ndarray
    covariance: np.ndarray
    jac_gramian: np.ndarray
    gamma: int


def _check(P: WeightedParticles, fm: FeatureMap):
    if P.dim != fm.dim_in:
        raise DimensionMismatchError(f"particles have dimension {P.dim}, feature map expects {fm.dim_in}")


def _check_gamma(gamma):
    if gamma not in (0, 1):
        raise ValueError(f"gamma must be 0 or 1, got {gamma}")


def mean_embedding(P: WeightedParticles, fm: FeatureMap) -> np.ndarray:
    _check(P, fm)
    return P.weights @ featurize(fm, P.points)


def covariance(P: WeightedParticles, fm: FeatureMap, gamma: int = 0) -> np.ndarray:
    _check(P, fm)
    _check_gamma(gamma)
    phi = featurize(fm, P.points)
    c = (phi * P.weights[:, None]).T @ phi
    if gamma:
        mu = P.weights @ phi
        c = c - np.outer(mu, mu)
    return 0.5 * (c + c.T)


def _rff_gramian(fm: FeatureMap, sines, weights) -> np.ndarray:
    # J_j^T J_j = scale^2 (s_j s_j^T) * (Omega Omega^T) elementwise, so the
    # weighted sum never forms the (n d, m) Jacobian stack
    g = fm.scale ** 2 * ((sines * weights[:, None]).T @ sines) * (fm.frequencies @ fm.frequencies.T)
    return 0.5 * (g + g.T)


def jacobian_gramian(P: WeightedParticles, fm: FeatureMap) -> np.ndarray:
    _check(P, fm)
    if fm.kind == "rff":
        return _rff_gramian(fm, np.sin(P.points @ fm.frequencies.T + fm.phases), P.weights)
    jac = feature_jacobian(fm, P.points)  # (n, d, m)
    flat = jac.reshape(-1, fm.dim_out)
    w = np.repeat(P.weights, P.dim)
    g = (flat * w[:, None]).T @ flat
    return 0.5 * (g + g.T)


def embedding_delta(target: WeightedParticles, source: WeightedParticles, fm: FeatureMap) -> np.ndarray:
    return mean_embedding(target, fm) - mean_embedding(source, fm)


def embed(P: WeightedParticles, fm: FeatureMap, gamma: int = 0) -> EmbeddingSet:
    """All three statistics in one pass over the features."""
    _check(P, fm)
    _check_gamma(gamma)
    if fm.kind == "rff":
        theta = P.points @ fm.frequencies.T + fm.phases
        phi = fm.scale * np.cos(theta)
        gram = _rff_gramian(fm, np.sin(theta), P.weights)
    else:
        phi = featurize(fm, P.points)
        gram = jacobian_gramian(P, fm)
    mu = P.weights @ phi
    c = (phi * P.weights[:, None]).T @ phi
    if gamma:
        c = c - np.outer(mu, mu)
    return EmbeddingSet(
        mean=mu,
        covariance=0.5 * (c + c.T),
        jac_gramian=gram,
        gamma=gamma,
    )
