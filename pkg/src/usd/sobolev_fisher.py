"""Closed-form kernel Sobolev-Fisher critic.

The critic coefficients solve

    (D(q) + alpha C_gamma(q) + lambda I) u = mu(p) - mu(q)

and the discrepancy is SF^2 = <u, delta>. The critic is evaluated as
u(x) = <u, Phi(x)> with spatial gradient JPhi(x) u.

``whitened_spectrum`` rewrites the same solve in the feature space whitened
by (C_gamma + lambda/alpha I)^{-1/2}; reassembling the critic from that
eigendecomposition gives an independent check of the direct solve.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .embeddings import WeightedParticles, embed, mean_embedding
from .errors import DimensionMismatchError, FactorizationError
from .features import FeatureMap, feature_jacobian, featurize

EIG_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class KernelCritic:
    coeffs: np.ndarray
    feature_map: FeatureMap
    alpha: float
    lam: float
    gamma: int
    delta: np.ndarray | None = None
    fallback: bool = False  # True when the Cholesky factorization failed

    def value(self, x):
        return critic_value(self, x)

    def grad(self, x):
        return critic_grad(self, x)

    @property
    def sf2(self) -> float:
        if self.delta is None:
            raise ValueError("critic was built without its embedding difference")
        return max(float(self.coeffs @ self.delta), 0.0)


@dataclass(frozen=True, eq=False)
class WhitenedSpectrum:
    eigvals: np.ndarray  # descending
    eigvecs: np.ndarray  # columns
    whitener: np.ndarray
    whitened_delta: np.ndarray


def _validate(alpha, lam, gamma):
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    if not alpha >= 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if gamma not in (0, 1):
        raise ValueError(f"gamma must be 0 or 1, got {gamma}")


def system_matrix(source: WeightedParticles, fm: FeatureMap, alpha: float, lam: float, gamma: int):
    """Return (D + alpha C_gamma + lambda I, mu(source))."""
    emb = embed(source, fm, gamma)
    a = emb.jac_gramian + alpha * emb.covariance
    a[np.diag_indices_from(a)] += lam
    return a, emb.mean


def solve_system(a: np.ndarray, b: np.ndarray, strict: bool = False):
    """Solve the symmetric system a x = b. Returns (x, used_fallback).

    Cholesky first, with one step of iterative refinement. If the matrix is
    not numerically positive definite a symmetric solve is used instead and
    a warning is emitted, unless ``strict`` is set.
    """
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise FactorizationError("non-finite entries in critic system")
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        if strict:
            raise FactorizationError(f"critic system is not positive definite: {exc}") from exc
        warnings.warn("critic system not positive definite; using symmetric solve", RuntimeWarning, stacklevel=3)
        try:
            x = scipy.linalg.solve(a, b, assume_a="sym", check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as exc2:
            raise FactorizationError(f"critic system is singular: {exc2}") from exc2
        return x, True
    x = scipy.linalg.cho_solve(factor, b, check_finite=False)
    x = x + scipy.linalg.cho_solve(factor, b - a @ x, check_finite=False)
    return x, False


def solve_critic(
    target: WeightedParticles,
    source: WeightedParticles,
    fm: FeatureMap,
    alpha: float,
    lam: float,
    gamma: int,
    strict: bool = False,
    target_mean=None,
) -> KernelCritic:
    """``target_mean`` may carry a precomputed mu(target) for repeated solves."""
    _validate(alpha, lam, gamma)
    if target.dim != source.dim:
        raise DimensionMismatchError(f"target dimension {target.dim} != source dimension {source.dim}")
    if not source.total_mass > 0:
        raise ValueError("source must have positive total mass")
    a, mu_q = system_matrix(source, fm, alpha, lam, gamma)
    if target_mean is None:
        target_mean = mean_embedding(target, fm)
    delta = target_mean - mu_q
    u, fallback = solve_system(a, delta, strict=strict)
    return KernelCritic(
        coeffs=u, feature_map=fm, alpha=float(alpha), lam=float(lam), gamma=gamma,
        delta=delta, fallback=fallback,
    )


def critic_value(c: KernelCritic, x):
    return featurize(c.feature_map, x) @ c.coeffs


def critic_grad(c: KernelCritic, x) -> np.ndarray:
    fm = c.feature_map
    if fm.kind == "rff":
        x = np.asarray(x, dtype=float)
        if x.ndim == 2 and x.shape[1] == fm.dim_in:
            s = np.sin(x @ fm.frequencies.T + fm.phases)
            return (-fm.scale * s * c.coeffs) @ fm.frequencies
    return feature_jacobian(fm, x) @ c.coeffs


def sf_discrepancy(target, source, fm, alpha, lam, gamma) -> float:
    """Regularized kernel Sobolev-Fisher discrepancy SF^2 = <u, delta>, clamped at 0."""
    return solve_critic(target, source, fm, alpha, lam, gamma).sf2


def _inv_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(m)
    if vals[0] <= 0:
        raise FactorizationError(f"whitening matrix not positive definite (min eigenvalue {vals[0]:.3e})")
    vals = np.maximum(vals, EIG_FLOOR)
    w = (vecs / np.sqrt(vals)) @ vecs.T
    return 0.5 * (w + w.T)


def whitened_spectrum(source: WeightedParticles, fm: FeatureMap, alpha: float, lam: float, gamma: int, delta) -> WhitenedSpectrum:
    if not alpha > 0:
        raise ValueError("whitened spectrum requires alpha > 0")
    _validate(alpha, lam, gamma)
    emb = embed(source, fm, gamma)
    m = emb.covariance.copy()
    m[np.diag_indices_from(m)] += lam / alpha
    w = _inv_sqrt(m)
    d_tilde = w @ emb.jac_gramian @ w
    d_tilde = 0.5 * (d_tilde + d_tilde.T)
    vals, vecs = np.linalg.eigh(d_tilde)
    order = np.argsort(vals)[::-1]
    return WhitenedSpectrum(
        eigvals=vals[order],
        eigvecs=vecs[:, order],
        whitener=w,
        whitened_delta=w @ np.asarray(delta, dtype=float),
    )


def spectral_coefficients(spec: WhitenedSpectrum, alpha: float) -> np.ndarray:
    """Weights (lambda_j + alpha)^-1 <d_j, delta~> of each whitened direction."""
    return (spec.eigvecs.T @ spec.whitened_delta) / (spec.eigvals + alpha)


def spectral_critic_coeffs(spec: WhitenedSpectrum, alpha: float) -> np.ndarray:
    """Critic coefficients in the original feature space, reassembled from the spectrum."""
    v = spec.eigvecs @ spectral_coefficients(spec, alpha)
    return spec.whitener @ v


def spectral_critic_grad(spec: WhitenedSpectrum, fm: FeatureMap, alpha: float, x) -> np.ndarray:
    """Critic gradient as a combination of whitened principal transport directions."""
    directions = spec.whitener @ spec.eigvecs  # columns: d_j mapped back through the whitener
    return feature_jacobian(fm, x) @ (directions @ spectral_coefficients(spec, alpha))
