"""Numerical self-tests behind ``usd check``.

Each check draws fresh random instances from the given seed and compares
the library against an independent computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import WeightedParticles, embedding_delta
from .features import build_rff
from .neural_critic import NeuralCritic, alm_objective, alm_param_grad
from .sobolev_fisher import (
    solve_critic, spectral_critic_coeffs, system_matrix, whitened_spectrum,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: {self.value:.3e} (tolerance {self.tolerance:.0e})"


def _instance(rng, n=200, d=2, m=64):
    fm = build_rff(d, m, seed=int(rng.integers(2**31)))
    p = WeightedParticles(rng.normal(0.5, 1.0, (n, d)), rng.dirichlet(np.ones(n)))
    q = WeightedParticles(rng.normal(0.0, 1.0, (n, d)), rng.dirichlet(np.ones(n)))
    return p, q, fm


def check_critic_residual(seed: int, n_instances: int = 50) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        p, q, fm = _instance(rng)
        alpha, lam, gamma = rng.choice([0.0, 0.5]), rng.choice([1e-3, 1e-1]), int(rng.integers(2))
        c = solve_critic(p, q, fm, alpha, lam, gamma)
        a, _ = system_matrix(q, fm, alpha, lam, gamma)
        worst = max(worst, np.linalg.norm(a @ c.coeffs - c.delta) / np.linalg.norm(c.delta))
    return CheckResult("critic solve relative residual", worst <= 1e-8, worst, 1e-8)


def check_mmd_bound(seed: int, n_instances: int = 100) -> CheckResult:
    """lambda * SF^2 never exceeds MMD^2 in the same feature space."""
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(n_instances):
        p, q, fm = _instance(rng, n=100)
        alpha, lam, gamma = rng.choice([0.0, 0.5]), 10 ** rng.uniform(-4, 0), int(rng.integers(2))
        c = solve_critic(p, q, fm, alpha, lam, gamma)
        mmd2 = float(c.delta @ c.delta)
        worst = max(worst, (lam * c.sf2 - mmd2) / mmd2)
    return CheckResult("lambda SF^2 - MMD^2 (relative)", worst <= 1e-10, worst, 1e-10)


def check_spectral(seed: int, n_instances: int = 20) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        p, q, fm = _instance(rng, n=150, m=32)
        alpha, lam, gamma = 0.5, 1e-2, int(rng.integers(2))
        direct = solve_critic(p, q, fm, alpha, lam, gamma).coeffs
        spec = whitened_spectrum(q, fm, alpha, lam, gamma, embedding_delta(p, q, fm))
        recon = spectral_critic_coeffs(spec, alpha)
        worst = max(worst, np.linalg.norm(recon - direct) / np.linalg.norm(direct))
    return CheckResult("spectral reconstruction of critic", worst <= 1e-6, worst, 1e-6)


def check_neural_gradient(seed: int, n_instances: int = 5, h: float = 1e-5) -> CheckResult:
    """Parameter gradient of the augmented Lagrangian against central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        c = NeuralCritic.init(2, (5, 7, 4), "tanh", seed=int(rng.integers(2**31)))
        p = WeightedParticles(rng.normal(size=(9, 2)), rng.dirichlet(np.ones(9)))
        q = WeightedParticles(rng.normal(size=(8, 2)), rng.dirichlet(np.ones(8)))
        args = (1e-2, 0.5, 0.6, int(rng.integers(2)))
        grad, _, _ = alm_param_grad(c, p, q, *args)
        theta = c.params()
        fd = np.empty_like(theta)
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = h
            fd[i] = (alm_objective(c.with_params(theta + e), p, q, *args).objective
                     - alm_objective(c.with_params(theta - e), p, q, *args).objective) / (2 * h)
        scale = np.maximum(np.abs(fd), 1e-3 * np.abs(fd).max())
        worst = max(worst, float(np.max(np.abs(grad - fd) / scale)))
    return CheckResult("neural parameter gradient vs finite differences", worst <= 1e-4, worst, 1e-4)


def run_checks(seed: int = 0) -> list:
    return [
        check_critic_residual(seed),
        check_mmd_bound(seed + 1),
        check_spectral(seed + 2),
        check_neural_gradient(seed + 3),
    ]
