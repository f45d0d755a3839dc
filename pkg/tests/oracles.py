"""Independent reference computations used only by the tests."""

import numpy as np

from usd.embeddings import WeightedParticles
from usd.features import build_rff


def gaussian_kernel(x, y, sigma):
    d2 = ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)
    return np.exp(-d2 / (2 * sigma ** 2))


def exact_mmd2(p: WeightedParticles, q: WeightedParticles, sigma):
    """Double-sum Gaussian-kernel MMD^2 between weighted particle sets."""
    kpp = p.weights @ gaussian_kernel(p.points, p.points, sigma) @ p.weights
    kqq = q.weights @ gaussian_kernel(q.points, q.points, sigma) @ q.weights
    kpq = p.weights @ gaussian_kernel(p.points, q.points, sigma) @ q.weights
    return float(kpp + kqq - 2 * kpq)


def central_diff(f, x, h=1e-5):
    """Jacobian of f at x by central differences; rows index the input."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(f(x))
    out = np.empty((x.size,) + f0.shape)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        out[i] = (np.atleast_1d(f(x + e)) - np.atleast_1d(f(x - e))) / (2 * h)
    return out


def naive_stats(P: WeightedParticles, fm):
    """mu, second moment and Jacobian Gramian accumulated one particle at a time."""
    m = fm.dim_out
    mu, c, d = np.zeros(m), np.zeros((m, m)), np.zeros((m, m))
    for x, w in zip(P.points, P.weights):
        phi = fm(x)
        jac = fm.jacobian(x)
        mu += w * phi
        c += w * np.outer(phi, phi)
        d += w * jac.T @ jac
    return mu, c, d


def random_instance(rng, n=200, d=2, m=64, shift=0.5):
    fm = build_rff(d, m, seed=int(rng.integers(2**31)))
    p = WeightedParticles(rng.normal(shift, 1.0, (n, d)), rng.dirichlet(np.ones(n)))
    q = WeightedParticles(rng.normal(0.0, 1.0, (n, d)), rng.dirichlet(np.ones(n)))
    return p, q, fm
