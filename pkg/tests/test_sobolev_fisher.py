import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from usd.embeddings import WeightedParticles, covariance, embedding_delta, jacobian_gramian
from usd.errors import DimensionMismatchError, FactorizationError
from usd.features import build_identity, build_rff
from usd.sobolev_fisher import (
    KernelCritic, critic_grad, critic_value, sf_discrepancy, solve_critic, solve_system,
    spectral_critic_coeffs, spectral_critic_grad, system_matrix, whitened_spectrum,
)
from oracles import central_diff, random_instance


def point(x, w=1.0):
    return WeightedParticles(np.array([[x]], dtype=float), np.array([w]))


def dense_critic(p, q, fm, alpha, lam, gamma):
    a = jacobian_gramian(q, fm) + alpha * covariance(q, fm, gamma) + lam * np.eye(fm.dim_out)
    delta = embedding_delta(p, q, fm)
    return np.linalg.inv(a) @ delta, delta


def test_scalar_example():
    c = solve_critic(point(2.0), point(0.0), build_identity(1), alpha=0.7, lam=1.0, gamma=0)
    assert c.coeffs == pytest.approx([1.0])
    assert c.sf2 == pytest.approx(2.0)
    assert sf_discrepancy(point(2.0), point(0.0), build_identity(1), 0.7, 1.0, 0) == pytest.approx(2.0)


def test_same_distribution_gives_zero_critic():
    rng = np.random.default_rng(0)
    p = WeightedParticles.uniform(rng.normal(size=(30, 2)))
    fm = build_rff(2, 16, seed=1)
    c = solve_critic(p, p, fm, 0.5, 1e-3, 1)
    assert np.array_equal(c.coeffs, np.zeros(16))
    assert c.sf2 == 0.0


def test_dense_inverse_oracle():
    rng = np.random.default_rng(4)
    p, q, fm = random_instance(rng, n=50, m=32)
    c = solve_critic(p, q, fm, 0.5, 1e-3, 1)
    u, _ = dense_critic(p, q, fm, 0.5, 1e-3, 1)
    assert np.linalg.norm(c.coeffs - u) <= 1e-8 * np.linalg.norm(u)


def test_system_matrix_symmetric():
    rng = np.random.default_rng(2)
    _, q, fm = random_instance(rng, n=40, m=20)
    a, _ = system_matrix(q, fm, 0.5, 1e-2, 1)
    assert np.array_equal(a, a.T)


def test_critic_value_examples():
    fm = build_identity(1)
    zero = KernelCritic(np.zeros(1), fm, 0.0, 1.0, 0)
    assert critic_value(zero, np.array([5.0])) == 0.0
    one = KernelCritic(np.ones(1), fm, 0.0, 1.0, 0)
    assert critic_value(one, np.array([3.0])) == pytest.approx(3.0)


def test_critic_value_componentwise():
    fm = build_rff(2, 10, seed=3)
    u = np.random.default_rng(0).normal(size=10)
    c = KernelCritic(u, fm, 0.5, 1e-3, 1)
    x = np.array([0.3, -0.8])
    assert critic_value(c, x) == pytest.approx(float(u @ fm(x)), abs=1e-15)


def test_critic_grad_examples():
    fm = build_identity(2)
    assert np.array_equal(critic_grad(KernelCritic(np.zeros(2), fm, 0, 1, 0), np.ones(2)), np.zeros(2))
    u = np.array([0.4, -2.0])
    c = KernelCritic(u, fm, 0, 1, 0)
    for x in ([0.0, 0.0], [5.0, -3.0]):
        assert np.allclose(critic_grad(c, np.array(x)), u)


def test_critic_grad_finite_differences():
    rng = np.random.default_rng(7)
    p, q, fm = random_instance(rng, n=60, m=24)
    c = solve_critic(p, q, fm, 0.5, 1e-3, 1)
    for _ in range(5):
        x = rng.normal(size=2)
        fd = central_diff(lambda z: critic_value(c, z), x).ravel()
        assert np.max(np.abs(critic_grad(c, x) - fd)) <= 1e-6


def test_batched_grad_matches_single_point():
    rng = np.random.default_rng(8)
    p, q, fm = random_instance(rng, n=40, m=16)
    c = solve_critic(p, q, fm, 0.5, 1e-2, 0)
    x = rng.normal(size=(7, 2))
    batched = critic_grad(c, x)
    assert np.allclose(batched, np.array([critic_grad(c, xi) for xi in x]), rtol=1e-13, atol=1e-15)


def test_damping_lowers_sf2():
    rng = np.random.default_rng(5)
    p, q, fm = random_instance(rng, n=100, m=32)
    damped = sf_discrepancy(p, q, fm, 0.5, 1e-3, 1)
    plain = sf_discrepancy(p, q, fm, 0.0, 1e-3, 1)
    assert damped < plain


def test_dimension_mismatch():
    fm = build_rff(2, 4)
    p = WeightedParticles.uniform(np.zeros((3, 2)))
    q = WeightedParticles.uniform(np.zeros((3, 3)))
    with pytest.raises(DimensionMismatchError):
        solve_critic(p, q, fm, 0.5, 1e-3, 1)


@pytest.mark.parametrize("kw", [dict(lam=0.0), dict(lam=-1.0), dict(alpha=-0.1), dict(gamma=2)])
def test_invalid_parameters(kw):
    fm = build_identity(1)
    args = dict(alpha=0.5, lam=1e-3, gamma=1) | kw
    with pytest.raises(ValueError):
        solve_critic(point(1.0), point(0.0), fm, **args)


def test_non_pd_system_falls_back_with_warning():
    a = np.array([[1.0, 0.0], [0.0, -2.0]])
    b = np.array([1.0, 4.0])
    with pytest.warns(RuntimeWarning):
        x, used = solve_system(a, b)
    assert used and np.allclose(a @ x, b)
    with pytest.raises(FactorizationError):
        solve_system(a, b, strict=True)


def test_non_finite_system_raises():
    with pytest.raises(FactorizationError):
        solve_system(np.array([[np.nan]]), np.array([1.0]))


def test_unnormalized_gamma1_source_still_solves():
    # total mass 3 makes C - mu mu^T indefinite; lambda keeps the system solvable
    rng = np.random.default_rng(1)
    q = WeightedParticles(rng.normal(size=(40, 2)), np.full(40, 3 / 40))
    p = WeightedParticles.uniform(rng.normal(size=(40, 2)) + 1)
    fm = build_rff(2, 16, seed=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        c = solve_critic(p, q, fm, 0.5, 1e-1, 1)
    a, _ = system_matrix(q, fm, 0.5, 1e-1, 1)
    assert np.linalg.norm(a @ c.coeffs - c.delta) <= 1e-8 * np.linalg.norm(c.delta)


def test_whitened_identity_axis_aligned():
    # +-s_a e_a with equal weights: C = diag(s^2)/3 for gamma=0 and D = I
    scales = np.array([1.0, 2.0, 3.0])
    pts = np.vstack([np.diag(scales), -np.diag(scales)])
    q = WeightedParticles.uniform(pts)
    spec = whitened_spectrum(q, build_identity(3), alpha=0.5, lam=0.1, gamma=0, delta=np.ones(3))
    expected = 1.0 / (scales ** 2 / 3 + 0.2)
    assert np.allclose(spec.eigvals, np.sort(expected)[::-1])
    assert np.allclose(np.abs(spec.eigvecs), np.eye(3)[:, np.argsort(-expected)], atol=1e-12)


def test_whitened_spectrum_properties():
    rng = np.random.default_rng(9)
    p, q, fm = random_instance(rng, n=80, m=24)
    spec = whitened_spectrum(q, fm, 0.5, 1e-3, 1, embedding_delta(p, q, fm))
    assert spec.eigvals.min() >= -1e-10
    assert np.all(np.diff(spec.eigvals) <= 0)
    assert np.allclose(spec.eigvecs.T @ spec.eigvecs, np.eye(24), atol=1e-10)


def test_whitened_spectrum_needs_positive_alpha():
    rng = np.random.default_rng(0)
    p, q, fm = random_instance(rng, n=20, m=8)
    with pytest.raises(ValueError):
        whitened_spectrum(q, fm, 0.0, 1e-3, 1, embedding_delta(p, q, fm))


def test_whitener_factorization_failure():
    # gamma=1 with mass 5 on one point gives C_1 = -20 phi phi^T, indefinite
    q = WeightedParticles(np.array([[0.3, 0.2]]), np.array([5.0]))
    fm = build_rff(2, 4, seed=0)
    with pytest.raises(FactorizationError):
        whitened_spectrum(q, fm, 1.0, 1e-6, 1, np.ones(4))


def test_spectral_reconstruction_and_gradient():
    rng = np.random.default_rng(10)
    p, q, fm = random_instance(rng, n=100, m=32)
    c = solve_critic(p, q, fm, 0.5, 1e-2, 1)
    spec = whitened_spectrum(q, fm, 0.5, 1e-2, 1, c.delta)
    u = spectral_critic_coeffs(spec, 0.5)
    assert np.linalg.norm(u - c.coeffs) <= 1e-6 * np.linalg.norm(c.coeffs)
    x = rng.normal(size=(10, 2))
    g = spectral_critic_grad(spec, fm, 0.5, x)
    assert np.linalg.norm(g - critic_grad(c, x)) <= 1e-6 * np.linalg.norm(critic_grad(c, x))


instances = st.integers(0, 10**6).map(np.random.default_rng)


@settings(max_examples=30, deadline=None)
@given(rng=instances, lam=st.floats(1e-4, 1.0), alpha=st.floats(0.0, 2.0), gamma=st.sampled_from([0, 1]))
def test_mmd_upper_bounds_lambda_sf2(rng, lam, alpha, gamma):
    p, q, fm = random_instance(rng, n=60, m=16)
    c = solve_critic(p, q, fm, alpha, lam, gamma)
    mmd2 = float(c.delta @ c.delta)
    assert lam * c.sf2 <= mmd2 * (1 + 1e-10)


@settings(max_examples=20, deadline=None)
@given(rng=instances, gamma=st.sampled_from([0, 1]))
def test_sf2_monotone_in_lambda_and_alpha(rng, gamma):
    p, q, fm = random_instance(rng, n=60, m=16)
    lams = [1e-4, 1e-3, 1e-2, 1e-1, 1.0]
    by_lam = [sf_discrepancy(p, q, fm, 0.5, lam, gamma) for lam in lams]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(by_lam, by_lam[1:]))
    alphas = [0.0, 0.1, 0.5, 1.0, 5.0]
    by_alpha = [sf_discrepancy(p, q, fm, a, 1e-3, gamma) for a in alphas]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(by_alpha, by_alpha[1:]))


@settings(max_examples=20, deadline=None)
@given(rng=instances, lam=st.sampled_from([1e-3, 1e-2, 1e-1]), gamma=st.sampled_from([0, 1]))
def test_sf2_nonnegative_and_residual(rng, lam, gamma):
    p, q, fm = random_instance(rng, n=50, m=12)
    c = solve_critic(p, q, fm, 0.5, lam, gamma)
    assert float(c.coeffs @ c.delta) >= -1e-12
    a, _ = system_matrix(q, fm, 0.5, lam, gamma)
    assert np.linalg.norm(a @ c.coeffs - c.delta) <= 1e-8 * np.linalg.norm(c.delta)
