import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from usd.embeddings import WeightedParticles
from usd.errors import DimensionMismatchError
from usd.features import build_identity, build_rff
from usd.mmd import EVAL_FEATURES, build_eval_map, mmd2
from oracles import exact_mmd2


def test_identical_sets_zero():
    p = WeightedParticles.uniform(np.random.default_rng(0).normal(size=(20, 2)))
    assert mmd2(p, p, build_rff(2, 32)) == 0.0


def test_identity_map_example():
    p = WeightedParticles(np.array([[2.0]]), np.array([1.0]))
    q = WeightedParticles(np.array([[0.0]]), np.array([1.0]))
    assert mmd2(p, q, build_identity(1)) == pytest.approx(4.0)


def test_matches_exact_kernel_double_sum():
    rng = np.random.default_rng(3)
    p = WeightedParticles.uniform(rng.normal(size=(100, 2)))
    q = WeightedParticles.uniform(rng.normal(size=(100, 2)) + [1.0, 0.0])
    approx = mmd2(p, q, build_rff(2, 2048, seed=4))
    exact = exact_mmd2(p, q, np.sqrt(2))
    assert abs(approx - exact) <= 0.05 * exact


def test_eval_map_convention():
    fm = build_eval_map(3, seed=1)
    assert fm.dim_out == EVAL_FEATURES == 300
    assert fm.bandwidth == pytest.approx(np.sqrt(3))
    assert not build_eval_map(3, seed=1).frequencies is fm.frequencies
    assert np.array_equal(build_eval_map(3, seed=1).frequencies, fm.frequencies)


def test_dimension_mismatch():
    p = WeightedParticles.uniform(np.zeros((2, 2)))
    q = WeightedParticles.uniform(np.zeros((2, 3)))
    with pytest.raises(DimensionMismatchError):
        mmd2(p, q, build_rff(2, 4))


clouds = st.integers(0, 10**6).map(np.random.default_rng)


def _cloud(rng, n, shift):
    return WeightedParticles(rng.normal(size=(n, 2)) + shift, rng.uniform(0.05, 1.0, n))


@settings(max_examples=40, deadline=None)
@given(rng=clouds)
def test_symmetric_and_nonnegative(rng):
    fm = build_rff(2, 64, seed=int(rng.integers(1000)))
    p, q = _cloud(rng, 15, 0.0), _cloud(rng, 25, rng.normal())
    assert mmd2(p, q, fm) == mmd2(q, p, fm)
    assert mmd2(p, q, fm) >= -1e-14


@settings(max_examples=40, deadline=None)
@given(rng=clouds)
def test_triangle_inequality(rng):
    fm = build_rff(2, 64, seed=int(rng.integers(1000)))
    a, b, c = (_cloud(rng, 10, rng.normal(size=2)) for _ in range(3))
    ab, bc, ac = (np.sqrt(mmd2(x, y, fm)) for x, y in ((a, b), (b, c), (a, c)))
    assert ac <= ab + bc + 1e-10
