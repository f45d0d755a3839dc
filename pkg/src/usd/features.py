"""Finite feature maps Phi: R^d -> R^m with analytic Jacobians.

Three kinds are supported:

* ``rff``: random Fourier features for the Gaussian kernel
  k(x, y) = exp(-|x - y|^2 / (2 sigma^2)), using the phase-shifted cosine
  form Phi_j(x) = sqrt(2/m) cos(<w_j, x> + b_j), w_j ~ N(0, sigma^-2 I),
  b_j ~ U[0, 2pi).
* ``identity``: Phi(x) = x.
* ``polynomial``: monomials Phi_j(x) = prod_a x_a^E[j, a] for an integer
  exponent matrix E.

Every function accepts a single point of shape (d,) or a batch (n, d).
The Jacobian convention is [J Phi(x)]_{a, j} = d Phi_j / d x_a, so a single
point gives a (d, m) matrix and a batch gives (n, d, m).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InvalidBandwidthError, InvalidDimensionError

KINDS = ("rff", "identity", "polynomial")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureMap:
    kind: str
    dim_in: int
    dim_out: int
    frequencies: np.ndarray | None = None  # (m, d), rff only
    phases: np.ndarray | None = None  # (m,), rff only
    scale: float = 1.0
    bandwidth: float = 1.0
    seed: int | None = None
    exponents: np.ndarray | None = None  # (m, d) integer, polynomial only

    def __call__(self, x):
        return featurize(self, x)

    def jacobian(self, x):
        return feature_jacobian(self, x)

    def same_as(self, other: "FeatureMap") -> bool:
        """Bit-exact equality of kind, shapes and stored parameters."""
        if (self.kind, self.dim_in, self.dim_out, self.scale) != (
            other.kind, other.dim_in, other.dim_out, other.scale
        ):
            return False
        for name in ("frequencies", "phases", "exponents"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True


def _check_dims(d, m):
    if int(d) != d or d < 1:
        raise InvalidDimensionError(f"input dimension must be >= 1, got {d}")
    if int(m) != m or m < 1:
        raise InvalidDimensionError(f"feature count must be >= 1, got {m}")


def build_rff(d: int, m: int, bandwidth: float | None = None, seed: int = 0) -> FeatureMap:
    """Random Fourier features for a Gaussian kernel of width ``bandwidth``.

    ``bandwidth`` defaults to sqrt(d). Rebuilding with the same (d, m,
    bandwidth, seed) reproduces the map bit-exactly.
    """
    _check_dims(d, m)
    if bandwidth is None:
        bandwidth = float(np.sqrt(d))
    if not np.isfinite(bandwidth) or bandwidth <= 0:
        raise InvalidBandwidthError(f"bandwidth must be > 0, got {bandwidth}")
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((int(m), int(d))) / bandwidth
    phases = rng.uniform(0.0, 2.0 * np.pi, size=int(m))
    return FeatureMap(
        kind="rff",
        dim_in=int(d),
        dim_out=int(m),
        frequencies=_frozen(omega),
        phases=_frozen(phases),
        scale=float(np.sqrt(2.0 / m)),
        bandwidth=float(bandwidth),
        seed=seed,
    )


def rff_from_parameters(frequencies, phases, bandwidth: float = 1.0) -> FeatureMap:
    """RFF map with explicitly supplied frequencies (m, d) and phases (m,)."""
    omega = np.atleast_2d(np.asarray(frequencies, dtype=float))
    b = np.asarray(phases, dtype=float).reshape(-1)
    m, d = omega.shape
    _check_dims(d, m)
    if b.shape != (m,):
        raise DimensionMismatchError(f"expected {m} phases, got {b.shape}")
    if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(b))):
        raise ValueError("frequencies and phases must be finite")
    return FeatureMap(
        kind="rff", dim_in=d, dim_out=m, frequencies=_frozen(omega), phases=_frozen(b),
        scale=float(np.sqrt(2.0 / m)), bandwidth=float(bandwidth),
    )


def build_identity(d: int) -> FeatureMap:
    _check_dims(d, d)
    return FeatureMap(kind="identity", dim_in=int(d), dim_out=int(d))


def build_polynomial(d: int, degree: int = 2, exponents=None) -> FeatureMap:
    """Monomial features of total degree 1..degree (or a custom exponent matrix)."""
    if exponents is None:
        _check_dims(d, max(degree, 0))
        rows = [
            e for e in itertools.product(range(degree + 1), repeat=int(d))
            if 1 <= sum(e) <= degree
        ]
        rows.sort(key=lambda e: (sum(e), tuple(-v for v in e)))
        exponents = np.array(rows, dtype=int)
    else:
        exponents = np.atleast_2d(np.asarray(exponents, dtype=int))
        if exponents.shape[1] != d:
            raise DimensionMismatchError(f"exponent matrix has {exponents.shape[1]} columns, expected {d}")
        if np.any(exponents < 0):
            raise ValueError("exponents must be nonnegative")
    m = exponents.shape[0]
    _check_dims(d, m)
    e = exponents.copy()
    e.setflags(write=False)
    return FeatureMap(kind="polynomial", dim_in=int(d), dim_out=m, exponents=e)


def _as_points(fm: FeatureMap, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x.reshape(1, -1) if single else x
    if x2.ndim != 2 or x2.shape[1] != fm.dim_in:
        raise DimensionMismatchError(
            f"feature map expects points of dimension {fm.dim_in}, got shape {x.shape}"
        )
    return x2, single


def featurize(fm: FeatureMap, x) -> np.ndarray:
    x2, single = _as_points(fm, x)
    if fm.kind == "rff":
        out = fm.scale * np.cos(x2 @ fm.frequencies.T + fm.phases)
    elif fm.kind == "identity":
        out = x2.copy()
    elif fm.kind == "polynomial":
        out = np.prod(x2[:, None, :] ** fm.exponents[None, :, :], axis=2)
    else:
        raise ValueError(f"unknown feature map kind {fm.kind!r}")
    return out[0] if single else out


def feature_jacobian(fm: FeatureMap, x) -> np.ndarray:
    x2, single = _as_points(fm, x)
    n, d = x2.shape
    if fm.kind == "rff":
        s = -fm.scale * np.sin(x2 @ fm.frequencies.T + fm.phases)  # (n, m)
        out = s[:, None, :] * fm.frequencies.T[None, :, :]
    elif fm.kind == "identity":
        out = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    elif fm.kind == "polynomial":
        e = fm.exponents  # (m, d)
        out = np.empty((n, d, fm.dim_out))
        for a in range(d):
            lowered = e.copy()
            lowered[:, a] = np.maximum(e[:, a] - 1, 0)
            mono = np.prod(x2[:, None, :] ** lowered[None, :, :], axis=2)
            out[:, a, :] = e[:, a] * mono
    else:
        raise ValueError(f"unknown feature map kind {fm.kind!r}")
    return out[0] if single else out
