"""Synthetic shapes, point-cloud CSV files, and image <-> particle conversion.

Point-cloud CSV layout: a header ``x0,...,x{d-1}`` optionally followed by
``w``, then one particle per row. Images are 8-bit RGB; each pixel becomes
a 3-D particle (r, g, b) / 255 in raster order.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from PIL import Image, UnidentifiedImageError

from .embeddings import WeightedParticles
from .errors import ConfigError, ImageError, PointCloudError

SHAPE_KINDS = ("gaussian", "mog", "rings", "point_cloud", "image_mask")
WEIGHT_MODES = ("uniform", "linear_gradient")
EIGHT_BIT_MODES = ("RGB", "RGBA", "L", "LA", "P")


@dataclass
class ShapeSpec:
    kind: str
    n: int = 1000
    dim: int = 2
    # gaussian
    mean: list | None = None
    cov_diag: list | None = None
    # mog: list of {"mean": [...], "cov_diag": [...]}
    components: list = field(default_factory=list)
    mixture_weights: list | None = None
    # rings (2-D)
    centers: list = field(default_factory=list)
    radii: list = field(default_factory=list)
    thickness: float = 0.05
    # point_cloud / image_mask
    path: str | None = None
    extent: float = 1.0  # image_mask samples live in [-extent, extent]^2
    weight_mode: str = "uniform"
    weight_axis: int = 0
    weight_lo: float = 1.0
    weight_hi: float = 0.1
    normalize: bool = True

    def validate(self) -> "ShapeSpec":
        if self.kind not in SHAPE_KINDS:
            raise ConfigError(f"shape kind must be one of {SHAPE_KINDS}, got {self.kind!r}")
        if self.weight_mode not in WEIGHT_MODES:
            raise ConfigError(f"weight_mode must be one of {WEIGHT_MODES}, got {self.weight_mode!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.kind == "mog":
            if not self.components:
                raise ConfigError("mog needs at least one component")
            mw = self._mixture_weights()
            if np.any(mw < 0) or abs(mw.sum() - 1.0) > 1e-9:
                raise ConfigError("mixture weights must be nonnegative and sum to 1")
        if self.kind == "rings" and (len(self.centers) == 0 or len(self.centers) != len(self.radii)):
            raise ConfigError("rings need matching centers and radii")
        if self.kind in ("point_cloud", "image_mask") and not self.path:
            raise ConfigError(f"{self.kind} needs a path")
        if self.weight_mode == "linear_gradient" and (
            min(self.weight_lo, self.weight_hi) < 0 or max(self.weight_lo, self.weight_hi) <= 0
        ):
            raise ConfigError("gradient weights must be nonnegative and not all zero")
        return self

    def _mixture_weights(self) -> np.ndarray:
        k = len(self.components)
        if self.mixture_weights is None:
            return np.full(k, 1.0 / k)
        mw = np.asarray(self.mixture_weights, dtype=float)
        if mw.shape != (k,):
            raise ConfigError(f"expected {k} mixture weights, got {mw.shape}")
        return mw

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown shape keys: {sorted(unknown)}")
        return cls(**d).validate()


def _gaussian(rng, n, mean, cov_diag):
    mean = np.asarray(mean, dtype=float)
    std = np.sqrt(np.asarray(cov_diag, dtype=float))
    return mean + std * rng.standard_normal((n, mean.shape[0]))


def _mask_sampler(path, n, extent, rng):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with Image.open(path) as img:
        if "A" in img.getbands():
            inside = np.asarray(img.getchannel("A"), dtype=float) > 127
        else:
            inside = np.asarray(img.convert("L"), dtype=float) < 128
    if not inside.any():
        raise ConfigError(f"{path}: mask has no inside pixels")
    h, w = inside.shape
    out = np.empty((0, 2))
    while out.shape[0] < n:
        cand = rng.uniform(-extent, extent, size=(2 * n, 2))
        col = np.clip(((cand[:, 0] + extent) / (2 * extent) * w).astype(int), 0, w - 1)
        row = np.clip(((extent - cand[:, 1]) / (2 * extent) * h).astype(int), 0, h - 1)
        out = np.vstack([out, cand[inside[row, col]]])
    return out[:n]


def gradient_weights(points, axis: int, lo: float, hi: float) -> np.ndarray:
    """Weights interpolated linearly from ``lo`` to ``hi`` along one coordinate."""
    x = points[:, axis]
    span = x.max() - x.min()
    if span == 0:
        return np.full(x.shape[0], 0.5 * (lo + hi))
    return lo + (hi - lo) * (x - x.min()) / span


def sample_shape(spec: ShapeSpec, rng) -> WeightedParticles:
    spec.validate()
    n = int(spec.n)
    weights = None
    if spec.kind == "gaussian":
        mean = spec.mean if spec.mean is not None else np.zeros(spec.dim)
        cov = spec.cov_diag if spec.cov_diag is not None else np.ones(len(mean))
        pts = _gaussian(rng, n, mean, cov)
    elif spec.kind == "mog":
        mw = spec._mixture_weights()
        labels = rng.choice(len(spec.components), size=n, p=mw)
        pts = np.empty((n, len(spec.components[0]["mean"])))
        for k, comp in enumerate(spec.components):
            idx = np.flatnonzero(labels == k)
            cov = comp.get("cov_diag", np.ones(len(comp["mean"])))
            pts[idx] = _gaussian(rng, idx.size, comp["mean"], cov)
    elif spec.kind == "rings":
        centers = np.asarray(spec.centers, dtype=float)
        radii = np.asarray(spec.radii, dtype=float)
        k = rng.integers(0, len(radii), size=n)
        theta = rng.uniform(0, 2 * np.pi, size=n)
        r = radii[k] + spec.thickness * rng.standard_normal(n)
        pts = centers[k] + r[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
    elif spec.kind == "point_cloud":
        cloud = load_point_cloud(spec.path)
        pts, weights = cloud.points, cloud.weights
        if n < cloud.n:
            idx = np.sort(rng.choice(cloud.n, size=n, replace=False))
            pts, weights = pts[idx], weights[idx]
    else:
        pts = _mask_sampler(spec.path, n, spec.extent, rng)

    if spec.weight_mode == "linear_gradient":
        weights = gradient_weights(pts, spec.weight_axis, spec.weight_lo, spec.weight_hi)
    if weights is None:
        weights = np.full(pts.shape[0], 1.0 / pts.shape[0])
    elif spec.normalize:
        weights = weights / weights.sum()
    return WeightedParticles(pts, weights)


def save_point_cloud(P: WeightedParticles, path) -> None:
    header = [f"x{a}" for a in range(P.dim)] + ["w"]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for x, w in zip(P.points, P.weights):
            fh.write(",".join(repr(float(v)) for v in x) + f",{float(w)!r}\n")


def load_point_cloud(path) -> WeightedParticles:
    """Read a point-cloud CSV. A missing ``w`` column means uniform weights 1/n."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PointCloudError(f"{path}: empty file", line=1)
    header = [h.strip() for h in rows[0]]
    has_w = bool(header) and header[-1] == "w"
    coords = header[:-1] if has_w else header
    if not coords or coords != [f"x{a}" for a in range(len(coords))]:
        raise PointCloudError(f"{path}: header must be x0,...,x{{d-1}}[,w], got {rows[0]}", line=1)
    d = len(coords)
    pts, ws = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise PointCloudError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise PointCloudError(str(exc), line=lineno) from None
        if not np.all(np.isfinite(vals)):
            raise PointCloudError("non-finite value", line=lineno)
        if has_w and vals[-1] < 0:
            raise PointCloudError(f"negative weight {vals[-1]}", line=lineno)
        pts.append(vals[:d])
        if has_w:
            ws.append(vals[-1])
    if not pts:
        raise PointCloudError(f"{path}: no particles after the header")
    pts = np.array(pts)
    if has_w:
        weights = np.array(ws)
        if not np.any(weights > 0):
            raise PointCloudError(f"{path}: all weights are zero")
    else:
        warnings.warn(f"{path}: no weight column, using uniform weights", UserWarning, stacklevel=2)
        weights = np.full(len(pts), 1.0 / len(pts))
    return WeightedParticles(pts, weights)


def load_image(path):
    """Returns (particles, (width, height))."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    try:
        img = Image.open(path)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageError(f"{path}: unsupported image: {exc}") from exc
    with img:
        if img.mode not in EIGHT_BIT_MODES:
            raise ImageError(f"{path}: unsupported image mode {img.mode!r} (need 8-bit RGB)")
        rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
    h, w, _ = rgb.shape
    pts = rgb.reshape(-1, 3).astype(float) / 255.0
    return WeightedParticles(pts, np.full(h * w, 1.0 / (h * w))), (w, h)


def image_to_particles(path) -> WeightedParticles:
    return load_image(path)[0]


def particles_to_array(points, width: int, height: int) -> np.ndarray:
    pts = np.asarray(getattr(points, "points", points), dtype=float)
    if pts.shape != (width * height, 3):
        raise ImageError(f"need {width * height} RGB particles for a {width}x{height} image, got {pts.shape}")
    return np.rint(np.clip(pts, 0.0, 1.0) * 255.0).astype(np.uint8).reshape(height, width, 3)


def particles_to_image(points, width: int, height: int, path) -> None:
    """Write particles (raster order) as an 8-bit RGB PNG, clamping to [0, 1]."""
    Image.fromarray(particles_to_array(points, width, height)).save(path, format="PNG")
