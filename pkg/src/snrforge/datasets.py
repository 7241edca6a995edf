"""Small 2D point datasets for the toy diffusion lab.

All generators are deterministic in (kind, n, seed) and the returned
points are normalized to zero mean and unit per-axis variance (for a
single point only centering applies).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DATASET_KINDS = ("gaussian_mixture_8", "checkerboard", "two_moons")


@dataclass(frozen=True)
class Dataset2D:
    points: np.ndarray  # (n, 2) float64, normalized
    kind: str
    seed: int

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError(f"points must be (n, 2), got {self.points.shape}")
        if self.points.shape[0] == 0:
            raise ValueError("dataset must be non-empty")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("dataset contains non-finite coordinates")


def _gaussian_mixture_8(n: int, rng: np.random.Generator) -> np.ndarray:
    # 8 isotropic modes on a circle; the mode width keeps the dataset's
    # structure inside the mid log-SNR band (feature scales ~0.3-1 after
    # normalization), the regime image latents occupy
    angles = 2.0 * np.pi * np.arange(8) / 8.0
    centers = 2.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    comp = rng.integers(0, 8, size=n)
    return centers[comp] + 0.45 * rng.standard_normal((n, 2))


def _checkerboard(n: int, rng: np.random.Generator) -> np.ndarray:
    x1 = rng.uniform(-2.0, 2.0, size=n)
    x2 = rng.uniform(0.0, 1.0, size=n) - rng.integers(0, 2, size=n) * 2.0
    x2 = x2 + np.floor(x1) % 2.0
    return np.stack([x1, x2], axis=1)


def _two_moons(n: int, rng: np.random.Generator) -> np.ndarray:
    which = rng.integers(0, 2, size=n)
    theta = rng.uniform(0.0, np.pi, size=n)
    outer = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    inner = np.stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)], axis=1)
    pts = np.where(which[:, None] == 0, outer, inner)
    return pts + 0.08 * rng.standard_normal((n, 2))


_GENERATORS = {
    "gaussian_mixture_8": _gaussian_mixture_8,
    "checkerboard": _checkerboard,
    "two_moons": _two_moons,
}


def make_dataset(kind: str, n: int, seed: int) -> Dataset2D:
    """Generate a normalized 2D dataset; identical inputs give identical bits."""
    if kind not in _GENERATORS:
        raise ValueError(f"unknown dataset kind {kind!r}; known: {DATASET_KINDS}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    pts = _GENERATORS[kind](n, rng).astype(np.float64)
    pts = pts - pts.mean(axis=0)
    if n >= 2:
        std = pts.std(axis=0)
        std = np.where(std > 0.0, std, 1.0)
        pts = pts / std
    return Dataset2D(points=pts, kind=kind, seed=seed)
