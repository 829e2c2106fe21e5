"""Synthetic piecewise-constant scenes: Voronoi label maps with noisy class prototypes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SceneGenConfig:
    height: int = 64
    width: int = 64
    classes: int = 5
    feature_dim: int = 8
    seeds_per_image: float = 6.0
    noise_sigma: float = 1.0
    prototype_seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if self.height < 1 or self.width < 1 or self.feature_dim < 1:
            raise ValueError("scene dimensions must be positive")
        if self.seeds_per_image <= 0:
            raise ValueError("seeds_per_image must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


@dataclass(frozen=True)
class Scene:
    features: np.ndarray  # (H, W, d) float32
    mask: np.ndarray  # (H, W) int64 class indices


def class_prototypes(cfg: SceneGenConfig) -> np.ndarray:
    """Fixed unit-norm feature vector per class, shape ``(C, d)``."""
    rng = np.random.default_rng(cfg.prototype_seed)
    protos = rng.standard_normal((cfg.classes, cfg.feature_dim))
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def voronoi_labels(height: int, width: int, points: np.ndarray, point_labels: np.ndarray) -> np.ndarray:
    rows, cols = np.mgrid[0:height, 0:width]
    centers = np.stack([rows + 0.5, cols + 0.5], axis=-1).reshape(-1, 1, 2)
    dist2 = ((centers - points[None]) ** 2).sum(axis=-1)
    return point_labels[dist2.argmin(axis=1)].reshape(height, width)


def generate_scene(cfg: SceneGenConfig, seed: int) -> Scene:
    rng = np.random.default_rng(seed)
    n_seeds = max(1, int(rng.poisson(cfg.seeds_per_image)))
    points = rng.uniform(0.0, 1.0, size=(n_seeds, 2)) * np.array([cfg.height, cfg.width])
    region_class = rng.integers(0, cfg.classes, size=n_seeds)
    mask = voronoi_labels(cfg.height, cfg.width, points, region_class).astype(np.int64)
    protos = class_prototypes(cfg)
    noise = rng.standard_normal((cfg.height, cfg.width, cfg.feature_dim)) * cfg.noise_sigma
    features = (protos[mask] + noise).astype(np.float32)
    return Scene(features=features, mask=mask)
