"""Pixelwise linear softmax classifier over a zero-padded P x P feature patch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from s4mc.tensor_core import class_max, class_sum, pad_spatial


class NumericFailure(ArithmeticError):
    pass


@dataclass
class ModelParams:
    """Weights of shape ``(d * P * P + 1, C)``; the last row is the bias."""

    weights: np.ndarray

    def copy(self) -> "ModelParams":
        return ModelParams(self.weights.copy())


def patch_offsets(patch: int) -> list[tuple[int, int]]:
    if patch < 1 or patch % 2 == 0:
        raise ValueError(f"patch size must be odd and positive, got {patch}")
    half = patch // 2
    return [(dr, dc) for dr in range(-half, half + 1) for dc in range(-half, half + 1)]


def n_weights(feature_dim: int, patch: int) -> int:
    return feature_dim * patch * patch + 1


def init_params(
    feature_dim: int, classes: int, patch: int = 3, scale: float = 0.0, seed: int = 0, dtype=np.float64
) -> ModelParams:
    rows = n_weights(feature_dim, patch)
    if scale == 0.0:
        return ModelParams(np.zeros((rows, classes), dtype=dtype))
    rng = np.random.default_rng(seed)
    return ModelParams((rng.standard_normal((rows, classes)) * scale).astype(dtype))


def _per_offset(params: ModelParams, feature_dim: int, patch: int) -> tuple[np.ndarray, np.ndarray]:
    w = params.weights
    expected = n_weights(feature_dim, patch)
    if w.shape[0] != expected:
        raise ValueError(f"weights have {w.shape[0]} rows, expected {expected} for d={feature_dim}, P={patch}")
    n_classes = w.shape[1]
    # (d, P*P*C): column block o holds the weights applied to the neighbor at offset o
    stacked = w[:-1].reshape(patch * patch, feature_dim, n_classes).transpose(1, 0, 2)
    return stacked.reshape(feature_dim, patch * patch * n_classes), w[-1]


def model_logits(params: ModelParams, features: np.ndarray, patch: int = 3) -> np.ndarray:
    """Logits ``(..., H, W, C)`` for features ``(..., H, W, d)``.

    Computes every offset's contribution at the source pixel with one matmul,
    then gathers them with zero-padded shifts.  Arithmetic runs in the wider
    of the feature and weight dtypes.
    """
    dtype = np.result_type(features.dtype, params.weights.dtype)
    features = np.asarray(features, dtype=dtype)
    w_all, bias = _per_offset(params, features.shape[-1], patch)
    n_classes = bias.shape[0]
    half = patch // 2
    height, width = features.shape[-3], features.shape[-2]
    contrib = pad_spatial(features @ w_all.astype(dtype, copy=False), half)
    logits = np.empty(features.shape[:-1] + (n_classes,), dtype=dtype)
    logits[...] = bias
    for o, (dr, dc) in enumerate(patch_offsets(patch)):
        logits += contrib[..., half + dr : half + dr + height, half + dc : half + dc + width, o * n_classes : (o + 1) * n_classes]
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - class_max(logits)[..., None])
    return e / class_sum(e)[..., None]


def model_forward(params: ModelParams, features: np.ndarray, patch: int = 3) -> np.ndarray:
    """Normalized class probabilities per pixel; raises ``NumericFailure`` on non-finite output."""
    probs = softmax(model_logits(params, features, patch))
    if not np.all(np.isfinite(probs)):
        raise NumericFailure("non-finite model output")
    return probs


def params_grad(features: np.ndarray, dlogits: np.ndarray, patch: int = 3) -> np.ndarray:
    """Back-propagate a logits gradient to the weight matrix (same layout as ``weights``)."""
    dtype = np.result_type(features.dtype, dlogits.dtype)
    features = np.asarray(features, dtype=dtype)
    d = features.shape[-1]
    n_classes = dlogits.shape[-1]
    half = patch // 2
    height, width = dlogits.shape[-3], dlogits.shape[-2]
    padded = pad_spatial(dlogits.astype(dtype, copy=False), half)
    # the weight for offset o sees feature[p + o] against dlogits[p], i.e. dlogits shifted by -o
    shifted = np.concatenate(
        [padded[..., half - dr : half - dr + height, half - dc : half - dc + width, :] for dr, dc in patch_offsets(patch)],
        axis=-1,
    )
    block = features.reshape(-1, d).T @ shifted.reshape(-1, patch * patch * n_classes)
    grad = np.empty((n_weights(d, patch), n_classes), dtype=dtype)
    grad[:-1] = block.reshape(d, patch * patch, n_classes).transpose(1, 0, 2).reshape(-1, n_classes)
    grad[-1] = dlogits.reshape(-1, n_classes).sum(axis=0)
    return grad
