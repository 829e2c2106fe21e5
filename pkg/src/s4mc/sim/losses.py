"""Masked pixelwise cross-entropy with its logits gradient."""

from __future__ import annotations

import numpy as np

from s4mc.tensor_core import IGNORE, ProbMap, class_sum

_LOG_FLOOR = 1e-300


def cross_entropy(probs, labels) -> tuple[float, np.ndarray]:
    """Mean CE over non-IGNORE pixels of the whole batch and d(loss)/d(logits).

    ``probs`` is ``(..., H, W, C)`` softmax output, ``labels`` the matching
    ``(..., H, W)`` mask.  An empty mask yields zero loss and zero gradient.
    """
    probs = probs.values if isinstance(probs, ProbMap) else np.asarray(probs)
    labels = np.asarray(labels)
    if labels.shape != probs.shape[:-1]:
        raise ValueError(f"labels {labels.shape} do not match predictions {probs.shape}")
    valid = labels != IGNORE
    count = int(np.count_nonzero(valid))
    if count == 0:
        return 0.0, np.zeros_like(probs)
    onehot = labels[..., None] == np.arange(probs.shape[-1])
    picked = class_sum(np.where(onehot, probs, 0))[valid]
    loss = float(-np.log(np.maximum(picked.astype(np.float64), _LOG_FLOOR)).sum() / count)
    grad = (probs - onehot) * (valid[..., None] / count)
    return loss, grad.astype(probs.dtype, copy=False)


def supervised_loss(pred, mask) -> tuple[float, np.ndarray]:
    return cross_entropy(pred, mask)


def unsupervised_loss(pred, pseudo) -> tuple[float, np.ndarray]:
    return cross_entropy(pred, pseudo)
