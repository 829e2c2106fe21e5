"""Quantile threshold schedule and pseudo-label assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from s4mc.confidence import ConfidenceKind, kappa
from s4mc.tensor_core import IGNORE, ProbMap, quantile


@dataclass(frozen=True)
class DpaConfig:
    """Quantile level decaying linearly from ``alpha0`` at t=0 to zero at ``total_iters``.

    ``alpha0 = 0`` is accepted and means every pixel passes from the start.
    """

    alpha0: float = 0.4
    total_iters: int = 1

    def __post_init__(self):
        if not 0.0 <= self.alpha0 < 1.0:
            raise ValueError(f"alpha0 must be in [0, 1), got {self.alpha0}")
        if self.total_iters < 1:
            raise ValueError(f"total_iters must be >= 1, got {self.total_iters}")


@dataclass(frozen=True)
class ThresholdState:
    gamma_t: float
    alpha_t: float
    iter: int


def alpha_at(cfg: DpaConfig, t: int) -> float:
    if not 0 <= t <= cfg.total_iters:
        raise ValueError(f"iteration {t} outside [0, {cfg.total_iters}]")
    return cfg.alpha0 * (1.0 - t / cfg.total_iters)


def compute_threshold(raw_kappa, alpha_t: float) -> float:
    """Nearest-rank ``alpha_t`` quantile of the batch's pre-refinement confidences.

    Returns ``-inf`` once ``alpha_t`` reaches zero so that every pixel passes.
    """
    values = np.asarray(raw_kappa)
    if values.size == 0:
        raise ValueError("threshold of an empty batch")
    if alpha_t <= 0.0:
        return -np.inf
    return quantile(values, alpha_t)


def assign_pseudo_labels(raw, refined, gamma_t: float, kind: ConfidenceKind = ConfidenceKind.MARGIN) -> np.ndarray:
    """Label pixels whose refined confidence beats ``gamma_t`` and whose top class survives refinement.

    The label itself is always the raw top class.  Works on ``(..., H, W, C)``
    arrays or ``ProbMap`` objects; returns an integer mask with ``IGNORE``.
    """
    raw_v = raw.values if isinstance(raw, ProbMap) else np.asarray(raw)
    ref_v = refined.values if isinstance(refined, ProbMap) else np.asarray(refined)
    if raw_v.shape != ref_v.shape:
        raise ValueError(f"raw {raw_v.shape} and refined {ref_v.shape} maps differ in shape")
    top = raw_v.argmax(axis=-1)
    keep = (kappa(ref_v, kind) > gamma_t) & (ref_v.argmax(axis=-1) == top)
    return np.where(keep, top, IGNORE)
