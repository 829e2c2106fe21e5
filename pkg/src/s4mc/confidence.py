"""Per-pixel confidence scores over class-probability maps."""

from __future__ import annotations

import enum

import numpy as np

from s4mc.tensor_core import ProbMap, class_max, class_sum, class_top2


class ConfidenceKind(enum.Enum):
    MAX = "max"
    NEG_ENTROPY = "neg_entropy"
    MARGIN = "margin"


def kappa(probs, kind: ConfidenceKind = ConfidenceKind.MARGIN) -> np.ndarray:
    """Confidence of every pixel; the class axis is last and is reduced away.

    ``MAX`` is the top probability, ``MARGIN`` the gap between the two largest
    values and ``NEG_ENTROPY`` is ``sum p ln p`` with ``0 ln 0 = 0``.
    Accepts a ``ProbMap`` or any ``(..., C)`` array.
    """
    values = probs.values if isinstance(probs, ProbMap) else np.asarray(probs)
    kind = ConfidenceKind(kind)
    n_classes = values.shape[-1]
    if kind is ConfidenceKind.MAX:
        return class_max(values)
    if kind is ConfidenceKind.MARGIN:
        if n_classes < 2:
            raise ValueError("margin confidence needs at least two classes")
        first, second = class_top2(values)
        return first - second
    positive = values > 0
    terms = np.where(positive, values * np.log(np.where(positive, values, 1)), 0)
    return class_sum(terms)
