"""Event-union refinement of class-probability maps using neighboring pixels.

Each class probability of a pixel is replaced by an upper bound on the
probability that the pixel *or* one of its selected neighbors belongs to that
class.  Several neighbors are folded in one at a time; every fold is a
two-event union between the running composite and the next neighbor.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from s4mc.tensor_core import (
    IGNORE,
    NeighborOffset,
    ProbMap,
    check_window,
    neighbor_offsets,
    shifted_stack,
    shifted_views,
)

_JOINT_TOL = 1e-9
_STRIP_BYTES = 1 << 17


class JointKind(enum.Enum):
    INDEPENDENCE = "independence"
    # max(product, co-label rate), clamped to the smaller marginal
    EMPIRICAL_MAX = "empirical_max"
    # co-label rate alone, unclamped; kept to reproduce its failure mode
    EMPIRICAL = "empirical"


@dataclass(frozen=True)
class JointMode:
    kind: JointKind = JointKind.INDEPENDENCE
    colabel_rate: float | None = None

    def __post_init__(self):
        kind = JointKind(self.kind)
        object.__setattr__(self, "kind", kind)
        needs_rate = kind is not JointKind.INDEPENDENCE
        if needs_rate != (self.colabel_rate is not None):
            raise ValueError(f"colabel_rate must be given exactly for empirical joints (kind={kind.value})")
        if needs_rate and not 0.0 <= self.colabel_rate <= 1.0:
            raise ValueError(f"colabel_rate must be in [0, 1], got {self.colabel_rate}")


class SelectionKind(enum.Enum):
    MAX_PROB = "max_prob"
    MIN_PROB = "min_prob"
    RANDOM = "random"
    COSINE_SIM = "cosine_sim"


@dataclass(frozen=True)
class SelectionCriterion:
    kind: SelectionKind = SelectionKind.MAX_PROB
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", SelectionKind(self.kind))

    @property
    def shared_across_classes(self) -> bool:
        return self.kind in (SelectionKind.RANDOM, SelectionKind.COSINE_SIM)


@dataclass(frozen=True)
class RefineConfig:
    window: int = 3
    neighbors: int = 1
    criterion: SelectionCriterion = field(default_factory=SelectionCriterion)
    joint: JointMode = field(default_factory=JointMode)
    beta_weighting: bool = False

    def __post_init__(self):
        check_window(self.window)
        if self.neighbors < 1:
            raise ValueError(f"need at least one neighbor, got {self.neighbors}")
        if self.neighbors > self.window**2 - 1:
            raise ValueError(f"{self.neighbors} neighbors requested but a {self.window}x{self.window} window has {self.window**2 - 1}")

    def betas(self) -> np.ndarray:
        offsets = neighbor_offsets(self.window)
        if not self.beta_weighting:
            return np.ones(len(offsets))
        return np.array([beta_weight(o) for o in offsets])


# ---------------------------------------------------------------------------
# elementwise primitives


def joint_prob(p_a, p_b, mode: JointMode = JointMode()):
    """Joint probability that both pixels carry the class; elementwise on arrays."""
    product = np.multiply(p_a, p_b)
    if mode.kind is JointKind.INDEPENDENCE:
        return product
    if mode.kind is JointKind.EMPIRICAL:
        return np.full_like(product, mode.colabel_rate) if np.ndim(product) else mode.colabel_rate
    return np.minimum(np.minimum(np.maximum(product, mode.colabel_rate), p_a), p_b)


def _fold(p_a, p_b, joint, beta):
    return np.clip(p_a + beta * (p_b - joint), 0.0, 1.0)


def pair_union(p_a, p_b, joint, beta=1.0):
    """``p_a + beta * (p_b - joint)`` clipped to [0, 1]; beta=1 is plain inclusion-exclusion."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    if np.any(np.asarray(joint) > np.minimum(p_a, p_b) + _JOINT_TOL):
        raise ValueError("joint probability exceeds a marginal")
    return _fold(p_a, p_b, joint, beta)


def beta_weight(offset: NeighborOffset | tuple[int, int]) -> float:
    drow, dcol = offset[0], offset[1]
    return math.exp(-0.5 * (abs(drow) + abs(dcol)))


# ---------------------------------------------------------------------------
# stateless per-pixel random draws


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def random_keys(seed: int, pixel_index, n_candidates: int) -> np.ndarray:
    """Sort keys for candidate order, a pure function of (seed, pixel, candidate).

    Output shape is ``(n_candidates, *pixel_index.shape)``; the lowest key is drawn first.
    """
    with np.errstate(over="ignore"):
        base = _splitmix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
        pix = _splitmix64(base ^ np.asarray(pixel_index, dtype=np.uint64)[None])
        cand = np.arange(n_candidates, dtype=np.uint64).reshape((-1,) + (1,) * (pix.ndim - 1))
        return _splitmix64(pix ^ _splitmix64(cand + np.uint64(1)))


def _cosine(center: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    dots = np.sum(candidates * center, axis=-1, dtype=np.float64)
    norms = np.linalg.norm(candidates, axis=-1) * np.linalg.norm(center, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(norms > 0, dots / np.where(norms > 0, norms, 1.0), 0.0)


# ---------------------------------------------------------------------------
# per-pixel reference path


def select_neighbor(
    center,
    candidates,
    c: int,
    criterion: SelectionCriterion,
    *,
    joint: JointMode = JointMode(),
    beta_weighting: bool = False,
    current: float | None = None,
    exclude=(),
    pixel_index: int = 0,
) -> int:
    """Index into ``candidates`` of the neighbor to fold into class ``c``.

    ``candidates`` is a list of ``(NeighborOffset, vector)`` as returned by
    ``neighborhood``.  ``current`` is the running union value for class ``c``
    (defaults to the center's own probability) and ``exclude`` lists indices
    already used.  Ties go to the lowest index.
    """
    if not candidates:
        raise ValueError("no candidate neighbors")
    pool = [i for i in range(len(candidates)) if i not in set(exclude)]
    if not pool:
        raise ValueError("every candidate has been excluded")
    center = np.asarray(center, dtype=np.float64)
    kind = criterion.kind
    if kind is SelectionKind.RANDOM:
        keys = random_keys(criterion.rng_seed, np.array([pixel_index]), len(candidates))[:, 0]
        return min(pool, key=lambda i: (int(keys[i]), i))
    if kind is SelectionKind.COSINE_SIM:
        vectors = np.array([np.asarray(v, dtype=np.float64) for _, v in candidates])
        sims = _cosine(center, vectors)
        return min(pool, key=lambda i: (-sims[i], i))
    q = center[c] if current is None else current
    scores = []
    for i in pool:
        off, vec = candidates[i]
        p_n = float(vec[c])
        beta = beta_weight(off) if beta_weighting else 1.0
        scores.append(beta * (p_n - float(joint_prob(q, p_n, joint))))
    pick = int(np.argmax(scores)) if kind is SelectionKind.MAX_PROB else int(np.argmin(scores))
    return pool[pick]


def refine_pixel(center, candidates, cfg: RefineConfig, pixel_index: int = 0) -> np.ndarray:
    """Refined class vector of one pixel from up to ``N*N - 1`` candidate neighbors."""
    center = np.asarray(center, dtype=np.float64)
    if cfg.neighbors > len(candidates):
        raise ValueError(f"{cfg.neighbors} neighbors requested, only {len(candidates)} candidates")
    out = center.copy()
    n_classes = center.shape[-1]
    shared_order = None
    if cfg.criterion.shared_across_classes:
        shared_order = []
        for _ in range(cfg.neighbors):
            shared_order.append(
                select_neighbor(center, candidates, 0, cfg.criterion, exclude=shared_order, pixel_index=pixel_index)
            )
    for c in range(n_classes):
        used: list[int] = []
        value = center[c]
        for r in range(cfg.neighbors):
            if shared_order is not None:
                idx = shared_order[r]
            else:
                idx = select_neighbor(
                    center,
                    candidates,
                    c,
                    cfg.criterion,
                    joint=cfg.joint,
                    beta_weighting=cfg.beta_weighting,
                    current=value,
                    exclude=used,
                )
            used.append(idx)
            off, vec = candidates[idx]
            p_n = float(vec[c])
            beta = beta_weight(off) if cfg.beta_weighting else 1.0
            value = float(_fold(value, p_n, joint_prob(value, p_n, cfg.joint), beta))
        out[c] = value
    return out


# ---------------------------------------------------------------------------
# vectorized map path


def refine_probs(probs: np.ndarray, cfg: RefineConfig) -> np.ndarray:
    """Refine every pixel of a ``(..., H, W, C)`` probability array at once.

    Leading axes are independent images.  The result keeps the input dtype and
    matches ``refine_pixel`` applied pixel by pixel with row-major pixel indices.
    """
    probs = np.asarray(probs)
    if probs.ndim < 3:
        raise ValueError(f"expected (..., H, W, C) array, got shape {probs.shape}")
    kind = cfg.criterion.kind
    if cfg.joint.kind is JointKind.INDEPENDENCE and kind in (SelectionKind.MAX_PROB, SelectionKind.MIN_PROB):
        return _by_row_strips(probs, cfg, _refine_independent)
    betas = cfg.betas().astype(probs.dtype)
    stack = shifted_stack(probs, cfg.window)
    if cfg.criterion.shared_across_classes:
        return _refine_shared(probs, stack, betas, cfg)
    return _refine_per_class(probs, stack, betas, cfg)


def _by_row_strips(probs: np.ndarray, cfg: RefineConfig, kernel) -> np.ndarray:
    """Run ``kernel`` over horizontal strips with a halo of ``window // 2`` rows.

    Keeps temporaries small enough to stay cache resident and off the
    allocator's mmap path, so cost per pixel does not grow with map size.
    """
    height = probs.shape[-3]
    row_bytes = probs.nbytes // max(height, 1)
    rows = max(1, _STRIP_BYTES // max(row_bytes, 1))
    if rows >= height:
        return kernel(probs, cfg)
    half = cfg.window // 2
    out = np.empty_like(probs)
    for r0 in range(0, height, rows):
        r1 = min(height, r0 + rows)
        lo, hi = max(0, r0 - half), min(height, r1 + half)
        part = kernel(probs[..., lo:hi, :, :], cfg)
        out[..., r0:r1, :, :] = part[..., r0 - lo : r1 - lo, :, :]
    return out


def _refine_independent(probs: np.ndarray, cfg: RefineConfig) -> np.ndarray:
    # Under independence a fold is q + beta*p_n*(1 - q): the best (or worst)
    # neighbor is the extreme of beta*p_n whatever the running value q.
    # Buffers are reused in place; large temporaries dominate the cost otherwise.
    maximize = cfg.criterion.kind is SelectionKind.MAX_PROB
    views = shifted_views(probs, cfg.window)
    betas = [probs.dtype.type(b) for b in cfg.betas()]
    if cfg.neighbors == 1:
        extreme = np.maximum if maximize else np.minimum
        best = np.multiply(views[0], betas[0])
        scratch = np.empty_like(probs)
        for view, beta in zip(views[1:], betas[1:]):
            if beta == 1:
                extreme(best, view, out=best)
            else:
                extreme(best, np.multiply(view, beta, out=scratch), out=best)
        chosen = [best]
    else:
        ordered = np.sort(np.stack([v * b for v, b in zip(views, betas)]), axis=0)
        chosen = ordered[::-1][: cfg.neighbors] if maximize else ordered[: cfg.neighbors]
        scratch = np.empty_like(probs)
    out = probs.copy()
    for term in chosen:
        np.subtract(1, out, out=scratch)
        scratch *= term
        out += scratch
        np.clip(out, 0, 1, out=out)
    return out


def _refine_shared(probs, stack, betas, cfg: RefineConfig) -> np.ndarray:
    n = stack.shape[0]
    if cfg.criterion.kind is SelectionKind.RANDOM:
        pixel_index = np.arange(int(np.prod(probs.shape[:-1]))).reshape(probs.shape[:-1])
        order = np.argsort(random_keys(cfg.criterion.rng_seed, pixel_index, n), axis=0, kind="stable")
    else:
        order = np.argsort(-_cosine(probs[None], stack), axis=0, kind="stable")
    out = probs.copy()
    for r in range(cfg.neighbors):
        idx = order[r][None, ..., None]
        nb = np.take_along_axis(stack, idx, axis=0)[0]
        out = _fold(out, nb, joint_prob(out, nb, cfg.joint), betas[idx[0]])
    return out.astype(probs.dtype, copy=False)


def _refine_per_class(probs, stack, betas, cfg: RefineConfig) -> np.ndarray:
    maximize = cfg.criterion.kind is SelectionKind.MAX_PROB
    blocked = -np.inf if maximize else np.inf
    betas_b = betas.reshape((-1,) + (1,) * probs.ndim)
    used = np.zeros(stack.shape, dtype=bool) if cfg.neighbors > 1 else None
    out = probs.copy()
    for _ in range(cfg.neighbors):
        scores = betas_b * (stack - joint_prob(out[None], stack, cfg.joint))
        if used is not None:
            scores[used] = blocked
        idx = (np.argmax(scores, axis=0) if maximize else np.argmin(scores, axis=0))[None]
        nb = np.take_along_axis(stack, idx, axis=0)[0]
        if used is not None:
            np.put_along_axis(used, idx, True, axis=0)
        out = _fold(out, nb, joint_prob(out, nb, cfg.joint), betas[idx[0]])
    return out.astype(probs.dtype, copy=False)


def refine_map(pmap: ProbMap, cfg: RefineConfig) -> ProbMap:
    if not pmap.normalized:
        raise ValueError("refine_map expects a normalized probability map")
    return ProbMap(refine_probs(pmap.values, cfg), normalized=False)


def empirical_colabel_rate(masks, window: int = 3) -> float:
    """Share of ordered (pixel, in-window neighbor) label pairs that agree.

    Accepts one ``(H, W)`` mask or a stack ``(B, H, W)``; IGNORE pixels and
    out-of-bounds neighbors are left out of both counts.
    """
    masks = np.asarray(masks)
    if masks.ndim == 2:
        masks = masks[None]
    valid = masks != IGNORE
    h, w = masks.shape[-2:]
    agree = 0
    total = 0
    for off in neighbor_offsets(window):
        shifted = np.full_like(masks, IGNORE)
        dr, dc = off.drow, off.dcol
        if abs(dr) < h and abs(dc) < w:
            shifted[:, max(0, -dr) : h - max(0, dr), max(0, -dc) : w - max(0, dc)] = masks[
                :, max(0, dr) : h - max(0, -dr), max(0, dc) : w - max(0, -dc)
            ]
        pair = valid & (shifted != IGNORE)
        total += int(pair.sum())
        agree += int((pair & (shifted == masks)).sum())
    if total == 0:
        raise ValueError("mask has no valid neighboring pixel pairs")
    return agree / total
