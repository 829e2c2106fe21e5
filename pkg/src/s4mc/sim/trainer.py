"""One optimisation step of semi-supervised training with refined pseudo labels."""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from s4mc.confidence import ConfidenceKind, kappa
from s4mc.metrics import RunMetrics, pseudo_stats
from s4mc.refinement import RefineConfig, refine_probs
from s4mc.scheduling import DpaConfig, alpha_at, assign_pseudo_labels, compute_threshold
from s4mc.sim.losses import supervised_loss, unsupervised_loss
from s4mc.tensor_core import IGNORE
from s4mc.sim.model import ModelParams, NumericFailure, model_forward, params_grad


class Mode(enum.Enum):
    MEAN_TEACHER = "mean_teacher"
    WEAK_STRONG = "weak_strong"


@dataclass(frozen=True)
class TrainConfig:
    total_iters: int = 2000
    base_lr: float = 0.1
    momentum: float = 0.9
    poly_power: float = 0.9
    weight_decay: float = 0.0
    tau: float = 0.99
    lam: float = 1.0
    mode: Mode = Mode.MEAN_TEACHER
    patch: int = 3
    batch_labeled: int = 1
    batch_unlabeled: int = 1
    alpha0: float = 0.4
    confidence: ConfidenceKind = ConfidenceKind.MARGIN
    # None disables refinement: pseudo labels come from raw thresholding
    refine: RefineConfig | None = field(default_factory=RefineConfig)
    # perturbation noise scales are multiples of noise_scale (the scene noise level)
    weak_sigma: float = 0.05
    strong_sigma: float = 0.5
    noise_scale: float = 1.0
    channel_dropout: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "confidence", ConfidenceKind(self.confidence))
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not 0.0 <= self.channel_dropout < 1.0:
            raise ValueError("channel_dropout must be in [0, 1)")
        self.dpa  # validates alpha0 / total_iters

    @property
    def dpa(self) -> DpaConfig:
        return DpaConfig(self.alpha0, self.total_iters)


@dataclass
class TrainerState:
    student: ModelParams
    teacher: ModelParams
    velocity: np.ndarray
    iter: int
    config: TrainConfig

    @classmethod
    def fresh(cls, params: ModelParams, config: TrainConfig) -> "TrainerState":
        return cls(params.copy(), params.copy(), np.zeros_like(params.weights), 0, config)


def ema_update(teacher: ModelParams, student: ModelParams, tau: float) -> ModelParams:
    if teacher.weights.shape != student.weights.shape:
        raise ValueError(f"teacher {teacher.weights.shape} and student {student.weights.shape} differ")
    return ModelParams(tau * teacher.weights + (1.0 - tau) * student.weights)


def poly_lr(cfg: TrainConfig, t: int) -> float:
    return cfg.base_lr * (1.0 - t / cfg.total_iters) ** cfg.poly_power


def perturb(features: np.ndarray, sigma: float, dropout: float, rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian noise plus per-image channel dropout (kept channels rescaled)."""
    out = features + rng.standard_normal(features.shape) * sigma if sigma > 0 else features.astype(np.float64)
    if dropout > 0:
        shape = features.shape[:-3] + (1, 1, features.shape[-1])
        keep = rng.random(shape) >= dropout
        out = out * keep / (1.0 - dropout)
    return out


def _refine_cfg_at(cfg: RefineConfig, t: int) -> RefineConfig:
    # random neighbor draws change every iteration but stay a function of (seed, t, pixel)
    crit = dataclasses.replace(cfg.criterion, rng_seed=cfg.criterion.rng_seed + t)
    return dataclasses.replace(cfg, criterion=crit)


def train_step(state: TrainerState, labeled, unlabeled=None, rng: np.random.Generator | None = None):
    """Advance ``state`` by one iteration.

    ``labeled`` is ``(features, masks)`` with shapes ``(B, H, W, d)`` and
    ``(B, H, W)``.  ``unlabeled`` is ``(features, gt_masks)``; the gt masks
    feed instrumentation only and may be None.  Pass ``unlabeled=None`` for a
    supervised-only step.  ``rng`` drives the weak/strong perturbations.
    Returns the new state and the iteration's metrics (``miou_val`` unset).
    """
    cfg = state.config
    t = state.iter
    if t >= cfg.total_iters:
        raise ValueError(f"training already finished ({t} of {cfg.total_iters} iterations)")
    feats_l, masks_l = labeled
    probs_l = model_forward(state.student, feats_l, cfg.patch)
    loss_s, dlog_s = supervised_loss(probs_l, masks_l)
    grad = params_grad(feats_l, dlog_s, cfg.patch)

    alpha_t = alpha_at(cfg.dpa, t)
    gamma_t = math.nan
    loss_u = 0.0
    stats = {"pass_raw": 0.0, "pass_refined": 0.0, "pseudo_acc": math.nan, "tp": 0, "fp": 0, "added": 0, "excluded": 0}
    if unlabeled is not None and len(unlabeled[0]):
        feats_u, gt_u = unlabeled
        if cfg.mode is Mode.MEAN_TEACHER:
            source, view_t, view_s = state.teacher, feats_u, feats_u
        else:
            if rng is None:
                raise ValueError("weak/strong mode needs an rng for the perturbations")
            source = state.student
            view_t = perturb(feats_u, cfg.weak_sigma * cfg.noise_scale, 0.0, rng)
            view_s = perturb(feats_u, cfg.strong_sigma * cfg.noise_scale, cfg.channel_dropout, rng)
        raw = model_forward(source, view_t, cfg.patch)
        gamma_t = compute_threshold(kappa(raw, cfg.confidence), alpha_t)
        baseline = assign_pseudo_labels(raw, raw, gamma_t, cfg.confidence)
        if cfg.refine is None:
            pseudo = baseline
        else:
            refined = refine_probs(raw, _refine_cfg_at(cfg.refine, t))
            pseudo = assign_pseudo_labels(raw, refined, gamma_t, cfg.confidence)
        probs_u = model_forward(state.student, view_s, cfg.patch)
        loss_u, dlog_u = unsupervised_loss(probs_u, pseudo)
        grad = grad + cfg.lam * params_grad(view_s, dlog_u, cfg.patch)
        if gt_u is not None:
            stats = pseudo_stats(pseudo, gt_u, baseline)
        else:
            stats.update(pass_raw=float(np.mean(baseline != IGNORE)), pass_refined=float(np.mean(pseudo != IGNORE)))

    total = loss_s + cfg.lam * loss_u
    if not math.isfinite(total):
        raise NumericFailure(f"non-finite loss at iteration {t}: L_s={loss_s}, L_u={loss_u}")
    if cfg.weight_decay:
        grad = grad + cfg.weight_decay * state.student.weights
    velocity = cfg.momentum * state.velocity + grad
    student = ModelParams(state.student.weights - poly_lr(cfg, t) * velocity)
    if cfg.mode is Mode.MEAN_TEACHER:
        teacher = ema_update(state.teacher, student, cfg.tau)
    else:
        teacher = student.copy()
    new_state = TrainerState(student, teacher, velocity, t + 1, cfg)
    row = RunMetrics(iter=t, alpha_t=alpha_t, gamma_t=gamma_t, loss_s=loss_s, loss_u=loss_u, **stats)
    return new_state, row
