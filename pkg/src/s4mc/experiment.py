"""Dataset construction and full training runs for the synthetic benchmark."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from s4mc.metrics import RunMetrics, miou
from s4mc.refinement import JointKind, JointMode, RefineConfig, SelectionCriterion, SelectionKind, empirical_colabel_rate
from s4mc.sim.model import ModelParams, NumericFailure, init_params, model_forward
from s4mc.sim.scenes import Scene, SceneGenConfig, generate_scene
from s4mc.sim.trainer import Mode, TrainConfig, TrainerState, train_step


@dataclass(frozen=True)
class RefineSpec:
    """Refinement settings as written in a config file.

    ``colabel_rate=None`` with an empirical joint means: estimate it from the
    labeled masks of the run.
    """

    enabled: bool = True
    window: int = 3
    neighbors: int = 1
    criterion: SelectionKind = SelectionKind.MAX_PROB
    rng_seed: int = 0
    joint: JointKind = JointKind.INDEPENDENCE
    colabel_rate: float | None = None
    beta_weighting: bool = False

    def __post_init__(self):
        object.__setattr__(self, "criterion", SelectionKind(self.criterion))
        object.__setattr__(self, "joint", JointKind(self.joint))
        self.resolve(0.5 if self.colabel_rate is None else self.colabel_rate)

    def resolve(self, colabel_rate: float | None) -> RefineConfig | None:
        if not self.enabled:
            return None
        rate = None if self.joint is JointKind.INDEPENDENCE else (self.colabel_rate if self.colabel_rate is not None else colabel_rate)
        return RefineConfig(
            window=self.window,
            neighbors=self.neighbors,
            criterion=SelectionCriterion(self.criterion, self.rng_seed),
            joint=JointMode(self.joint, rate),
            beta_weighting=self.beta_weighting,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneGenConfig = field(default_factory=SceneGenConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(refine=None))
    refine: RefineSpec = field(default_factory=RefineSpec)
    n_scenes: int = 32
    n_val: int = 8
    labeled_fraction: float = 0.125
    seeds: tuple[int, ...] = (0,)
    log_every: int = 50

    def __post_init__(self):
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ValueError(f"labeled_fraction must be in (0, 1], got {self.labeled_fraction}")
        if self.n_labeled < 1:
            raise ValueError(f"labeled_fraction * n_scenes = {self.labeled_fraction * self.n_scenes:g} < 1")
        if self.n_val < 1 or self.log_every < 1:
            raise ValueError("n_val and log_every must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    @property
    def n_labeled(self) -> int:
        return int(math.floor(self.labeled_fraction * self.n_scenes + 1e-9))

    def with_changes(self, **sections) -> "ExperimentConfig":
        return dataclasses.replace(self, **sections)


@dataclass
class Dataset:
    labeled: list[Scene]
    unlabeled: list[Scene]
    val: list[Scene]

    @staticmethod
    def stack(scenes: list[Scene]) -> tuple[np.ndarray, np.ndarray]:
        return np.stack([s.features for s in scenes]), np.stack([s.mask for s in scenes])


@dataclass
class RunResult:
    rows: list[RunMetrics]
    params: ModelParams
    final_miou: float


def scene_seed(run_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([run_seed, index]).generate_state(1)[0])


def split_names(cfg: ExperimentConfig) -> dict[str, list[int]]:
    n_lab = cfg.n_labeled
    return {
        "labeled": list(range(n_lab)),
        "unlabeled": list(range(n_lab, cfg.n_scenes)),
        "val": list(range(cfg.n_scenes, cfg.n_scenes + cfg.n_val)),
    }


def build_dataset(cfg: ExperimentConfig, seed: int) -> Dataset:
    split = split_names(cfg)
    make = lambda idx: [generate_scene(cfg.scene, scene_seed(seed, i)) for i in idx]  # noqa: E731
    return Dataset(make(split["labeled"]), make(split["unlabeled"]), make(split["val"]))


def evaluate(params: ModelParams, scenes, classes: int, patch: int = 3) -> float:
    feats, masks = scenes if isinstance(scenes, tuple) else Dataset.stack(scenes)
    pred = model_forward(params, feats, patch).argmax(axis=-1)
    return miou(pred, masks, classes)


def run_experiment(cfg: ExperimentConfig, seed: int, dataset: Dataset | None = None) -> RunResult:
    data = dataset if dataset is not None else build_dataset(cfg, seed)
    lab_f, lab_m = Dataset.stack(data.labeled)
    unl_f, unl_m = Dataset.stack(data.unlabeled) if data.unlabeled else (None, None)
    val = Dataset.stack(data.val)

    rate = None
    if cfg.refine.enabled and cfg.refine.joint is not JointKind.INDEPENDENCE and cfg.refine.colabel_rate is None:
        rate = empirical_colabel_rate(lab_m, cfg.refine.window)
    train_cfg = dataclasses.replace(cfg.train, refine=cfg.refine.resolve(rate), noise_scale=cfg.scene.noise_sigma)

    ss = np.random.SeedSequence(seed)
    init_ss, lab_ss, unl_ss, aug_ss = ss.spawn(4)
    rng_l = np.random.default_rng(lab_ss)
    rng_u = np.random.default_rng(unl_ss)
    rng_aug = np.random.default_rng(aug_ss)
    params = init_params(
        cfg.scene.feature_dim,
        cfg.scene.classes,
        train_cfg.patch,
        scale=0.01,
        dtype=np.float32,
        seed=int(init_ss.generate_state(1)[0]),
    )
    state = TrainerState.fresh(params, train_cfg)
    rows = []
    total = train_cfg.total_iters
    for t in range(total):
        li = rng_l.integers(0, len(lab_f), size=train_cfg.batch_labeled)
        unlabeled = None
        if unl_f is not None and train_cfg.batch_unlabeled > 0:
            ui = rng_u.integers(0, len(unl_f), size=train_cfg.batch_unlabeled)
            unlabeled = (unl_f[ui], unl_m[ui])
        try:
            state, row = train_step(state, (lab_f[li], lab_m[li]), unlabeled, rng_aug)
        except NumericFailure as exc:
            exc.rows = rows  # what was logged before the failure, for the diagnostic CSV
            raise
        if t % cfg.log_every == 0 or t == total - 1:
            row.miou_val = evaluate(state.student, val, cfg.scene.classes, train_cfg.patch)
            rows.append(row)
    return RunResult(rows, state.student, rows[-1].miou_val)


def reference_config(**changes) -> ExperimentConfig:
    """The reference benchmark: 64x64 scenes, 5 classes, 2000 iterations, 1/8 labeled, seeds 0-4."""
    cfg = ExperimentConfig(
        scene=SceneGenConfig(height=64, width=64, classes=5),
        train=TrainConfig(total_iters=2000, refine=None),
        refine=RefineSpec(),
        n_scenes=32,
        n_val=8,
        labeled_fraction=1 / 8,
        seeds=(0, 1, 2, 3, 4),
        log_every=50,
    )
    return cfg.with_changes(**changes) if changes else cfg


def with_mode(cfg: ExperimentConfig, mode: Mode) -> ExperimentConfig:
    return cfg.with_changes(train=dataclasses.replace(cfg.train, mode=mode))
