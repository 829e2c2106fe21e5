"""INI experiment configuration.

Sections and keys (every key optional, unknown keys are errors)::

    [scene]       height width classes feature_dim seeds_per_image noise_sigma prototype_seed
    [train]       total_iters base_lr momentum poly_power weight_decay tau lam mode patch
                  batch_labeled batch_unlabeled confidence weak_sigma strong_sigma channel_dropout
    [dpa]         alpha0
    [refine]      enabled window neighbors criterion rng_seed joint colabel_rate beta_weighting
    [experiment]  n_scenes n_val labeled_fraction seeds log_every
    [sweep]       axis values

``seeds`` and ``values`` are comma separated; ``#`` and ``;`` start comments, also after a value.  ``colabel_rate = auto``
estimates the rate from the labeled masks.  ``weak_sigma`` and
``strong_sigma`` are multiples of the scene's ``noise_sigma``.
"""

from __future__ import annotations

import configparser
import dataclasses
import enum
import typing
from dataclasses import dataclass, field

from s4mc.experiment import ExperimentConfig, RefineSpec
from s4mc.refinement import SelectionKind
from s4mc.sim.scenes import SceneGenConfig
from s4mc.sim.trainer import TrainConfig


class ConfigError(ValueError):
    pass


SWEEP_AXES = ("N", "k", "criterion", "alpha0")

_TRAIN_SKIP = {"alpha0", "refine", "noise_scale"}
_SECTION_FIELDS = {
    "scene": (SceneGenConfig, set()),
    "train": (TrainConfig, _TRAIN_SKIP),
    "refine": (RefineSpec, set()),
}


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {self.axis!r}")
        if not self.values:
            raise ConfigError(f"sweep axis {self.axis!r} has no values")
        for v in self.values:
            apply_sweep_value(ExperimentConfig(), self.axis, v)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(hint, text: str):
    text = text.strip()
    origin = typing.get_origin(hint)
    if origin is typing.Union or (origin is not None and type(None) in typing.get_args(hint)):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if text.lower() in ("auto", "none", ""):
            return None
        return _coerce(args[0], text)
    if hint is bool:
        return _parse_bool(text)
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    if isinstance(hint, type) and issubclass(hint, enum.Enum):
        return hint(text.lower())
    raise TypeError(f"unsupported config type {hint}")


def _section_kwargs(parser, name: str, cls, skip: set[str]) -> dict:
    if not parser.has_section(name):
        return {}
    hints = typing.get_type_hints(cls)
    allowed = {f.name for f in dataclasses.fields(cls)} - skip
    out = {}
    for key, text in parser.items(name):
        if key not in allowed:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        try:
            out[key] = _coerce(hints[key], text)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}] {key} = {text!r}: {exc}") from None
    return out


def _keys(parser, name: str, allowed: set[str]) -> dict:
    if not parser.has_section(name):
        return {}
    items = dict(parser.items(name))
    unknown = set(items) - allowed
    if unknown:
        raise ConfigError(f"[{name}] unknown key(s) {sorted(unknown)}")
    return items


def _split(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def parse_config(text: str) -> tuple[ExperimentConfig, SweepSpec | None]:
    parser = configparser.ConfigParser(interpolation=None, default_section="__unused__", inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep "N" and "k" as written
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    known = set(_SECTION_FIELDS) | {"dpa", "experiment", "sweep"}
    for name in parser.sections():
        if name not in known:
            raise ConfigError(f"unknown section [{name}]")
    try:
        scene = SceneGenConfig(**_section_kwargs(parser, "scene", *_SECTION_FIELDS["scene"]))
        train_kw = _section_kwargs(parser, "train", *_SECTION_FIELDS["train"])
        dpa = _keys(parser, "dpa", {"alpha0"})
        if "alpha0" in dpa:
            train_kw["alpha0"] = float(dpa["alpha0"])
        train = TrainConfig(refine=None, **train_kw)
        refine = RefineSpec(**_section_kwargs(parser, "refine", *_SECTION_FIELDS["refine"]))
        exp = _keys(parser, "experiment", {"n_scenes", "n_val", "labeled_fraction", "seeds", "log_every"})
        exp_kw = {}
        for key in ("n_scenes", "n_val", "log_every"):
            if key in exp:
                exp_kw[key] = int(exp[key])
        if "labeled_fraction" in exp:
            exp_kw["labeled_fraction"] = _fraction(exp["labeled_fraction"])
        if "seeds" in exp:
            exp_kw["seeds"] = tuple(int(s) for s in _split(exp["seeds"]))
        cfg = ExperimentConfig(scene=scene, train=train, refine=refine, **exp_kw)
        sweep = None
        if parser.has_section("sweep"):
            sw = _keys(parser, "sweep", {"axis", "values"})
            sweep = SweepSpec(sw.get("axis", "").strip(), _split(sw.get("values", "")))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg, sweep


def load_config(path) -> tuple[ExperimentConfig, SweepSpec | None]:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def _fraction(text: str) -> float:
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def apply_sweep_value(cfg: ExperimentConfig, axis: str, value: str) -> ExperimentConfig:
    """Return ``cfg`` with one sweep axis set.

    ``criterion`` values are ``none`` (refinement off) or ``kind[:k]`` such as
    ``max_prob:2``, ``random`` or ``cosine_sim``.
    """
    value = value.strip()
    try:
        if axis == "N":
            return cfg.with_changes(refine=dataclasses.replace(cfg.refine, enabled=True, window=int(value)))
        if axis == "k":
            return cfg.with_changes(refine=dataclasses.replace(cfg.refine, enabled=True, neighbors=int(value)))
        if axis == "alpha0":
            return cfg.with_changes(train=dataclasses.replace(cfg.train, alpha0=float(value)))
        if axis == "criterion":
            if value.lower() == "none":
                return cfg.with_changes(refine=dataclasses.replace(cfg.refine, enabled=False))
            kind, _, k = value.partition(":")
            refine = dataclasses.replace(
                cfg.refine, enabled=True, criterion=SelectionKind(kind.lower()), neighbors=int(k) if k else 1
            )
            return cfg.with_changes(refine=refine)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {axis} sweep value {value!r}: {exc}") from None
    raise ConfigError(f"unknown sweep axis {axis!r}")
