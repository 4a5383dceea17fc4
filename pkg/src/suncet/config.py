"""Run configuration: a flat ``key = value`` text format.

Unknown keys are rejected, missing keys take the defaults below, and every
error names the offending line. Lists are comma separated.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import AugmentConfig
from .errors import ConfigError
from .optim import LARS, SGD_NESTEROV


def _ints(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(p) for p in text.split(","))


def _floats(text: str) -> tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(float(p) for p in text.split(","))


@dataclass
class TrainConfig:
    # data
    dataset_path: str = ""
    test_path: str = ""
    data_seed: int = 0
    label_fraction: float = 0.1
    label_seed: int = 0
    # pre-training
    tau: float = 0.5
    unsup_batch: int = 64
    sup_classes_per_batch: int = 4
    sup_samples_per_class: int = 8
    epochs: int = 60
    suncet_off_epoch: int = 12
    base_lr: float = 1.0
    warmup_epochs: float = 2.0
    warmup_start_lr: float = 0.125
    final_lr: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 1e-6
    optimizer: str = LARS
    lars_trust_coeff: float = 1e-3
    encoder_dims: tuple[int, ...] = (128, 128, 64)
    proj_dims: tuple[int, ...] = (64, 32)
    augment_noise_std: float = 1.0
    augment_mask_prob: float = 0.1
    augment_scale_jitter: float = 0.2
    eval_every: int = 2
    seed: int = 0
    # fine-tuning
    finetune_epochs: int = 30
    finetune_lr: float = 0.05
    finetune_batch: int = 64
    # linear evaluation
    lineval_epochs: int = 104
    lineval_lrs: tuple[float, ...] = (0.1, 0.01, 0.001)
    lineval_milestones: tuple[int, ...] = (96, 100)
    lineval_batch: int = 256
    # switch-off sweep
    sweep_switchoff: tuple[int, ...] = (0, 6, 12, 30, 60)

    def validate(self) -> "TrainConfig":
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg}")

        need(self.tau > 0, "tau", "must be > 0")
        need(0.0 <= self.label_fraction <= 1.0, "label_fraction", "must lie in [0, 1]")
        for key in ("unsup_batch", "sup_classes_per_batch", "eval_every", "finetune_batch",
                    "lineval_batch"):
            need(getattr(self, key) >= 1, key, "must be >= 1")
        need(self.sup_samples_per_class >= 2, "sup_samples_per_class", "must be >= 2")
        for key in ("epochs", "suncet_off_epoch", "finetune_epochs", "lineval_epochs"):
            need(getattr(self, key) >= 0, key, "must be >= 0")
        need(self.suncet_off_epoch <= self.epochs, "suncet_off_epoch", "must not exceed epochs")
        need(0 <= self.warmup_epochs <= max(self.epochs, 0), "warmup_epochs",
             "must lie in [0, epochs]")
        for key in ("base_lr", "warmup_start_lr", "final_lr", "finetune_lr", "weight_decay"):
            need(getattr(self, key) >= 0, key, "must be >= 0")
        need(0 <= self.momentum < 1, "momentum", "must lie in [0, 1)")
        need(self.optimizer in (LARS, SGD_NESTEROV), "optimizer",
             f"must be {LARS} or {SGD_NESTEROV}")
        need(self.lars_trust_coeff > 0, "lars_trust_coeff", "must be > 0")
        need(len(self.encoder_dims) >= 1 and min(self.encoder_dims) >= 1, "encoder_dims",
             "needs at least one positive width")
        need(len(self.proj_dims) == 2 and min(self.proj_dims) >= 1, "proj_dims",
             "needs exactly hidden,output widths")
        need(self.proj_dims[-1] < self.encoder_dims[-1], "proj_dims",
             "output width must be smaller than the encoder output")
        need(self.augment_noise_std >= 0, "augment_noise_std", "must be >= 0")
        need(0 <= self.augment_mask_prob < 1, "augment_mask_prob", "must lie in [0, 1)")
        need(self.augment_scale_jitter >= 0, "augment_scale_jitter", "must be >= 0")
        need(len(self.lineval_lrs) == len(self.lineval_milestones) + 1, "lineval_lrs",
             "needs one more entry than lineval_milestones")
        need(list(self.lineval_milestones) == sorted(self.lineval_milestones),
             "lineval_milestones", "must be ascending")
        need(all(e >= 0 for e in self.sweep_switchoff), "sweep_switchoff",
             "entries must be >= 0")
        return self

    @property
    def augment(self) -> AugmentConfig:
        return AugmentConfig(self.augment_noise_std, self.augment_mask_prob,
                             self.augment_scale_jitter)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw).validate()


_PARSERS = {
    "str": str,
    "int": int,
    "float": float,
    "tuple[int, ...]": _ints,
    "tuple[float, ...]": _floats,
}

KEYS = {f.name: _PARSERS[f.type] for f in fields(TrainConfig)}


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> TrainConfig:
    values, where = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        loc = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{loc}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{loc}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{loc}: duplicate key {key!r}")
        try:
            values[key] = KEYS[key](value)
        except ValueError:
            raise ConfigError(f"{loc}: malformed value {value!r} for {key}") from None
        where[key] = loc
    try:
        return TrainConfig(**values).validate()
    except ConfigError as exc:
        key = str(exc).split(":", 1)[0]
        if key in where:
            raise ConfigError(f"{where[key]}: {exc}") from None
        raise


def parse_config(path) -> TrainConfig:
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))


def serialize_config(cfg: TrainConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))
