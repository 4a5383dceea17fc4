"""Momentum optimizers and learning-rate schedules.

Optimizers work on a dict of named float64 arrays plus a matching dict of
gradients. Tensor names ending in ``.bias`` are treated as biases: LARS
skips both the trust ratio and weight decay for them.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

SGD_NESTEROV = "sgd_nesterov"
LARS = "lars"


@dataclass
class OptimState:
    mode: str = LARS
    momentum: float = 0.9
    weight_decay: float = 1e-6
    lars_trust_coeff: float = 1e-3
    lars_eps: float = 1e-9
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in (SGD_NESTEROV, LARS):
            raise ConfigError(f"unknown optimizer mode {self.mode!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum {self.momentum} outside [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if self.lars_trust_coeff <= 0 or self.lars_eps <= 0:
            raise ConfigError("LARS trust coefficient and eps must be positive")

    def buffer(self, name: str, like: np.ndarray) -> np.ndarray:
        buf = self.buffers.get(name)
        if buf is None:
            buf = self.buffers[name] = np.zeros_like(like)
        elif buf.shape != like.shape:
            raise ShapeError(f"momentum buffer {name} has shape {buf.shape}, param {like.shape}")
        return buf


def _pairs(params: dict, grads: dict, names):
    for name in names if names is not None else params:
        w, g = params[name], grads[name]
        if w.shape != g.shape:
            raise ShapeError(f"{name}: param shape {w.shape} != grad shape {g.shape}")
        yield name, w, g


def sgd_nesterov_step(params: dict, grads: dict, state: OptimState, lr: float, names=None) -> None:
    """In-place Nesterov SGD step; gradients are zeroed afterwards."""
    for name, w, grad in _pairs(params, grads, names):
        g = grad + state.weight_decay * w
        buf = state.buffer(name, w)
        buf *= state.momentum
        buf += g
        w -= lr * (g + state.momentum * buf)
        grad[...] = 0.0


def lars_trust_ratio(w: np.ndarray, g: np.ndarray, trust_coeff: float, eps: float) -> float:
    wn = float(np.linalg.norm(w))
    gn = float(np.linalg.norm(g))
    if wn > 0 and gn > 0:
        return trust_coeff * wn / (gn + eps)
    return 1.0


def lars_step(params: dict, grads: dict, state: OptimState, lr: float, names=None) -> None:
    """In-place LARS step with momentum; gradients are zeroed afterwards."""
    for name, w, grad in _pairs(params, grads, names):
        if name.endswith(".bias"):
            g = grad.copy()
            trust = 1.0
        else:
            g = grad + state.weight_decay * w
            trust = lars_trust_ratio(w, g, state.lars_trust_coeff, state.lars_eps)
        buf = state.buffer(name, w)
        buf *= state.momentum
        buf += (trust * lr) * g
        w -= buf
        grad[...] = 0.0


def step(params: dict, grads: dict, state: OptimState, lr: float, names=None) -> None:
    if state.mode == LARS:
        lars_step(params, grads, state, lr, names)
    else:
        sgd_nesterov_step(params, grads, state, lr, names)


@dataclass(frozen=True)
class ScheduleConfig:
    """Linear warmup followed by cosine annealing, indexed by optimizer step."""

    base_lr: float
    total_epochs: float
    steps_per_epoch: int
    warmup_epochs: float = 0.0
    warmup_start_lr: float = 0.0
    final_lr: float = 0.0

    def __post_init__(self):
        if self.warmup_epochs > self.total_epochs:
            raise ConfigError("warmup_epochs exceeds total_epochs")
        if min(self.base_lr, self.warmup_start_lr, self.final_lr) < 0:
            raise ConfigError("learning rates must be nonnegative")
        if self.steps_per_epoch < 1:
            raise ConfigError("steps_per_epoch must be >= 1")

    @property
    def total_steps(self) -> int:
        return int(round(self.total_epochs * self.steps_per_epoch))

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_epochs * self.steps_per_epoch))


def lr_at(cfg: ScheduleConfig, step: int) -> float:
    total, warm = cfg.total_steps, cfg.warmup_steps
    if step < 0 or step > total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if step < warm:
        return cfg.warmup_start_lr + (cfg.base_lr - cfg.warmup_start_lr) * step / warm
    if step == warm:
        return cfg.base_lr
    t = (step - warm) / (total - warm)
    if t == 1.0:
        return cfg.final_lr
    return cfg.final_lr + 0.5 * (cfg.base_lr - cfg.final_lr) * (1.0 + math.cos(math.pi * t))


@dataclass(frozen=True)
class StepDecaySchedule:
    """Piecewise-constant lr: ``lrs[k]`` from the k-th milestone epoch onward."""

    lrs: tuple[float, ...] = (0.01, 0.001, 0.0001)
    milestones: tuple[int, ...] = (480, 500)

    def __post_init__(self):
        if len(self.lrs) != len(self.milestones) + 1:
            raise ConfigError("need exactly one more lr than milestones")
        if list(self.milestones) != sorted(self.milestones):
            raise ConfigError("milestones must be ascending")

    def lr_at_epoch(self, epoch: int) -> float:
        return self.lrs[bisect.bisect_right(self.milestones, epoch)]
