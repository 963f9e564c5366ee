"""Adam with bias correction, plus a reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], lr: float = 1e-3) -> "AdamState":
        return cls(lr=lr, m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params])


def adam_step(state: AdamState, params: Sequence[Tensor]) -> None:
    """One in-place Adam update from the gradients currently in ``params``."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ValueError(f"optimizer tracks {len(state.m)} parameters, got {len(params)}")
    for i, (p, m) in enumerate(zip(params, state.m)):
        if m.shape != p.shape:
            raise ValueError(f"parameter {i} ({p.name}) has shape {p.shape}, "
                             f"optimizer state has {m.shape}")

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class PlateauSchedule:
    patience: int = 3
    factor: float = 10.0
    min_lr: float = 1e-7
    best: float = math.inf
    stalled: int = 0

    def __post_init__(self):
        if self.factor <= 1:
            raise ValueError(f"decay factor must exceed 1, got {self.factor}")
        if self.patience < 1:
            raise ValueError(f"patience must be at least 1, got {self.patience}")


def plateau_update(sched: PlateauSchedule, state: AdamState, val_metric: float) -> bool:
    """Record one epoch's validation metric (lower is better).

    Returns True when the learning rate was actually reduced.
    """
    if val_metric < sched.best:
        sched.best = val_metric
        sched.stalled = 0
        return False
    sched.stalled += 1
    if sched.stalled < sched.patience:
        return False
    sched.stalled = 0
    new_lr = max(state.lr / sched.factor, sched.min_lr)
    if new_lr >= state.lr:
        return False
    state.lr = new_lr
    return True
