"""Adam with decoupled weight decay and a linear learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import decays


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    adam_eps: float = 1e-8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    total_steps: int = 1
    warmup_steps: int = 0
    schedule: str = "linear_decay"

    def __post_init__(self):
        for name in ("learning_rate", "adam_eps", "adam_beta1", "adam_beta2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0 or self.total_steps <= 0 or self.warmup_steps < 0:
            raise ValueError("invalid optimizer configuration")
        if self.schedule != "linear_decay":
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "adam_eps": self.adam_eps,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "total_steps": self.total_steps,
            "warmup_steps": self.warmup_steps,
            "schedule": self.schedule,
        }


def lr_at(cfg: OptimizerConfig, step: int) -> float:
    """Linear decay to zero at total_steps, optional linear warmup before."""
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return cfg.learning_rate * step / cfg.warmup_steps
    return cfg.learning_rate * max(0.0, 1.0 - step / cfg.total_steps)


def init_opt_state(params: dict) -> dict:
    return {
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def adam_step(params: dict, grads: dict, opt_state: dict, cfg: OptimizerConfig, step: int) -> dict:
    """One bias-corrected update, in place; weight decay skips biases and LNs.

    ``step`` is 1-based.  The learning rate is scaled by the schedule before
    both the Adam term and the decoupled decay term.
    """
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    lr = lr_at(cfg, step)
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1.0 - b1**step
    bc2 = 1.0 - b2**step
    for name, p in params.items():
        g = grads[name]
        m = opt_state["m"][name]
        v = opt_state["v"][name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        if cfg.weight_decay and decays(name):
            update = update + cfg.weight_decay * p
        p -= lr * update
    return params
