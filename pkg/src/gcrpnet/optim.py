"""AdamW with decoupled weight decay and bias correction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Parameter


class NumericalError(FloatingPointError):
    """Non-finite gradient or loss."""


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"betas must lie in [0, 1), got {(self.beta1, self.beta2)}")


@dataclass
class AdamWState:
    step: int
    m: np.ndarray
    v: np.ndarray


def adamw_step(param: np.ndarray, grad: np.ndarray, state: AdamWState | None, cfg: AdamWConfig,
               name: str = "param") -> tuple[np.ndarray, AdamWState]:
    """One update of a single array; returns the new value and state.

    ``p <- p - lr * wd * p - lr * mhat / (sqrt(vhat) + eps)``
    """
    if grad.shape != param.shape:
        raise ValueError(f"{name}: gradient shape {grad.shape} != parameter shape {param.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericalError(f"non-finite gradient for parameter {name}")
    if state is None:
        state = AdamWState(0, np.zeros_like(param), np.zeros_like(param))
    t = state.step + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * grad * grad
    mhat = m / (1 - cfg.beta1 ** t)
    vhat = v / (1 - cfg.beta2 ** t)
    new = param * (1 - cfg.lr * cfg.weight_decay) - cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)
    return new.astype(param.dtype, copy=False), AdamWState(t, m.astype(param.dtype), v.astype(param.dtype))


class AdamW:
    """Optimizer over named parameters. Parameters without a gradient are skipped."""

    def __init__(self, named_params, cfg: AdamWConfig = AdamWConfig()):
        self.params: dict[str, Parameter] = dict(named_params)
        self.cfg = cfg
        self.state: dict[str, AdamWState] = {}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        # check everything first so a bad gradient leaves parameters untouched
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"non-finite gradient for parameter {name}")
        for name, p in self.params.items():
            if p.grad is None:
                continue
            p.data, self.state[name] = adamw_step(p.data, p.grad, self.state.get(name), self.cfg, name)

    @property
    def step_count(self) -> int:
        return max((s.step for s in self.state.values()), default=0)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, s in self.state.items():
            out[f"{name}.m"] = s.m
            out[f"{name}.v"] = s.v
            out[f"{name}.step"] = np.array([s.step], dtype=np.int64)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.state = {}
        for name in self.params:
            if f"{name}.m" in arrays:
                self.state[name] = AdamWState(int(arrays[f"{name}.step"][0]), arrays[f"{name}.m"].copy(),
                                              arrays[f"{name}.v"].copy())

    def lr_summary(self) -> str:
        return f"AdamW(lr={self.cfg.lr:g}, betas=({self.cfg.beta1}, {self.cfg.beta2}), wd={self.cfg.weight_decay})"
