"""Adam with a stepwise exponential learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}; step aborted")
        self.name = name


@dataclass
class AdamState:
    lr: float = 1e-4
    decay: float = 0.97
    period: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def lr_at(self, epoch: int) -> float:
        """Learning rate in effect during ``epoch`` (0-based)."""
        return self.lr * self.decay ** (epoch // self.period)

    def fresh(self) -> "AdamState":
        """Same hyper-parameters, empty moments."""
        return AdamState(self.lr, self.decay, self.period, self.beta1, self.beta2, self.eps)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, epoch: int = 0) -> None:
    """Apply one Adam update in place to every named parameter in ``grads``.

    The whole step is rejected before any parameter moves if a gradient is
    non-finite.
    """
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape "
                             f"{params[name].shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
    state.step += 1
    t = state.step
    lr = state.lr_at(epoch)
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[name].data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)

