"""Trainable soft mask over bottleneck features and its periodic hard mask."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

THRESHOLD = "threshold"
AND = "and"
SIGMOID = "sigmoid"
INDICATOR = "indicator"


def default_floor(p: int) -> int:
    return min(p, max(8, p // 16))


@dataclass
class GateState:
    """Gate logits ``g``, binary hard mask ``m`` and the hard-mask schedule.

    The soft mask is ``m * sigma(g)`` where ``sigma`` is the logistic function
    or, for ``INDICATOR`` gates, the step ``1[g >= 0]`` trained with a
    straight-through gradient.
    """

    g: np.ndarray
    m: np.ndarray
    tau: float = 0.5
    period: int = 100
    m_floor: int = 8
    rule: str = AND
    kind: str = SIGMOID
    step_counter: int = 0
    g_tensor: ad.Tensor = field(init=False, repr=False)

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=np.float64).reshape(-1)
        self.m = np.asarray(self.m, dtype=np.float64).reshape(-1)
        if self.g.shape != self.m.shape:
            raise ValueError("gate logits and mask differ in length")
        if not np.all((self.m == 0) | (self.m == 1)):
            raise ValueError("hard mask entries must be 0 or 1")
        if not 0 < self.tau < 1:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.period < 1:
            raise ValueError("hard-mask period must be >= 1")
        if not 0 <= self.m_floor <= self.p:
            raise ValueError(f"m_floor {self.m_floor} outside [0, {self.p}]")
        if self.rule not in (THRESHOLD, AND):
            raise ValueError(f"unknown hard-mask rule {self.rule!r}")
        if self.kind not in (SIGMOID, INDICATOR):
            raise ValueError(f"unknown gate kind {self.kind!r}")
        # shares memory with self.g so optimiser updates are visible to both
        self.g_tensor = ad.Tensor(self.g.reshape(1, -1), requires_grad=True)
        self.g = self.g_tensor.data.reshape(-1)

    @classmethod
    def open(cls, p: int, init: float = 1.0, **kw) -> "GateState":
        kw.setdefault("m_floor", default_floor(p))
        return cls(g=np.full(p, init), m=np.ones(p), **kw)

    @property
    def p(self) -> int:
        return self.g.shape[0]

    def probabilities(self) -> np.ndarray:
        return ad.sigmoid_array(self.g)

    def soft_mask(self) -> np.ndarray:
        """Current soft mask as a plain vector."""
        return self.soft_mask_node().data.reshape(-1)

    def soft_mask_node(self) -> ad.Tensor:
        """Soft mask as a 1 x p graph node that depends on ``g``."""
        m = self.m.reshape(1, -1)
        if self.kind == SIGMOID:
            return ad.mul(ad.sigmoid(self.g_tensor), m)
        return ad.mul(ad.indicator_ste(self.g_tensor, m), m)

    def active_count(self) -> int:
        return int(self.m.sum())

    def update_hard_mask(self) -> bool:
        """Advance the step counter; on every ``period``-th call recompute ``m``.

        Returns True when the mask was recomputed on this call.
        """
        fire = self.step_counter % self.period == 0
        self.step_counter += 1
        if fire:
            self.recompute_mask()
        return fire

    def recompute_mask(self) -> None:
        prob = self.probabilities() if self.kind == SIGMOID else (self.g >= 0).astype(float)
        keep = prob >= self.tau
        eligible = np.ones(self.p, dtype=bool)
        if self.rule == AND:
            eligible = self.m == 1
            keep &= eligible
        if keep.sum() < self.m_floor:
            candidates = np.flatnonzero(eligible)
            # stable sort on -prob keeps the lowest index among ties
            ranked = candidates[np.argsort(-prob[candidates], kind="stable")]
            keep = np.zeros(self.p, dtype=bool)
            keep[ranked[: self.m_floor]] = True
        self.m[:] = keep.astype(np.float64)

    def snapshot(self) -> "GateState":
        return GateState(self.g.copy(), self.m.copy(), self.tau, self.period,
                         self.m_floor, self.rule, self.kind, self.step_counter)


def straight_through_backward(upstream, m) -> np.ndarray:
    """Gradient reaching ``g`` through an indicator gate: identity, zeroed on dead features."""
    return np.asarray(upstream, dtype=np.float64).reshape(-1) * np.asarray(m, dtype=np.float64).reshape(-1)
