"""GIB objective and the two-phase sequential training procedure, plus the ERM baseline."""

from __future__ import annotations

import csv
import io
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .datasets import LabeledDataset
from .gating import SIGMOID
from .model import GIBModel, checkpoint_bytes, features, head, mask_features, predict
from .optim import AdamState, adam_step
from .renyi import KernelConfig, entropy_term

METRIC_FIELDS = ["epoch", "env", "split", "loss", "ce", "entropy_bits", "accuracy",
                 "active_features", "lr"]
GATE_FIELDS = ["step", "env", "active_count", "min_prob", "max_prob"]


class TrainingDiverged(FloatingPointError):
    """Non-finite loss. ``last_good`` holds checkpoint bytes from the start of the epoch."""

    def __init__(self, env: int, epoch: int, last_good: bytes):
        super().__init__(f"non-finite loss in environment {env}, epoch {epoch}")
        self.env = env
        self.epoch = epoch
        self.last_good = last_good


class EntropySkippedWarning(UserWarning):
    pass


@dataclass
class GIBConfig:
    lam: float = 1e-3
    kernel: KernelConfig = field(default_factory=KernelConfig)
    estimator: str = "joint"
    epochs: int = 30
    projection_epochs: int | None = None
    batch_size: int = 100
    adam: AdamState = field(default_factory=lambda: AdamState(lr=1e-3))
    task: str = "classification"
    projection_kind: str = SIGMOID
    gate_lr_scale: float = 1.0
    update_gates: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for the entropy term")
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task!r}")

    @property
    def phase_epochs(self) -> int:
        return self.epochs if self.projection_epochs is None else self.projection_epochs


@dataclass
class LossParts:
    total: ad.Tensor
    risk: float
    entropy: float
    entropy_skipped: bool = False


@dataclass
class TrainLog:
    metrics: list[dict] = field(default_factory=list)
    gate_trace: list[dict] = field(default_factory=list)
    entropy_trace: list[float] = field(default_factory=list)

    def metrics_csv(self) -> str:
        return to_csv(METRIC_FIELDS, self.metrics)

    def gate_csv(self) -> str:
        return to_csv(GATE_FIELDS, self.gate_trace)

    def write(self, out_dir: str | os.PathLike, prefix: str = "") -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"{prefix}metrics.csv"), "w", newline="") as fh:
            fh.write(self.metrics_csv())
        with open(os.path.join(out_dir, f"{prefix}gate_trace.csv"), "w", newline="") as fh:
            fh.write(self.gate_csv())


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def to_csv(fields: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(fields)
    for row in rows:
        w.writerow([fmt(row[f]) for f in fields])
    return buf.getvalue()


def risk_term(out: ad.Tensor, y: np.ndarray, task: str) -> ad.Tensor:
    if task == "classification":
        return ad.softmax_cross_entropy(out, y)
    return ad.mse(out, np.asarray(y, dtype=np.float64).reshape(-1, 1))


def loss_from_features(model: GIBModel, z: ad.Tensor, y: np.ndarray, cfg: GIBConfig) -> LossParts:
    zm = mask_features(model, z)
    risk = risk_term(head(model, zm), y, cfg.task)
    if cfg.lam == 0:
        return LossParts(risk, risk.item(), float("nan"))
    if z.shape[0] < 2:
        warnings.warn("batch smaller than 2; entropy term skipped", EntropySkippedWarning, stacklevel=3)
        return LossParts(risk, risk.item(), float("nan"), entropy_skipped=True)
    h = entropy_term(zm, cfg.kernel, cfg.estimator)
    total = ad.add(risk, ad.scale(h, cfg.lam))
    return LossParts(total, risk.item(), h.item())


def gib_loss(model: GIBModel, x, y, cfg: GIBConfig, rng: np.random.Generator | None = None) -> LossParts:
    """Risk on one batch plus ``lam`` times the entropy (bits) of the masked bottleneck.

    With ``lam == 0`` the entropy is not evaluated and is reported as NaN.
    """
    return loss_from_features(model, features(model, x, rng), y, cfg)


def evaluate(model: GIBModel, ds: LabeledDataset, task: str = "classification") -> float:
    """Accuracy for classification, mean squared error for regression."""
    out = predict(model, ds.inputs)
    if task == "classification":
        return float(np.mean(np.argmax(out, axis=1) == ds.labels))
    return float(np.mean((out[:, 0] - ds.labels) ** 2))


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield perm[i:i + batch_size]


def _record_gate(model: GIBModel, log: TrainLog, env: int) -> None:
    prob = model.gate.probabilities()
    log.gate_trace.append({"step": model.gate.step_counter - 1, "env": env,
                           "active_count": model.gate.active_count(),
                           "min_prob": float(prob.min()), "max_prob": float(prob.max())})


def _run_phase(model: GIBModel, env: LabeledDataset, cfg: GIBConfig, log: TrainLog,
               epochs: int, names: list[str], frozen_features: bool) -> None:
    """Shared epoch/batch loop. ``names`` are the parameters that move."""
    rng = np.random.default_rng([cfg.seed, env.env_index])
    tensors = {**model.params, "gate.g": model.gate.g_tensor}
    adam = cfg.adam.fresh()
    gate_adam = replace(cfg.adam.fresh(), lr=cfg.adam.lr * cfg.gate_lr_scale)
    gated = model.gate_enabled and cfg.update_gates
    z_all = features(model, env.inputs).data if frozen_features else None
    for epoch in range(epochs):
        last_good = checkpoint_bytes(model)
        sums = np.zeros(3)
        count = 0
        for idx in _batches(len(env), cfg.batch_size, rng):
            if frozen_features:
                parts = loss_from_features(model, ad.Tensor(z_all[idx]), env.labels[idx], cfg)
            else:
                parts = gib_loss(model, env.inputs[idx], env.labels[idx], cfg, rng)
            loss = parts.total.item()
            if not math.isfinite(loss):
                raise TrainingDiverged(env.env_index, epoch, last_good)
            if not math.isnan(parts.entropy):
                log.entropy_trace.append(parts.entropy)
            grads = dict(zip(names, ad.grad(parts.total, [tensors[n] for n in names])))
            g_gate = grads.pop("gate.g", None)
            if grads:
                adam_step(tensors, grads, adam, epoch)
            if g_gate is not None:
                adam_step(tensors, {"gate.g": g_gate}, gate_adam, epoch)
            if gated and model.gate.update_hard_mask():
                _record_gate(model, log, env.env_index)
            k = len(idx)
            sums += k * np.array([loss, parts.risk, 0.0 if math.isnan(parts.entropy) else parts.entropy])
            count += k
        log.metrics.append({
            "epoch": epoch, "env": env.env_index, "split": "train",
            "loss": sums[0] / count, "ce": sums[1] / count,
            "entropy_bits": sums[2] / count if cfg.lam > 0 else float("nan"),
            "accuracy": evaluate(model, env, cfg.task),
            "active_features": model.gate.active_count() if model.gate_enabled else model.gate.p,
            "lr": adam.lr_at(epoch),
        })


def train_first_environment(model: GIBModel, env: LabeledDataset, cfg: GIBConfig,
                            log: TrainLog | None = None) -> TrainLog:
    """Joint training of extractor, head and gate on ``env``; hard mask refreshed every period."""
    log = TrainLog() if log is None else log
    names = model.phi_names + model.w_names
    if model.gate_enabled and cfg.update_gates:
        names.append("gate.g")
    _run_phase(model, env, cfg, log, cfg.epochs, names, frozen_features=False)
    return log


def information_projection(model: GIBModel, env: LabeledDataset, cfg: GIBConfig,
                           log: TrainLog | None = None) -> TrainLog:
    """Gate-only optimisation of the full objective on a new environment.

    Extractor and head parameters are never written.
    """
    if not model.gate_enabled:
        raise ValueError("information projection needs an enabled gate")
    log = TrainLog() if log is None else log
    model.gate.kind = cfg.projection_kind
    _run_phase(model, env, cfg, log, cfg.phase_epochs, ["gate.g"], frozen_features=True)
    return log


def train_sequential(model: GIBModel, stream: Sequence[LabeledDataset], cfg: GIBConfig,
                     log: TrainLog | None = None) -> TrainLog:
    """First environment trains everything; each later one runs an information projection."""
    if not stream:
        raise ValueError("environment stream is empty")
    log = train_first_environment(model, stream[0], cfg, log)
    for env in stream[1:]:
        information_projection(model, env, cfg, log)
    return log


def erm_train(model: GIBModel, stream: Sequence[LabeledDataset], cfg: GIBConfig,
              log: TrainLog | None = None) -> TrainLog:
    """Sequential empirical risk minimisation: full retraining on each environment, no gate."""
    if not stream:
        raise ValueError("environment stream is empty")
    model.gate_enabled = False
    erm_cfg = replace(cfg, lam=0.0, update_gates=False)
    log = TrainLog() if log is None else log
    for env in stream:
        train_first_environment(model, env, erm_cfg, log)
    return log
