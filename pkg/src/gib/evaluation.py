"""Adversarial attacks, OOD-detection metrics, causal errors and the lambda sweep."""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .datasets import LabeledDataset, SEMSpec
from .model import GIBModel, logits, predict_proba
from .training import GIBConfig, evaluate, train_sequential


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.1
    gamma: float = 0.1
    steps: int = 5
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.steps < 1:
            raise ValueError("PGD needs at least one step")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")


def input_gradient(model: GIBModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the mean cross-entropy with respect to the inputs."""
    xt = ad.Tensor(x, requires_grad=True)
    loss = ad.softmax_cross_entropy(logits(model, xt), y)
    return ad.grad(loss, [xt])[0]


def cross_entropy(model: GIBModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample cross-entropy in nats."""
    logp = ad.log_softmax_array(logits(model, x).data)
    return -logp[np.arange(len(y)), np.asarray(y, dtype=np.int64)]


def fgsm(model: GIBModel, x, y, epsilon: float, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """One signed-gradient step of size ``epsilon``, clipped to ``[lo, hi]``."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    step = epsilon * np.sign(input_gradient(model, x, y))
    return np.clip(x + step, lo, hi)


def pgd(model: GIBModel, x, y, cfg: AttackConfig = AttackConfig()) -> np.ndarray:
    """``cfg.steps`` signed-gradient steps of size ``cfg.gamma``.

    Starts at ``x`` (no random start); after every step the iterate is projected
    onto the epsilon ball around ``x`` and clipped to ``[lo, hi]``.
    """
    x = np.asarray(x, dtype=np.float64)
    lower = np.maximum(x - cfg.epsilon, cfg.lo)
    upper = np.minimum(x + cfg.epsilon, cfg.hi)
    adv = x.copy()
    for _ in range(cfg.steps):
        adv = adv + cfg.gamma * np.sign(input_gradient(model, adv, y))
        adv = np.clip(adv, lower, upper)
    return adv


def attack_curve(model: GIBModel, ds: LabeledDataset, epsilons: Sequence[float],
                 method: str = "fgsm", gamma: float = 0.1, steps: int = 5,
                 batch: int = 1000) -> list[dict]:
    """Accuracy and mean cross-entropy on adversarial inputs for each epsilon."""
    rows = []
    for eps in sorted(epsilons):
        correct = 0
        loss = 0.0
        for i in range(0, len(ds), batch):
            x, y = ds.inputs[i:i + batch], ds.labels[i:i + batch]
            if method == "fgsm":
                adv = fgsm(model, x, y, eps)
            elif method == "pgd":
                adv = pgd(model, x, y, AttackConfig(eps, gamma, steps))
            else:
                raise ValueError(f"unknown attack {method!r}")
            out = logits(model, adv).data
            correct += int(np.sum(np.argmax(out, axis=1) == y))
            loss += float(cross_entropy(model, adv, y).sum())
        rows.append({"attack": method, "epsilon": float(eps),
                     "accuracy": correct / len(ds), "mean_loss": loss / len(ds)})
    return rows


# ---------------------------------------------------------------------------
# OOD detection
# ---------------------------------------------------------------------------

TABLE_ROWS = (("auroc", "AUROC"), ("aupr_in", "AUPR In"), ("aupr_out", "AUPR Out"),
              ("detection_accuracy", "Detection Acc"), ("fpr_at_95_tpr", "FPR (95% TPR)"))


@dataclass(frozen=True)
class OODMetrics:
    auroc: float
    aupr_in: float
    aupr_out: float
    detection_accuracy: float
    fpr_at_95_tpr: float

    def table(self) -> list[tuple[str, float]]:
        return [(label, getattr(self, key)) for key, label in TABLE_ROWS]


def _cumulative_counts(pos: np.ndarray, neg: np.ndarray):
    """Counts of positives/negatives scoring >= each distinct threshold, descending."""
    scores = np.concatenate([pos, neg])
    is_pos = np.concatenate([np.ones(len(pos), dtype=np.int64), np.zeros(len(neg), dtype=np.int64)])
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    tp = np.cumsum(is_pos[order])
    fp = np.cumsum(1 - is_pos[order])
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    return s[last], tp[last], fp[last]


def average_precision(pos, neg) -> float:
    """Step-wise area under the precision-recall curve, ``pos`` being the positive class.

    Accumulated as an exact rational and rounded once, so equal inputs give
    the correctly rounded value regardless of summation order.
    """
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    _, tp, fp = _cumulative_counts(pos, neg)
    prev = 0
    acc = Fraction(0)
    for t, f in zip(tp.tolist(), fp.tolist()):
        if t != prev:
            acc += Fraction((t - prev) * t, t + f)
            prev = t
    return float(acc / len(pos))


def ood_metrics(scores_in, scores_out) -> OODMetrics:
    """Detection metrics treating in-distribution samples as positives.

    A sample is called in-distribution when its score is at or above the
    threshold. AUROC counts ties as half.
    """
    pin = np.asarray(scores_in, dtype=np.float64).reshape(-1)
    pout = np.asarray(scores_out, dtype=np.float64).reshape(-1)
    if pin.size == 0 or pout.size == 0:
        raise ValueError("both score lists must be nonempty")
    if not (np.all(np.isfinite(pin)) and np.all(np.isfinite(pout))):
        raise ValueError("scores must be finite")
    n_in, n_out = pin.size, pout.size

    # Mann-Whitney: doubled rank sum keeps tie halves integral
    allv = np.concatenate([pin, pout])
    order = np.argsort(allv, kind="stable")
    sv = allv[order]
    starts = np.flatnonzero(np.r_[True, sv[1:] != sv[:-1]])
    ends = np.r_[starts[1:], sv.size]
    rank2 = np.empty(sv.size, dtype=np.int64)
    for a, b in zip(starts, ends):
        rank2[a:b] = a + b + 1  # twice the average 1-based rank of the tie block
    ranks2 = np.empty_like(rank2)
    ranks2[order] = rank2
    u2 = int(ranks2[:n_in].sum()) - n_in * (n_in + 1)
    auroc = u2 / (2 * n_in * n_out)

    _, tp, fp = _cumulative_counts(pin, pout)
    tp = tp.tolist()
    fp = fp.tolist()
    # threshold above every score: nothing called in-distribution
    best = n_out * n_in
    fpr95 = None
    for t, f in zip(tp, fp):
        tn = n_out - f
        best = max(best, t * n_out + tn * n_in)
        if fpr95 is None and 100 * t >= 95 * n_in:
            fpr95 = f / n_out
    return OODMetrics(
        auroc=auroc,
        aupr_in=average_precision(pin, pout),
        aupr_out=average_precision(-pout, -pin),
        detection_accuracy=best / (2 * n_in * n_out),
        fpr_at_95_tpr=fpr95,
    )


def max_softmax(model: GIBModel, x) -> np.ndarray:
    return predict_proba(model, x).max(axis=1)


# ---------------------------------------------------------------------------
# Causal recovery
# ---------------------------------------------------------------------------


def causal_errors(readout, truth, d_causal: int = 10) -> tuple[float, float]:
    """Mean absolute deviation (x100) from the true causal weights and from zero elsewhere."""
    w = np.asarray(readout, dtype=np.float64).reshape(-1)
    t = truth.causal_readout() if isinstance(truth, SEMSpec) else np.asarray(truth, dtype=np.float64).reshape(-1)
    if w.shape != t.shape:
        raise ValueError(f"readout has {w.size} entries, truth has {t.size}")
    causal = 100.0 * float(np.mean(np.abs(w[:d_causal] - t[:d_causal])))
    noncausal = 100.0 * float(np.mean(np.abs(w[d_causal:])))
    return causal, noncausal


def linear_readout(model: GIBModel) -> np.ndarray:
    """Effective input weights of an identity-extractor model with a single output."""
    if len(model.spec.layer_sizes) != 2 or model.spec.layer_sizes[1] != 1:
        raise ValueError("linear readout needs a [d, 1] identity-extractor model")
    w = model.params["w.weight"].data[:, 0]
    return w * model.gate.soft_mask() if model.gate_enabled else w.copy()


# ---------------------------------------------------------------------------
# Feature-count sweep
# ---------------------------------------------------------------------------


def feature_count_sweep(lambdas: Sequence[float], make_model, stream: Sequence[LabeledDataset],
                        test: LabeledDataset, cfg: GIBConfig) -> list[dict]:
    """Train one model per ``lambda`` and report accuracy and surviving features.

    ``make_model()`` must return a fresh model; every run uses ``cfg.seed``.
    """
    if len(lambdas) == 0:
        raise ValueError("lambda grid is empty")
    rows = []
    for lam in lambdas:
        model = make_model()
        log = train_sequential(model, stream, replace(cfg, lam=float(lam)))
        rows.append({"lambda": float(lam), "test_accuracy": evaluate(model, test, cfg.task),
                     "active_features": model.gate.active_count(),
                     "active_trace": [r["active_count"] for r in log.gate_trace]})
    return rows
