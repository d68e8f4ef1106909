"""Matrix-based Renyi alpha-order entropy of a feature batch.

The batch is mapped to a Gaussian Gram matrix ``K``, normalised to unit trace,
and the entropy is read off its eigenspectrum:

    H_alpha = log2(sum_i lambda_i(A) ** alpha) / (1 - alpha),   A = K / tr(K)

Gradients with respect to the batch use the trace-power rule
``d tr(A^alpha) / dA = alpha * U diag(lambda^(alpha-1)) U^T`` so the
eigensolver itself is never differentiated. The kernel width is held fixed
while differentiating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .linalg import pairwise_sq_dists, sym_eig

EIG_EPS = 1e-12
BANDWIDTH_RULES = ("median", "fixed", "scaled-median")


@dataclass(frozen=True)
class KernelConfig:
    """Entropy order and Gaussian-kernel width rule.

    ``sigma`` is the width for the ``fixed`` rule; ``scale`` multiplies the
    median for ``scaled-median``.
    """

    alpha: float = 1.01
    bandwidth: str = "median"
    sigma: float = 1.0
    scale: float = 1.0
    floor: float = 1e-6

    def __post_init__(self):
        if not (self.alpha > 0 and self.alpha != 1 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must lie in (0,1) or (1,inf), got {self.alpha}")
        if self.bandwidth not in BANDWIDTH_RULES:
            raise ValueError(f"unknown bandwidth rule {self.bandwidth!r}")
        if self.bandwidth == "fixed" and not self.sigma > 0:
            raise ValueError("fixed bandwidth needs sigma > 0")
        if self.bandwidth == "scaled-median" and not self.scale > 0:
            raise ValueError("scaled-median needs scale > 0")
        if not self.floor > 0:
            raise ValueError("bandwidth floor must be positive")


@dataclass
class EntropyEstimate:
    K: np.ndarray
    A: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    H_bits: float
    bandwidth_used: float
    n_clamped: int = 0


def _matrix(z) -> np.ndarray:
    z = np.asarray(getattr(z, "data", z), dtype=np.float64)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    if z.ndim != 2:
        raise ValueError(f"expected an n x p batch, got shape {z.shape}")
    if z.shape[0] < 2:
        raise ValueError(f"entropy needs at least 2 samples, got {z.shape[0]}")
    return z


def median_bandwidth(z, floor: float = 1e-6) -> float:
    """Median pairwise Euclidean distance between distinct rows, floored."""
    z = _matrix(z)
    d = pairwise_sq_dists(z)
    iu = np.triu_indices(z.shape[0], k=1)
    return max(float(np.median(np.sqrt(d[iu]))), floor)


def select_bandwidth(z, cfg: KernelConfig, sq_dists: np.ndarray | None = None) -> float:
    if cfg.bandwidth == "fixed":
        return cfg.sigma
    z = _matrix(z)
    if sq_dists is None:
        sq_dists = pairwise_sq_dists(z)
    iu = np.triu_indices(z.shape[0], k=1)
    med = float(np.median(np.sqrt(sq_dists[iu])))
    if cfg.bandwidth == "scaled-median":
        med *= cfg.scale
    return max(med, cfg.floor)


def gram_gaussian(z, sigma: float, sq_dists: np.ndarray | None = None) -> np.ndarray:
    """Gaussian Gram matrix ``exp(-||z_i - z_j||^2 / (2 sigma^2))``."""
    if not sigma > 0:
        raise ValueError(f"bandwidth must be positive, got {sigma}")
    z = _matrix(z)
    d = pairwise_sq_dists(z) if sq_dists is None else sq_dists
    k = np.exp(-d / (2.0 * sigma * sigma))
    np.fill_diagonal(k, 1.0)
    return k


def _spectrum_power(lam: np.ndarray, alpha: float) -> tuple[np.ndarray, int]:
    lam = np.maximum(lam, 0.0)
    n_clamped = 0
    if alpha < 1:
        small = lam < EIG_EPS
        n_clamped = int(small.sum())
        lam = np.where(small, EIG_EPS, lam)
    return lam, n_clamped


def renyi_entropy(z, cfg: KernelConfig = KernelConfig(), sigma: float | None = None) -> EntropyEstimate:
    """Entropy estimate in bits for the rows of ``z``.

    ``sigma`` overrides the configured bandwidth rule when given.
    """
    z = _matrix(z)
    n = z.shape[0]
    d = pairwise_sq_dists(z)
    bw = select_bandwidth(z, cfg, d) if sigma is None else float(sigma)
    k = gram_gaussian(z, bw, d)
    a = k / np.trace(k)
    lam, vecs = sym_eig(a)
    lam_used, n_clamped = _spectrum_power(lam, cfg.alpha)
    s = float(np.sum(lam_used ** cfg.alpha))
    h = math.log2(s) / (1.0 - cfg.alpha)
    # round-off guard around the exact bounds [0, log2 n]
    h = min(max(h, 0.0), math.log2(n))
    return EntropyEstimate(k, a, np.maximum(lam, 0.0), vecs, h, bw, n_clamped)


def _grad_from_estimate(z: np.ndarray, est: EntropyEstimate, alpha: float) -> np.ndarray:
    lam, _ = _spectrum_power(est.eigenvalues, alpha)
    u = est.eigenvectors
    s = float(np.sum(lam ** alpha))
    # dH/dA
    g_a = (u * (alpha * lam ** (alpha - 1.0))) @ u.T / (s * (1.0 - alpha) * math.log(2.0))
    k = est.K
    t = float(np.trace(k))
    g_k = g_a / t
    g_k[np.diag_indices_from(g_k)] -= float(np.sum(g_a * k)) / (t * t)
    m = g_k * k * (-1.0 / (2.0 * est.bandwidth_used ** 2))
    s_mat = m + m.T
    return 2.0 * (s_mat.sum(axis=1, keepdims=True) * z - s_mat @ z)


def renyi_entropy_grad(z, cfg: KernelConfig = KernelConfig(), sigma: float | None = None) -> np.ndarray:
    """Gradient of :func:`renyi_entropy` (bits) with respect to every entry of ``z``."""
    z = _matrix(z)
    return _grad_from_estimate(z, renyi_entropy(z, cfg, sigma), cfg.alpha)


def independent_entropy(z, cfg: KernelConfig = KernelConfig()) -> float:
    """Sum of per-dimension entropies, i.e. the estimate under full independence."""
    z = _matrix(z)
    return float(sum(renyi_entropy(z[:, [i]], cfg).H_bits for i in range(z.shape[1])))


def entropy_term(z: ad.Tensor, cfg: KernelConfig = KernelConfig(),
                 estimator: str = "joint") -> ad.Tensor:
    """Differentiable entropy node (bits) for use inside a loss.

    ``estimator`` is ``"joint"`` for the matrix estimate over all columns, or
    ``"independent"`` for the sum of per-column estimates.
    """
    zd = _matrix(z.data)
    if estimator == "joint":
        est = renyi_entropy(zd, cfg)
        h = est.H_bits
        g = _grad_from_estimate(zd, est, cfg.alpha)
    elif estimator == "independent":
        h = 0.0
        g = np.zeros_like(zd)
        for i in range(zd.shape[1]):
            col = zd[:, [i]]
            est = renyi_entropy(col, cfg)
            h += est.H_bits
            g[:, [i]] = _grad_from_estimate(col, est, cfg.alpha)
    else:
        raise ValueError(f"unknown entropy estimator {estimator!r}")
    return ad.custom_scalar((z,), h, (g,), "renyi_entropy")
