"""Exact divergences on small discrete distributions and numerical checks of the
information bounds that motivate the gated objective.

Everything is in bits. Supports are capped at 64 outcomes so that every double
expectation is an exact finite sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_SUPPORT = 64
SUM_TOL = 1e-12
MARGINAL_TOL = 1e-9
VIOLATION_TOL = 1e-12


def _as_prob(p, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"{name} must be a nonempty vector")
    if p.size > MAX_SUPPORT:
        raise ValueError(f"{name} has support {p.size} > {MAX_SUPPORT}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > SUM_TOL:
        raise ValueError(f"{name} sums to {p.sum()!r}, not 1")
    return p


@dataclass(frozen=True)
class DiscreteDist:
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _as_prob(self.probs, "distribution"))

    @property
    def size(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class DiscreteConditional:
    """Row-stochastic ``p(z|x)`` of shape ``|X| x |Z|`` with marginal ``p(x)``."""

    rows: np.ndarray
    px: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError("conditional must be a matrix")
        px = _as_prob(self.px, "p(x)")
        if rows.shape[0] != px.size:
            raise ValueError(f"{rows.shape[0]} rows but p(x) has {px.size} entries")
        for i, r in enumerate(rows):
            _as_prob(r, f"row {i}")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "px", px)

    def joint(self) -> np.ndarray:
        return self.px[:, None] * self.rows

    def pz(self) -> np.ndarray:
        return self.px @ self.rows


@dataclass(frozen=True)
class KLResult:
    """Divergence in bits. ``infinite`` flags a violation of absolute continuity."""

    bits: float
    infinite: bool = False

    def __float__(self) -> float:
        return self.bits


def _probs(p) -> np.ndarray:
    return p.probs if isinstance(p, DiscreteDist) else _as_prob(p, "distribution")


def _kl_raw(p: np.ndarray, q: np.ndarray) -> float:
    support = p > 0
    if np.any(q[support] == 0):
        return float("inf")
    return float(np.sum(p[support] * np.log2(p[support] / q[support])))


def kl(p, q) -> KLResult:
    """``sum p log2(p/q)`` with ``0 log 0 = 0``; ``+inf`` when ``q`` misses mass of ``p``."""
    p, q = _probs(p), _probs(q)
    if p.shape != q.shape:
        raise ValueError(f"supports differ: {p.size} vs {q.size}")
    v = _kl_raw(p, q)
    return KLResult(v, infinite=np.isinf(v))


def _joint(joint) -> np.ndarray:
    j = np.asarray(joint, dtype=np.float64)
    if j.ndim != 2:
        raise ValueError("joint must be a matrix")
    _as_prob(j.reshape(-1), "joint")
    return j


def mutual_info(joint) -> float:
    """``I(X;Z) = KL(p(x,z) || p(x)p(z))`` in bits."""
    j = _joint(joint)
    prod = np.outer(j.sum(axis=1), j.sum(axis=0))
    return _kl_raw(j.reshape(-1), prod.reshape(-1))


def cdmi(p1: DiscreteConditional, p2: DiscreteConditional) -> float:
    """Cross-domain mutual information ``KL(p1(x,z) || p2(x) p2(z))``."""
    if p1.rows.shape != p2.rows.shape:
        raise ValueError(f"shape mismatch {p1.rows.shape} vs {p2.rows.shape}")
    if np.max(np.abs(p1.px - p2.px)) > MARGINAL_TOL:
        raise ValueError("p1 and p2 must share the marginal p(x)")
    prod = np.outer(p2.px, p2.pz())
    return _kl_raw(p1.joint().reshape(-1), prod.reshape(-1))


def pairwise_kl(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``out[i, j] = KL(a[i] || b[j])`` for row-stochastic matrices."""
    return np.array([[_kl_raw(ra, rb) for rb in b] for ra in a])


# ---------------------------------------------------------------------------
# Bound verification
# ---------------------------------------------------------------------------

LEMMAS = ("lemma2", "lemma3", "lemma4", "lemma5")


@dataclass
class BoundReport:
    n_trials: int
    seed: int
    max_violation: dict[str, float]
    violations: dict[str, int]
    gap_mean: float
    gap_min: float
    gap_max: float

    @property
    def passed(self) -> bool:
        return all(v == 0 for v in self.violations.values())

    def rows(self) -> list[dict]:
        out = [{"check": k, "max_violation": self.max_violation[k], "violations": self.violations[k],
                "status": "pass" if self.violations[k] == 0 else "FAIL"} for k in LEMMAS]
        return out

    def table(self) -> str:
        lines = [f"{'check':<8} {'violations':>10} {'max_violation':>15}  status"]
        for r in self.rows():
            lines.append(f"{r['check']:<8} {r['violations']:>10d} {r['max_violation']:>15.3e}  {r['status']}")
        lines.append(f"lemma1 gap over {self.n_trials} trials: mean {self.gap_mean:.6f} "
                     f"min {self.gap_min:.6f} max {self.gap_max:.6f} bits")
        return "\n".join(lines)


def bound_slacks(c1: DiscreteConditional, c2: DiscreteConditional) -> dict[str, float]:
    """Left side minus right side of each bound (positive means violated), and the
    signed approximation gap for the marginal-KL estimate under key ``lemma1``."""
    px = c1.px
    d11 = pairwise_kl(c1.rows, c1.rows)
    d12 = pairwise_kl(c1.rows, c2.rows)
    pz1, pz2 = c1.pz(), c2.pz()
    # single-env: KL(p(z|x) || p(z)) <= E_x' KL(p(z|x) || p(z|x')), worst x
    lhs3 = np.array([_kl_raw(r, pz1) for r in c1.rows])
    s3 = float(np.max(lhs3 - d11 @ c1.px))
    # cross-env: KL(p1(z|x) || p2(z)) <= E_x'~p2 KL(p1(z|x) || p2(z|x'))
    lhs4 = np.array([_kl_raw(r, pz2) for r in c1.rows])
    s4 = float(np.max(lhs4 - d12 @ c2.px))
    s5 = mutual_info(c1.joint()) - float(px @ d11 @ px)
    s2 = cdmi(c1, c2) - float(px @ d12 @ c2.px)
    gap1 = _kl_raw(pz1, pz2) - float(px @ d12 @ c2.px)
    return {"lemma2": s2, "lemma3": s3, "lemma4": s4, "lemma5": s5, "lemma1": gap1}


def random_pair(rng: np.random.Generator, max_x: int = 8, max_z: int = 8):
    """Two conditionals with a shared Dirichlet(1) marginal and Dirichlet(1) rows."""
    nx = int(rng.integers(2, max_x + 1))
    nz = int(rng.integers(2, max_z + 1))
    px = rng.dirichlet(np.ones(nx))
    px /= px.sum()
    r1 = rng.dirichlet(np.ones(nz), size=nx)
    r2 = rng.dirichlet(np.ones(nz), size=nx)
    r1 /= r1.sum(axis=1, keepdims=True)
    r2 /= r2.sum(axis=1, keepdims=True)
    return DiscreteConditional(r1, px), DiscreteConditional(r2, px)


def verify_bounds(n_trials: int, seed: int, max_x: int = 8, max_z: int = 8) -> BoundReport:
    """Check the four provable bounds on ``n_trials`` random instances."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if max(max_x, max_z) > MAX_SUPPORT:
        raise ValueError(f"support sizes are capped at {MAX_SUPPORT}")
    rng = np.random.default_rng(seed)
    worst = {k: -np.inf for k in LEMMAS}
    count = {k: 0 for k in LEMMAS}
    gaps = []
    for _ in range(n_trials):
        s = bound_slacks(*random_pair(rng, max_x, max_z))
        for k in LEMMAS:
            worst[k] = max(worst[k], s[k])
            count[k] += int(s[k] > VIOLATION_TOL)
        gaps.append(s["lemma1"])
    g = np.array(gaps)
    return BoundReport(n_trials, seed, {k: float(v) for k, v in worst.items()}, count,
                       float(g.mean()), float(g.min()), float(g.max()))
