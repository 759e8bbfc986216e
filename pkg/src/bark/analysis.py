"""Limit behaviour of the forest kernel.

Two models of where a single tree separates a pair of points:

* the Poisson-depth model (independent uniform splits on ``[0, 1]`` along a
  path whose length is Poisson), whose infinite-forest kernel is the
  Laplace kernel ``exp(-lambda |x - x'|_1 / D)``;
* the chopping model (each split uniform within the remaining interval,
  split probability given by the depth prior), which gives the kernel
  ``k(0, x)`` the real tree prior induces in one dimension.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class LimitConfig:
    """Monte Carlo setup for the Poisson-depth kernel limit.

    ``separations`` are L1 distances; each probe pair is ``(0, s/D * 1)``.
    """

    lam: float = 1.0
    D: int = 1
    n_trees: int = 10_000
    separations: tuple = field(default_factory=lambda: tuple(np.linspace(0.0, 1.0, 10)))

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.D < 1:
            raise ValueError("D must be at least 1")
        if self.n_trees < 1000:
            raise ValueError("n_trees must be at least 1000")
        s = np.asarray(self.separations, dtype=np.float64)
        if np.any(s < 0) or np.any(s > self.D):
            raise ValueError("separations must lie in [0, D]")


@dataclass
class LimitResult:
    separations: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    theory: np.ndarray

    @property
    def z(self) -> np.ndarray:
        return _zscore(self.estimate, self.theory, self.se)

    def agrees(self, n_se: float = 5.0) -> bool:
        return bool(np.all(np.abs(self.z) <= n_se))


def _zscore(estimate, theory, se) -> np.ndarray:
    """Standardized residuals; a zero standard error counts as agreement only on an exact match."""
    diff = np.asarray(estimate) - np.asarray(theory)
    safe = np.where(se > 0, se, 1.0)
    return np.where(se > 0, diff / safe, np.where(np.abs(diff) < 1e-12, 0.0, np.inf))


def laplace_kernel(dist, lam: float, D: int = 1):
    return np.exp(-lam * np.asarray(dist, dtype=np.float64) / D)


def laplace_limit_mc(config: LimitConfig, rng) -> LimitResult:
    """Fraction of Poisson-depth trees that keep each probe pair in one leaf.

    Each tree draws the depth of the leaf holding the first point from
    ``Poisson(lam)``; every split on that path picks a feature uniformly and
    a threshold uniform on ``[0, 1]`` independently of earlier splits.
    """
    rng = np.random.default_rng(rng)
    D, n = config.D, config.n_trees
    seps = np.asarray(config.separations, dtype=np.float64)
    depth = rng.poisson(config.lam, size=n)
    total = int(depth.sum())
    owner = np.repeat(np.arange(n), depth)
    feat = rng.integers(0, D, size=total)
    thr = rng.random(total)
    est = np.empty(len(seps))
    for i, s in enumerate(seps):
        # a split on feature j separates (0, x') iff its threshold is below x'_j
        delta = np.full(D, s / D)
        cut = thr < delta[feat]
        separated = np.zeros(n, dtype=bool)
        separated[owner[cut]] = True
        est[i] = 1.0 - separated.mean()
    theory = laplace_kernel(seps, config.lam, D)
    # binomial standard error under the closed form, so a pair with no variance is handled exactly
    se = np.sqrt(theory * (1.0 - theory) / n)
    return LimitResult(seps, est, se, theory)


def chopping_split_probability(x: float, d: int) -> float:
    """Probability that the ``d``-th chop of ``[0, 1]`` is the first to separate 0 from ``x``.

    Equals ``x (-log x)^(d-1) / (d-1)!``.
    """
    if not 0.0 < x < 1.0:
        raise ValueError("x must lie in (0, 1)")
    if int(d) != d or d < 1:
        raise ValueError("d must be a positive integer")
    d = int(d)
    if d == 1:
        return float(x)
    return math.exp(math.log(x) + (d - 1) * math.log(-math.log(x)) - math.lgamma(d))


def _chop_prob_closed(x: float, d: int) -> float:
    """Closed form extended to the endpoints by continuity."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0 if d == 1 else 0.0
    return chopping_split_probability(x, d)


def chopping_mc(x: float, max_depth: int, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo frequencies and standard errors of ``S_1 .. S_max_depth``."""
    rng = np.random.default_rng(rng)
    lengths = np.cumprod(rng.random((n, max_depth)), axis=1)
    inside = lengths <= x
    first = np.where(inside.any(axis=1), inside.argmax(axis=1) + 1, 0)
    p = np.array([(first == d).mean() for d in range(1, max_depth + 1)])
    return p, np.sqrt(p * (1.0 - p) / n)


def chopping_check(x: float, max_depth: int, n: int, rng) -> np.ndarray:
    """Standardized residuals of the chopping Monte Carlo against the closed form, ``d = 1..max_depth``."""
    p, _ = chopping_mc(x, max_depth, n, rng)
    theory = np.array([chopping_split_probability(x, d) for d in range(1, max_depth + 1)])
    return _zscore(p, theory, np.sqrt(theory * (1.0 - theory) / n))


def depth_prior(depth, alpha: float, beta: float):
    return alpha * (1.0 + np.asarray(depth, dtype=np.float64)) ** (-beta)


def depth_weighted_separation(x: float, alpha: float, beta: float, max_depth: int = 50,
                              variant: str = "i") -> float:
    """``1 - k(0, x)`` under the chopping model with depth-dependent split probabilities.

    ``sum_d Pr(S_d) prod_{i<=d} pi(i)`` with ``pi(i) = alpha (1 + i)^-beta``;
    ``variant="d"`` uses ``pi(d)^d`` in place of the product.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if variant not in ("i", "d"):
        raise ValueError("variant must be 'i' or 'd'")
    d = np.arange(1, max_depth + 1)
    pi = depth_prior(d, alpha, beta)
    weights = np.cumprod(pi) if variant == "i" else pi ** d
    return math.fsum(_chop_prob_closed(x, int(k)) * w for k, w in zip(d, weights))


def kernel_curve(alpha: float, beta: float, n_points: int = 101, max_depth: int = 50,
                 variant: str = "i") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(x, k_true, k_laplace)`` on a grid over ``[0, 1]`` with ``lambda = -log(1 - alpha)``."""
    xs = np.linspace(0.0, 1.0, n_points)
    k_true = np.array([1.0 - depth_weighted_separation(x, alpha, beta, max_depth, variant) for x in xs])
    lam = -math.log1p(-alpha)
    return xs, k_true, laplace_kernel(xs, lam)


def kernel_gap(alpha: float, beta: float, n_points: int = 1001, variant: str = "i") -> float:
    """Sup-norm distance between the chopping kernel and its Laplace counterpart."""
    _, k_true, k_lap = kernel_curve(alpha, beta, n_points, variant=variant)
    return float(np.max(np.abs(k_true - k_lap)))


def write_curves(path, alpha: float, beta: float, n_points: int = 101, variant: str = "i") -> None:
    xs, k_true, k_lap = kernel_curve(alpha, beta, n_points, variant=variant)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("x", "k_true", "k_laplace"))
        for row in zip(xs, k_true, k_lap):
            w.writerow(tuple(repr(float(v)) for v in row))
