"""Self-checks of the kernel, the linear-algebra updates and the optimizer.

Each check returns a :class:`CheckReport`; ``ok`` is the pass/fail verdict
at the stated tolerance and ``details`` holds the measured quantities.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .acquisition import AcqConfig, exhaustive_oracle, maximize_acquisition
from .gp import GpState, PosteriorEnsemble, forest_leaf_ids, gram, gram_from_ids
from .mcmc import SplitPrior, propose_structure
from .space import Categorical, Continuous, FeatureSpace, Integer, sample_uniform_array
from .tree import sample_tree_prior


@dataclass
class CheckReport:
    name: str
    ok: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name} ({self.seconds:.1f}s)"


def _mixed_space(rng) -> FeatureSpace:
    feats = [Continuous(0.0, 1.0, "c0")]
    if rng.random() < 0.7:
        feats.append(Integer(0, int(rng.integers(1, 8)), "i0"))
    if rng.random() < 0.7:
        feats.append(Categorical(int(rng.integers(2, 6)), "k0"))
    if rng.random() < 0.5:
        feats.append(Continuous(-2.0, 3.0, "c1"))
    return FeatureSpace(tuple(feats))


def check_kernel_psd(n_pairs: int = 100, max_n: int = 50, seed: int = 0) -> CheckReport:
    """Gram matrices of random forests on random designs are PSD with unit diagonal."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_eig, worst_diag = math.inf, 0.0
    for _ in range(n_pairs):
        space = _mixed_space(rng)
        m = int(rng.integers(1, 30))
        forest = [sample_tree_prior(space, 0.95, float(rng.uniform(0.5, 2.0)), rng) for _ in range(m)]
        X = sample_uniform_array(space, int(rng.integers(1, max_n + 1)), rng)
        K = gram(forest, 1.0, X)
        worst_eig = min(worst_eig, float(np.linalg.eigvalsh(K).min()))
        worst_diag = max(worst_diag, float(np.max(np.abs(np.diag(K) - 1.0))))
    ok = worst_eig >= -1e-8 and worst_diag <= 1e-12
    return CheckReport("kernel-psd", ok, {"min_eigenvalue": worst_eig, "max_diag_error": worst_diag},
                       time.perf_counter() - t0)


def check_covariance_equivalence(n_forests: int = 5, n_pairs: int = 10, n_draws: int = 100_000,
                                 m: int = 20, seed: int = 0, n_se: float = 5.0) -> CheckReport:
    """Sum-of-trees functions with ``N(0, 1/m)`` leaf values have the forest kernel as covariance."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    space = FeatureSpace((Continuous(0.0, 1.0, "a"), Continuous(0.0, 1.0, "b"), Integer(0, 4, "c")))
    worst = 0.0
    for _ in range(n_forests):
        forest = [sample_tree_prior(space, 0.95, 1.0, rng) for _ in range(m)]
        X = sample_uniform_array(space, 2 * n_pairs, rng)
        ids = forest_leaf_ids(forest, X)
        f = np.zeros((n_draws, len(X)))
        for t, tree in enumerate(forest):
            leaf_vals = rng.normal(0.0, math.sqrt(1.0 / m), size=(n_draws, tree.n_leaves))
            f += leaf_vals[:, ids[t]]
        K = gram(forest, 1.0, X)
        for p in range(n_pairs):
            i, j = 2 * p, 2 * p + 1
            prod = f[:, i] * f[:, j]
            z = (prod.mean() - K[i, j]) / (prod.std(ddof=1) / math.sqrt(n_draws))
            worst = max(worst, abs(z))
    return CheckReport("covariance-equivalence", worst <= n_se, {"max_abs_z": worst},
                       time.perf_counter() - t0)


def check_lowrank(N: int = 200, n_proposals: int = 500, m: int = 50, seed: int = 0,
                  tol: float = 1e-8) -> CheckReport:
    """Low-rank marginal-likelihood changes agree with dense recomputation and are faster.

    Proposals come from the grow/prune/change sampler and are accepted with
    the usual Metropolis rule so the state evolves as in a chain.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    space = FeatureSpace((Continuous(0.0, 1.0, "a"), Continuous(0.0, 1.0, "b"),
                          Integer(0, 9, "c"), Categorical(4, "d")))
    X = sample_uniform_array(space, N, rng)
    y = np.sin(6 * X[:, 0]) + X[:, 1] - 0.1 * X[:, 2] + 0.1 * rng.standard_normal(N)
    y = (y - y.mean()) / y.std()
    forest = [sample_tree_prior(space, 0.95, 2.0, rng) for _ in range(m)]
    state = GpState(forest, 0.1, X, y)
    prior = SplitPrior(space, 0.95, 2.0)
    t_update = t_dense = 0.0
    max_err = 0.0
    n_done = 0
    while n_done < n_proposals:
        t = int(rng.integers(m))
        _, new_tree, structural = propose_structure(state.forest[t], prior, rng, (0.25, 0.25, 0.5))
        if new_tree is None:
            continue
        n_done += 1
        s0 = time.perf_counter()
        proposal = state.propose_tree(t, new_tree)
        t_update += time.perf_counter() - s0

        s0 = time.perf_counter()
        ids = state.leaf_ids.copy()
        ids[t] = new_tree.leaf_index(X)
        K = gram_from_ids(ids, state.sigma0_sq)
        _, logdet, alpha, _ = state._factor(K, state.noise_var)
        dense_mll = -0.5 * float(y @ alpha) - 0.5 * logdet - 0.5 * N * math.log(2 * math.pi)
        t_dense += time.perf_counter() - s0

        max_err = max(max_err, abs((dense_mll - state.mll) - proposal.d_mll))
        log_accept = structural + proposal.d_mll
        if log_accept >= 0 or math.log(rng.random()) < log_accept:
            s0 = time.perf_counter()
            state.accept_tree(proposal)
            t_update += time.perf_counter() - s0
    ok = max_err <= tol and t_update < t_dense
    return CheckReport("lowrank", ok, {"max_abs_error": max_err, "update_seconds": t_update,
                                       "dense_seconds": t_dense, "refreshes": state.n_refresh},
                       time.perf_counter() - t0)


def _small_forest(space, rng, m: int, max_splits: int):
    while True:
        forest = [sample_tree_prior(space, 0.95, 1.0, rng) for _ in range(m)]
        if sum(tr.n_leaves - 1 for tr in forest) <= max_splits:
            return forest


def oracle_instance(seed: int, S: int = 2, m: int = 3, max_splits: int = 12, n: int = 15):
    """A small random ensemble whose joint partition the exhaustive oracle can enumerate."""
    rng = np.random.default_rng(seed)
    space = _mixed_space(rng)
    X = sample_uniform_array(space, n, rng)
    y = rng.standard_normal(n)
    per_state = max_splits // S
    states = [GpState(_small_forest(space, rng, m, per_state), float(rng.uniform(0.05, 0.5)), X, y)
              for _ in range(S)]
    return PosteriorEnsemble(states), space


def check_oracle(n_instances: int = 20, seed: int = 0, kappa: float = 1.96) -> CheckReport:
    """Branch-and-bound at zero gap equals the exhaustive optimum; a 10% gap keeps 90% of it."""
    t0 = time.perf_counter()
    worst_exact, worst_ratio, ok = 0.0, math.inf, True
    for i in range(n_instances):
        ens, space = oracle_instance(seed * 1000 + i)
        exact = exhaustive_oracle(ens, space, kappa)
        bb = maximize_acquisition(ens, space, AcqConfig(kappa=kappa, rel_gap=0.0, time_limit=60.0))
        bb10 = maximize_acquisition(ens, space, AcqConfig(kappa=kappa, rel_gap=0.10, time_limit=60.0))
        err = abs(bb.value - exact.value)
        worst_exact = max(worst_exact, err)
        ratio = bb10.value / exact.value if exact.value > 0 else math.inf
        worst_ratio = min(worst_ratio, ratio)
        ok &= err <= 1e-9 and bb10.value >= 0.9 * exact.value
    return CheckReport("oracle", bool(ok), {"max_abs_error": worst_exact, "min_ratio_at_10pct": worst_ratio},
                       time.perf_counter() - t0)


def check_kernel_limit(seed: int = 0, n_trees: int = 10_000, n_se: float = 5.0) -> CheckReport:
    """Poisson-depth trees reproduce the Laplace kernel in one and three dimensions."""
    t0 = time.perf_counter()
    worst, ok = 0.0, True
    for k, (lam, D) in enumerate(((1.0, 1), (2.0, 3))):
        cfg = analysis.LimitConfig(lam=lam, D=D, n_trees=n_trees,
                                   separations=tuple(np.linspace(0.0, D, 10)))
        res = analysis.laplace_limit_mc(cfg, np.random.default_rng([seed, k]))
        worst = max(worst, float(np.max(np.abs(res.z))))
        ok &= res.agrees(n_se) and bool(np.all(np.diff(res.estimate) <= 0))
    return CheckReport("kernel-limit", bool(ok), {"max_abs_z": worst}, time.perf_counter() - t0)


def check_chopping(seed: int = 0, n: int = 200_000, max_depth: int = 6, n_se: float = 5.0) -> CheckReport:
    """Chop-depth frequencies match the closed form; the series sums to one; the depth prior
    moves the kernel away from its Laplace counterpart."""
    t0 = time.perf_counter()
    worst = 0.0
    for k, x in enumerate((0.1, 0.3, 0.5, 0.9)):
        z = analysis.chopping_check(x, max_depth, n, np.random.default_rng([seed, k]))
        worst = max(worst, float(np.max(np.abs(z))))
    series_err = max(abs(math.fsum(analysis.chopping_split_probability(x, d) for d in range(1, 51)) - 1.0)
                     for x in (0.05, 0.3, 0.5, 0.9))
    gap = analysis.kernel_gap(0.95, 2.0)
    ok = worst <= n_se and series_err <= 1e-12 and gap > 0.05
    return CheckReport("chopping", ok, {"max_abs_z": worst, "series_error": series_err,
                                        "laplace_gap": gap, "laplace_gap_pi_d": analysis.kernel_gap(0.95, 2.0, variant="d")},
                       time.perf_counter() - t0)


CHECKS = {
    "kernel-limit": check_kernel_limit,
    "chopping": check_chopping,
    "lowrank": check_lowrank,
    "oracle": check_oracle,
}
