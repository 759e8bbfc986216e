"""Metropolis-Hastings sampling of forest kernels and the noise variance.

Each sweep visits every tree once, proposing a grow, prune or change move,
then makes one proposal for the noise variance through a Gaussian random
walk on the inverse-softplus scale.  Leaf values are never sampled: the
likelihood is the GP marginal likelihood with the leaves integrated out.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.special

from .gp import GpState, PosteriorEnsemble
from .space import Box, Dataset, FeatureSpace, box_contains_array
from .tree import (
    LEAF,
    MAX_DEPTH,
    Node,
    NodeInfo,
    Tree,
    sample_rule,
    sample_tree_prior,
    single_leaf,
    splittable_features,
    split_box,
)

log = logging.getLogger(__name__)

MOVES = ("grow", "prune", "change")


@dataclass
class SamplerConfig:
    alpha: float = 0.95
    beta: float = 2.0
    nu: float = 3.0
    q: float = 0.9
    m: int = 50
    chains: int = 4
    burn_in: int = 1000
    samples_per_chain: int = 400
    thin: int = 100
    noise_walk_sd: float = 0.5
    proposal_weights: tuple = (0.25, 0.25, 0.5)
    sigma0_sq: float = 1.0
    split_sampling: str = "uniform"
    threads: int = 1

    def __post_init__(self):
        self.proposal_weights = tuple(float(w) for w in self.proposal_weights)
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.alpha < 1.0 or self.beta < 0.0:
            raise ValueError("depth prior needs alpha in (0, 1) and beta >= 0")
        if self.nu <= 0 or not 0.0 < self.q < 1.0:
            raise ValueError("noise prior needs nu > 0 and q in (0, 1)")
        if self.m < 1 or self.chains < 1:
            raise ValueError("m and chains must be at least 1")
        if self.burn_in < 0 or self.samples_per_chain < 1 or self.thin < 1:
            raise ValueError("burn_in >= 0, samples_per_chain >= 1 and thin >= 1 required")
        if self.thin > self.samples_per_chain:
            raise ValueError("thin cannot exceed samples_per_chain")
        if len(self.proposal_weights) != 3 or min(self.proposal_weights) < 0:
            raise ValueError("proposal_weights must be three non-negative numbers")
        if not math.isclose(self.proposal_weights[0], self.proposal_weights[1]):
            raise ValueError("grow and prune weights must be equal")
        if self.noise_walk_sd <= 0 or self.sigma0_sq <= 0:
            raise ValueError("noise_walk_sd and sigma0_sq must be positive")
        if self.split_sampling not in ("uniform", "data"):
            raise ValueError("split_sampling must be 'uniform' or 'data'")

    @property
    def kept_per_chain(self) -> int:
        return self.samples_per_chain // self.thin

    @property
    def n_samples(self) -> int:
        return self.chains * self.kept_per_chain

    def to_dict(self) -> dict:
        d = asdict(self)
        d["proposal_weights"] = list(self.proposal_weights)
        return d


# -- noise prior --------------------------------------------------------------

def solve_noise_scale(nu: float, q: float, tol: float = 1e-10, max_iter: int = 200) -> float:
    """Scale ``t`` with ``Pr(sigma^2 < 1) = q`` under ``InvGamma(nu/2, nu t/2)``.

    ``Pr(sigma^2 < 1)`` is the upper regularized incomplete gamma function
    ``Q(nu/2, nu t/2)``, decreasing in ``t``; solved by bisection.
    """
    if nu <= 0 or not 0.0 < q < 1.0:
        raise ValueError("need nu > 0 and q in (0, 1)")
    a = nu / 2.0

    def f(t):
        return scipy.special.gammaincc(a, nu * t / 2.0) - q

    lo, hi = 0.0, 1.0
    while f(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("could not bracket the noise scale")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) < tol:
            return mid
        if fm > 0:
            lo = mid
        else:
            hi = mid
    raise RuntimeError(f"noise scale bisection did not converge in {max_iter} iterations")


@dataclass(frozen=True)
class NoisePrior:
    """``sigma_y^2 ~ InvGamma(nu/2, nu t/2)`` on standardized outputs."""

    nu: float
    q: float
    t: float

    @classmethod
    def from_config(cls, nu: float, q: float) -> "NoisePrior":
        return cls(nu, q, solve_noise_scale(nu, q))

    @property
    def shape(self) -> float:
        return self.nu / 2.0

    @property
    def scale(self) -> float:
        return self.nu * self.t / 2.0

    def logpdf(self, x: float) -> float:
        a, b = self.shape, self.scale
        return a * math.log(b) - math.lgamma(a) - (a + 1.0) * math.log(x) - b / x

    def cdf(self, x: float) -> float:
        return float(scipy.special.gammaincc(self.shape, self.scale / x))

    def median(self) -> float:
        return self.scale / float(scipy.special.gammainccinv(self.shape, 0.5))

    def mean(self) -> float:
        if self.shape <= 1:
            return math.inf
        return self.scale / (self.shape - 1.0)

    def mode(self) -> float:
        return self.scale / (self.shape + 1.0)

    def sample(self, rng: np.random.Generator, size=None):
        return self.scale / rng.gamma(self.shape, 1.0, size=size)


def softplus(theta):
    return np.logaddexp(0.0, theta)


def inv_softplus(s):
    return s + np.log(-np.expm1(-s))


def noise_log_transition_ratio(old: float, new: float, walk_sd: float | None = None) -> float:
    """``log q(new -> old) - log q(old -> new)`` for the softplus random walk.

    The Gaussian terms are symmetric in the unconstrained space and cancel,
    leaving the Jacobians ``|d softplus^-1(s) / ds| = 1 / (1 - exp(-s))``.
    ``walk_sd`` does not enter the ratio.
    """
    if old <= 0 or new <= 0:
        raise ValueError("noise variances must be positive")
    return math.log(-math.expm1(-new)) - math.log(-math.expm1(-old))


def noise_log_prior_ratio(old: float, new: float, prior: NoisePrior) -> float:
    if old <= 0 or new <= 0:
        raise ValueError("noise variances must be positive")
    a, b = prior.shape, prior.scale
    return -(a + 1.0) * (math.log(new) - math.log(old)) - b / new + b / old


# -- tree move ratios ---------------------------------------------------------

@dataclass
class SplitPrior:
    """Depth prior plus the split-rule sampler it is paired with.

    ``X`` is set only for data-driven split sampling, where a node can split
    on a numeric feature only if its training points take two values there.
    """

    space: FeatureSpace
    alpha: float
    beta: float
    X: np.ndarray | None = None

    def data(self, box: Box):
        if self.X is None:
            return None
        return self.X[box_contains_array(box, self.X)]

    def p_split(self, depth: int, box: Box) -> float:
        if depth >= MAX_DEPTH or not splittable_features(box, self.space, self.data(box)):
            return 0.0
        return self.alpha * (1.0 + depth) ** (-self.beta)

    def sample_rule(self, box: Box, rng):
        return sample_rule(box, self.space, rng, self.data(box))


def _log1m(p: float) -> float:
    return math.log1p(-p)


def grow_ratios(tree: Tree, leaf: NodeInfo, rule, prior: SplitPrior,
                new_tree: Tree | None = None) -> tuple[float, float]:
    """Log transition and log prior ratios of growing ``leaf`` with ``rule``.

    The rule probability appears in both and cancels, so it is left out of
    each.  Returns ``(log w0 - log w1*, log p(T*) / p(T) without Pr(rule))``.
    """
    if new_tree is None:
        new_tree = tree.replace(leaf.path, Node(rule, LEAF, LEAF))
    w0 = tree.n_leaves
    w1_new = len(new_tree.singly_internal)
    p_eta = prior.p_split(leaf.depth, leaf.box)
    if p_eta == 0.0:
        raise ValueError("cannot grow an unsplittable leaf")
    lbox, rbox = split_box(leaf.box, rule)
    log_prior = (math.log(p_eta) + _log1m(prior.p_split(leaf.depth + 1, lbox))
                 + _log1m(prior.p_split(leaf.depth + 1, rbox)) - _log1m(p_eta))
    return math.log(w0) - math.log(w1_new), log_prior


def prune_ratios(tree: Tree, node: NodeInfo, prior: SplitPrior,
                 new_tree: Tree | None = None) -> tuple[float, float]:
    """Ratios for collapsing the singly-internal ``node``: the inverse of the matching grow."""
    if new_tree is None:
        new_tree = tree.replace(node.path, LEAF)
    leaf = NodeInfo(node.path, LEAF, node.depth, node.box)
    tr, pr = grow_ratios(new_tree, leaf, node.node.rule, prior, new_tree=tree)
    return -tr, -pr


def change_ratios(tree: Tree, node: NodeInfo, new_rule, prior: SplitPrior) -> float:
    """Combined log ratio of a change move.

    Rule probabilities cancel between transition and prior, so this is 0
    unless the new children differ in whether they can split at all (only
    possible with integer or categorical features).
    """
    old_l, old_r = split_box(node.box, node.node.rule)
    new_l, new_r = split_box(node.box, new_rule)
    d = node.depth + 1
    return (_log1m(prior.p_split(d, new_l)) + _log1m(prior.p_split(d, new_r))
            - _log1m(prior.p_split(d, old_l)) - _log1m(prior.p_split(d, old_r)))


def move_probability(tree: Tree, move: str, weights) -> float:
    """Probability of selecting ``move`` for ``tree``; a bare root always grows."""
    if tree.root is LEAF:
        return 1.0 if move == "grow" else 0.0
    return weights[MOVES.index(move)] / sum(weights)


# -- chains -------------------------------------------------------------------

@dataclass
class ChainState:
    state: GpState
    rng: np.random.Generator
    proposed: dict = field(default_factory=lambda: dict.fromkeys(MOVES + ("noise",), 0))
    accepted: dict = field(default_factory=lambda: dict.fromkeys(MOVES + ("noise",), 0))
    trace: list = field(default_factory=list)
    sweeps: int = 0

    def acceptance_rates(self) -> dict:
        return {k: self.accepted[k] / self.proposed[k] if self.proposed[k] else float("nan")
                for k in self.proposed}


def propose_structure(tree: Tree, prior: SplitPrior, rng, weights):
    """Draw a grow, prune or change proposal for ``tree``.

    Returns ``(move, new_tree, log structural ratio)``; ``new_tree`` is None
    when the chosen leaf cannot be grown, which counts as a rejection.
    """
    if tree.root is LEAF:
        move = "grow"
    else:
        u = rng.random() * sum(weights)
        move = "grow" if u < weights[0] else "prune" if u < weights[0] + weights[1] else "change"

    if move == "grow":
        leaves = tree.leaves
        leaf = leaves[int(rng.integers(len(leaves)))]
        if prior.p_split(leaf.depth, leaf.box) == 0.0:
            return move, None, 0.0
        rule = prior.sample_rule(leaf.box, rng)
        new_tree = tree.replace(leaf.path, Node(rule, LEAF, LEAF))
        tr, pr = grow_ratios(tree, leaf, rule, prior, new_tree)
        structural = tr + pr
        reverse = "prune"
    else:
        nodes = tree.singly_internal
        node = nodes[int(rng.integers(len(nodes)))]
        if move == "prune":
            new_tree = tree.replace(node.path, LEAF)
            tr, pr = prune_ratios(tree, node, prior, new_tree)
            structural = tr + pr
            reverse = "grow"
        else:
            rule = prior.sample_rule(node.box, rng)
            new_tree = tree.replace(node.path, Node(rule, LEAF, LEAF))
            structural = change_ratios(tree, node, rule, prior)
            reverse = "change"
    structural += (math.log(move_probability(new_tree, reverse, weights))
                   - math.log(move_probability(tree, move, weights)))
    return move, new_tree, structural


def _tree_move(chain: ChainState, t: int, prior: SplitPrior, weights, counts) -> None:
    state, rng = chain.state, chain.rng
    move, new_tree, structural = propose_structure(state.forest[t], prior, rng, weights)
    chain.proposed[move] += 1
    if new_tree is None:
        return
    proposal = state.propose_tree(t, new_tree)
    log_accept = structural + proposal.d_mll
    if log_accept >= 0 or math.log(rng.random()) < log_accept:
        state.accept_tree(proposal)
        chain.accepted[move] += 1
        counts[move] += 1


def _noise_move(chain: ChainState, noise_prior: NoisePrior, walk_sd: float, counts) -> None:
    state, rng = chain.state, chain.rng
    chain.proposed["noise"] += 1
    old = state.noise_var
    new = float(softplus(inv_softplus(old) + walk_sd * rng.standard_normal()))
    if not new > 0.0 or not math.isfinite(new):
        return
    proposal = state.propose_noise(new)
    log_accept = (noise_log_transition_ratio(old, new, walk_sd)
                  + noise_log_prior_ratio(old, new, noise_prior) + proposal.d_mll)
    if log_accept >= 0 or math.log(rng.random()) < log_accept:
        state.accept_noise(proposal)
        chain.accepted["noise"] += 1
        counts["noise"] += 1


def mh_step(chain: ChainState, config: SamplerConfig, prior: SplitPrior | None = None,
            noise_prior: NoisePrior | None = None, update_trees: bool = True,
            update_noise: bool = True) -> ChainState:
    """One sweep: a move for every tree in turn, then one noise move."""
    state = chain.state
    if prior is None:
        space = state.forest[0].space
        prior = SplitPrior(space, config.alpha, config.beta,
                           state.X if config.split_sampling == "data" else None)
    if noise_prior is None:
        noise_prior = NoisePrior.from_config(config.nu, config.q)
    counts = dict.fromkeys(MOVES + ("noise",), 0)
    if update_trees:
        for t in range(state.m):
            _tree_move(chain, t, prior, config.proposal_weights, counts)
    if update_noise:
        _noise_move(chain, noise_prior, config.noise_walk_sd, counts)
    chain.sweeps += 1
    chain.trace.append((chain.sweeps, state.mll, state.noise_var,
                        sum(tr.n_leaves for tr in state.forest),
                        counts["grow"], counts["prune"], counts["change"], counts["noise"]))
    return chain


TRACE_COLUMNS = ("sweep", "mll", "sigma_y_sq", "total_leaves",
                 "accept_grow", "accept_prune", "accept_change", "accept_noise")


@dataclass
class ChainResult:
    kept: list
    final_forest: list
    final_noise: float
    trace: list
    burn_in_sweeps: int
    acceptance: dict


@dataclass
class SamplerResult:
    """Posterior samples plus what a warm start and diagnostics need."""

    ensemble: PosteriorEnsemble
    chains: list

    @property
    def warm_start(self) -> list:
        return [(c.final_forest, c.final_noise) for c in self.chains]

    @property
    def burn_in_sweeps(self) -> int:
        return sum(c.burn_in_sweeps for c in self.chains)

    def mll_traces(self) -> list[np.ndarray]:
        return [np.array([row[1] for row in c.trace]) for c in self.chains]

    def write_diagnostics(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("chain",) + TRACE_COLUMNS)
            for i, c in enumerate(self.chains):
                for row in c.trace:
                    w.writerow((i,) + tuple(_fmt(v) for v in row))


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else v


def _run_one_chain(args) -> ChainResult:
    X, y, space, config, seed_seq, init, record_burn_in = args
    rng = np.random.default_rng(seed_seq)
    noise_prior = NoisePrior.from_config(config.nu, config.q)
    if init is None:
        forest = [single_leaf(space) for _ in range(config.m)]
        noise = noise_prior.median()
    else:
        forest, noise = init
        if len(forest) != config.m:
            raise ValueError(f"warm start has {len(forest)} trees, config wants {config.m}")
    state = GpState(forest, noise, X, y, config.sigma0_sq)
    prior = SplitPrior(space, config.alpha, config.beta, X if config.split_sampling == "data" else None)
    chain = ChainState(state, rng)
    burn = config.burn_in if init is None else 0
    for _ in range(burn):
        mh_step(chain, config, prior, noise_prior)
    if not record_burn_in:
        chain.trace.clear()
    kept = []
    for i in range(config.samples_per_chain):
        mh_step(chain, config, prior, noise_prior)
        if (i + 1) % config.thin == 0:
            kept.append(state.copy())
    state.refresh()
    return ChainResult(kept, list(state.forest), state.noise_var, chain.trace, burn,
                       chain.acceptance_rates())


def chain_seeds(seed, n: int) -> list:
    """One independent seed sequence per chain from an int, ``SeedSequence`` or ``Generator``."""
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(2**63))
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return seed.spawn(n)


def run_chains(X, y, space: FeatureSpace, config: SamplerConfig, seed=0, init=None,
               dataset: Dataset | None = None, sign: float = 1.0,
               record_burn_in: bool = False) -> SamplerResult:
    """Run ``config.chains`` independent chains and pool the thinned samples.

    Without ``init`` every chain starts from single-leaf trees and the prior
    median noise and discards ``burn_in`` sweeps.  With ``init`` (one
    ``(forest, noise)`` pair per chain, e.g. the previous fit's
    :attr:`SamplerResult.warm_start`) burn-in is skipped.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if init is not None and len(init) != config.chains:
        raise ValueError(f"warm start has {len(init)} chains, config wants {config.chains}")
    seeds = chain_seeds(seed, config.chains)
    jobs = [(X, y, space, config, seeds[c], None if init is None else init[c], record_burn_in)
            for c in range(config.chains)]
    if config.threads > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.threads, config.chains)) as pool:
            results = list(pool.map(_run_one_chain, jobs))
    else:
        results = [_run_one_chain(j) for j in jobs]
    states = [s for r in results for s in r.kept]
    return SamplerResult(PosteriorEnsemble(states, dataset, sign), results)


def sample_prior_ensemble(X, y, space: FeatureSpace, config: SamplerConfig, seed=0,
                          dataset: Dataset | None = None, sign: float = 1.0) -> SamplerResult:
    """Forests drawn straight from the tree prior, no MCMC; noise at the prior median."""
    rng = np.random.default_rng(chain_seeds(seed, 1)[0])
    noise = NoisePrior.from_config(config.nu, config.q).median()
    states = []
    for _ in range(config.n_samples):
        forest = [sample_tree_prior(space, config.alpha, config.beta, rng) for _ in range(config.m)]
        states.append(GpState(forest, noise, X, y, config.sigma0_sq))
    return SamplerResult(PosteriorEnsemble(states, dataset, sign), [])


def autocorrelation(trace, max_lag: int) -> np.ndarray:
    """Sample autocorrelation ``rho(0..max_lag)``; a constant trace gives all ones."""
    x = np.asarray(trace, dtype=np.float64)
    n = len(x)
    if n <= max_lag:
        raise ValueError("trace must be longer than max_lag")
    d = x - x.mean()
    var = float(np.mean(d * d))
    if var == 0.0:
        return np.ones(max_lag + 1)
    return np.array([np.mean(d[: n - k] * d[k:]) / var for k in range(max_lag + 1)])
