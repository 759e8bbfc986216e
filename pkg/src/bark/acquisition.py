"""Integrated UCB and its global maximization over forest partitions.

The acquisition is piecewise constant: it only depends on which leaf of each
tree a point falls in.  :func:`maximize_acquisition` runs a best-first
branch-and-bound over boxes of the domain.  A box is split on a tree rule
that still separates reachable leaves; its bound combines the per-tree
maximum of the mean contributions with an upper bound on the posterior
variance (see :meth:`AcquisitionModel`).  Once every tree has one
reachable leaf the box is a cell and the bound is the exact value.
"""

from __future__ import annotations

import heapq
import json
import math
import time
from dataclasses import dataclass

import numpy as np

from . import _backend
from .gp import PosteriorEnsemble
from .space import Box, Categorical, FeatureSpace, Integer, sample_uniform_array
from .tree import LEAF, CategoricalSplit

OPTIMIZERS = ("branch_and_bound", "exhaustive", "random_search")
MAX_ORACLE_CELLS = 10**6


@dataclass
class AcqConfig:
    kappa: float = 1.96
    rel_gap: float = 0.10
    time_limit: float = 100.0
    node_limit: int = 200_000
    optimizer: str = "branch_and_bound"
    random_samples: int = 10_000
    probe_samples: int = 256

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        if not 0.0 <= self.rel_gap < 1.0:
            raise ValueError("rel_gap must lie in [0, 1)")
        if self.probe_samples < 0:
            raise ValueError("probe_samples must be non-negative")
        if self.time_limit <= 0 or self.node_limit < 1:
            raise ValueError("time_limit and node_limit must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")


@dataclass
class AcqResult:
    x_best: tuple
    value: float
    proven_gap: float
    nodes_explored: int
    wall_time: float
    status: str

    def to_dict(self) -> dict:
        return {"x": list(self.x_best), "value": self.value, "gap": self.proven_gap,
                "nodes": self.nodes_explored, "time": self.wall_time, "status": self.status}

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def integrated_ucb(ensemble: PosteriorEnsemble, X, kappa: float = 1.96) -> np.ndarray:
    """``mean_s(mu_s(x) + kappa sigma_s(x))`` with the latent (noise-free) variance."""
    means, variances, _ = ensemble.predict(X)
    return (means + kappa * np.sqrt(variances)).mean(axis=0)


# -- leaf geometry ------------------------------------------------------------

def _leaf_limits(space: FeatureSpace, box: Box) -> tuple:
    """A leaf box as ``(L, U, mask)`` rows: numeric leaf region ``L < x <= U``."""
    D = space.D
    L = np.full(D, -np.inf)
    U = np.full(D, np.inf)
    mask = np.zeros(D, dtype=np.uint64)
    for f, (spec, b) in enumerate(zip(space.features, box.bounds)):
        if isinstance(spec, Categorical):
            mask[f] = b
        elif isinstance(spec, Integer):
            L[f], U[f] = b[0] - 0.5, b[1] + 0.5
        else:
            if b[0] > spec.lo:
                L[f] = b[0]
            if b[1] < spec.hi:
                U[f] = b[1]
    return L, U, mask


def _numeric_reach(a, b, L, U):
    """Whether ``(L, U]`` meets the query interval, treating continuous shared endpoints as open."""
    return ((a < U) | ((a == b) & (a <= U))) & (b > L)


class PartitionModel:
    """Leaves of many trees over one space, stacked for vectorized box queries.

    ``values[g]`` holds the contribution of every leaf of tree ``g``; the
    mean part of the objective at ``x`` is the sum of the values of the
    leaves containing ``x``.
    """

    def __init__(self, space: FeatureSpace, trees, values):
        self.space = space
        self.trees = list(trees)
        self.is_cat = space.is_categorical
        self.cat_idx = np.flatnonzero(self.is_cat)
        self.num_idx = np.flatnonzero(~self.is_cat)
        Ls, Us, Ms, owner, vals = [], [], [], [], []
        self.offsets = np.zeros(len(self.trees) + 1, dtype=np.int64)
        for g, (tree, v) in enumerate(zip(self.trees, values)):
            leaves = tree.leaves
            v = np.asarray(v, dtype=np.float64)
            if len(v) != len(leaves):
                raise ValueError(f"tree {g} has {len(leaves)} leaves but {len(v)} values")
            for info in leaves:
                L, U, M = _leaf_limits(space, info.box)
                Ls.append(L)
                Us.append(U)
                Ms.append(M)
                owner.append(g)
            vals.append(v)
            self.offsets[g + 1] = self.offsets[g] + len(leaves)
        self.L = np.array(Ls)
        self.U = np.array(Us)
        self.M = np.array(Ms, dtype=np.uint64)
        self.owner = np.array(owner, dtype=np.int64)
        self.values = np.concatenate(vals) if vals else np.zeros(0)
        self.starts = self.offsets[:-1]

    def reach(self, lo, hi, masks, rows=None, features=None) -> np.ndarray:
        """Reachable-leaf mask of a box, optionally only re-testing ``features`` on ``rows``."""
        if rows is None:
            rows = np.ones(len(self.owner), dtype=bool)
        out = rows.copy()
        idx = np.flatnonzero(out)
        feats = range(self.space.D) if features is None else features
        for f in feats:
            if self.is_cat[f]:
                ok = (self.M[idx, f] & np.uint64(masks[f])) != 0
            else:
                ok = _numeric_reach(lo[f], hi[f], self.L[idx, f], self.U[idx, f])
            out[idx[~ok]] = False
            idx = idx[ok]
        return out

    def counts(self, reach: np.ndarray) -> np.ndarray:
        return np.add.reduceat(reach.astype(np.int64), self.starts)

    def mean_bound(self, reach: np.ndarray) -> float:
        vals = np.where(reach, self.values, -np.inf)
        return float(np.maximum.reduceat(vals, self.starts).sum())

    def spreads(self, reach: np.ndarray) -> np.ndarray:
        hi = np.maximum.reduceat(np.where(reach, self.values, -np.inf), self.starts)
        lo = np.minimum.reduceat(np.where(reach, self.values, np.inf), self.starts)
        return hi - lo

    def branch_rule(self, g: int, lo, hi, masks):
        """Shallowest rule of tree ``g`` with reachable leaves on both sides within the box."""
        tree = self.trees[g]
        node = tree.root
        while node is not LEAF:
            rule = node.rule
            f = rule.feature
            if isinstance(rule, CategoricalSplit):
                left_ok = masks[f] & rule.left_mask != 0
                right_ok = masks[f] & ~rule.left_mask != 0
            else:
                a, b, th = lo[f], hi[f], rule.threshold
                left_ok = a < th or (a == b and a <= th)
                right_ok = b > th
            if left_ok and right_ok:
                return rule
            node = node.left if left_ok else node.right
        raise RuntimeError("tree is already resolved within the box")

    def split(self, rule, lo, hi, masks):
        """The two child boxes of a rule, as ``(lo, hi, masks)`` triples."""
        f = rule.feature
        if isinstance(rule, CategoricalSplit):
            lm, rm = list(masks), list(masks)
            lm[f] = masks[f] & rule.left_mask
            rm[f] = masks[f] & ~rule.left_mask
            return (lo, hi, lm), (lo, hi, rm)
        lh, rl = hi.copy(), lo.copy()
        if isinstance(self.space.features[f], Integer):
            lh[f] = math.floor(rule.threshold)
            rl[f] = lh[f] + 1
        else:
            lh[f] = rule.threshold
            rl[f] = rule.threshold
        return (lo, lh, masks), (rl, hi, masks)

    def representative(self, lo, hi, masks) -> np.ndarray:
        x = np.empty(self.space.D)
        for f, spec in enumerate(self.space.features):
            if isinstance(spec, Categorical):
                m = int(masks[f])
                x[f] = (m & -m).bit_length() - 1
            elif isinstance(spec, Integer):
                x[f] = (int(lo[f]) + int(hi[f])) // 2
            else:
                x[f] = 0.5 * (lo[f] + hi[f])
        return x

    def root_box(self):
        lo = np.zeros(self.space.D)
        hi = np.zeros(self.space.D)
        masks = [0] * self.space.D
        for f, b in enumerate(self.space.full_box().bounds):
            if isinstance(b, tuple):
                lo[f], hi[f] = b
            else:
                masks[f] = b
        return lo, hi, masks

    def point_reach(self, x, rows=None) -> np.ndarray:
        """Leaves containing ``x``; ``rows`` may restrict the search to a box known to hold ``x``."""
        masks = [1 << int(x[f]) if self.is_cat[f] else 0 for f in range(self.space.D)]
        return self.reach(x, x, masks, rows=rows)

    # objective data consumed by the probe kernel; the plain model has no variance term
    kappa = 0.0

    def _variance_data(self):
        T = len(self.trees)
        one = np.ones(1)
        return np.zeros((1, 0, T), dtype=np.int64), np.zeros((1, 0, 0)), one, one, one

    def probe(self, reach, x) -> tuple[float, float, bool, int]:
        """Score a box and a point ``x`` inside it.

        Returns ``(upper bound over the box, exact value at x, is cell, tree
        to branch on)``; the branching tree is the unresolved one whose
        reachable leaf values spread the most, -1 for a cell.
        """
        G, Ainv, scale, sigma0_sq, noise = self._probe_data
        return _backend.bnb_probe(reach, np.ascontiguousarray(x, dtype=np.float64), self.L, self.U,
                                  self.M, self.is_cat, self.values, self.offsets, G, Ainv,
                                  scale, sigma0_sq, noise, self.kappa)

    @property
    def _probe_data(self):
        if not hasattr(self, "_probe_cache"):
            self._probe_cache = self._variance_data()
        return self._probe_cache


class AcquisitionModel(PartitionModel):
    """Integrated UCB of an ensemble as a :class:`PartitionModel` plus variance data.

    The variance bound over a box is the smaller of two admissible bounds:
    the variance after conditioning on the best single training point whose
    leaf is shared in every resolved tree, and ``sigma0^2 - 2 w^T k_x +
    w^T A w`` with ``w = A^-1 k_ref`` for the box's representative point
    (any ``w`` bounds the posterior variance from above, and ``w^T k_x``
    splits into per-tree leaf sums).
    """

    def __init__(self, ensemble: PosteriorEnsemble, space: FeatureSpace, kappa: float):
        S = ensemble.S
        m = {s.m for s in ensemble.states}
        if len(m) != 1:
            raise ValueError("all states must have the same number of trees")
        m = m.pop()
        trees, values = [], []
        for state in ensemble.states:
            sums = state.leaf_sums() if state.n else [np.zeros(t.n_leaves) for t in state.forest]
            for tree, c in zip(state.forest, sums):
                trees.append(tree)
                values.append(state.scale * c / S)
        super().__init__(space, trees, values)
        self.kappa = float(kappa)
        self.S = S
        self.n = ensemble.states[0].n
        scale = np.array([s.scale for s in ensemble.states])
        sigma0_sq = np.array([s.sigma0_sq for s in ensemble.states])
        noise = np.array([s.noise_var for s in ensemble.states])
        if self.n:
            Ainv = np.ascontiguousarray(np.stack([s.Ainv for s in ensemble.states]))
            tree_off = np.arange(S)[:, None] * m + np.arange(m)[None, :]
            ids = np.stack([s.leaf_ids for s in ensemble.states])  # (S, m, N)
            G = np.ascontiguousarray(np.transpose(self.offsets[tree_off][:, :, None] + ids, (0, 2, 1)))
        else:
            Ainv = np.zeros((S, 0, 0))
            G = np.zeros((S, 0, m), dtype=np.int64)
        self._probe_cache = (G, Ainv, scale, sigma0_sq, noise)


def _lex_less(x, y) -> bool:
    return tuple(x) < tuple(y)


def _search(model, rel_gap: float, time_limit: float, node_limit: int,
            incumbent: tuple | None = None) -> tuple:
    """Best-first branch-and-bound; returns ``(x, value, global_ub, nodes, status)``.

    ``incumbent`` is an optional starting ``(x, value)`` pair.
    """
    lo, hi, masks = model.root_box()
    reach = model.reach(lo, hi, masks)
    start = time.perf_counter()
    best_x, best_val = incumbent if incumbent is not None else (None, -math.inf)
    heap = []
    counter = 0

    def consider(lo, hi, masks, reach, parent_ub):
        nonlocal best_x, best_val, counter
        x = model.representative(lo, hi, masks)
        ub, val, cell, branch = model.probe(reach, x)
        if val > best_val or (val == best_val and _lex_less(x, best_x)):
            best_x, best_val = x, val
        if not cell:
            heapq.heappush(heap, (-min(ub, parent_ub), counter, lo, hi, masks, reach, branch))
            counter += 1

    consider(lo, hi, masks, reach, math.inf)
    nodes = 1
    status = "optimal_within_gap"
    global_ub = best_val
    while heap:
        neg_ub, _, lo, hi, masks, reach, g = heap[0]
        global_ub = -neg_ub
        if global_ub - best_val <= rel_gap * max(abs(best_val), 1e-6):
            break
        if nodes >= node_limit:
            status = "node_limit"
            break
        if time.perf_counter() - start > time_limit:
            status = "time_limit"
            break
        heapq.heappop(heap)
        rule = model.branch_rule(g, lo, hi, masks)
        for child in model.split(rule, lo, hi, masks):
            creach = model.reach(*child, rows=reach, features=[rule.feature])
            consider(*child, creach, global_ub)
            nodes += 1
    else:
        global_ub = best_val
    return best_x, best_val, max(global_ub, best_val), nodes, status


def _result(space, x, value, ub, nodes, status, start) -> AcqResult:
    gap = (ub - value) / max(abs(value), 1e-6)
    return AcqResult(space.to_points(x)[0], float(value), float(max(gap, 0.0)), nodes,
                     time.perf_counter() - start, status)


def maximize_acquisition(ensemble: PosteriorEnsemble, space: FeatureSpace,
                         config: AcqConfig | None = None, rng=None) -> AcqResult:
    """Global maximizer of the integrated UCB using ``config.optimizer``."""
    config = config or AcqConfig()
    if config.optimizer == "exhaustive":
        return exhaustive_oracle(ensemble, space, config.kappa)
    if config.optimizer == "random_search":
        return random_search(ensemble, space, config.random_samples,
                             rng if rng is not None else np.random.default_rng(0), config.kappa)
    start = time.perf_counter()
    model = AcquisitionModel(ensemble, space, config.kappa)
    incumbent = None
    if config.probe_samples:
        rng = rng if rng is not None else np.random.default_rng(0)
        X = sample_uniform_array(space, config.probe_samples, rng)
        full = model.reach(*model.root_box())
        vals = [model.probe(full, x)[1] for x in X]
        i = int(np.argmax(vals))
        incumbent = (X[i], vals[i])
    x, val, ub, nodes, status = _search(model, config.rel_gap, config.time_limit, config.node_limit,
                                        incumbent)
    return _result(space, x, val, ub, nodes, status, start)


def ucb_upper_bound(ensemble: PosteriorEnsemble, box: Box, kappa: float = 1.96,
                    space: FeatureSpace | None = None) -> float:
    """Admissible bound on the integrated UCB over ``box``."""
    space = space or ensemble.states[0].forest[0].space
    model = AcquisitionModel(ensemble, space, kappa)
    lo, hi, masks = _box_arrays(box)
    return model.probe(model.reach(lo, hi, masks), model.representative(lo, hi, masks))[0]


def _box_arrays(box: Box):
    D = len(box.bounds)
    lo, hi, masks = np.zeros(D), np.zeros(D), [0] * D
    for f, b in enumerate(box.bounds):
        if isinstance(b, tuple):
            lo[f], hi[f] = b
        else:
            masks[f] = b
    return lo, hi, masks


def leaf_reachability(tree, box: Box) -> set[int]:
    """Ids of the leaves of ``tree`` whose region meets ``box``."""
    model = PartitionModel(tree.space, [tree], [np.zeros(tree.n_leaves)])
    return set(np.flatnonzero(model.reach(*_box_arrays(box))).tolist())


def enumerate_cells(model: PartitionModel, limit: int = MAX_ORACLE_CELLS):
    """Yield ``(lo, hi, masks, reach)`` for every cell of the joint partition."""
    stack = [model.root_box()]
    stack[0] = stack[0] + (model.reach(*stack[0]),)
    n = 0
    while stack:
        lo, hi, masks, reach = stack.pop()
        unresolved = np.flatnonzero(model.counts(reach) > 1)
        if unresolved.size == 0:
            n += 1
            if n > limit:
                raise RuntimeError(f"more than {limit} cells; exhaustive enumeration refused")
            yield lo, hi, masks, reach
            continue
        rule = model.branch_rule(int(unresolved[0]), lo, hi, masks)
        for child in reversed(model.split(rule, lo, hi, masks)):
            stack.append(child + (model.reach(*child, rows=reach, features=[rule.feature]),))


def exhaustive_oracle(ensemble: PosteriorEnsemble, space: FeatureSpace, kappa: float = 1.96,
                      limit: int = MAX_ORACLE_CELLS) -> AcqResult:
    """Exact maximum by evaluating the acquisition once on every cell."""
    start = time.perf_counter()
    model = AcquisitionModel(ensemble, space, kappa)
    best_x, best_val, n = None, -math.inf, 0
    for lo, hi, masks, reach in enumerate_cells(model, limit):
        n += 1
        x = model.representative(lo, hi, masks)
        val = model.probe(reach, x)[1]
        if val > best_val or (val == best_val and _lex_less(x, best_x)):
            best_x, best_val = x, val
    return _result(space, best_x, best_val, best_val, n, "optimal_within_gap", start)


def random_search(ensemble: PosteriorEnsemble, space: FeatureSpace, n_samples: int, rng,
                  kappa: float = 1.96) -> AcqResult:
    """Best of ``n_samples`` uniform points."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    start = time.perf_counter()
    X = sample_uniform_array(space, n_samples, rng)
    vals = integrated_ucb(ensemble, X, kappa)
    i = int(np.argmax(vals))
    return AcqResult(space.to_points(X[i])[0], float(vals[i]), float("nan"), n_samples,
                     time.perf_counter() - start, "sampled")


def maximize_partition(space: FeatureSpace, trees, values, rel_gap: float = 0.0,
                       time_limit: float = 3600.0, node_limit: int = 10**7) -> tuple:
    """Exact maximum of ``sum_t values[t][leaf_t(x)]``; returns ``(point, value)``."""
    model = PartitionModel(space, trees, values)
    x, val, _, _, status = _search(model, rel_gap, time_limit, node_limit)
    if status != "optimal_within_gap":
        raise RuntimeError(f"partition search stopped early ({status})")
    return space.to_points(x)[0], val
