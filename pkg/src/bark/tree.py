"""Decision trees over mixed feature spaces.

Trees are immutable.  A tree is a nested structure of :class:`Node` and
:data:`LEAF` objects; proposals build a new tree that shares the untouched
subtrees with the old one.  Nodes are addressed by their path from the
root, a tuple of 0 (left) / 1 (right) steps.

Split rules are sampled uniformly from the region of the domain that
reaches the node, so a tree never contains a logically empty leaf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np

from . import _backend
from .space import (
    Box,
    Categorical,
    DomainError,
    FeatureSpace,
    Integer,
    box_contains,
    mask_members,
    popcount,
)

MAX_DEPTH = 30


@dataclass(frozen=True)
class NumericSplit:
    """Route left iff ``x[feature] <= threshold``."""

    feature: int
    threshold: float


@dataclass(frozen=True)
class CategoricalSplit:
    """Route left iff the category of ``x[feature]`` is in ``left_mask``."""

    feature: int
    left_mask: int

    @property
    def left_set(self) -> list[int]:
        return mask_members(self.left_mask)


SplitRule = Union[NumericSplit, CategoricalSplit]


class _Leaf:
    __slots__ = ()

    def __repr__(self):
        return "LEAF"

    def __reduce__(self):
        return (_leaf, ())


def _leaf():
    return LEAF


LEAF = _Leaf()


@dataclass(frozen=True)
class Node:
    rule: SplitRule
    left: "Node | _Leaf"
    right: "Node | _Leaf"


def is_leaf(node) -> bool:
    return node is LEAF


def goes_left(rule: SplitRule, value) -> bool:
    if isinstance(rule, NumericSplit):
        return value <= rule.threshold
    return bool((rule.left_mask >> int(value)) & 1)


def split_box(box: Box, rule: SplitRule) -> tuple[Box, Box]:
    b = box.bounds[rule.feature]
    if isinstance(rule, CategoricalSplit):
        return (box.with_bound(rule.feature, b & rule.left_mask),
                box.with_bound(rule.feature, b & ~rule.left_mask))
    lo, hi = b
    if isinstance(lo, int):
        cut = int(math.floor(rule.threshold))
        return box.with_bound(rule.feature, (lo, cut)), box.with_bound(rule.feature, (cut + 1, hi))
    return (box.with_bound(rule.feature, (lo, rule.threshold)),
            box.with_bound(rule.feature, (rule.threshold, hi)))


def rule_inside(box: Box, rule: SplitRule) -> bool:
    """True if both sides of ``rule`` are nonempty within ``box``."""
    b = box.bounds[rule.feature]
    if isinstance(rule, CategoricalSplit):
        return bool(b & rule.left_mask) and bool(b & ~rule.left_mask)
    return b[0] < rule.threshold < b[1]


@dataclass(frozen=True)
class NodeInfo:
    path: tuple
    node: object
    depth: int
    box: Box


@dataclass(frozen=True)
class NodeCounts:
    w0: int
    w1: int


class Tree:
    """A decision tree bound to a feature space."""

    def __init__(self, root, space: FeatureSpace):
        self.root = root
        self.space = space

    def __eq__(self, other):
        return isinstance(other, Tree) and self.root == other.root and self.space == other.space

    def __hash__(self):
        return hash(self.root)

    def __repr__(self):
        return f"Tree(n_leaves={self.n_leaves}, root={self.root!r})"

    def __getstate__(self):
        # drop cached views; they are rebuilt on demand
        return {"root": self.root, "space": self.space}

    @cached_property
    def nodes(self) -> list[NodeInfo]:
        """All nodes in preorder (left before right) with depth and box."""
        out = []
        stack = [((), self.root, 0, self.space.full_box())]
        while stack:
            path, node, depth, box = stack.pop()
            out.append(NodeInfo(path, node, depth, box))
            if node is not LEAF:
                lbox, rbox = split_box(box, node.rule)
                stack.append((path + (1,), node.right, depth + 1, rbox))
                stack.append((path + (0,), node.left, depth + 1, lbox))
        return out

    @cached_property
    def leaves(self) -> list[NodeInfo]:
        """Leaves in canonical left-to-right order; leaf ``i`` has leaf_id ``i``."""
        return [n for n in self.nodes if n.node is LEAF]

    @cached_property
    def singly_internal(self) -> list[NodeInfo]:
        return [n for n in self.nodes
                if n.node is not LEAF and n.node.left is LEAF and n.node.right is LEAF]

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @cached_property
    def depth(self) -> int:
        return max(n.depth for n in self.nodes)

    @cached_property
    def flat(self) -> tuple:
        """Preorder arrays ``(feature, threshold, catmask, is_cat, left, right, leaf_id)``."""
        infos = self.nodes
        index = {n.path: i for i, n in enumerate(infos)}
        k = len(infos)
        feature = np.zeros(k, dtype=np.int64)
        threshold = np.zeros(k, dtype=np.float64)
        catmask = np.zeros(k, dtype=np.uint64)
        is_cat = np.zeros(k, dtype=np.uint8)
        left = np.full(k, -1, dtype=np.int64)
        right = np.full(k, -1, dtype=np.int64)
        leaf_id = np.full(k, -1, dtype=np.int64)
        n_leaf = 0
        for i, info in enumerate(infos):
            node = info.node
            if node is LEAF:
                leaf_id[i] = n_leaf
                n_leaf += 1
                continue
            rule = node.rule
            feature[i] = rule.feature
            if isinstance(rule, CategoricalSplit):
                is_cat[i] = 1
                catmask[i] = rule.left_mask
            else:
                threshold[i] = rule.threshold
            left[i] = index[info.path + (0,)]
            right[i] = index[info.path + (1,)]
        return feature, threshold, catmask, is_cat, left, right, leaf_id

    def get(self, path: tuple):
        node = self.root
        for step in path:
            node = node.right if step else node.left
        return node

    def replace(self, path: tuple, subtree) -> "Tree":
        """New tree with the node at ``path`` replaced by ``subtree``."""
        return Tree(_replace(self.root, path, subtree), self.space)

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        """Canonical leaf id of every row of ``X``."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        if self.root is LEAF:
            return np.zeros(len(X), dtype=np.int64)
        return _backend.route(X, *self.flat)

    def route_point(self, x) -> int:
        node = self.root
        path = ()
        while node is not LEAF:
            if goes_left(node.rule, x[node.rule.feature]):
                node, path = node.left, path + (0,)
            else:
                node, path = node.right, path + (1,)
        return self._leaf_ids[path]

    @cached_property
    def _leaf_ids(self) -> dict:
        return {info.path: i for i, info in enumerate(self.leaves)}

    def leaf_id_of_path(self, path: tuple) -> int:
        return self._leaf_ids[path]

    def to_dict(self) -> dict:
        ids = self._leaf_ids

        def enc(node, path):
            if node is LEAF:
                return {"leaf_id": ids[path]}
            r = node.rule
            d = {"feature": r.feature}
            if isinstance(r, NumericSplit):
                d["threshold"] = r.threshold
            else:
                d["left_set"] = r.left_set
            d["left"] = enc(node.left, path + (0,))
            d["right"] = enc(node.right, path + (1,))
            return d

        return enc(self.root, ())

    @classmethod
    def from_dict(cls, d: dict, space: FeatureSpace) -> "Tree":
        def dec(d):
            if "leaf_id" in d:
                return LEAF
            f = int(d["feature"])
            if "threshold" in d:
                rule = NumericSplit(f, float(d["threshold"]))
            else:
                rule = CategoricalSplit(f, sum(1 << int(c) for c in d["left_set"]))
            return Node(rule, dec(d["left"]), dec(d["right"]))

        tree = cls(dec(d), space)
        validate_tree(tree)
        return tree


def _replace(node, path, subtree):
    if not path:
        return subtree
    if path[0] == 0:
        return Node(node.rule, _replace(node.left, path[1:], subtree), node.right)
    return Node(node.rule, node.left, _replace(node.right, path[1:], subtree))


def validate_tree(tree: Tree) -> None:
    """Raise ``ValueError`` unless every rule lies strictly inside its node's box."""
    for info in tree.nodes:
        if info.node is LEAF:
            continue
        rule = info.node.rule
        spec = tree.space[rule.feature]
        if isinstance(spec, Categorical) != isinstance(rule, CategoricalSplit):
            raise ValueError(f"rule {rule} does not match feature type {type(spec).__name__}")
        if not rule_inside(info.box, rule):
            raise ValueError(f"rule {rule} at {info.path} creates a logically empty leaf")


def single_leaf(space: FeatureSpace) -> Tree:
    return Tree(LEAF, space)


def leaf_vector(tree: Tree, x) -> np.ndarray:
    """One-hot indicator of the leaf containing ``x``."""
    if not box_contains(tree.space.full_box(), x):
        raise DomainError(f"point {tuple(x)} outside the tree's domain")
    v = np.zeros(tree.n_leaves)
    v[tree.route_point(x)] = 1.0
    return v


def node_counts(tree: Tree) -> NodeCounts:
    return NodeCounts(w0=tree.n_leaves, w1=len(tree.singly_internal))


def split_probability(depth: int, alpha: float, beta: float) -> float:
    """Prior probability that a node at ``depth`` is a decision node."""
    if depth < 0:
        raise ValueError("depth must be non-negative")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if beta < 0.0:
        raise ValueError("beta must be non-negative")
    return alpha * (1.0 + depth) ** (-beta)


# -- split-rule sampling ------------------------------------------------------

def _data_thresholds(values: np.ndarray) -> np.ndarray:
    u = np.unique(values)
    return 0.5 * (u[1:] + u[:-1])


def splittable_features(box: Box, space: FeatureSpace, data: np.ndarray | None = None) -> list[int]:
    """Features on which ``box`` can be cut into two nonempty parts.

    With ``data`` (the training rows inside ``box``) numeric features also
    need two distinct observed values, matching data-driven split sampling.
    """
    out = []
    for f, (spec, b) in enumerate(zip(space.features, box.bounds)):
        if isinstance(spec, Categorical):
            if popcount(b) >= 2:
                out.append(f)
        elif b[0] < b[1]:
            if data is None or len(np.unique(data[:, f])) >= 2:
                out.append(f)
    return out


def node_split_probability(depth: int, box: Box, space: FeatureSpace, alpha: float, beta: float,
                           data: np.ndarray | None = None) -> float:
    """Split probability of a node, zero where no valid rule exists."""
    if depth >= MAX_DEPTH or not splittable_features(box, space, data):
        return 0.0
    return alpha * (1.0 + depth) ** (-beta)


def sample_rule(box: Box, space: FeatureSpace, rng: np.random.Generator,
                data: np.ndarray | None = None) -> SplitRule:
    """Sample a split rule uniformly from the part of the domain inside ``box``.

    The feature is uniform over splittable features.  Continuous thresholds
    are uniform on the box interval, integer thresholds uniform over the
    half-integer cuts, and categorical left sets uniform over the nonempty
    proper subsets of the allowed categories.  With ``data`` numeric
    thresholds are drawn from midpoints between observed values instead.
    """
    feats = splittable_features(box, space, data)
    if not feats:
        raise ValueError("box has no splittable feature")
    f = feats[int(rng.integers(len(feats)))]
    spec = space[f]
    b = box.bounds[f]
    if isinstance(spec, Categorical):
        members = mask_members(b)
        k = len(members)
        # uniform over {1, ..., 2^k - 2}: the nonempty proper subsets
        code = int(rng.integers(1, (1 << k) - 1))
        left = 0
        for i, c in enumerate(members):
            if (code >> i) & 1:
                left |= 1 << c
        return CategoricalSplit(f, left)
    if data is not None:
        cuts = _data_thresholds(data[:, f])
        return NumericSplit(f, float(cuts[int(rng.integers(len(cuts)))]))
    if isinstance(spec, Integer):
        return NumericSplit(f, float(rng.integers(b[0], b[1])) + 0.5)
    lo, hi = b
    t = rng.uniform(lo, hi)
    while not lo < t < hi:
        t = rng.uniform(lo, hi)
    return NumericSplit(f, float(t))


def sample_tree_prior(space: FeatureSpace, alpha: float, beta: float,
                      rng: np.random.Generator, max_depth: int = MAX_DEPTH) -> Tree:
    """Grow a tree from the depth prior, with rules from :func:`sample_rule`."""
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")

    def grow(box, depth):
        if depth >= max_depth or not splittable_features(box, space):
            return LEAF
        if rng.random() >= alpha * (1.0 + depth) ** (-beta):
            return LEAF
        rule = sample_rule(box, space, rng)
        lbox, rbox = split_box(box, rule)
        return Node(rule, grow(lbox, depth + 1), grow(rbox, depth + 1))

    return Tree(grow(space.full_box(), 0), space)


def leaf_count_distribution(alpha: float, beta: float, max_leaves: int = 60,
                            max_depth: int = 20) -> np.ndarray:
    """Exact leaf-count pmf of the depth prior when every node can split.

    Dynamic programme over depth, truncated at ``max_depth``.  Entry ``k``
    is the probability of ``k`` leaves (entry 0 is unused).
    """
    p = np.zeros(max_leaves + 1)
    p[1] = 1.0
    for d in range(max_depth - 1, -1, -1):
        ps = alpha * (1.0 + d) ** (-beta)
        conv = np.convolve(p, p)[: max_leaves + 1]
        new = ps * conv
        new[1] += 1.0 - ps
        p = new
    return p


def forest_to_dicts(forest) -> list[dict]:
    return [t.to_dict() for t in forest]


def forest_from_dicts(dicts, space: FeatureSpace) -> tuple:
    return tuple(Tree.from_dict(d, space) for d in dicts)
