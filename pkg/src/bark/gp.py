"""Gaussian process regression with a forest kernel.

The kernel counts the fraction of trees in which two points share a leaf,

    k(x, x') = sigma0^2 / m * sum_t phi(x; T_t) . phi(x'; T_t).

A :class:`GpState` caches the explicit inverse of ``K + sigma_y^2 I``, its
log-determinant and ``alpha = (K + sigma_y^2 I)^-1 y`` so that a change to a
single tree can be scored with a low-rank (Woodbury) update instead of a
fresh factorization.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.special

from . import _backend
from .space import Dataset, FeatureSpace
from .tree import Tree, forest_from_dicts, forest_to_dicts

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
REFRESH_EVERY = 50
DRIFT_TOL = 1e-6
DRIFT_ROWS = 8
JITTER_START = 1e-8
JITTER_MAX = 1e-4


def kernel(forest, sigma0_sq: float, x, x2) -> float:
    """Forest kernel between two points."""
    agree = sum(t.route_point(x) == t.route_point(x2) for t in forest)
    return sigma0_sq * agree / len(forest)


def forest_leaf_ids(forest, X: np.ndarray) -> np.ndarray:
    """``(m, N)`` array of leaf ids of every point in every tree."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if len(forest) == 0:
        return np.zeros((0, len(X)), dtype=np.int64)
    return np.stack([t.leaf_index(X) for t in forest])


def _onehot_design(leaf_ids: np.ndarray, sizes: np.ndarray | None = None) -> np.ndarray:
    """Stacked one-hot leaf indicators ``[Phi_1, ..., Phi_m]`` of shape ``(N, sum L_t)``."""
    m, n = leaf_ids.shape
    if sizes is None:
        sizes = leaf_ids.max(axis=1) + 1 if n else np.ones(m, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    Phi = np.zeros((n, int(sizes.sum())))
    rows = np.repeat(np.arange(n)[None, :], m, axis=0)
    Phi[rows.ravel(), (leaf_ids + offsets[:, None]).ravel()] = 1.0
    return Phi


def gram_from_ids(leaf_ids: np.ndarray, sigma0_sq: float, other_ids: np.ndarray | None = None) -> np.ndarray:
    """Kernel between points given by leaf ids; ``other_ids`` gives the rows if set."""
    m = leaf_ids.shape[0]
    if other_ids is None:
        Phi = _onehot_design(leaf_ids)
        return (sigma0_sq / m) * (Phi @ Phi.T)
    if leaf_ids.shape[1] == 0 or other_ids.shape[1] == 0:
        return np.zeros((other_ids.shape[1], leaf_ids.shape[1]))
    sizes = np.maximum(leaf_ids.max(axis=1), other_ids.max(axis=1)) + 1
    return (sigma0_sq / m) * (_onehot_design(other_ids, sizes) @ _onehot_design(leaf_ids, sizes).T)


def gram(forest, sigma0_sq: float, X: np.ndarray) -> np.ndarray:
    """Kernel matrix of the rows of ``X``."""
    return gram_from_ids(forest_leaf_ids(forest, X), sigma0_sq)


@dataclass
class TreeProposal:
    """Candidate state after replacing tree ``t``; applied only on acceptance."""

    t: int
    tree: Tree
    leaf_ids: np.ndarray
    d_quad: float
    d_logdet: float
    B: np.ndarray = field(repr=False)
    Cinv: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    dense: tuple | None = field(default=None, repr=False)

    @property
    def d_mll(self) -> float:
        return -0.5 * self.d_quad - 0.5 * self.d_logdet


@dataclass
class NoiseProposal:
    noise_var: float
    Ainv: np.ndarray = field(repr=False)
    logdet: float
    alpha: np.ndarray = field(repr=False)
    mll: float
    d_mll: float
    jitter: float = 0.0


class GpState:
    """One posterior sample: a forest, a noise variance and cached linear algebra.

    Owned by a single chain.  ``propose_*`` methods never modify the state;
    ``accept`` applies a proposal.
    """

    def __init__(self, forest, noise_var: float, X: np.ndarray, y: np.ndarray,
                 sigma0_sq: float = 1.0, leaf_ids: np.ndarray | None = None):
        if not noise_var > 0:
            raise ValueError("noise variance must be positive")
        self.forest = list(forest)
        if not self.forest:
            raise ValueError("forest needs at least one tree")
        self.noise_var = float(noise_var)
        self.sigma0_sq = float(sigma0_sq)
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.leaf_ids = forest_leaf_ids(self.forest, self.X) if leaf_ids is None else leaf_ids.copy()
        self.jitter = 0.0
        self.n_lowrank = 0
        self.n_refresh = 0
        self._probe = np.linspace(0, max(self.n - 1, 0), min(DRIFT_ROWS, self.n)).astype(np.int64)
        self.refresh()

    # -- bookkeeping --------------------------------------------------------

    @property
    def m(self) -> int:
        return len(self.forest)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def scale(self) -> float:
        return self.sigma0_sq / self.m

    @property
    def K(self) -> np.ndarray:
        return gram_from_ids(self.leaf_ids, self.sigma0_sq)

    def copy(self) -> "GpState":
        new = object.__new__(GpState)
        new.__dict__.update(self.__dict__)
        new.forest = list(self.forest)
        new.leaf_ids = self.leaf_ids.copy()
        new.Ainv = self.Ainv.copy()
        new.alpha = self.alpha.copy()
        new._Kprobe = self._Kprobe.copy()
        return new

    def _factor(self, K: np.ndarray, noise_var: float):
        """Inverse, log-determinant and alpha of ``K + noise I``, with escalating jitter."""
        n = K.shape[0]
        jitter = 0.0
        while True:
            A = K + (noise_var + jitter) * np.eye(n)
            try:
                L, lower = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
                break
            except np.linalg.LinAlgError:
                jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
                if jitter > JITTER_MAX:
                    raise
                log.warning("kernel factorization failed; adding jitter %.1e", jitter)
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        Ainv = scipy.linalg.cho_solve((L, lower), np.eye(n), check_finite=False)
        Ainv = 0.5 * (Ainv + Ainv.T)
        alpha = scipy.linalg.cho_solve((L, lower), self.y, check_finite=False)
        return Ainv, logdet, alpha, jitter

    def _mll(self, logdet: float, alpha: np.ndarray) -> float:
        return -0.5 * float(self.y @ alpha) - 0.5 * logdet - 0.5 * self.n * LOG_2PI

    def refresh(self) -> None:
        """Recompute every cached quantity from scratch."""
        if self.n == 0:
            self.Ainv = np.zeros((0, 0))
            self.logdet = 0.0
            self.alpha = np.zeros(0)
            self.mll = 0.0
            self._Kprobe = np.zeros((0, 0))
            return
        self._Kprobe = gram_from_ids(self.leaf_ids, self.sigma0_sq, self.leaf_ids[:, self._probe])
        self.Ainv, self.logdet, self.alpha, self.jitter = self._factor(self.K, self.noise_var)
        self.mll = self._mll(self.logdet, self.alpha)
        self.n_lowrank = 0
        self.n_refresh += 1

    def drift(self) -> float:
        """Max residual of ``(K + sigma^2 I) alpha = y`` on a few cached rows."""
        if self.n == 0:
            return 0.0
        idx = self._probe
        r = self._Kprobe @ self.alpha + (self.noise_var + self.jitter) * self.alpha[idx] - self.y[idx]
        return float(np.max(np.abs(r)))

    # -- tree updates -------------------------------------------------------

    def propose_tree(self, t: int, new_tree: Tree) -> TreeProposal:
        new_ids = new_tree.leaf_index(self.X) if self.n else np.zeros(0, dtype=np.int64)
        if self.n == 0:
            z = np.zeros((0, 0))
            return TreeProposal(t, new_tree, new_ids, 0.0, 0.0, z, z, np.zeros(0))
        old_ids = self.leaf_ids[t]
        try:
            d_quad, d_logdet, B, Cinv, u = _backend.lowrank_delta(
                self.Ainv, self.alpha, old_ids, new_ids, math.sqrt(self.scale))
        except np.linalg.LinAlgError:
            return self._dense_tree_proposal(t, new_tree, new_ids)
        return TreeProposal(t, new_tree, new_ids, d_quad, d_logdet, B, Cinv, u)

    def _dense_tree_proposal(self, t, new_tree, new_ids) -> TreeProposal:
        ids = self.leaf_ids.copy()
        ids[t] = new_ids
        Ainv, logdet, alpha, jitter = self._factor(gram_from_ids(ids, self.sigma0_sq), self.noise_var)
        d_quad = float(self.y @ alpha) - float(self.y @ self.alpha)
        z = np.zeros((0, 0))
        return TreeProposal(t, new_tree, new_ids, d_quad, logdet - self.logdet, z, z, np.zeros(0),
                            dense=(Ainv, logdet, alpha, jitter))

    def accept_tree(self, p: TreeProposal) -> None:
        self.forest[p.t] = p.tree
        old_ids = self.leaf_ids[p.t].copy()
        self.leaf_ids[p.t] = p.leaf_ids
        if self.n == 0:
            return
        idx = self._probe
        self._Kprobe += self.scale * ((p.leaf_ids[idx, None] == p.leaf_ids[None, :]).astype(np.float64)
                                      - (old_ids[idx, None] == old_ids[None, :]))
        if p.dense is not None:
            self.Ainv, self.logdet, self.alpha, self.jitter = p.dense
            self.mll = self._mll(self.logdet, self.alpha)
            self.n_lowrank = 0
            return
        if p.B.shape[1]:
            BC = p.B @ p.Cinv
            self.Ainv -= BC @ p.B.T
            self.alpha -= BC @ p.u
            self.logdet += p.d_logdet
            self.mll += p.d_mll
            self.n_lowrank += 1
        if self.n_lowrank >= REFRESH_EVERY or self.drift() > DRIFT_TOL:
            self.refresh()

    # -- noise updates ------------------------------------------------------

    def propose_noise(self, new_var: float) -> NoiseProposal:
        if not new_var > 0:
            raise ValueError("noise variance must be positive")
        if self.n == 0:
            return NoiseProposal(new_var, self.Ainv, 0.0, self.alpha, 0.0, 0.0)
        Ainv, logdet, alpha, jitter = self._factor(self.K, new_var)
        mll = self._mll(logdet, alpha)
        return NoiseProposal(new_var, Ainv, logdet, alpha, mll, mll - self.mll, jitter)

    def accept_noise(self, p: NoiseProposal) -> None:
        self.noise_var = p.noise_var
        if self.n == 0:
            return
        self.Ainv, self.logdet, self.alpha, self.jitter = p.Ainv, p.logdet, p.alpha, p.jitter
        self.mll = p.mll
        self.n_lowrank = 0

    # -- prediction ---------------------------------------------------------

    def cross_kernel(self, Xq: np.ndarray) -> np.ndarray:
        ids_q = forest_leaf_ids(self.forest, Xq)
        return gram_from_ids(self.leaf_ids, self.sigma0_sq, ids_q)

    def predict(self, Xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Latent predictive mean and variance at the rows of ``Xq``."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
        if self.n == 0:
            return np.zeros(len(Xq)), np.full(len(Xq), self.sigma0_sq)
        Kx = self.cross_kernel(Xq)
        mean = Kx @ self.alpha
        var = self.sigma0_sq - np.einsum("ij,ij->i", Kx @ self.Ainv, Kx)
        return mean, np.clip(var, 0.0, self.sigma0_sq)

    def leaf_sums(self) -> list[np.ndarray]:
        """Per tree, the sum of ``alpha`` over the training points in each leaf."""
        return [np.bincount(self.leaf_ids[t], weights=self.alpha, minlength=tree.n_leaves)
                for t, tree in enumerate(self.forest)]


@dataclass
class PredictiveGaussian:
    mean: float
    var: float


def marginal_log_likelihood(state: GpState, y: np.ndarray | None = None) -> float:
    """GP evidence ``log N(y; 0, K + sigma_y^2 I)`` from the cached factorization."""
    if y is None or np.array_equal(y, state.y):
        return state.mll
    alpha = state.Ainv @ y
    return -0.5 * float(y @ alpha) - 0.5 * state.logdet - 0.5 * len(y) * LOG_2PI


def update_tree_lowrank(state: GpState, t: int, new_tree: Tree) -> TreeProposal:
    return state.propose_tree(t, new_tree)


def update_noise(state: GpState, new_noise_var: float) -> NoiseProposal:
    return state.propose_noise(new_noise_var)


def predict(state: GpState, x) -> PredictiveGaussian:
    mean, var = state.predict(np.asarray(x, dtype=np.float64)[None, :])
    return PredictiveGaussian(float(mean[0]), float(var[0]))


def predict_mean_by_leaf_sums(state: GpState, Xq) -> np.ndarray:
    """Predictive mean written as a sum of per-tree leaf contributions."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
    if state.n == 0:
        return np.zeros(len(Xq))
    out = np.zeros(len(Xq))
    for tree, sums in zip(state.forest, state.leaf_sums()):
        out += sums[tree.leaf_index(Xq)]
    return state.scale * out


# -- posterior ensembles ------------------------------------------------------

@dataclass
class PosteriorEnsemble:
    """Equally weighted GP posterior samples sharing one dataset.

    ``sign`` is -1 when the states were fitted to negated outputs (for
    minimization); predictions are always reported for the fitted
    orientation unless converted with :meth:`to_raw`.
    """

    states: list
    dataset: Dataset | None = None
    sign: float = 1.0

    def __post_init__(self):
        if not self.states:
            raise ValueError("ensemble needs at least one state")

    @property
    def S(self) -> int:
        return len(self.states)

    def predict(self, Xq) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-state means, latent variances and noise variances, shape ``(S, M)``."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
        means, variances = zip(*(s.predict(Xq) for s in self.states))
        noise = np.array([s.noise_var for s in self.states])
        return np.array(means), np.array(variances), noise

    def mean(self, Xq) -> np.ndarray:
        means, _, _ = self.predict(Xq)
        return means.mean(axis=0)

    def to_dict(self) -> dict:
        d = {
            "sigma0_sq": self.states[0].sigma0_sq,
            "sign": self.sign,
            "forests": [forest_to_dicts(s.forest) for s in self.states],
            "noise_var": [s.noise_var for s in self.states],
        }
        if self.dataset is not None:
            d["y_mean"] = self.dataset.y_mean
            d["y_std"] = self.dataset.y_std
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict, space: FeatureSpace, dataset: Dataset) -> "PosteriorEnsemble":
        sign = float(d.get("sign", 1.0))
        states = [GpState(forest_from_dicts(f, space), nv, dataset.X, sign * dataset.y, d["sigma0_sq"])
                  for f, nv in zip(d["forests"], d["noise_var"])]
        return cls(states, dataset, sign)


def _standardized_target(ensemble: PosteriorEnsemble, y_raw) -> tuple[np.ndarray, float]:
    y_raw = np.atleast_1d(np.asarray(y_raw, dtype=np.float64))
    if ensemble.dataset is None:
        return ensemble.sign * y_raw, 1.0
    ds = ensemble.dataset
    return ensemble.sign * (y_raw - ds.y_mean) / ds.y_std, ds.y_std


def mixture_nlpd(ensemble: PosteriorEnsemble, Xq, y_true_raw) -> np.ndarray:
    """Negative log predictive density of the Gaussian mixture, raw output scale."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
    z, y_std = _standardized_target(ensemble, y_true_raw)
    means, variances, noise = ensemble.predict(Xq)
    total = variances + noise[:, None]
    logp = -0.5 * (LOG_2PI + np.log(total) + (z[None, :] - means) ** 2 / total)
    lse = scipy.special.logsumexp(logp, axis=0) - math.log(ensemble.S)
    return -lse + math.log(y_std)


def mixture_mse(ensemble: PosteriorEnsemble, Xq, y_true_raw) -> float:
    """Mean squared error of the mixture mean on the raw output scale."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
    y_true_raw = np.asarray(y_true_raw, dtype=np.float64)
    mu = ensemble.sign * ensemble.mean(Xq)
    if ensemble.dataset is not None:
        mu = ensemble.dataset.to_raw(mu)
    return float(np.mean((mu - y_true_raw) ** 2))
