"""Synthetic objectives, regression evaluation and regret reporting."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .acquisition import maximize_partition
from .bo import BoConfig, regret_value, run_loop
from .gp import mixture_mse, mixture_nlpd
from .mcmc import SamplerConfig, run_chains, sample_prior_ensemble
from .space import Categorical, Continuous, FeatureSpace, Integer, sample_uniform_array, standardize
from .tree import sample_tree_prior

ACKLEY_INT_VALUES = (-1.0, 1.0)
ROSENBROCK_INT_VALUES = (-5.0, 0.0, 5.0, 10.0)


@dataclass
class Benchmark:
    name: str
    space: FeatureSpace
    objective: Callable
    optimum: float | None = None
    argmin: tuple | None = None

    def __call__(self, x) -> float:
        return float(self.objective(x))


# -- tree functions -----------------------------------------------------------

def make_tree_function(space: FeatureSpace, seed: int, n_trees: int = 20, alpha: float = 0.95,
                       beta: float = 2.0, name: str = "TreeFunction") -> Benchmark:
    """Sum of leaf values of a forest drawn from the tree prior.

    Leaf values are ``N(0, 1/n_trees)``.  The exact minimum is found by
    branch-and-bound over the joint partition of the generating forest.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), n_trees]))
    trees = [sample_tree_prior(space, alpha, beta, rng) for _ in range(n_trees)]
    values = [rng.normal(0.0, math.sqrt(1.0 / n_trees), size=t.n_leaves) for t in trees]

    def objective(x):
        x = space.validate_point(x)
        return float(sum(v[t.route_point(x)] for t, v in zip(trees, values)))

    argmin, neg_min = maximize_partition(space, trees, [-v for v in values])
    bench = Benchmark(name, space, objective, -neg_min, argmin)
    bench.trees, bench.values = trees, values
    return bench


def tree_function_space(D: int = 10, n_cat: int = 0, n_categories: int = 5) -> FeatureSpace:
    feats = [Continuous(0.0, 1.0, f"x{i}") for i in range(D)]
    feats += [Categorical(n_categories, f"h{i}") for i in range(n_cat)]
    return FeatureSpace(tuple(feats))


# -- partially discrete test functions ----------------------------------------

def ackley(z) -> float:
    z = np.asarray(z, dtype=np.float64)
    d = len(z)
    return float(-20.0 * math.exp(-0.2 * math.sqrt(np.sum(z * z) / d))
                 - math.exp(np.sum(np.cos(2.0 * math.pi * z)) / d) + 20.0 + math.e)


def rosenbrock(z) -> float:
    z = np.asarray(z, dtype=np.float64)
    return float(np.sum(100.0 * (z[1:] - z[:-1] ** 2) ** 2 + (z[:-1] - 1.0) ** 2))


def discrete_ackley(x_cont, x_int) -> float:
    """Ackley on the concatenation of continuous coordinates and integer values."""
    return ackley(np.concatenate([np.asarray(x_cont, float), np.asarray(x_int, float)]))


def discrete_rosenbrock(x_cont, x_int) -> float:
    return rosenbrock(np.concatenate([np.asarray(x_cont, float), np.asarray(x_int, float)]))


def _indexed(space_cont: int, lo: float, hi: float, values, n_int: int, prefix: str):
    feats = [Continuous(lo, hi, f"x{i}") for i in range(space_cont)]
    feats += [Integer(0, len(values) - 1, f"{prefix}{i}") for i in range(n_int)]
    return FeatureSpace(tuple(feats))


def make_discrete_ackley(n_cont: int = 3, n_int: int = 10) -> Benchmark:
    """Integer features index the value set ``{-1, 1}``."""
    space = _indexed(n_cont, -1.0, 1.0, ACKLEY_INT_VALUES, n_int, "i")
    vals = np.array(ACKLEY_INT_VALUES)

    def objective(x):
        x = space.validate_point(x)
        return discrete_ackley(x[:n_cont], vals[list(x[n_cont:])])

    return Benchmark("DiscreteAckley", space, objective)


def make_discrete_rosenbrock(n_cont: int = 4, n_int: int = 6) -> Benchmark:
    """Integer features index the value set ``{-5, 0, 5, 10}``."""
    space = _indexed(n_cont, -5.0, 10.0, ROSENBROCK_INT_VALUES, n_int, "i")
    vals = np.array(ROSENBROCK_INT_VALUES)

    def objective(x):
        x = space.validate_point(x)
        return discrete_rosenbrock(x[:n_cont], vals[list(x[n_cont:])])

    return Benchmark("DiscreteRosenbrock", space, objective)


BENCHMARKS = ("TreeFunction", "TreeFunctionCat", "DiscreteAckley", "DiscreteRosenbrock")


def make_benchmark(name: str, seed: int = 0, dims: int | None = None, n_trees: int = 20,
                   full: bool = False) -> Benchmark:
    """Benchmark by name; desk-scale dimensions unless ``full`` is set."""
    if name == "TreeFunction":
        D = dims or (10 if full else 3)
        return make_tree_function(tree_function_space(D), seed, n_trees)
    if name == "TreeFunctionCat":
        D = dims or (10 if full else 3)
        return make_tree_function(tree_function_space(D, D), seed, n_trees, name=name)
    if name == "DiscreteAckley":
        return make_discrete_ackley(3, 10) if full or dims is None else make_discrete_ackley(dims, dims)
    if name == "DiscreteRosenbrock":
        return make_discrete_rosenbrock(4, 6) if full or dims is None else make_discrete_rosenbrock(dims, dims)
    raise KeyError(f"unknown benchmark {name!r}; choose from {', '.join(BENCHMARKS)}")


# -- regression ---------------------------------------------------------------

def train_test_split(n: int, seed: int, test_frac: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = max(1, int(round(test_frac * n)))
    if n - n_test < 1:
        raise ValueError("split leaves no training data")
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def regression_eval(X, y, space: FeatureSpace, split_seed: int = 0,
                    config: SamplerConfig | None = None, test_frac: float = 0.2,
                    prior_only: bool = False, return_fit: bool = False):
    """Fit on a random train split and score the held-out rows.

    Returns a dict with mean NLPD and MSE on the raw output scale (and the
    sampler result when ``return_fit`` is set).
    """
    config = config or SamplerConfig()
    X = space.to_array(X)
    y = np.asarray(y, dtype=np.float64)
    if len(y) < 10:
        raise ValueError("regression_eval needs at least 10 rows")
    train, test = train_test_split(len(y), split_seed, test_frac)
    ds = standardize(X[train], y[train], space)
    if prior_only:
        fit = sample_prior_ensemble(ds.X, ds.y, space, config, split_seed, ds)
    else:
        fit = run_chains(ds.X, ds.y, space, config, split_seed, dataset=ds)
    out = {
        "nlpd": float(np.mean(mixture_nlpd(fit.ensemble, X[test], y[test]))),
        "mse": float(mixture_mse(fit.ensemble, X[test], y[test])),
        "n_train": int(len(train)),
        "n_test": int(len(test)),
    }
    return (out, fit) if return_fit else out


# -- regret -------------------------------------------------------------------

def regret_report(best_so_far, optimum: float, direction: str = "minimize") -> np.ndarray:
    """Simple regret per iteration."""
    return np.array([regret_value(b, optimum, direction) for b in best_so_far])


def aggregate(regrets) -> dict:
    """Median and interquartile range across seeds (rows) per iteration (columns)."""
    R = np.asarray(regrets, dtype=np.float64)
    return {
        "median": np.percentile(R, 50, axis=0).tolist(),
        "q25": np.percentile(R, 25, axis=0).tolist(),
        "q75": np.percentile(R, 75, axis=0).tolist(),
    }


def random_search_trace(bench: Benchmark, n_evals: int, seed: int) -> list[float]:
    """Best-so-far values of uniform random search."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    best, out = math.inf, []
    for x in bench.space.to_points(sample_uniform_array(bench.space, n_evals, rng)):
        best = min(best, bench(x))
        out.append(best)
    return out


METHODS = ("bark", "bark_prior", "random")


@dataclass
class BenchmarkRun:
    """Per-method, per-seed BO traces; each seed has its own objective instance."""

    name: str
    traces: dict
    optima: dict

    def best_so_far(self, method: str) -> dict:
        return {seed: [r["best_so_far"] for r in rows] for seed, rows in self.traces[method].items()}


def run_benchmark(name: str, config: BoConfig, seeds, methods=("bark",), dims: int | None = None,
                  n_trees: int = 20, full: bool = False) -> BenchmarkRun:
    """Run each method on the seed-``s`` instance of benchmark ``name`` for every seed ``s``.

    Random search rows carry NaN in the model-specific trace columns.
    """
    for method in methods:
        if method not in METHODS:
            raise KeyError(f"unknown method {method!r}")
    traces = {m: {} for m in methods}
    optima = {}
    for seed in seeds:
        seed = int(seed)
        bench = make_benchmark(name, seed, dims, n_trees, full)
        optima[seed] = bench.optimum
        for method in methods:
            cfg = BoConfig.from_dict(config.to_dict())
            cfg.seed = seed
            if method == "random":
                n = (cfg.n_init or min(2 * bench.space.D, 30)) + cfg.n_iterations
                traces[method][seed] = [
                    {"iteration": i + 1, "best_so_far": b, "y": math.nan, "acq_value": math.nan,
                     "gap": math.nan, "fit_seconds": math.nan, "opt_seconds": math.nan}
                    for i, b in enumerate(random_search_trace(bench, n, seed))]
                continue
            cfg.prior_only = method == "bark_prior"
            traces[method][seed] = run_loop(bench.space, bench, cfg).trace
    return BenchmarkRun(name, traces, optima)


def write_results(path_csv, path_json, name: str, per_seed: dict, optimum) -> dict:
    """Write per-iteration rows for one method and the median/IQR summary; returns the summary.

    ``optimum`` is one value for every seed or a mapping from seed to value.
    """
    optima = optimum if isinstance(optimum, dict) else dict.fromkeys(per_seed, optimum)
    known = all(optima.get(s) is not None for s in per_seed)
    rows = []
    with open(path_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("benchmark", "seed", "iteration", "regret", "best_so_far"))
        for seed, best in per_seed.items():
            opt = optima.get(seed)
            reg = regret_report(best, opt) if opt is not None else np.full(len(best), math.nan)
            rows.append(reg)
            for it, (r, b) in enumerate(zip(reg, best), start=1):
                w.writerow((name, seed, it, repr(float(r)), repr(float(b))))
    summary = {"benchmark": name, "seeds": [int(s) for s in per_seed],
               "optimum": [optima.get(s) for s in per_seed]}
    summary.update(aggregate(rows) if known and rows else {"median": None, "q25": None, "q75": None})
    with open(path_json, "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary
