"""Compare the compiled kernels with the numpy fallback.

Times each kernel on identical inputs, then runs a short sampler sweep and
an acquisition solve end to end under each backend in a subprocess
(``BARK_PURE_PYTHON=1`` selects the fallback).

    python benchmarks/bench_kernels.py [--repeat 200] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from bark import _kernels_py
from bark.acquisition import AcquisitionModel
from bark.gp import GpState, PosteriorEnsemble
from bark.mcmc import SplitPrior, propose_structure
from bark.space import Categorical, Continuous, FeatureSpace, Integer, sample_uniform_array
from bark.tree import sample_tree_prior

try:
    from bark import _kernels
except ImportError:
    _kernels = None

END_TO_END = """
import time, numpy as np
from bark import BACKEND
from bark.acquisition import AcqConfig, maximize_acquisition
from bark.mcmc import SamplerConfig, run_chains
from bark.space import Continuous, FeatureSpace, sample_uniform_array, standardize
space = FeatureSpace(tuple(Continuous(0.0, 1.0, f"x{i}") for i in range(3)))
rng = np.random.default_rng(0)
X = sample_uniform_array(space, 40, rng)
ds = standardize(X, np.sin(6 * X[:, 0]) + X[:, 1] ** 2, space)
cfg = SamplerConfig(m=50, chains=2, burn_in=40, samples_per_chain=40, thin=20)
t0 = time.perf_counter()
fit = run_chains(ds.X, ds.y, space, cfg, 0, dataset=ds)
t1 = time.perf_counter()
res = maximize_acquisition(fit.ensemble, space, AcqConfig(rel_gap=0.1, time_limit=60.0))
t2 = time.perf_counter()
print(BACKEND, t1 - t0, t2 - t1, res.nodes_explored)
"""


def _setup(seed: int = 0):
    rng = np.random.default_rng(seed)
    space = FeatureSpace((Continuous(0.0, 1.0, "a"), Continuous(0.0, 1.0, "b"),
                          Integer(0, 9, "c"), Categorical(4, "d")))
    X = sample_uniform_array(space, 200, rng)
    y = rng.standard_normal(200)
    forest = [sample_tree_prior(space, 0.95, 2.0, rng) for _ in range(50)]
    state = GpState(forest, 0.1, X, y)
    prior = SplitPrior(space, 0.95, 2.0)
    while True:
        _, new_tree, _ = propose_structure(forest[0], prior, rng, (0.25, 0.25, 0.5))
        if new_tree is not None and new_tree.n_leaves > 1:
            break
    deep = max(forest, key=lambda t: t.n_leaves)
    ens = PosteriorEnsemble([state, GpState([sample_tree_prior(space, 0.95, 2.0, rng) for _ in range(50)],
                                            0.1, X, y)])
    model = AcquisitionModel(ens, space, 1.96)
    lo, hi, masks = model.root_box()
    reach = model.reach(lo, hi, masks)
    x = model.representative(lo, hi, masks)
    return {
        "route": (np.ascontiguousarray(X),) + deep.flat,
        "lowrank_delta": (state.Ainv, state.alpha, state.leaf_ids[0], new_tree.leaf_index(X),
                          float(np.sqrt(state.scale))),
        "bnb_probe": (reach, x, model.L, model.U, model.M, model.is_cat, model.values, model.offsets)
                     + model._probe_data + (model.kappa,),
    }


def time_kernels(repeat: int) -> dict:
    inputs = _setup()
    out = {}
    for name, args in inputs.items():
        row = {}
        for label, mod in (("numpy", _kernels_py), ("cython", _kernels)):
            if mod is None:
                continue
            fn = getattr(mod, name)
            row[label] = min(timeit.repeat(lambda: fn(*args), number=repeat, repeat=3)) / repeat
        if "cython" in row:
            row["speedup"] = row["numpy"] / row["cython"]
        out[name] = row
    return out


def end_to_end() -> dict:
    out = {}
    for label, env in (("cython", {}), ("numpy", {"BARK_PURE_PYTHON": "1"})):
        res = subprocess.run([sys.executable, "-c", END_TO_END], env={**os.environ, **env},
                             capture_output=True, text=True, check=True)
        backend, fit_s, opt_s, nodes = res.stdout.split()
        out[label] = {"backend": backend, "fit_seconds": float(fit_s), "opt_seconds": float(opt_s),
                      "nodes": int(nodes)}
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=200)
    parser.add_argument("--json", help="write results to this path")
    parser.add_argument("--skip-end-to-end", action="store_true")
    args = parser.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; timing the numpy fallback only")
    result = {"kernels": time_kernels(args.repeat)}
    print(f"{'kernel':<16}{'numpy (us)':>12}{'cython (us)':>13}{'speedup':>9}")
    for name, row in result["kernels"].items():
        cy = row.get("cython")
        print(f"{name:<16}{row['numpy'] * 1e6:>12.1f}"
              f"{(cy * 1e6 if cy else float('nan')):>13.1f}{row.get('speedup', float('nan')):>9.1f}")
    if not args.skip_end_to_end:
        result["end_to_end"] = end_to_end()
        for label, row in result["end_to_end"].items():
            print(f"{label:<8} backend={row['backend']:<7} fit {row['fit_seconds']:.2f}s "
                  f"acquisition {row['opt_seconds']:.2f}s ({row['nodes']} nodes)")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(result, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
