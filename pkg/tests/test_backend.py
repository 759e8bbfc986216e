import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from bark import _backend, _kernels_py
from bark.gp import GpState
from bark.mcmc import SplitPrior, propose_structure
from bark.space import Categorical, Continuous, FeatureSpace, Integer, sample_uniform_array
from bark.tree import sample_tree_prior

try:
    from bark import _kernels
except ImportError:
    _kernels = None

needs_compiled = pytest.mark.skipif(_kernels is None, reason="compiled extension not built")

SPACE = FeatureSpace((Continuous(0.0, 1.0, "a"), Integer(0, 6, "b"), Categorical(5, "c")))

PROBE = """
import numpy as np
from bark import BACKEND
from bark.mcmc import SamplerConfig, run_chains
from bark.space import Continuous, FeatureSpace, sample_uniform_array, standardize
space = FeatureSpace((Continuous(0.0, 1.0, "x"), Continuous(0.0, 1.0, "z")))
X = sample_uniform_array(space, 25, np.random.default_rng(0))
ds = standardize(X, np.sin(5 * X[:, 0]) + X[:, 1], space)
fit = run_chains(ds.X, ds.y, space, SamplerConfig(m=10, chains=1, burn_in=20, samples_per_chain=10, thin=5), 0, dataset=ds)
print(BACKEND, repr(fit.ensemble.states[0].mll))
"""


def _run(extra):
    env = {k: v for k, v in os.environ.items() if k != "BARK_PURE_PYTHON"}
    res = subprocess.run([sys.executable, "-c", PROBE], env={**env, **extra},
                         capture_output=True, text=True, check=True)
    backend, mll = res.stdout.split()
    return backend, float(mll)


def test_env_var_forces_fallback():
    env = {k: v for k, v in os.environ.items() if k != "BARK_PURE_PYTHON"}
    pure = subprocess.run([sys.executable, "-c", "from bark import BACKEND; print(BACKEND)"],
                          env={**env, "BARK_PURE_PYTHON": "1"}, capture_output=True, text=True, check=True)
    assert pure.stdout.strip() == "numpy"


@needs_compiled
def test_backends_give_the_same_chain():
    cy_backend, cy_mll = _run({})
    py_backend, py_mll = _run({"BARK_PURE_PYTHON": "1"})
    assert (cy_backend, py_backend) == ("cython", "numpy")
    assert_allclose(cy_mll, py_mll, rtol=1e-9)


@needs_compiled
@given(seed=st.integers(0, 10_000), n=st.integers(1, 60))
def test_route_agrees(seed, n):
    rng = np.random.default_rng(seed)
    tree = sample_tree_prior(SPACE, 0.95, 0.5, rng)
    if tree.n_leaves == 1:
        return
    X = np.ascontiguousarray(sample_uniform_array(SPACE, n, rng))
    a = _kernels_py.route(X, *tree.flat)
    b = _kernels.route(X, *tree.flat)
    np.testing.assert_array_equal(a, b)
    assert [tree.route_point(x) for x in X] == a.tolist()


@needs_compiled
@given(seed=st.integers(0, 10_000))
def test_lowrank_and_groups_agree(seed):
    rng = np.random.default_rng(seed)
    X = sample_uniform_array(SPACE, 30, rng)
    y = rng.standard_normal(30)
    forest = [sample_tree_prior(SPACE, 0.95, 1.0, rng) for _ in range(5)]
    state = GpState(forest, 0.2, X, y)
    prior = SplitPrior(SPACE, 0.95, 1.0)
    new_tree = None
    while new_tree is None:
        _, new_tree, _ = propose_structure(forest[0], prior, rng, (0.25, 0.25, 0.5))
    old_ids, new_ids = state.leaf_ids[0], new_tree.leaf_index(X)
    args = (state.Ainv, state.alpha, old_ids, new_ids, float(np.sqrt(state.scale)))
    for u, v in zip(_kernels_py.lowrank_delta(*args), _kernels.lowrank_delta(*args)):
        assert_allclose(u, v, rtol=1e-9, atol=1e-12)
    ga, gb = _kernels_py.changed_groups(old_ids, new_ids), _kernels.changed_groups(old_ids, new_ids)
    assert len(ga) == len(gb)
    for u, v in zip(ga, gb):
        np.testing.assert_array_equal(u, v)


def test_selected_backend_is_consistent():
    assert _backend.BACKEND == ("cython" if _backend.COMPILED else "numpy")
