"""Acceptance criteria.

Each test prints one ``PASS`` or ``FAIL`` line with its measured quantities.
Run with ``pytest tests/test_acceptance.py`` or directly as a script.
"""

import math
import sys
import time
import warnings

import numpy as np
import pytest
import scipy.special
import scipy.stats

from bark import bo as bo_module
from bark.acquisition import AcqConfig
from bark.bo import BoConfig, initialize
from bark.benchmarks import run_benchmark
from bark.mcmc import NoisePrior, SamplerConfig, autocorrelation, run_chains, solve_noise_scale
from bark.space import Continuous, FeatureSpace, empty_dataset, standardize
from bark.tree import leaf_count_distribution
from bark.verify import (check_chopping, check_covariance_equivalence, check_kernel_limit,
                         check_kernel_psd, check_lowrank, check_oracle)

pytestmark = pytest.mark.slow

UNIT = FeatureSpace((Continuous(0.0, 1.0, "x"),))


def _emit(capsys, number: int, name: str, ok: bool, seconds: float, detail: str, status=None):
    status = status or ("PASS" if ok else "FAIL")
    line = f"{status} criterion {number:>2} {name} ({seconds:.1f}s): {detail}"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)


def _fmt(d: dict) -> str:
    return ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in d.items())


# -- 1 --------------------------------------------------------------------------

def criterion_1(capsys=None):
    rep = check_kernel_psd(n_pairs=100, max_n=50, seed=0)
    ok = rep.ok and rep.seconds < 10
    _emit(capsys, 1, "kernel PSD and unit diagonal", ok, rep.seconds, _fmt(rep.details))
    assert ok


# -- 2 --------------------------------------------------------------------------

def criterion_2(capsys=None):
    rep = check_covariance_equivalence(n_forests=5, n_pairs=10, n_draws=100_000, seed=0)
    ok = rep.ok and rep.seconds < 60
    _emit(capsys, 2, "forest kernel equals sum-of-trees covariance", ok, rep.seconds, _fmt(rep.details))
    assert ok


# -- 3 --------------------------------------------------------------------------

def criterion_3(capsys=None):
    rep = check_lowrank(N=200, n_proposals=500, seed=0)
    ok = rep.ok and rep.seconds < 120
    _emit(capsys, 3, "low-rank mll update", ok, rep.seconds, _fmt(rep.details))
    assert ok


# -- 4 --------------------------------------------------------------------------

def _batch_se(x, n_batches: int = 100) -> float:
    x = np.asarray(x)
    size = len(x) // n_batches
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def criterion_4(capsys=None):
    t0 = time.perf_counter()
    ds = empty_dataset(UNIT)
    pmf = leaf_count_distribution(0.95, 2.0)
    expected = np.array([pmf[1], pmf[2], pmf[3], pmf[4], 1.0 - pmf[1:5].sum()])
    pvalues, roots = [], []
    for seed in range(20):
        # with no data the trees are independent; the final forest is a sample of m prior trees
        cfg = SamplerConfig(m=200, chains=1, burn_in=100, samples_per_chain=1, thin=1)
        res = run_chains(ds.X, ds.y, UNIT, cfg, seed, dataset=ds)
        k = np.array([tr.n_leaves for tr in res.chains[0].final_forest])
        roots.append(k > 1)
        observed = [np.sum(k == 1), np.sum(k == 2), np.sum(k == 3), np.sum(k == 4), np.sum(k >= 5)]
        pvalues.append(scipy.stats.chisquare(observed, expected * len(k)).pvalue)
    roots = np.concatenate(roots)
    root_se = math.sqrt(0.95 * 0.05 / len(roots))
    root_z = (roots.mean() - 0.95) / root_se

    cfg = SamplerConfig(m=1, chains=1, burn_in=1000, samples_per_chain=200_000, thin=100_000)
    res = run_chains(ds.X, ds.y, UNIT, cfg, 0, dataset=ds)
    noise = np.array([row[2] for row in res.chains[0].trace])
    prior = NoisePrior.from_config(3.0, 0.9)
    target = prior.nu * prior.t / (prior.nu - 2.0)
    noise_z = (noise.mean() - target) / _batch_se(noise)

    seconds = time.perf_counter() - t0
    ok = abs(root_z) <= 5 and min(pvalues) > 0.001 and abs(noise_z) <= 5 and seconds < 300
    _emit(capsys, 4, "prior recovery with no data", ok, seconds,
          _fmt({"root_split": float(roots.mean()), "root_z": float(root_z), "min_chi2_p": float(min(pvalues)),
                "noise_mean": float(noise.mean()), "noise_target": target, "noise_z": float(noise_z)}))
    assert ok


# -- 5 --------------------------------------------------------------------------

def criterion_5(capsys=None):
    t0 = time.perf_counter()
    t = solve_noise_scale(3.0, 0.9)
    cdf_err = abs(scipy.special.gammaincc(1.5, 1.5 * t) - 0.9)
    samples = NoisePrior(3.0, 0.9, t).sample(np.random.default_rng(0), 1_000_000)
    frac = float(np.mean(samples < 1.0))
    z = (frac - 0.9) / math.sqrt(0.9 * 0.1 / len(samples))
    ok = cdf_err <= 1e-10 and abs(z) <= 4
    _emit(capsys, 5, "noise prior scale", ok, time.perf_counter() - t0,
          _fmt({"t": t, "cdf_error": float(cdf_err), "mc_fraction": frac, "mc_z": float(z)}))
    assert ok


# -- 6 --------------------------------------------------------------------------

def criterion_6(capsys=None):
    rep = check_oracle(n_instances=20, seed=0)
    ok = rep.ok and rep.seconds < 120
    _emit(capsys, 6, "branch-and-bound matches the oracle", ok, rep.seconds, _fmt(rep.details))
    assert ok


# -- 7 --------------------------------------------------------------------------

def _mixture_std(ensemble, Xq) -> np.ndarray:
    means, variances, _ = ensemble.predict(Xq)
    second = (variances + means ** 2).mean(axis=0)
    return np.sqrt(second - means.mean(axis=0) ** 2)


def _clustered_fit(seed: int, split_sampling: str):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.4, 0.6, (20, 1))
    y = np.sin(10 * X[:, 0]) + 0.1 * rng.standard_normal(20)
    ds = standardize(X, y, UNIT)
    cfg = SamplerConfig(m=20, chains=2, burn_in=200, samples_per_chain=200, thin=50, split_sampling=split_sampling)
    fit = run_chains(ds.X, ds.y, UNIT, cfg, seed, dataset=ds)
    grid = np.linspace(0.0, 1.0, 201)
    densest = grid[np.argmax(scipy.stats.gaussian_kde(X[:, 0])(grid))]
    sd = _mixture_std(fit.ensemble, np.array([[0.05], [densest]]))
    return sd[0] - sd[1]


def criterion_7(capsys=None):
    t0 = time.perf_counter()
    uniform = [_clustered_fit(s, "uniform") for s in range(10)]
    data = [_clustered_fit(s, "data") for s in range(10)]
    wins = int(sum(m > 0 for m in uniform))
    seconds = time.perf_counter() - t0
    ok = wins >= 8
    _emit(capsys, 7, "predictive std grows away from data", ok, seconds,
          _fmt({"uniform_wins": f"{wins}/10", "uniform_median_margin": float(np.median(uniform)),
                "data_splits_wins": f"{sum(m > 0 for m in data)}/10",
                "data_splits_median_margin": float(np.median(data))}))
    assert ok


# -- 8 --------------------------------------------------------------------------

DESK_SAMPLER = dict(burn_in=200, samples_per_chain=100, thin=25)
DESK_TIME_LIMIT = 3.0


def criterion_8(capsys=None):
    t0 = time.perf_counter()
    cfg = BoConfig(n_iterations=30, sampler=SamplerConfig(**DESK_SAMPLER), acq=AcqConfig(time_limit=DESK_TIME_LIMIT))
    run = run_benchmark("TreeFunction", cfg, range(5), ("bark", "bark_prior", "random"), dims=3, n_trees=20)
    final = {m: [run.traces[m][s][-1]["best_so_far"] - run.optima[s] for s in run.optima] for m in run.traces}
    med = {m: float(np.median(v)) for m, v in final.items()}
    seconds = time.perf_counter() - t0
    ok = med["bark"] <= med["bark_prior"] and med["bark"] <= med["random"] and seconds < 1800
    _emit(capsys, 8, "TreeFunction regret", ok, seconds,
          _fmt({f"median_{m}": v for m, v in med.items()}) + "; per seed " +
          "; ".join(f"{m}=" + ",".join(f"{r:.3g}" for r in v) for m, v in final.items()))
    assert ok


# -- 9 --------------------------------------------------------------------------

def criterion_9(capsys=None):
    limit = check_kernel_limit(seed=0, n_trees=10_000)
    chop = check_chopping(seed=0)
    seconds = limit.seconds + chop.seconds
    ok = limit.ok and chop.ok and seconds < 180
    _emit(capsys, 9, "kernel limits", ok, seconds,
          _fmt({"laplace_max_z": limit.details["max_abs_z"], "chopping_max_z": chop.details["max_abs_z"],
                "series_error": chop.details["series_error"], "sup_gap": chop.details["laplace_gap"],
                "sup_gap_pi_d": chop.details["laplace_gap_pi_d"]}))
    assert ok


# -- 10 -------------------------------------------------------------------------

def criterion_10(capsys=None, monkeypatch=None):
    t0 = time.perf_counter()
    calls = []
    real = bo_module.run_chains

    def spy(X, y, space, config, seed, init=None, **kw):
        res = real(X, y, space, config, seed, init=init, **kw)
        calls.append({"config": config, "warm": init is not None, "result": res})
        return res

    if monkeypatch is not None:
        monkeypatch.setattr(bo_module, "run_chains", spy)
    else:
        bo_module.run_chains = spy
    try:
        session = initialize(UNIT, lambda x: (x[0] - 0.3) ** 2, BoConfig())
        for _ in range(2):
            x = session.ask()
            session.tell(x, (x[0] - 0.3) ** 2)
    finally:
        bo_module.run_chains = real
    cfg = calls[0]["config"]
    states = [c["result"].ensemble.states for c in calls]
    checks = {
        "states": all(len(s) == 16 for s in states),
        "chains_x_kept": (cfg.chains, cfg.kept_per_chain) == (4, 4),
        "burn_in_first_only": [c["result"].burn_in_sweeps for c in calls] == [4 * cfg.burn_in, 0]
        and [c["warm"] for c in calls] == [False, True],
        "thin": cfg.thin == 100,
        "m": all(st.m == 50 for s in states for st in s),
        "depth_prior": (cfg.alpha, cfg.beta) == (0.95, 2.0),
        "noise_prior": (cfg.nu, cfg.q) == (3.0, 0.9),
        "sigma0_sq": all(st.sigma0_sq == 1.0 for s in states for st in s),
    }
    ok = all(checks.values())
    _emit(capsys, 10, "default configuration in use", ok, time.perf_counter() - t0,
          ", ".join(f"{k}={'ok' if v else 'WRONG'}" for k, v in checks.items()))
    assert ok


# -- 11 -------------------------------------------------------------------------

def criterion_11(capsys=None):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    X = rng.random((50, 1))
    y = np.where(X[:, 0] < 0.5, 0.0, 1.0) + 0.1 * rng.standard_normal(50)
    ds = standardize(X, y, UNIT)
    fit = run_chains(ds.X, ds.y, UNIT, SamplerConfig(), 0, dataset=ds)
    acf50 = [float(autocorrelation(tr, 50)[50]) for tr in fit.mll_traces()]
    good = sum(a < 0.2 for a in acf50)
    ok = good >= 3
    detail = _fmt({"chains_below_0.2": f"{good}/4"}) + ", acf50=" + ",".join(f"{a:.3f}" for a in acf50)
    _emit(capsys, 11, "mll mixing on a step function", ok, time.perf_counter() - t0, detail,
          status=None if ok else "FAIL (warning)")
    if not ok:
        warnings.warn(f"slow mixing: lag-50 autocorrelation {acf50}", stacklevel=1)


# -- pytest entry points ----------------------------------------------------------

def test_kernel_psd(capsys):
    criterion_1(capsys)


def test_covariance_equivalence(capsys):
    criterion_2(capsys)


def test_lowrank_update(capsys):
    criterion_3(capsys)


def test_prior_recovery(capsys):
    criterion_4(capsys)


def test_noise_scale(capsys):
    criterion_5(capsys)


def test_optimizer_exactness(capsys):
    criterion_6(capsys)


def test_uncertainty_away_from_data(capsys):
    criterion_7(capsys)


def test_tree_function_benchmark(capsys):
    criterion_8(capsys)


def test_kernel_analysis(capsys):
    criterion_9(capsys)


def test_defaults(capsys, monkeypatch):
    criterion_10(capsys, monkeypatch)


def test_mixing_on_step_function(capsys):
    criterion_11(capsys)


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11]

if __name__ == "__main__":
    failures = 0
    for fn in CRITERIA:
        try:
            fn()
        except AssertionError:
            failures += 1
    sys.exit(1 if failures else 0)
