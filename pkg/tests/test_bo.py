import csv
import math

import numpy as np
import pytest

from bark.acquisition import AcqConfig
from bark.bo import (TRACE_COLUMNS, BoConfig, BoSession, default_n_init, initialize, regret_value,
                     run_loop)
from bark.mcmc import SamplerConfig
from bark.space import Continuous, FeatureSpace


def _fast(n_iterations=2, **kw):
    return BoConfig(n_iterations=n_iterations,
                    sampler=SamplerConfig(m=8, chains=2, burn_in=10, samples_per_chain=10, thin=5),
                    acq=AcqConfig(time_limit=5.0, probe_samples=32), **kw)


def _objective(x):
    return (x[0] - 0.3) ** 2 + 0.1 * (x[1] - 1) ** 2 + (0.5 if x[2] == 2 else 0.0)


@pytest.mark.parametrize("D, expected", [(1, 2), (3, 6), (15, 30), (40, 30)])
def test_default_n_init(D, expected):
    assert default_n_init(D) == expected


def test_config_validation():
    with pytest.raises(ValueError):
        BoConfig(direction="sideways")
    with pytest.raises(ValueError):
        BoConfig(n_iterations=-1)
    with pytest.raises(ValueError):
        BoConfig(n_init=0)
    with pytest.raises(ValueError):
        BoConfig.from_dict({"n_iterations": 3, "bogus": 1})


def test_config_round_trip():
    cfg = _fast(direction="maximize")
    again = BoConfig.from_dict(cfg.to_dict())
    assert again == cfg


def test_initialize_design(mixed_space):
    s = initialize(mixed_space, config=_fast(), seed=4)
    assert len(s.design) == default_n_init(mixed_space.D)
    assert s.n_obs == 0
    for x in s.design:
        mixed_space.validate_point(x)
    assert s.ask() == s.design[0]
    again = initialize(mixed_space, config=_fast(), seed=4)
    assert again.design == s.design


def test_ask_without_data_raises(mixed_space):
    with pytest.raises(ValueError):
        BoSession(mixed_space, _fast()).ask()


def test_ask_is_repeatable_and_tell_tracks_best(mixed_space):
    s = initialize(mixed_space, _objective, _fast())
    x1 = s.ask()
    x2 = s.ask()
    assert x1 == x2
    mixed_space.validate_point(x1)
    s.tell(x1, -5.0)
    assert s.best() == -5.0
    assert s.best_point() == x1
    assert s.trace[-1]["best_so_far"] == -5.0
    assert math.isfinite(s.trace[-1]["acq_value"])
    sc = _fast().sampler
    assert s.fit_log[-1]["burn_in_sweeps"] == sc.chains * sc.burn_in
    s.tell(s.ask(), 10.0)
    assert s.best() == -5.0
    # warm-started fits skip burn-in
    assert s.fit_log[-1]["burn_in_sweeps"] == 0


def test_tell_rejects_bad_input(mixed_space):
    s = initialize(mixed_space, config=_fast())
    with pytest.raises(ValueError):
        s.tell(s.design[0], float("nan"))
    with pytest.raises(ValueError):
        s.tell((2.0, 0, 0), 1.0)


def test_maximize_direction(mixed_space):
    s = initialize(mixed_space, _objective, _fast(direction="maximize"))
    assert s.best() == max(s.y_raw)
    assert regret_value(1.0, 3.0, "maximize") == 2.0
    assert regret_value(3.0, 1.0, "minimize") == 2.0


def test_session_round_trip(mixed_space, tmp_path):
    s = initialize(mixed_space, _objective, _fast())
    s.tell(s.ask(), 0.25)
    x = s.ask()
    path = tmp_path / "session.json"
    s.save(path)
    t = BoSession.load(path)
    assert t.X == s.X and t.y_raw == s.y_raw and t.design == s.design
    assert t.pending["x"] == list(x)
    assert t.config == s.config
    assert t.ask() == s.ask()
    t.tell(x, 0.5)
    assert t.fit_log[-1]["burn_in_sweeps"] == 0


def test_session_rejects_wrong_keys(mixed_space):
    d = initialize(mixed_space, config=_fast()).to_dict()
    d.pop("trace")
    with pytest.raises(ValueError):
        BoSession.from_dict(d)


def test_run_loop_trace(mixed_space, tmp_path):
    s = run_loop(mixed_space, _objective, _fast(n_iterations=2), session_path=tmp_path / "s.json")
    n = default_n_init(mixed_space.D) + 2
    assert len(s.trace) == n
    best = [r["best_so_far"] for r in s.trace]
    assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
    assert all(math.isnan(r["acq_value"]) for r in s.trace[:-2])
    path = tmp_path / "trace.csv"
    s.write_trace(path, optimum=0.0)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == TRACE_COLUMNS + ("regret",)
    assert len(rows) == n + 1
    assert (tmp_path / "s.json").exists()


def test_zero_iterations(mixed_space):
    s = run_loop(mixed_space, _objective, _fast(n_iterations=0))
    assert s.n_obs == default_n_init(mixed_space.D)
    assert s.fit_log == []


def test_prior_only_fit(mixed_space):
    s = initialize(mixed_space, _objective, _fast(prior_only=True))
    x = s.ask()
    mixed_space.validate_point(x)
    s.tell(x, 1.0)
    assert s.warm is None


def test_loop_finds_easy_minimum():
    space = FeatureSpace((Continuous(0.0, 1.0, "x"),))
    cfg = _fast(n_iterations=6, n_init=3)
    s = run_loop(space, lambda x: (x[0] - 0.8) ** 2, cfg)
    assert s.best() < 0.02
    assert np.isfinite([r["fit_seconds"] for r in s.trace[3:]]).all()
