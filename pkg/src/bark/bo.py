"""Bayesian optimization loop and a persistent ask-tell session.

Each ask standardizes the outputs, fits the forest-kernel posterior (warm
started from the previous fit's final chain states once one exists) and
maximizes the integrated UCB.  Minimization negates the standardized
outputs so the acquisition is always maximized.  Randomness for an ask is
derived from ``(seed, number of observations)``, so asking twice without a
tell returns the same point.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .acquisition import AcqConfig, maximize_acquisition
from .mcmc import SamplerConfig, run_chains, sample_prior_ensemble
from .space import FeatureSpace, sample_uniform_array, standardize
from .tree import forest_from_dicts, forest_to_dicts

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("iteration", "best_so_far", "y", "acq_value", "gap", "fit_seconds", "opt_seconds")


def default_n_init(D: int) -> int:
    return min(2 * D, 30)


def _from_dict(cls, d: dict, nested: dict | None = None):
    nested = nested or {}
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = dict(d)
    for key, sub in nested.items():
        if key in kwargs and isinstance(kwargs[key], dict):
            kwargs[key] = _from_dict(sub, kwargs[key])
    return cls(**kwargs)


@dataclass
class BoConfig:
    n_iterations: int = 100
    n_init: int | None = None
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    acq: AcqConfig = field(default_factory=AcqConfig)
    seed: int = 0
    direction: str = "minimize"
    prior_only: bool = False

    def __post_init__(self):
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be non-negative")
        if self.n_init is not None and self.n_init < 1:
            raise ValueError("n_init must be at least 1")
        if self.direction not in ("minimize", "maximize"):
            raise ValueError("direction must be 'minimize' or 'maximize'")

    @property
    def sign(self) -> float:
        return -1.0 if self.direction == "minimize" else 1.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sampler"] = self.sampler.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BoConfig":
        return _from_dict(cls, d, {"sampler": SamplerConfig, "acq": AcqConfig})


def _ask_seed(seed: int, n_obs: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(n_obs)])


class BoSession:
    """Observations, warm-start chain states and the per-iteration trace."""

    def __init__(self, space: FeatureSpace, config: BoConfig | None = None):
        self.space = space
        self.config = config or BoConfig()
        self.X: list[tuple] = []
        self.y_raw: list[float] = []
        self.design: list[tuple] = []
        self.warm: list | None = None
        self.pending: dict | None = None
        self.trace: list[dict] = []
        self.fit_log: list[dict] = []

    # -- bookkeeping --------------------------------------------------------

    @property
    def n_obs(self) -> int:
        return len(self.y_raw)

    @property
    def n_init(self) -> int:
        return self.config.n_init or default_n_init(self.space.D)

    def best(self) -> float:
        if not self.y_raw:
            return math.nan
        return min(self.y_raw) if self.config.direction == "minimize" else max(self.y_raw)

    def best_point(self) -> tuple | None:
        if not self.y_raw:
            return None
        pick = np.argmin if self.config.direction == "minimize" else np.argmax
        return self.X[int(pick(self.y_raw))]

    # -- ask / tell ---------------------------------------------------------

    def ask(self) -> tuple:
        """Next point to evaluate; does not change the dataset."""
        if self.n_obs < len(self.design):
            return self.design[self.n_obs]
        if self.n_obs == 0:
            raise ValueError("ask needs at least one observation or an initial design")
        cfg = self.config
        seeds = _ask_seed(cfg.seed, self.n_obs).spawn(2)
        ds = standardize(self.X, self.y_raw, self.space)
        y_fit = cfg.sign * ds.y
        t0 = time.perf_counter()
        if cfg.prior_only:
            fit = sample_prior_ensemble(ds.X, y_fit, self.space, cfg.sampler, seeds[0], ds, cfg.sign)
        else:
            fit = run_chains(ds.X, y_fit, self.space, cfg.sampler, seeds[0], init=self.warm,
                             dataset=ds, sign=cfg.sign)
        t1 = time.perf_counter()
        res = maximize_acquisition(fit.ensemble, self.space, cfg.acq, np.random.default_rng(seeds[1]))
        t2 = time.perf_counter()
        self.pending = {
            "n_obs": self.n_obs,
            "x": list(res.x_best),
            "warm": fit.warm_start if fit.chains else None,
            "acq_value": res.value,
            "gap": res.proven_gap,
            "status": res.status,
            "fit_seconds": t1 - t0,
            "opt_seconds": t2 - t1,
            "burn_in_sweeps": fit.burn_in_sweeps,
            "n_states": fit.ensemble.S,
        }
        log.info("ask %d: value %.4g gap %.3g (%s), fit %.2fs, opt %.2fs", self.n_obs, res.value,
                 res.proven_gap, res.status, t1 - t0, t2 - t1)
        return res.x_best

    def tell(self, x, y_raw: float) -> "BoSession":
        """Record an observation and commit the matching ask's chain states."""
        x = self.space.validate_point(x)
        y_raw = float(y_raw)
        if not math.isfinite(y_raw):
            raise ValueError("observed value must be finite")
        row = {"iteration": self.n_obs + 1, "y": y_raw, "acq_value": math.nan, "gap": math.nan,
               "fit_seconds": math.nan, "opt_seconds": math.nan}
        p = self.pending
        if p is not None and p["n_obs"] == self.n_obs:
            if p["warm"] is not None:
                self.warm = p["warm"]
            self.fit_log.append({k: p[k] for k in ("n_obs", "burn_in_sweeps", "n_states")})
            row.update({k: p[k] for k in ("acq_value", "gap", "fit_seconds", "opt_seconds")})
        self.pending = None
        self.X.append(x)
        self.y_raw.append(y_raw)
        row["best_so_far"] = self.best()
        row["x"] = list(x)
        self.trace.append(row)
        return self

    # -- persistence --------------------------------------------------------

    def _encode_point(self, x) -> list:
        out = []
        for v, f in zip(x, self.space.features):
            out.append(f.label(v) if getattr(f, "labels", None) else v)
        return out

    def _decode_point(self, x) -> tuple:
        vals = []
        for v, f in zip(x, self.space.features):
            vals.append(f.index(v) if getattr(f, "labels", None) and isinstance(v, str) else v)
        return self.space.validate_point(vals)

    def to_dict(self) -> dict:
        def enc_warm(warm):
            if warm is None:
                return None
            return [{"forest": forest_to_dicts(f), "noise_var": nv} for f, nv in warm]

        pending = None
        if self.pending is not None:
            pending = dict(self.pending)
            pending["x"] = self._encode_point(pending["x"])
            pending["warm"] = enc_warm(pending["warm"])
        return {
            "space": self.space.to_dict(),
            "config": self.config.to_dict(),
            "X": [self._encode_point(x) for x in self.X],
            "y": list(self.y_raw),
            "design": [self._encode_point(x) for x in self.design],
            "warm": enc_warm(self.warm),
            "pending": pending,
            "trace": [dict(r, x=self._encode_point(r["x"])) for r in self.trace],
            "fit_log": self.fit_log,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoSession":
        expected = {"space", "config", "X", "y", "design", "warm", "pending", "trace", "fit_log"}
        if set(d) != expected:
            raise ValueError(f"session keys must be {sorted(expected)}, got {sorted(d)}")
        space = FeatureSpace.from_dict(d["space"])
        s = cls(space, BoConfig.from_dict(d["config"]))

        def dec_warm(warm):
            if warm is None:
                return None
            return [(list(forest_from_dicts(w["forest"], space)), float(w["noise_var"])) for w in warm]

        s.X = [s._decode_point(x) for x in d["X"]]
        s.y_raw = [float(v) for v in d["y"]]
        if len(s.X) != len(s.y_raw):
            raise ValueError("session has mismatched X and y")
        s.design = [s._decode_point(x) for x in d["design"]]
        s.warm = dec_warm(d["warm"])
        if d["pending"] is not None:
            p = dict(d["pending"])
            p["x"] = list(s._decode_point(p["x"]))
            p["warm"] = dec_warm(p["warm"])
            s.pending = p
        s.trace = [dict(r, x=s._decode_point(r["x"])) for r in d["trace"]]
        s.fit_log = list(d["fit_log"])
        return s

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, allow_nan=True)

    @classmethod
    def load(cls, path) -> "BoSession":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def write_trace(self, path, optimum: float | None = None) -> None:
        cols = TRACE_COLUMNS + (("regret",) if optimum is not None else ())
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.trace:
                row = [r[c] for c in TRACE_COLUMNS]
                if optimum is not None:
                    row.append(regret_value(r["best_so_far"], optimum, self.config.direction))
                w.writerow(row)


def regret_value(best: float, optimum: float, direction: str = "minimize") -> float:
    return best - optimum if direction == "minimize" else optimum - best


def initialize(space: FeatureSpace, objective=None, config: BoConfig | None = None,
               seed: int | None = None) -> BoSession:
    """New session with ``min(2D, 30)`` uniform initial points, evaluated if ``objective`` is given."""
    config = config or BoConfig()
    if seed is not None:
        config.seed = int(seed)
    s = BoSession(space, config)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2**31 - 1]))
    s.design = space.to_points(sample_uniform_array(space, s.n_init, rng))
    if objective is not None:
        for x in s.design:
            s.tell(x, objective(x))
    return s


def run_loop(space: FeatureSpace, objective, config: BoConfig | None = None,
             session_path=None) -> BoSession:
    """Initialize, then ask, evaluate and tell ``config.n_iterations`` times."""
    session = initialize(space, objective, config)
    for _ in range(session.config.n_iterations):
        x = session.ask()
        try:
            y = objective(x)
        finally:
            if session_path is not None:
                session.save(session_path)
        session.tell(x, y)
    if session_path is not None:
        session.save(session_path)
    return session
