"""Command-line interface.

Exit codes: 0 success, 1 runtime failure (including a failed verification),
2 invalid input or configuration.  ``BARK_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, verify
from .acquisition import AcqConfig
from .benchmarks import BENCHMARKS, regression_eval, run_benchmark, write_results
from .bo import TRACE_COLUMNS, BoConfig, BoSession, _from_dict, initialize, regret_value
from .mcmc import SamplerConfig, autocorrelation, run_chains
from .space import DomainError, FeatureSpace, empty_dataset
from .tree import MAX_DEPTH, sample_tree_prior

log = logging.getLogger("bark")

EXIT_OK, EXIT_FAILURE, EXIT_INPUT = 0, 1, 2
METRIC_KEYS = ("nlpd", "mse", "n_train", "n_test", "seed")
ACF_COLUMNS = ("chain", "lag", "acf")
OPT_TRACE_COLUMNS = ("method", "seed") + TRACE_COLUMNS + ("regret",)
PRIOR_COLUMNS = ("forest", "tree", "n_leaves", "depth", "root_split")


class InputError(Exception):
    """Invalid user input; maps to exit code 2."""


# -- configuration ------------------------------------------------------------

@dataclass
class BoSection:
    n_iterations: int = 100
    n_init: int | None = None
    direction: str = "minimize"


@dataclass
class BenchmarkSection:
    seeds: list = field(default_factory=lambda: [0])
    dims: int | None = None
    n_trees: int = 20
    methods: list = field(default_factory=lambda: ["bark"])
    full: bool = False


@dataclass
class FitSection:
    target: str = "y"
    test_frac: float = 0.2
    max_lag: int = 100


@dataclass
class RunConfig:
    """Merged configuration document; unknown keys at any level are rejected."""

    seed: int = 0
    output: str = "."
    space: dict | None = None
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    acq: AcqConfig = field(default_factory=AcqConfig)
    bo: BoSection = field(default_factory=BoSection)
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)
    fit: FitSection = field(default_factory=FitSection)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise InputError("configuration must be a JSON object")
        nested = {"sampler": SamplerConfig, "acq": AcqConfig, "bo": BoSection,
                  "benchmark": BenchmarkSection, "fit": FitSection}
        for key, sub in nested.items():
            if key in d and not isinstance(d[key], dict):
                raise InputError(f"config section {key!r} must be an object")
        try:
            cfg = _from_dict(cls, d, nested)
            if cfg.space is not None:
                FeatureSpace.from_dict(cfg.space)
            cfg.sampler.validate()
            BoConfig(cfg.bo.n_iterations, cfg.bo.n_init, direction=cfg.bo.direction)
        except (TypeError, ValueError) as exc:
            raise InputError(f"invalid configuration: {exc}") from None
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sampler"] = self.sampler.to_dict()
        return d

    def bo_config(self, prior_only: bool = False) -> BoConfig:
        return BoConfig(self.bo.n_iterations, self.bo.n_init, self.sampler, self.acq, self.seed,
                        self.bo.direction, prior_only)


def load_config(args) -> RunConfig:
    d = {}
    if getattr(args, "config", None):
        try:
            d = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
    cfg = RunConfig.from_dict(d)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise InputError("--threads must be at least 1")
        cfg.sampler.threads = args.threads
    if args.output is not None:
        cfg.output = args.output
    if args.time_limit is not None:
        cfg.acq.time_limit = args.time_limit
    if args.rel_gap is not None:
        cfg.acq.rel_gap = args.rel_gap
    if args.kappa is not None:
        cfg.acq.kappa = args.kappa
    if args.data_splits:
        cfg.sampler.split_sampling = "data"
    try:
        AcqConfig(**asdict(cfg.acq))
        cfg.sampler.validate()
    except ValueError as exc:
        raise InputError(str(exc)) from None
    return cfg


# -- input helpers ------------------------------------------------------------

def read_space(path) -> FeatureSpace:
    try:
        return FeatureSpace.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"cannot read feature space {path}: {exc}") from None


def read_dataset(path, space: FeatureSpace, target: str) -> tuple[np.ndarray, np.ndarray]:
    """Rows of ``path`` as a design matrix and an output vector; columns are matched by name."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
            header = rows and list(rows[0]) or []
    except OSError as exc:
        raise InputError(f"cannot read dataset {path}: {exc}") from None
    if not rows:
        raise InputError(f"dataset {path} has no rows")
    missing = [c for c in space.names + [target] if c not in header]
    if missing:
        raise InputError(f"dataset {path} is missing columns: {', '.join(missing)}")
    X, y = [], []
    for i, row in enumerate(rows, start=2):
        try:
            point = []
            for name, f in zip(space.names, space.features):
                v = row[name]
                point.append(f.index(v) if getattr(f, "labels", None) else float(v))
            X.append(space.validate_point(point))
            y.append(float(row[target]))
        except (ValueError, TypeError) as exc:
            raise InputError(f"{path} line {i}: {exc}") from None
        if not math.isfinite(y[-1]):
            raise InputError(f"{path} line {i}: output is not finite")
    return space.to_array(X), np.array(y)


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _num(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


# -- commands -----------------------------------------------------------------

def cmd_fit(args) -> int:
    cfg = load_config(args)
    space = read_space(args.space)
    X, y = read_dataset(args.dataset, space, args.target or cfg.fit.target)
    if len(y) < 10:
        raise InputError("fit needs at least 10 rows")
    metrics, fit = regression_eval(X, y, space, cfg.seed, cfg.sampler, cfg.fit.test_frac,
                                   prior_only=args.prior_only, return_fit=True)
    metrics["seed"] = cfg.seed
    out = _outdir(cfg)
    _write_json(out / "metrics.json", {k: metrics[k] for k in METRIC_KEYS})
    fit.write_diagnostics(out / "diagnostics.csv")
    with open(out / "autocorrelation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ACF_COLUMNS)
        for c, trace in enumerate(fit.mll_traces()):
            if len(trace) < 2:
                continue
            for lag, v in enumerate(autocorrelation(trace, min(cfg.fit.max_lag, len(trace) - 1))):
                w.writerow((c, lag, _num(v)))
    print(json.dumps({k: metrics[k] for k in METRIC_KEYS}, sort_keys=True))
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = load_config(args)
    name = args.benchmark
    if name not in BENCHMARKS:
        raise InputError(f"unknown benchmark {name!r}; choose from {', '.join(BENCHMARKS)}")
    if args.iterations is not None:
        cfg.bo.n_iterations = args.iterations
    seeds = list(range(args.seeds)) if args.seeds is not None else [int(s) for s in cfg.benchmark.seeds]
    methods = args.methods.split(",") if args.methods else list(cfg.benchmark.methods)
    if args.prior_only and "bark_prior" not in methods:
        methods = ["bark_prior" if m == "bark" else m for m in methods]
    unknown = set(methods) - {"bark", "bark_prior", "random"}
    if unknown:
        raise InputError(f"unknown methods: {sorted(unknown)}")
    dims = args.dims if args.dims is not None else cfg.benchmark.dims
    out = _outdir(cfg)
    run = run_benchmark(name, cfg.bo_config(), seeds, methods, dims, cfg.benchmark.n_trees,
                        cfg.benchmark.full)
    summary = {"benchmark": name, "optimum": [run.optima[s] for s in seeds], "methods": {}}
    rows = []
    for method in methods:
        for seed, trace in run.traces[method].items():
            opt = run.optima[seed]
            for r in trace:
                reg = regret_value(r["best_so_far"], opt) if opt is not None else math.nan
                rows.append((method, seed) + tuple(r[c] for c in TRACE_COLUMNS) + (reg,))
        summary["methods"][method] = write_results(out / f"results_{method}.csv", out / f"results_{method}.json",
                                                   name, run.best_so_far(method), run.optima)
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(OPT_TRACE_COLUMNS)
        for r in rows:
            w.writerow(tuple(_num(v) for v in r))
    _write_json(out / "summary.json", summary)
    final = {m: (s["median"][-1] if s["median"] else None) for m, s in summary["methods"].items()}
    print(json.dumps({"benchmark": name, "final_median_regret": final}, sort_keys=True))
    return EXIT_OK


def _load_session(path) -> BoSession:
    try:
        return BoSession.load(path)
    except (OSError, json.JSONDecodeError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"cannot load session {path}: {exc}") from None


def cmd_init(args) -> int:
    cfg = load_config(args)
    if args.n_init is not None:
        cfg.bo.n_init = args.n_init
    space = read_space(args.space) if args.space else None
    if space is None:
        if cfg.space is None:
            raise InputError("init needs --space or a 'space' section in the config")
        space = FeatureSpace.from_dict(cfg.space)
    session = initialize(space, None, cfg.bo_config(args.prior_only), cfg.seed)
    session.save(args.session)
    print(json.dumps({"session": str(args.session), "n_init": len(session.design)}))
    return EXIT_OK


def cmd_ask(args) -> int:
    session = _load_session(args.session)
    x = session.ask()
    session.save(args.session)
    print(json.dumps(session._encode_point(x)))
    return EXIT_OK


def cmd_tell(args) -> int:
    session = _load_session(args.session)
    try:
        x = session._decode_point(json.loads(args.x))
        session.tell(x, float(args.y))
    except (json.JSONDecodeError, DomainError, ValueError, TypeError) as exc:
        raise InputError(f"rejected observation: {exc}") from None
    session.save(args.session)
    print(json.dumps({"n_obs": session.n_obs, "best": session.best()}))
    return EXIT_OK


def cmd_verify(args) -> int:
    check = verify.CHECKS[args.which]
    seed = args.seed if args.seed is not None else 0
    report = check(seed=seed)
    print(report.line())
    print(json.dumps({k: float(v) if isinstance(v, (float, np.floating)) else v
                      for k, v in report.details.items()}, sort_keys=True))
    return EXIT_OK if report.ok else EXIT_FAILURE


def cmd_sample_prior(args) -> int:
    """Forests drawn from the tree prior (directly, or by running the sampler with no data)."""
    cfg = load_config(args)
    space = read_space(args.space)
    out = _outdir(cfg)
    rows = []
    if args.mcmc:
        ds = empty_dataset(space)
        res = run_chains(ds.X, ds.y, space, cfg.sampler, cfg.seed, dataset=ds)
        forests = [s.forest for s in res.ensemble.states]
        noise = [s.noise_var for s in res.ensemble.states]
    else:
        rng = np.random.default_rng(cfg.seed)
        forests = [[sample_tree_prior(space, cfg.sampler.alpha, cfg.sampler.beta, rng, MAX_DEPTH)
                    for _ in range(cfg.sampler.m)] for _ in range(args.n_forests)]
        noise = []
    for i, forest in enumerate(forests):
        for t, tree in enumerate(forest):
            rows.append((i, t, tree.n_leaves, tree.depth, int(tree.n_leaves > 1)))
    with open(out / "prior_trees.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PRIOR_COLUMNS)
        w.writerows(rows)
    leaves = np.array([r[2] for r in rows], dtype=np.float64)
    summary = {"n_trees": len(rows), "root_split_frequency": float(np.mean([r[4] for r in rows])),
               "mean_leaves": float(leaves.mean()), "alpha": cfg.sampler.alpha, "beta": cfg.sampler.beta}
    if noise:
        summary["mean_noise_var"] = float(np.mean(noise))
    _write_json(out / "prior_summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_curves(args) -> int:
    cfg = load_config(args)
    out = _outdir(cfg)
    alpha = args.alpha if args.alpha is not None else cfg.sampler.alpha
    beta = args.beta if args.beta is not None else cfg.sampler.beta
    path = out / "curves.csv"
    analysis.write_curves(path, alpha, beta, args.points, args.variant)
    print(json.dumps({"path": str(path), "sup_gap": analysis.kernel_gap(alpha, beta, args.points, args.variant)}))
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON configuration document")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--threads", type=int, help="worker processes for the chains")
    p.add_argument("--output", metavar="DIR", help="output directory")
    p.add_argument("--time-limit", type=float, metavar="SECONDS", help="acquisition time limit")
    p.add_argument("--rel-gap", type=float, help="acquisition relative optimality gap")
    p.add_argument("--kappa", type=float, help="UCB exploration weight")
    p.add_argument("--prior-only", action="store_true", help="sample kernels from the prior")
    p.add_argument("--data-splits", action="store_true", help="draw split thresholds from the data")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bark", description="Bayesian optimization with forest-kernel GPs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit on a CSV dataset and score a held-out split")
    p.add_argument("dataset")
    p.add_argument("space")
    p.add_argument("--target", help="output column (default from config, else 'y')")
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("optimize", help="run a synthetic benchmark")
    p.add_argument("benchmark")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seeds", type=int, help="run seeds 0..N-1")
    p.add_argument("--dims", type=int)
    p.add_argument("--methods", help="comma-separated: bark, bark_prior, random")
    _common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("init", help="create an ask-tell session")
    p.add_argument("session")
    p.add_argument("--space", help="feature space JSON")
    p.add_argument("--n-init", type=int)
    _common(p)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("ask", help="propose the next point of a session")
    p.add_argument("session")
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("tell", help="record an observation in a session")
    p.add_argument("session")
    p.add_argument("x", help="point as a JSON list")
    p.add_argument("y", help="observed value")
    p.set_defaults(func=cmd_tell)

    p = sub.add_parser("verify", help="run a self-check")
    p.add_argument("which", choices=sorted(verify.CHECKS))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sample-prior", help="draw forests from the tree prior")
    p.add_argument("space")
    p.add_argument("--n-forests", type=int, default=100)
    p.add_argument("--mcmc", action="store_true", help="run the sampler with no observations instead")
    _common(p)
    p.set_defaults(func=cmd_sample_prior)

    p = sub.add_parser("curves", help="write chopping-model and Laplace kernel curves")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--points", type=int, default=101)
    p.add_argument("--variant", choices=("i", "d"), default="i")
    _common(p)
    p.set_defaults(func=cmd_curves)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("BARK_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
