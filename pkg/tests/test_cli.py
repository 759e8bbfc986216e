import csv
import json
from pathlib import Path

import numpy as np
import pytest

from bark.cli import EXIT_FAILURE, EXIT_INPUT, EXIT_OK, main
from bark.space import Categorical, Continuous, FeatureSpace, Integer

GOLDEN = json.loads((Path(__file__).parent / "golden" / "schemas.json").read_text())

FAST = {
    "sampler": {"m": 6, "chains": 2, "burn_in": 10, "samples_per_chain": 10, "thin": 5},
    "acq": {"time_limit": 5.0, "probe_samples": 16},
}


def _header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))[1:]


@pytest.fixture
def workdir(tmp_path):
    space = FeatureSpace((Continuous(0.0, 1.0, "a"), Integer(-2, 3, "b"), Categorical(3, "c", ("r", "g", "b"))))
    (tmp_path / "space.json").write_text(space.dumps())
    (tmp_path / "fast.json").write_text(json.dumps(FAST))
    rng = np.random.default_rng(0)
    with open(tmp_path / "data.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("a", "b", "c", "y"))
        for _ in range(30):
            a, b, c = rng.random(), int(rng.integers(-2, 4)), "rgb"[rng.integers(3)]
            w.writerow((a, b, c, np.sin(4 * a) + 0.2 * b + (c == "g") + 0.05 * rng.standard_normal()))
    return tmp_path


def test_fit_writes_schema_and_is_deterministic(workdir):
    args = ["fit", str(workdir / "data.csv"), str(workdir / "space.json"), "--config", str(workdir / "fast.json")]
    assert main(args + ["--output", str(workdir / "o1")]) == EXIT_OK
    assert main(args + ["--output", str(workdir / "o2")]) == EXIT_OK
    metrics = json.loads((workdir / "o1" / "metrics.json").read_text())
    assert sorted(metrics) == GOLDEN["metrics.json"]
    assert metrics["n_train"] + metrics["n_test"] == 30
    assert _header(workdir / "o1" / "diagnostics.csv") == GOLDEN["diagnostics.csv"]
    assert _header(workdir / "o1" / "autocorrelation.csv") == GOLDEN["autocorrelation.csv"]
    for name in ("metrics.json", "diagnostics.csv", "autocorrelation.csv"):
        assert (workdir / "o1" / name).read_bytes() == (workdir / "o2" / name).read_bytes()


def test_fit_input_errors(workdir):
    space = str(workdir / "space.json")
    base = ["--config", str(workdir / "fast.json"), "--output", str(workdir / "o")]
    assert main(["fit", str(workdir / "data.csv"), space, "--target", "zz"] + base) == EXIT_INPUT
    assert main(["fit", str(workdir / "missing.csv"), space] + base) == EXIT_INPUT
    (workdir / "bad.json").write_text(json.dumps({"sampler": {"m": 5, "colour": 1}}))
    assert main(["fit", str(workdir / "data.csv"), space, "--config", str(workdir / "bad.json")]) == EXIT_INPUT
    (workdir / "bad2.json").write_text(json.dumps({"sampler": {"thin": 500, "samples_per_chain": 10}}))
    assert main(["fit", str(workdir / "data.csv"), space, "--config", str(workdir / "bad2.json")]) == EXIT_INPUT
    assert main(["fit"]) == EXIT_INPUT
    assert main(["nonsense"]) == EXIT_INPUT


def test_optimize_outputs(workdir, capsys):
    out = workdir / "opt"
    code = main(["optimize", "TreeFunction", "--config", str(workdir / "fast.json"), "--iterations", "2",
                 "--seeds", "2", "--dims", "2", "--methods", "bark,random", "--output", str(out)])
    assert code == EXIT_OK
    assert _header(out / "trace.csv") == GOLDEN["trace.csv"]
    rows = _rows(out / "trace.csv")
    n_init = 4
    assert len(rows) == 2 * 2 * (n_init + 2)
    assert all(float(r[-1]) >= -1e-12 for r in rows)
    for method in ("bark", "random"):
        assert _header(out / f"results_{method}.csv") == GOLDEN["results.csv"]
        assert sorted(json.loads((out / f"results_{method}.json").read_text())) == GOLDEN["results.json"]
    summary = json.loads((out / "summary.json").read_text())
    assert sorted(summary) == GOLDEN["summary.json"]
    assert set(summary["methods"]) == {"bark", "random"}
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert set(printed["final_median_regret"]) == {"bark", "random"}


def test_optimize_input_errors(workdir):
    assert main(["optimize", "Nope", "--output", str(workdir / "x")]) == EXIT_INPUT
    assert main(["optimize", "TreeFunction", "--methods", "magic", "--output", str(workdir / "x")]) == EXIT_INPUT
    assert main(["optimize", "TreeFunction", "--rel-gap", "2", "--output", str(workdir / "x")]) == EXIT_INPUT


def test_ask_tell_loop(workdir, capsys):
    session = str(workdir / "session.json")
    cfg = ["--config", str(workdir / "fast.json")]
    assert main(["init", session, "--space", str(workdir / "space.json"), "--n-init", "3"] + cfg) == EXIT_OK
    capsys.readouterr()
    for i in range(4):
        assert main(["ask", session]) == EXIT_OK
        x = capsys.readouterr().out.strip()
        assert main(["ask", session]) == EXIT_OK
        assert capsys.readouterr().out.strip() == x
        assert main(["tell", session, x, str(float(i))]) == EXIT_OK
        state = json.loads(capsys.readouterr().out)
        assert state["n_obs"] == i + 1 and state["best"] == 0.0
    assert isinstance(json.loads(x)[2], str)
    assert main(["tell", session, x, "nan"]) == EXIT_INPUT
    assert main(["tell", session, "[5.0, 0, \"r\"]", "1.0"]) == EXIT_INPUT
    assert main(["tell", session, "not json", "1.0"]) == EXIT_INPUT
    (workdir / "corrupt.json").write_text("{")
    assert main(["ask", str(workdir / "corrupt.json")]) == EXIT_INPUT
    assert main(["init", str(workdir / "s2.json")]) == EXIT_INPUT


def test_verify_exit_codes(capsys):
    assert main(["verify", "chopping"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("PASS chopping")
    assert main(["verify", "unknown-check"]) == EXIT_INPUT


def test_verify_failure_maps_to_exit_one(monkeypatch):
    from bark import verify

    monkeypatch.setitem(verify.CHECKS, "chopping", lambda seed: verify.CheckReport("chopping", False))
    assert main(["verify", "chopping"]) == EXIT_FAILURE


def test_sample_prior(workdir, capsys):
    out = workdir / "prior"
    assert main(["sample-prior", str(workdir / "space.json"), "--n-forests", "20", "--output", str(out)]) == EXIT_OK
    assert _header(out / "prior_trees.csv") == GOLDEN["prior_trees.csv"]
    assert len(_rows(out / "prior_trees.csv")) == 20 * 50
    summary = json.loads((out / "prior_summary.json").read_text())
    assert 0.85 < summary["root_split_frequency"] <= 1.0
    out2 = workdir / "prior_mcmc"
    assert main(["sample-prior", str(workdir / "space.json"), "--mcmc", "--config", str(workdir / "fast.json"),
                 "--output", str(out2)]) == EXIT_OK
    assert "mean_noise_var" in json.loads((out2 / "prior_summary.json").read_text())


def test_curves(workdir, capsys):
    assert main(["curves", "--points", "21", "--output", str(workdir)]) == EXIT_OK
    assert _header(workdir / "curves.csv") == GOLDEN["curves.csv"]
    assert len(_rows(workdir / "curves.csv")) == 21
    assert json.loads(capsys.readouterr().out)["sup_gap"] > 0.05


def test_acq_result_schema():
    from bark.acquisition import AcqResult

    res = AcqResult((0.5, 1, 2), 1.0, 0.0, 3, 0.01, "optimal_within_gap")
    assert sorted(json.loads(res.dumps())) == GOLDEN["acq_result"]
