import json

import numpy as np
import pytest

from hermit import datagen as dg
from hermit import io
from hermit.cli import main
from hermit.cli.harness import (DEFAULT_KS, DEFAULT_LAMBDAS, Grid, aggregate, cell_seed, hide_targets,
                                impute_benchmark, n_keep, recovered_groups, replicate, tune)
from hermit.model import Dataset, MixtureModel, impute
from hermit.penalty import PenaltyConfig
from hermit.solver import FitConfig, fit


@pytest.fixture(scope="module")
def simdir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    spec = dg.SynthSpec(n=120, d=6, m_gaussian=2, m_bernoulli=3, m_poisson=1, k_true=2, s=2, missing_rate=0.1,
                        seed=3)
    (out / "spec.json").write_text(json.dumps(spec.to_dict()))
    assert main(["simulate", "--spec", str(out / "spec.json"), "--sizes", "120,120,120", "--out", str(out)]) == 0
    return out


def _run(*args):
    assert main([str(a) for a in args]) == 0


def test_defaults():
    assert len(DEFAULT_LAMBDAS) == 30 and DEFAULT_LAMBDAS[0] == pytest.approx(1e-6)
    assert DEFAULT_LAMBDAS[-1] == pytest.approx(1e3) and list(DEFAULT_KS) == list(range(1, 11))


def test_simulate_outputs(simdir):
    for name in ("train", "valid", "test"):
        assert (simdir / f"{name}.csv").exists() and (simdir / f"{name}_truth.json").exists()
    data = io.load_dataset(simdir / "train.csv", simdir / "tasks.json")
    assert data.n == 120 and data.m == 6


def test_fit_predict_impute_evaluate(simdir, tmp_path):
    tasks = simdir / "tasks.json"
    _run("fit", "--train", simdir / "train.csv", "--tasks", tasks, "--k", 2, "--penalty", "group",
         "--lambda", 0.01, "--t-out", 10, "--out", tmp_path / "fit")
    model, alpha = io.load_model(tmp_path / "fit" / "model.json")
    assert model.k == 2 and alpha is None
    trace = io.read_matrix_csv(tmp_path / "fit" / "objective_trace.csv")[:, 1]
    assert np.all(np.diff(trace) <= 1e-8)
    _run("impute", "--model", tmp_path / "fit" / "model.json", "--data", simdir / "test.csv", "--tasks", tasks,
         "--out", tmp_path / "imp")
    filled = io.read_matrix_csv(tmp_path / "imp" / "imputed.csv")
    test = io.load_dataset(simdir / "test.csv", tasks)
    np.testing.assert_allclose(filled, impute(model, test))
    _run("predict", "--model", tmp_path / "fit" / "model.json", "--data", simdir / "test.csv", "--tasks", tasks,
         "--out", tmp_path / "pred")
    _run("evaluate", "--pred", tmp_path / "pred" / "predictions.csv", "--truth", simdir / "test.csv",
         "--tasks", tasks, "--out", tmp_path / "ev")
    a = json.loads((tmp_path / "pred" / "metrics.json").read_text())
    b = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert a == b and "nmse" in a


def test_fit_moe_and_robust(simdir, tmp_path):
    tasks = simdir / "tasks.json"
    _run("fit", "--moe", "--train", simdir / "train.csv", "--tasks", tasks, "--t-out", 5, "--out", tmp_path / "m")
    assert io.load_model(tmp_path / "m" / "model.json")[1].shape == (6, 2)
    _run("fit", "--robust", "--train", simdir / "train.csv", "--tasks", tasks, "--t-out", 5, "--out", tmp_path / "r")
    assert io.read_matrix_csv(tmp_path / "r" / "outlier_scores.csv").shape == (120, 2)
    _run("detect-outliers", "--train", simdir / "train.csv", "--tasks", tasks, "--p-clean", 0.05, "--t-out", 5,
         "--out", tmp_path / "d")
    assert io.read_matrix_csv(tmp_path / "d" / "removed.csv").shape[0] == 6
    assert io.read_matrix_csv(tmp_path / "d" / "kept.csv").shape[0] == 114


def test_tune_and_task_commands(simdir, tmp_path):
    tasks = simdir / "tasks.json"
    _run("tune", "--train", simdir / "train.csv", "--valid", simdir / "valid.csv", "--test", simdir / "test.csv",
         "--tasks", tasks, "--lambdas", "0.01,0.1", "--ks", "1,2", "--t-out", 10, "--out", tmp_path / "t")
    rep = json.loads((tmp_path / "t" / "tune.json").read_text())
    assert len(rep["grid"]) == 4 and "aauc" in json.loads((tmp_path / "t" / "metrics.json").read_text())
    _run("score-tasks", "--model", tmp_path / "t" / "model.json", "--data", simdir / "train.csv", "--tasks", tasks,
         "--out", tmp_path / "s")
    assert io.read_matrix_csv(tmp_path / "s" / "task_scores.csv").shape == (6, 4)
    _run("cluster-tasks", "--train", simdir / "train.csv", "--tasks", tasks, "--per-task-k", 2, "--groups", 2,
         "--t-out", 5, "--out", tmp_path / "c")
    assert io.read_matrix_csv(tmp_path / "c" / "task_clusters.csv").shape == (6, 4)


def test_replicate_command(tmp_path):
    _run("replicate", "--protocol", "table2-scores", "--R", 5, "--options",
         json.dumps({"n": 150, "k": 2}), "--out", tmp_path)
    res = json.loads((tmp_path / "table2-scores.json").read_text())
    assert res["summary"]["mix"]["kept"] == 1 and len(res["runs"]) == 5


def test_unknown_protocol():
    with pytest.raises(KeyError):
        replicate("nope", R=5)
    with pytest.raises(ValueError):
        replicate("table1", R=4)


def test_keep_arithmetic_and_aggregate_order():
    assert n_keep(5, 0.2) == 1 and n_keep(20, 0.2) == 4 and n_keep(3, 0.01) == 1
    runs = [{"methods": {"a": {"valid": v, "score": s}}} for v, s in [(1.0, 10.0), (3.0, 30.0), (2.0, 20.0),
                                                                        (0.0, 0.0), (-1.0, 5.0)]]
    agg = aggregate(runs, 0.2)["a"]
    assert agg["kept"] == 1 and agg["metrics"]["score"]["mean"] == 30.0
    assert aggregate(runs, 1.0)["a"]["metrics"]["score"]["mean"] == pytest.approx(13.0)
    fwd, rev = aggregate(runs, 0.4)["a"]["metrics"], aggregate(runs[::-1], 0.4)["a"]["metrics"]
    assert fwd["score"]["mean"] == rev["score"]["mean"] == 25.0


def test_tune_tie_break_prefers_simple_models():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(80, 4))
    data = Dataset(X, rng.normal(size=(80, 2)), ["gaussian", "gaussian"])
    valid = Dataset(rng.normal(size=(80, 4)), rng.normal(size=(80, 2)), ["gaussian", "gaussian"])
    res = tune(data, valid, Grid(lambdas=(1e3,), ks=(1, 2, 3)), FitConfig(t_out=5), seed=1)
    lls = [row["valid_loglik"] for row in res.table]
    assert np.allclose(lls, lls[0], rtol=1e-9)
    assert res.cell["k"] == 1 and np.all(res.model.beta == 0)


def test_tune_single_cell_and_determinism():
    spec = dg.SynthSpec(n=100, d=5, m_gaussian=2, m_bernoulli=2, m_poisson=0, k_true=2, s=2, seed=4)
    (tr, _), (va, _) = dg.generate_splits(spec, [100, 100])
    a = tune(tr, va, Grid(lambdas=(1e-2,), ks=(2,)), FitConfig(t_out=10), seed=3)
    b = tune(tr, va, Grid(lambdas=(1e-2,), ks=(2,)), FitConfig(t_out=10), seed=3)
    direct, _, _ = fit(tr, PenaltyConfig("lasso", 1e-2), FitConfig(k=2, t_out=10, seed=cell_seed(3, 0)))
    assert np.array_equal(a.model.beta, b.model.beta)
    np.testing.assert_allclose(a.model.beta, direct.beta)


def test_impute_benchmark_examples():
    spec = dg.SynthSpec(n=100, d=5, m_gaussian=2, m_bernoulli=2, m_poisson=0, k_true=2, s=2, seed=5)
    data, _ = dg.generate(spec)
    model = MixtureModel(np.zeros((5, 4, 1)), [1.0], data.tasks)
    assert impute_benchmark(model, data, 0.0) == {}
    hide = hide_targets(data, 0.5, seed=1)
    assert (data.observed & ~hide).any(axis=1).all() and not (hide & ~data.observed).any()
    out = impute_benchmark(model, data, 0.5, seed=1)
    assert out["n_hidden"] == int(hide.sum()) and out["aauc"] == 0.5


def test_recovered_groups():
    groups = np.repeat([0, 1, 2, 3], 2)
    assert recovered_groups([0, 1, 2, 2, 3, 3, 1, 1], groups) == [True, True, True]
    assert recovered_groups([0, 0, 2, 2, 2, 3, 1, 1], groups) == [False, False, True]
