import numpy as np
import pytest

from hermit import datagen as dg
from hermit.expfamily import TaskTable
from hermit.model import MixtureModel, component_loglik, natural_params
from hermit.moe import GatingModel, fit_moe, gate_loss, gating_probs, moe_log_likelihood, predict_moe
from hermit.penalty import PenaltyConfig
from hermit.solver import FitConfig, fit


def test_gating_examples():
    X = np.random.default_rng(0).normal(size=(5, 3))
    np.testing.assert_allclose(gating_probs(np.zeros((3, 4)), X), 0.25)
    alpha = np.array([[1.0, 1.0], [2.0, 2.0], [0.0, 0.0]])
    np.testing.assert_allclose(gating_probs(alpha, X), 0.5)
    a = np.random.default_rng(1).normal(size=(3, 4))
    shift = a + np.array([[0.3], [-1.0], [2.0]])
    np.testing.assert_allclose(gating_probs(a, X), gating_probs(shift, X), atol=1e-12)
    with pytest.raises(ValueError):
        GatingModel(np.array([[np.nan]]))


def test_gate_gradient_finite_differences():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(30, 4))
    rho = rng.dirichlet(np.ones(3), size=30)
    for _ in range(20):
        a = rng.normal(size=(4, 3))
        v = rng.normal(size=a.shape)
        h = 1e-5
        fd = (gate_loss(a + h * v, X, rho)[0] - gate_loss(a - h * v, X, rho)[0]) / (2 * h)
        an = float((gate_loss(a, X, rho)[1] * v).sum())
        assert abs(fd - an) <= 1e-5 * max(abs(an), 1e-8)


def test_moe_likelihood_cross_check():
    spec = dg.diff_k(3, seed=1, n=60, d=6)
    (data, _), = dg.generate_splits(spec, [60])
    rng = np.random.default_rng(3)
    model = MixtureModel(rng.normal(0, 0.3, (6, data.m, 3)), [1 / 3] * 3, data.tasks)
    alpha = rng.normal(size=(6, 3))
    G = gating_probs(alpha, data.X)
    comp = component_loglik(model, data)
    expect = sum(np.log(sum(G[i, r] * np.exp(comp[i, r]) for r in range(3))) for i in range(data.n))
    assert moe_log_likelihood(model, GatingModel(alpha), data) == pytest.approx(expect, abs=1e-9)


def test_predict_moe_oracle_and_examples():
    rng = np.random.default_rng(4)
    fams = ["gaussian", "bernoulli", "poisson"]
    X = rng.normal(size=(7, 3))
    model = MixtureModel(rng.normal(0, 0.5, (3, 3, 2)), [0.5, 0.5], fams)
    alpha = rng.normal(size=(3, 2))
    pred = predict_moe(model, alpha, X)
    G = gating_probs(alpha, X)
    mu = TaskTable(model.families).mean(natural_params(model, X))
    for i in range(7):
        for j in range(3):
            assert pred[i, j] == pytest.approx(G[i, 0] * mu[i, j, 0] + G[i, 1] * mu[i, j, 1], abs=1e-10)
    one = MixtureModel(model.beta[:, :, :1], [1.0], fams)
    np.testing.assert_allclose(predict_moe(one, alpha[:, :1], X),
                               TaskTable(one.families).mean(natural_params(one, X))[:, :, 0])
    twins = MixtureModel(np.repeat(model.beta[:, :, :1], 2, axis=2), [0.5, 0.5], fams)
    np.testing.assert_allclose(predict_moe(twins, alpha, X), predict_moe(twins, -alpha, X), atol=1e-12)


def test_frozen_gate_reduces_to_plain_fit():
    spec = dg.SynthSpec(n=120, d=5, m_gaussian=2, m_bernoulli=2, m_poisson=0, k_true=2, s=2, seed=5)
    data, _ = dg.generate(spec)
    cfg = FitConfig(k=2, seed=1, t_out=25)
    pen = PenaltyConfig("lasso", 1e-2, gamma=0.0)
    mm, gate, mrep = fit_moe(data, pen, 0.0, cfg, freeze_alpha=True)
    pm, _, prep = fit(data, pen, FitConfig(**{**cfg.to_dict(), "update_pi": False}))
    assert np.all(gate.alpha == 0)
    np.testing.assert_allclose(mm.beta, pm.beta, atol=1e-12)
    np.testing.assert_allclose(mrep.objective_trace, prep.objective_trace, atol=1e-12)


def test_fit_moe_monotone_and_valid():
    spec = dg.diff_k(3, seed=6, n=300, d=8)
    (data, truth), = dg.generate_splits(spec, [300], moe_rows=3)
    model, gate, rep = fit_moe(data, PenaltyConfig("lasso", 1e-2), 1e-2, FitConfig(k=3, seed=0, t_out=30))
    assert np.all(np.diff(rep.objective_trace) <= 1e-8)
    assert abs(model.pi.sum() - 1) < 1e-10
    np.testing.assert_allclose(model.pi, gating_probs(gate, data.X).mean(axis=0), atol=1e-7)
    assert np.allclose(rep.rho.sum(axis=1), 1)
