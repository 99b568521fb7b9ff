import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hermit import datagen as dg
from hermit.expfamily import GAUSSIAN
from hermit.model import Dataset
from hermit.penalty import PenaltyConfig
from hermit.robust import RobustConfig, fit_robust, outlier_scores, removal_order, two_stage, zeta_prox
from hermit.solver import FitConfig, fit


def test_config_validation():
    with pytest.raises(ValueError):
        RobustConfig(lambda2=-1.0)
    with pytest.raises(ValueError):
        RobustConfig(lambda2=1.0, p_clean=1.0)


def test_outlier_scores():
    assert np.all(outlier_scores(np.zeros((4, 2, 3))) == 0)
    z = np.zeros((3, 2, 2))
    z[0, 0, 0] = 3.0
    assert outlier_scores(z).tolist() == [3.0, 0.0, 0.0]
    rng = np.random.default_rng(0)
    z = rng.normal(size=(5, 3, 2))
    for i, s in enumerate(outlier_scores(z)):
        tot = 0.0
        for j in range(3):
            for r in range(2):
                tot += z[i, j, r] ** 2
        assert s == pytest.approx(tot ** 0.5, abs=1e-14)


@given(arrays(float, (6, 2, 3), elements=st.floats(-5, 5)), st.floats(0, 8))
def test_zeta_prox_zeroes_small_slices(z, t):
    out = zeta_prox(z, t)
    small = outlier_scores(z) <= t
    assert np.all(out[small] == 0)
    assert np.all(outlier_scores(out)[~small] > 0)


def test_removal_order_ties_by_index():
    assert removal_order([1.0, 3.0, 3.0, 0.0]).tolist() == [1, 2, 0, 3]


def _small(seed=0, n=120):
    spec = dg.SynthSpec(n=n, d=5, m_gaussian=2, m_bernoulli=2, m_poisson=1, k_true=2, s=2, seed=seed)
    return dg.generate(spec)


def test_huge_lambda2_equals_plain_fit():
    data, _ = _small()
    pen = PenaltyConfig("lasso", 1e-2)
    cfg = FitConfig(k=2, seed=3, t_out=30)
    rm, _, rrep = fit_robust(data, pen, RobustConfig(lambda2=1e6, base=cfg))
    pm, _, prep = fit(data, pen, cfg)
    assert np.all(rm.zeta == 0)
    np.testing.assert_allclose(rm.beta, pm.beta, atol=1e-6)
    assert rrep.objective == pytest.approx(prep.objective, abs=1e-9)


def test_shifted_sample_gets_largest_score():
    rng = np.random.default_rng(1)
    n = 60
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    y = X @ np.array([1.0, 2.0]) + rng.normal(size=n)
    y[17] += 100.0
    model, _, rep = fit_robust(Dataset(X, y[:, None], [GAUSSIAN]), PenaltyConfig("lasso", 0.0),
                               RobustConfig(lambda2=0.05, base=FitConfig(k=1)))
    assert int(np.argmax(outlier_scores(model.zeta))) == 17
    assert np.all(np.diff(rep.objective_trace) <= 1e-8)


def test_contaminated_rows_rank_highest():
    spec = dg.diff_k(2, seed=4, n=1000)
    (tr, _), = dg.generate_splits(spec, [spec.n])
    bad, idx = dg.contaminate(tr, 0.02, seed=5)
    model, _, _ = fit_robust(bad, PenaltyConfig("lasso", 1e-2),
                             RobustConfig(lambda2=20.0 / bad.n, base=FitConfig(k=2, seed=0)))
    top = removal_order(outlier_scores(model.zeta))[:idx.size]
    assert set(top.tolist()) == set(idx.tolist())


def test_two_stage_p_zero_refits_everything():
    data, _ = _small(seed=2)
    pen = PenaltyConfig("lasso", 1e-2)
    cfg = FitConfig(k=2, seed=1, t_out=20)
    model, kept, rep = two_stage(data, pen, RobustConfig(lambda2=0.1, base=cfg, p_clean=0.0))
    assert kept.tolist() == list(range(data.n)) and rep.removed.size == 0
    plain, _, prep = fit(data, pen, cfg)
    np.testing.assert_allclose(model.beta, plain.beta)
    assert np.all(np.diff(rep.stage1.objective_trace) <= 1e-8)


def test_two_stage_removal_count():
    data, _ = _small(seed=3, n=101)
    model, kept, rep = two_stage(data, PenaltyConfig("lasso", 1e-2),
                                 RobustConfig(lambda2=0.1, base=FitConfig(k=2, t_out=10), p_clean=0.05))
    assert rep.removed.size == 6 and kept.size == 95
    assert not set(kept.tolist()) & set(rep.removed.tolist())
