import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hermit.penalty import PenaltyConfig, PenaltyKind, prox, value

finite = st.floats(-10, 10, allow_nan=False)


def test_parse_and_config():
    assert PenaltyKind.parse("lasso") is PenaltyKind.ENTRYWISE
    assert PenaltyKind.parse("group") is PenaltyKind.ROWGROUP
    with pytest.raises(ValueError):
        PenaltyConfig("entrywise", -1.0)
    cfg = PenaltyConfig.from_dict({"kind": "group", "lambda": 0.5, "gamma": 0.5})
    assert cfg.kind is PenaltyKind.ROWGROUP and cfg.lam == 0.5 and cfg.gamma == 0.5
    assert PenaltyConfig.from_dict(cfg.to_dict()) == cfg


def test_value_examples():
    beta = np.array([[1.0, -2.0]])[:, :, None]
    assert value(beta, [1.0], PenaltyConfig("entrywise", 0.0)) == 0.0
    assert value(beta, [1.0], PenaltyConfig("entrywise", 1.0, gamma=0.0)) == 3.0


def test_value_loop_oracle():
    rng = np.random.default_rng(0)
    beta = rng.normal(size=(4, 3, 2))
    pi = np.array([0.3, 0.7])
    expect = 0.0
    for r in range(2):
        s = 0.0
        for a in range(4):
            s += sum(beta[a, j, r] ** 2 for j in range(3)) ** 0.5
        expect += pi[r] * s
    assert value(beta, pi, PenaltyConfig("group", 0.7, gamma=1.0)) == pytest.approx(0.7 * expect, abs=1e-12)
    # first row exempt
    rest = value(beta[1:], pi, PenaltyConfig("group", 0.7))
    assert value(beta, pi, PenaltyConfig("group", 0.7), exempt_first_row=True) == pytest.approx(rest, abs=1e-12)


def test_value_zero_iff():
    pi = [0.5, 0.5]
    assert value(np.zeros((2, 2, 2)), pi, PenaltyConfig("lasso", 1.0)) == 0.0
    assert value(np.ones((2, 2, 2)), pi, PenaltyConfig("lasso", 1.0)) > 0.0


def test_prox_examples():
    assert prox(np.array([2.0]), 0.5, "entrywise")[0] == 1.5
    assert prox(np.array([-0.3]), 0.5, "entrywise")[0] == 0.0
    np.testing.assert_allclose(prox(np.array([[3.0, 4.0]]), 2.5, "rowgroup"), [[1.5, 2.0]], atol=1e-15)
    with pytest.raises(ValueError):
        prox(np.ones(2), -1.0, "entrywise")


@given(arrays(float, (4, 3), elements=finite), st.sampled_from(list(PenaltyKind)))
def test_prox_zero_threshold_is_identity(z, kind):
    assert np.array_equal(prox(z, 0.0, kind), z)


def test_prox_non_expansive():
    rng = np.random.default_rng(1)
    for i in range(1000):
        kind = (PenaltyKind.ENTRYWISE, PenaltyKind.ROWGROUP)[i % 2]
        a, b = rng.normal(0, 3, (2, 4, 3))
        t = rng.uniform(0, 3)
        assert np.linalg.norm(prox(a, t, kind) - prox(b, t, kind)) <= np.linalg.norm(a - b) + 1e-12


@given(arrays(float, (5, 3), elements=finite), st.floats(0, 10))
def test_rowgroup_zeroes_small_rows(z, t):
    out = prox(z, t, "rowgroup")
    small = np.linalg.norm(z, axis=1) <= t
    assert np.all(out[small] == 0)
    assert np.all(np.linalg.norm(out[~small], axis=1) > 0)


@given(arrays(float, (3, 2), elements=finite), st.floats(0, 5))
def test_prox_is_minimizer(z, t):
    # the prox point beats small perturbations of itself
    rng = np.random.default_rng(0)
    for kind in PenaltyKind:
        def obj(b):
            pen = np.abs(b).sum() if kind is PenaltyKind.ENTRYWISE else np.linalg.norm(b, axis=1).sum()
            return 0.5 * ((b - z) ** 2).sum() + t * pen
        p = prox(z, t, kind)
        for _ in range(10):
            assert obj(p) <= obj(p + 1e-3 * rng.normal(size=z.shape)) + 1e-12
