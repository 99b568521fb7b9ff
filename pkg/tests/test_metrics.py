import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hermit.expfamily import BERNOULLI, GAUSSIAN, POISSON
from hermit.metrics import aauc, feature_auc, match_components, nmi, nmse, onehot, rank_auc


def _contingency_nmi(a, b):
    n = len(a)
    ca, cb, cab = Counter(a), Counter(b), Counter(zip(a, b))
    mi = sum(c / n * math.log(c * n / (ca[x] * cb[y])) for (x, y), c in cab.items())
    ha = -sum(c / n * math.log(c / n) for c in ca.values())
    hb = -sum(c / n * math.log(c / n) for c in cb.values())
    return mi / math.sqrt(ha * hb)


def test_nmi_examples():
    lab = np.array([0, 1, 1, 0, 2])
    assert nmi(onehot(lab), onehot(lab)) == pytest.approx(1.0, abs=1e-9)
    assert nmi(onehot(lab), np.full((5, 2), 0.5)) == 0.0
    with pytest.raises(ValueError):
        nmi(np.array([[0.7, 0.7]]), np.array([[1.0, 0.0]]))


def test_nmi_contingency_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        a, b = rng.integers(0, 3, 200), rng.integers(0, 3, 200)
        assert nmi(onehot(a, 3), onehot(b, 3)) == pytest.approx(_contingency_nmi(a.tolist(), b.tolist()), abs=1e-9)


def test_nmi_independent_soft_posteriors_near_zero():
    rng = np.random.default_rng(1)
    P, Q = rng.dirichlet(np.ones(3), 2000), rng.dirichlet(np.ones(3), 2000)
    assert nmi(P, Q) < 0.05


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_nmi_properties(seed):
    rng = np.random.default_rng(seed)
    P, Q = rng.dirichlet(np.ones(3) * 0.3, 40), rng.dirichlet(np.ones(4) * 0.3, 40)
    v = nmi(P, Q)
    assert 0 <= v <= 1 + 1e-9
    assert abs(v - nmi(Q, P)) < 1e-12
    assert nmi(P[:, [2, 0, 1]], Q[:, ::-1]) == pytest.approx(v, abs=1e-12)


def test_rank_auc_examples():
    assert rank_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert rank_auc([1, 1, 1, 1], [0, 1, 0, 1]) == 0.5
    assert math.isnan(rank_auc([1, 2], [1, 1]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_rank_auc_pair_oracle(seed):
    rng = np.random.default_rng(seed)
    s = np.round(rng.normal(size=50), 1)
    y = rng.integers(0, 2, 50)
    if y.min() == y.max():
        return
    pairs = [1.0 if p > q else 0.5 if p == q else 0.0 for p, q in itertools.product(s[y == 1], s[y == 0])]
    assert rank_auc(s, y) == sum(pairs) / len(pairs)
    u = rng.permutation(50).astype(float)
    assert rank_auc(-u, y) == pytest.approx(1 - rank_auc(u, y), abs=1e-12)


def test_nmse_examples():
    rng = np.random.default_rng(2)
    truth = rng.normal(size=(20, 2))
    mask = np.ones((20, 2), bool)
    assert nmse(truth, truth, mask, [GAUSSIAN, GAUSSIAN]) == 0.0
    pred = np.tile(truth.mean(axis=0), (20, 1))
    assert nmse(pred, truth, mask, [GAUSSIAN, GAUSSIAN]) == pytest.approx(1.0, abs=1e-12)


def test_nmse_loop_oracle_and_kinds():
    rng = np.random.default_rng(3)
    truth = np.column_stack([rng.normal(size=30), rng.poisson(4, 30)])
    pred = truth + rng.normal(size=truth.shape)
    mask = rng.random(truth.shape) < 0.8
    fams = [GAUSSIAN, POISSON]
    vals = []
    for j in range(2):
        t = [truth[i, j] for i in range(30) if mask[i, j]]
        p = [max(pred[i, j], 0.0) if j == 1 else pred[i, j] for i in range(30) if mask[i, j]]
        if j == 1:
            t, p = [math.log1p(v) for v in t], [math.log1p(v) for v in p]
        mu = sum(t) / len(t)
        vals.append(sum((a - b) ** 2 for a, b in zip(p, t)) / len(t) / (sum((v - mu) ** 2 for v in t) / len(t)))
    assert nmse(pred, truth, mask, fams) == pytest.approx(sum(vals) / 2, abs=1e-12)
    assert nmse(pred, truth, mask, fams, kinds={GAUSSIAN.kind}) == pytest.approx(vals[0], abs=1e-12)


def test_nmse_skips_constant_task():
    truth = np.column_stack([np.ones(5), np.arange(5.0)])
    assert nmse(truth + 1, truth, np.ones((5, 2), bool), [GAUSSIAN, GAUSSIAN]) == pytest.approx(0.5)


def test_aauc():
    truth = np.array([[0, 1.0], [1, 2.0], [0, 3.0], [1, 4.0]])
    pred = np.array([[0.1, 0], [0.9, 0], [0.2, 0], [0.8, 0]])
    assert aauc(pred, truth, np.ones((4, 2), bool), [BERNOULLI, GAUSSIAN]) == 1.0


def _brute_force(H, T):
    k = H.shape[-1]
    best = None
    for perm in itertools.permutations(range(k)):
        c = sum(np.sqrt(((H[..., perm[r]] - T[..., r]) ** 2).sum()) for r in range(k))
        if best is None or c < best[0] - 1e-12:
            best = (c, perm)
    return list(best[1])


def test_match_components():
    rng = np.random.default_rng(4)
    T = rng.normal(size=(4, 3, 3))
    assert match_components(T, T).tolist() == [0, 1, 2]
    assert match_components(T[..., [1, 0, 2]], T).tolist() == [1, 0, 2]
    for _ in range(10):
        H = T[..., rng.permutation(3)] + 0.5 * rng.normal(size=T.shape)
        assert match_components(H, T).tolist() == _brute_force(H, T)
    with pytest.raises(ValueError):
        match_components(np.zeros((1, 1, 9)), np.zeros((1, 1, 9)))


def test_feature_auc_after_matching():
    T = np.zeros((5, 2, 2))
    T[0] = 1.0
    T[1, :, 0] = 2.0
    T[3, :, 1] = -2.0
    H = T[..., ::-1] * 0.9
    assert feature_auc(H, T, exclude_first_row=True) == 1.0
