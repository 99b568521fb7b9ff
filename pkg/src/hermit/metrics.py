"""Evaluation metrics: soft NMI, rank AUC, normalized MSE and component matching."""
from __future__ import annotations

import itertools
import logging
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .expfamily import Family, Kind

log = logging.getLogger(__name__)


def _check_simplex(P, name):
    P = np.asarray(P, dtype=float)
    if P.ndim != 2:
        raise ValueError(f"{name} must be an (n, k) matrix")
    if np.any(P < -1e-12) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError(f"rows of {name} must lie on the probability simplex")
    return np.clip(P, 0.0, None)


def _mutual_info(joint, pa, pb) -> float:
    outer = np.outer(pa, pb)
    nz = joint > 0
    # mutual information is non-negative; clamp rounding noise
    return max(float(np.sum(joint[nz] * np.log(joint[nz] / outer[nz]))), 0.0)


def nmi(P, Q) -> float:
    """Normalized mutual information between two soft partitions of the same samples.

    Marginals are column means and the joint is ``P.T @ Q / n``; ``I(P, Q) / sqrt(I(P, P) I(Q, Q))``.
    Returns 0 when either partition carries no information.
    """
    P = _check_simplex(P, "P")
    Q = _check_simplex(Q, "Q")
    if P.shape[0] != Q.shape[0]:
        raise ValueError("P and Q must have the same number of rows")
    n = P.shape[0]
    pa, pb = P.mean(axis=0), Q.mean(axis=0)
    ipq = _mutual_info(P.T @ Q / n, pa, pb)
    ipp = _mutual_info(P.T @ P / n, pa, pa)
    iqq = _mutual_info(Q.T @ Q / n, pb, pb)
    denom = np.sqrt(ipp * iqq)
    if denom <= 1e-15:
        return 0.0
    return float(min(ipq / denom, 1.0 + 1e-12))


def onehot(labels, k: Optional[int] = None) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    k = labels.max() + 1 if k is None else k
    return np.eye(k)[labels]


def rank_auc(scores, labels) -> float:
    """Mann-Whitney estimate of P(score+ > score-) with ties counted as one half.

    Returns NaN if only one class is present.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _transform(y, fam: Family):
    return np.log1p(y) if fam.kind is Kind.POISSON else y


def nmse(pred, truth, mask, tasks: Sequence[Family], kinds=None) -> float:
    """Mean over tasks of MSE / population variance on the masked entries.

    Poisson tasks are compared on the ``log(1 + y)`` scale.  ``kinds`` restricts the
    evaluated tasks to the given family kinds.  Tasks with fewer than two masked entries
    or zero variance are skipped.
    """
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    vals = []
    for j, fam in enumerate(tasks):
        if kinds is not None and fam.kind not in kinds:
            continue
        sel = mask[:, j]
        if sel.sum() < 2:
            continue
        t = _transform(truth[sel, j], fam)
        p = _transform(np.maximum(pred[sel, j], 0.0) if fam.kind is Kind.POISSON else pred[sel, j], fam)
        var = t.var()
        if var <= 0:
            log.warning("task %d has zero variance on the evaluated entries; skipped", j)
            continue
        vals.append(np.mean((p - t) ** 2) / var)
    return float(np.mean(vals)) if vals else float("nan")


def aauc(pred, truth, mask, tasks: Sequence[Family]) -> float:
    """Average rank AUC over Bernoulli tasks (tasks with a single class are skipped)."""
    mask = np.asarray(mask, dtype=bool)
    vals = []
    for j, fam in enumerate(tasks):
        if fam.kind is not Kind.BERNOULLI:
            continue
        sel = mask[:, j]
        a = rank_auc(np.asarray(pred)[sel, j], np.asarray(truth)[sel, j])
        if np.isfinite(a):
            vals.append(a)
    return float(np.mean(vals)) if vals else float("nan")


def match_components(beta_hat, beta_true) -> np.ndarray:
    """Permutation ``sigma`` minimizing ``sum_r ||beta_hat[..., sigma[r]] - beta_true[..., r]||_F``.

    Exhaustive over ``k!`` orderings (k at most 8); the first optimum in lexicographic order wins.
    """
    beta_hat, beta_true = np.asarray(beta_hat, dtype=float), np.asarray(beta_true, dtype=float)
    if beta_hat.shape != beta_true.shape:
        raise ValueError("beta_hat and beta_true must have the same shape")
    k = beta_true.shape[-1]
    if k > 8:
        raise ValueError("component matching supports at most 8 components")
    H = beta_hat.reshape(-1, k)
    T = beta_true.reshape(-1, k)
    # cost[a, b] = distance between estimated component a and true component b
    cost = np.sqrt(((H[:, :, None] - T[:, None, :]) ** 2).sum(axis=0))
    best, best_perm = np.inf, None
    cols = np.arange(k)
    for perm in itertools.permutations(range(k)):
        c = cost[list(perm), cols].sum()
        if c < best - 1e-12:
            best, best_perm = c, perm
    return np.array(best_perm)


def feature_auc(beta_hat, beta_true, exclude_first_row: bool = False) -> float:
    """Rank AUC of ``|beta_hat|`` against the true support, after component matching."""
    beta_hat, beta_true = np.asarray(beta_hat, dtype=float), np.asarray(beta_true, dtype=float)
    if beta_hat.shape[-1] == beta_true.shape[-1] and beta_true.shape[-1] <= 8:
        beta_hat = beta_hat[..., match_components(beta_hat, beta_true)]
    if exclude_first_row:
        beta_hat, beta_true = beta_hat[1:], beta_true[1:]
    return rank_auc(np.abs(beta_hat).ravel(), (beta_true != 0).ravel())
