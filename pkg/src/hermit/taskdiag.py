"""Task-level diagnostics: concordant scores, NMI task similarity, kernel PCA and task clustering."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.cluster.vq import kmeans2

from .metrics import nmi
from .model import Dataset, MixtureModel, log_likelihood, posterior, responsibilities
from .penalty import PenaltyConfig
from .solver import FitConfig, NumericalError, fit

log = logging.getLogger(__name__)

KL_FLOOR = 1e-12


def _kl_rows(P, Q):
    P = np.clip(P, KL_FLOOR, 1.0)
    Q = np.clip(Q, KL_FLOOR, 1.0)
    return np.sum(P * np.log(P / Q), axis=1)


def concordant_scores(model: MixtureModel, data: Dataset) -> np.ndarray:
    """Negative symmetrized KL between all-task and single-task posteriors, per task.

    Sums run over the samples where the task is observed and are divided by ``2 n``.
    Tasks observed nowhere get NaN.
    """
    full = responsibilities(model, data)
    out = np.full(data.m, np.nan)
    for h in range(data.m):
        rows = data.observed[:, h]
        if not rows.any():
            continue
        single = responsibilities(model, data, task_subset=[h])[rows]
        sym = _kl_rows(full[rows], single) + _kl_rows(single, full[rows])
        out[h] = -sym.sum() / (2.0 * data.n)
    return out


def two_means_split(scores) -> float:
    """Threshold splitting 1-D scores into two groups with minimal within-group sum of squares."""
    s = np.sort(np.asarray(scores, dtype=float)[np.isfinite(scores)])
    if s.size < 2:
        raise ValueError("need at least two finite scores")
    best, cut = np.inf, 1
    for c in range(1, s.size):
        lo, hi = s[:c], s[c:]
        w = ((lo - lo.mean()) ** 2).sum() + ((hi - hi.mean()) ** 2).sum()
        if w < best:
            best, cut = w, c
    return float(0.5 * (s[cut - 1] + s[cut]))


@dataclass
class TaskSimilarity:
    matrix: np.ndarray
    per_task_k: int = 20
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("similarity matrix must be square")
        if not np.allclose(M, M.T, atol=1e-9):
            raise ValueError("similarity matrix must be symmetric")
        self.matrix = M


def single_task_posteriors(model: MixtureModel, data: Dataset, j: int) -> np.ndarray:
    """(n, k) posteriors of a one-task model over all rows; rows missing task ``j`` get ``pi``."""
    col = data.columns([j])
    rows = data.observed[:, j]
    rho = np.tile(model.pi, (data.n, 1))
    rho[rows] = responsibilities(model, col)
    return rho


def _fit_single(col: Dataset, pen, cfg, valid: Optional[Dataset], lambdas):
    if valid is None or not lambdas:
        return fit(col, pen, cfg)[0]
    best, best_ll = None, -np.inf
    for lam in lambdas:
        model = fit(col, PenaltyConfig(pen.kind, lam, pen.gamma, pen.exempt_intercept), cfg)[0]
        ll = log_likelihood(model, valid)
        if ll > best_ll:
            best, best_ll = model, ll
    return best


def task_similarity(data: Dataset, per_task_k: int = 20, pen: Optional[PenaltyConfig] = None,
                    fitcfg: Optional[FitConfig] = None, valid: Optional[Dataset] = None,
                    lambdas: Sequence[float] = (), min_obs: Optional[int] = None,
                    return_posteriors: bool = False):
    """Pairwise NMI between per-task mixture fits sharing the same number of components.

    Every task gets its own ``per_task_k``-component fit (lambda picked on ``valid`` when
    both ``valid`` and ``lambdas`` are given).  A task with too few observations or a
    diverged fit gets a zero similarity row and a warning.
    """
    pen = PenaltyConfig("entrywise", 1e-3) if pen is None else pen
    base = FitConfig() if fitcfg is None else fitcfg
    cfg = FitConfig.from_dict({**base.to_dict(), "k": per_task_k})
    min_obs = 10 * per_task_k if min_obs is None else min_obs
    m = data.m
    posts, warnings = [], []
    for j in range(m):
        if data.observed[:, j].sum() < min_obs:
            warnings.append(f"task {j} has fewer than {min_obs} observations; similarity set to 0")
            posts.append(None)
            continue
        try:
            vcol = valid.columns([j]) if valid is not None else None
            model = _fit_single(data.columns([j]), pen, cfg, vcol, lambdas)
            posts.append(single_task_posteriors(model, data, j))
        except (NumericalError, FloatingPointError) as exc:
            warnings.append(f"single-task fit for task {j} diverged ({exc}); similarity set to 0")
            posts.append(None)
    S = np.zeros((m, m))
    for u in range(m):
        for v in range(u + 1, m):
            if posts[u] is not None and posts[v] is not None:
                S[u, v] = S[v, u] = nmi(posts[u], posts[v])
    np.fill_diagonal(S, 1.0)
    for w in warnings:
        log.warning(w)
    sim = TaskSimilarity(S, per_task_k, warnings)
    return (sim, posts) if return_posteriors else sim


def kernel_pca(sim, dims: int) -> np.ndarray:
    """Embed tasks using the double-centred similarity matrix as a kernel.

    Columns are ``eigvec * sqrt(eigval)`` for the top ``dims`` eigenpairs (negative
    eigenvalues clipped to 0); each eigenvector's largest-magnitude entry is made positive.
    """
    K = np.asarray(sim.matrix if isinstance(sim, TaskSimilarity) else sim, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or not np.allclose(K, K.T, atol=1e-9):
        raise ValueError("kernel matrix must be square and symmetric")
    m = K.shape[0]
    if not 1 <= dims <= m:
        raise ValueError(f"dims must lie in [1, {m}]")
    H = np.eye(m) - 1.0 / m
    Kc = H @ K @ H
    Kc = 0.5 * (Kc + Kc.T)
    vals, vecs = np.linalg.eigh(Kc)
    order = np.argsort(vals)[::-1][:dims]
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    idx = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[idx, np.arange(dims)])
    return vecs * np.sqrt(vals)


def _canonical_labels(labels) -> np.ndarray:
    """Relabel clusters in order of first appearance."""
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    mapping = np.empty(order.size, int)
    mapping[np.unique(labels)[order]] = np.arange(order.size)
    return mapping[labels]


def cluster_tasks(embedding, groups: int, seed: int = 0, restarts: int = 20) -> np.ndarray:
    """k-means with k-means++ seeding and ``restarts`` runs, keeping the lowest inertia."""
    E = np.asarray(embedding, dtype=float)
    if E.ndim == 1:
        E = E[:, None]
    if groups < 1 or groups > len(np.unique(E, axis=0)):
        raise ValueError("groups must be between 1 and the number of distinct points")
    rng = np.random.default_rng(seed)
    best, best_labels = np.inf, None
    for _ in range(restarts):
        centers, labels = kmeans2(E, groups, minit="++", seed=rng)
        inertia = ((E - centers[labels]) ** 2).sum()
        if np.unique(labels).size == groups and inertia < best - 1e-12:
            best, best_labels = inertia, labels
    if best_labels is None:
        raise RuntimeError("k-means produced empty clusters in every restart")
    return _canonical_labels(best_labels)
