"""Synthetic mixed-type multi-task data with a known mixture structure."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .expfamily import BERNOULLI, GAUSSIAN, POISSON
from .model import Dataset


@dataclass(frozen=True)
class SynthSpec:
    n: int = 100
    d: int = 15
    m_gaussian: int = 3
    m_bernoulli: int = 10
    m_poisson: int = 2
    k_true: int = 2
    s: int = 3
    coef_range: tuple = (1.0, 3.0)
    poisson_coef_range: tuple = (0.1, 0.3)
    bias: float = 1.0
    poisson_bias: float = 3.0
    pi_true: Optional[tuple] = None
    missing_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.s * self.k_true + 1 > self.d:
            raise ValueError(f"s*k+1 = {self.s * self.k_true + 1} exceeds d = {self.d}")
        for lo, hi in (self.coef_range, self.poisson_coef_range):
            if not 0 < lo <= hi:
                raise ValueError("coefficient ranges need 0 < low <= high")
        if not 0 <= self.missing_rate < 1:
            raise ValueError("missing_rate must lie in [0, 1)")
        if self.m == 0:
            raise ValueError("at least one task is required")
        if self.pi_true is not None:
            pi = np.asarray(self.pi_true, dtype=float)
            if pi.shape != (self.k_true,) or np.any(pi < 0) or abs(pi.sum() - 1) > 1e-9:
                raise ValueError("pi_true must be a probability vector of length k_true")

    @property
    def m(self) -> int:
        return self.m_gaussian + self.m_bernoulli + self.m_poisson

    @property
    def families(self):
        return [GAUSSIAN] * self.m_gaussian + [BERNOULLI] * self.m_bernoulli + [POISSON] * self.m_poisson

    @property
    def pi(self) -> np.ndarray:
        if self.pi_true is None:
            return np.full(self.k_true, 1.0 / self.k_true)
        return np.asarray(self.pi_true, dtype=float)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["coef_range"] = list(self.coef_range)
        d["poisson_coef_range"] = list(self.poisson_coef_range)
        d["pi_true"] = None if self.pi_true is None else list(self.pi_true)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        for key in ("coef_range", "poisson_coef_range", "pi_true"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class Truth:
    beta: np.ndarray                # (d, m, k)
    labels: np.ndarray              # (n,) component of each sample
    alpha: Optional[np.ndarray] = None
    gate: Optional[np.ndarray] = None   # (n, k) true gating probabilities
    groups: Optional[np.ndarray] = None  # task -> group index for grouped designs
    group_labels: Optional[list] = None  # per-group sample labels
    group_betas: Optional[list] = None

    @property
    def k(self) -> int:
        return self.beta.shape[2]

    def onehot(self) -> np.ndarray:
        return np.eye(self.k)[self.labels]


def diff_k_sparsity(d: int, k: int) -> int:
    """Per-component sparsity keeping the total relevant-feature count fixed across k."""
    return d // (2 * k)


def draw_beta(spec: SynthSpec, rng) -> np.ndarray:
    """Coefficients: a bias row plus a disjoint block of ``s`` rows per component."""
    d, m, k, s = spec.d, spec.m, spec.k_true, spec.s
    beta = np.zeros((d, m, k))
    is_pois = np.array([f is POISSON for f in spec.families])
    for r in range(k):
        rows = slice(1 + s * r, 1 + s * (r + 1))
        for j in range(m):
            lo, hi = spec.poisson_coef_range if is_pois[j] else spec.coef_range
            mag = rng.uniform(lo, hi, size=s)
            sign = rng.choice([-1.0, 1.0], size=s)
            beta[rows, j, r] = mag * sign
        beta[0, :, r] = np.where(is_pois, spec.poisson_bias, spec.bias)
    return beta


def draw_features(n: int, d: int, rng) -> np.ndarray:
    X = rng.standard_normal((n, d))
    X[:, 0] = 1.0
    return X


def draw_targets(families, X, beta, labels, rng) -> np.ndarray:
    nat = np.einsum("id,dji->ij", X, beta[:, :, labels])
    Y = np.empty_like(nat)
    for j, fam in enumerate(families):
        eta = nat[:, j]
        if fam is GAUSSIAN or fam.kind.value == "gaussian":
            Y[:, j] = eta + math.sqrt(fam.dispersion) * rng.standard_normal(len(eta))
        elif fam.kind.value == "bernoulli":
            Y[:, j] = (rng.random(len(eta)) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
        else:
            Y[:, j] = rng.poisson(np.exp(np.clip(eta, -30, 30)))
    return Y


def missing_mask(n: int, m: int, rate: float, rng) -> np.ndarray:
    """Hide ``round(rate * n * m)`` entries uniformly, then re-reveal one entry in any empty row."""
    if rate <= 0:
        return np.ones((n, m), bool)
    if m == 1:
        raise ValueError("a single-task dataset cannot have missing targets with every row observed")
    obs = np.ones(n * m, bool)
    obs[rng.choice(n * m, size=int(round(rate * n * m)), replace=False)] = False
    obs = obs.reshape(n, m)
    for i in np.flatnonzero(~obs.any(axis=1)):
        obs[i, rng.integers(m)] = True
    return obs


def _sample(spec: SynthSpec, beta, n, rng, alpha=None):
    X = draw_features(n, spec.d, rng)
    gate = None
    if alpha is None:
        labels = rng.choice(spec.k_true, size=n, p=spec.pi)
    else:
        gate = gating(alpha, X)
        u = rng.random(n)[:, None]
        labels = np.minimum((u > np.cumsum(gate, axis=1)).sum(axis=1), spec.k_true - 1)
    Y = draw_targets(spec.families, X, beta, labels, rng)
    obs = missing_mask(n, spec.m, spec.missing_rate, rng)
    Y[~obs] = np.nan
    return Dataset(X, Y, spec.families, obs), labels, gate


def gating(alpha, X) -> np.ndarray:
    e = X @ alpha
    e -= e.max(axis=1, keepdims=True)
    np.exp(e, out=e)
    return e / e.sum(axis=1, keepdims=True)


def generate(spec: SynthSpec, n: Optional[int] = None, rng=None, beta=None):
    """Draw one dataset and its ground truth; ``beta`` may be reused across splits."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    beta = draw_beta(spec, rng) if beta is None else beta
    data, labels, _ = _sample(spec, beta, spec.n if n is None else n, rng)
    return data, Truth(beta=beta, labels=labels)


def generate_splits(spec: SynthSpec, sizes: Sequence[int], moe_rows: Optional[int] = None):
    """Independent datasets sharing one set of true parameters (train/validation/test).

    With ``moe_rows`` set, memberships follow a softmax gate whose first ``moe_rows``
    rows of coefficients are standard normal.
    """
    rng = np.random.default_rng(spec.seed)
    beta = draw_beta(spec, rng)
    alpha = None
    if moe_rows is not None:
        alpha = draw_alpha(spec.d, spec.k_true, moe_rows, rng)
    out = []
    for n in sizes:
        data, labels, gate = _sample(spec, beta, n, rng, alpha)
        out.append((data, Truth(beta=beta, labels=labels, alpha=alpha, gate=gate)))
    return out


def draw_alpha(d: int, k: int, rows_nonzero: int, rng) -> np.ndarray:
    if rows_nonzero > d:
        raise ValueError("gate_rows_nonzero exceeds d")
    alpha = np.zeros((d, k))
    alpha[:rows_nonzero] = rng.standard_normal((rows_nonzero, k))
    return alpha


def generate_moe(spec: SynthSpec, gate_rows_nonzero: int = 4, alpha=None):
    """Dataset whose memberships are drawn from a softmax gate on the features."""
    rng = np.random.default_rng(spec.seed)
    beta = draw_beta(spec, rng)
    if alpha is None:
        alpha = draw_alpha(spec.d, spec.k_true, gate_rows_nonzero, rng)
    data, labels, gate = _sample(spec, beta, spec.n, rng, np.asarray(alpha, dtype=float))
    return data, Truth(beta=beta, labels=labels, alpha=alpha, gate=gate)


def contaminate(data: Dataset, p_outlier: float, seed: int = 0, gaussian_value: float = 100.0,
                bernoulli_value: float = 1.0):
    """Overwrite every observed Gaussian/Bernoulli target of ``ceil(p * n)`` random rows.

    Poisson targets are left untouched.  Returns ``(dataset, contaminated_indices)``.
    """
    if not 0 <= p_outlier < 1:
        raise ValueError("p_outlier must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    count = math.ceil(p_outlier * data.n - 1e-9)
    idx = np.sort(rng.choice(data.n, size=count, replace=False))
    if count == 0:
        return data, idx
    Y = np.array(data.Y)
    for j, fam in enumerate(data.tasks):
        rows = idx[data.observed[idx, j]]
        if fam.kind.value == "gaussian":
            Y[rows, j] = gaussian_value
        elif fam.kind.value == "bernoulli":
            Y[rows, j] = bernoulli_value
    return data.with_targets(Y), idx


# ---------------------------------------------------------------------------
# grouped-task designs: groups share samples and features but not memberships

@dataclass(frozen=True)
class TaskGroup:
    k_true: int
    m_gaussian: int
    m_bernoulli: int
    m_poisson: int


def generate_grouped(groups: Sequence[TaskGroup], base: SynthSpec, sizes: Sequence[int]):
    """Datasets whose task blocks each follow their own mixture over a shared ``X``.

    Per-group sparsity follows :func:`diff_k_sparsity`; the other settings come from ``base``.
    """
    rng = np.random.default_rng(base.seed)
    specs = [replace(base, k_true=g.k_true, m_gaussian=g.m_gaussian, m_bernoulli=g.m_bernoulli,
                     m_poisson=g.m_poisson, s=diff_k_sparsity(base.d, g.k_true), pi_true=None)
             for g in groups]
    betas = [draw_beta(sp, rng) for sp in specs]
    task_group = np.concatenate([np.full(sp.m, gi) for gi, sp in enumerate(specs)])
    families = [f for sp in specs for f in sp.families]
    out = []
    for n in sizes:
        X = draw_features(n, base.d, rng)
        blocks, labels = [], []
        for sp, beta in zip(specs, betas):
            lab = rng.choice(sp.k_true, size=n, p=sp.pi)
            blocks.append(draw_targets(sp.families, X, beta, lab, rng))
            labels.append(lab)
        Y = np.concatenate(blocks, axis=1)
        obs = missing_mask(n, Y.shape[1], base.missing_rate, rng)
        Y[~obs] = np.nan
        truth = Truth(beta=betas[0], labels=labels[0], groups=task_group, group_labels=labels,
                      group_betas=betas)
        out.append((Dataset(X, Y, families, obs), truth))
    return out


# ---------------------------------------------------------------------------
# experiment presets

def low_dim(missing_rate: float = 0.0, seed: int = 0) -> SynthSpec:
    return SynthSpec(n=100, d=15, m_gaussian=3, m_bernoulli=10, m_poisson=2, k_true=2, s=3,
                     missing_rate=missing_rate, seed=seed)


def high_dim(missing_rate: float = 0.0, seed: int = 0) -> SynthSpec:
    return SynthSpec(n=180, d=320, m_gaussian=8, m_bernoulli=10, m_poisson=2, k_true=2, s=3,
                     missing_rate=missing_rate, seed=seed)


def diff_k(k: int, seed: int = 0, n: int = 1000, d: int = 32, poisson: bool = True,
           missing_rate: float = 0.2, s: Optional[int] = None, m_scale: int = 1) -> SynthSpec:
    return SynthSpec(n=n, d=d, m_gaussian=3 * m_scale, m_bernoulli=10 * m_scale,
                     m_poisson=2 * m_scale if poisson else 0, k_true=k,
                     s=diff_k_sparsity(d, k) if s is None else s, coef_range=(2.0, 6.0),
                     missing_rate=missing_rate, seed=seed)


ANOMALY_GROUPS = [TaskGroup(4, 5, 10, 5), TaskGroup(1, 1, 1, 1), TaskGroup(6, 1, 0, 0),
                  TaskGroup(2, 1, 1, 0), TaskGroup(3, 0, 1, 1), TaskGroup(5, 1, 1, 0)]

CLUSTER_GROUPS = [TaskGroup(1, 3, 10, 2), TaskGroup(2, 3, 10, 2), TaskGroup(3, 3, 10, 2),
                  TaskGroup(4, 3, 10, 2)]


def grouped_base(seed: int = 0, n: int = 2000) -> SynthSpec:
    return diff_k(1, seed=seed, n=n)
