"""Mean-shift outlier modelling and two-stage clean-and-refit."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .model import Dataset, MixtureModel
from .penalty import PenaltyConfig, group_soft_threshold
from .solver import GEM, FitConfig, FitReport, WeightedGLM, apg_minimize, fit


@dataclass
class RobustConfig:
    """``lambda2`` weights the sample-wise group penalty on the mean shifts.

    ``p_clean`` is the fraction of highest-scoring samples dropped before refitting.
    """

    lambda2: float = 0.0
    base: FitConfig = field(default_factory=FitConfig)
    p_clean: float = 0.0

    def __post_init__(self):
        if not self.lambda2 >= 0:
            raise ValueError("lambda2 must be non-negative")
        if not 0 <= self.p_clean < 1:
            raise ValueError("p_clean must lie in [0, 1)")


def sample_norms(zeta) -> np.ndarray:
    zeta = np.asarray(zeta, dtype=float)
    return np.sqrt(np.einsum("ijr,ijr->i", zeta, zeta))


def outlier_scores(zeta) -> np.ndarray:
    """``sqrt(sum_jr zeta_ijr**2)`` per sample."""
    return sample_norms(zeta)


def zeta_prox(z, t):
    """Sample-wise group soft-threshold of an (n, m, k) tensor."""
    return group_soft_threshold(z, t, axis=(1, 2))


class RobustGEM(GEM):
    """GEM with additive per-sample mean shifts in the natural parameters."""

    def __init__(self, data: Dataset, pen: PenaltyConfig, rcfg: RobustConfig):
        super().__init__(data, pen, rcfg.base)
        self.lambda2 = float(rcfg.lambda2)
        self.zeta = np.zeros((self.n, self.m, self.k))

    def offset(self):
        return self.zeta

    def extra_penalty(self) -> float:
        return self.lambda2 * float(sample_norms(self.zeta).sum())

    def extra_params(self):
        return [self.zeta]

    def zeta_glm(self, rho):
        W = rho[:, None, :] * self.M[:, :, None] / self.n
        base = (self.X @ self.beta.reshape(self.d, -1)).reshape(self.n, self.m, self.k)
        # the linear predictor of beta enters as a fixed offset; zeta plays the role of nat - base
        return WeightedGLM(None, self.Y0, self.table, W, base)

    def extra_m_step(self, rho):
        glm = self.zeta_glm(rho)
        lam2 = self.lambda2

        def nat(z):
            return glm.offset + z

        def fun(z):
            v = nat(z)
            return glm.loss(v).sum(axis=(1, 2)), glm.resid(v)

        def fval(z):
            return glm.loss(nat(z)).sum(axis=(1, 2))

        def penalty(z):
            return lam2 * sample_norms(z)

        def prox(z, step):
            return zeta_prox(z, step * lam2)

        new, iters = apg_minimize(fun, prox, self.zeta, penalty, fval=fval, t_in=self.cfg.t_in,
                                  tol_inner=self.cfg.tol_inner, block_axes=(0,), return_iters=True)
        self.zeta = new
        self._inner += iters

    def model(self) -> MixtureModel:
        return MixtureModel(self.beta, self.pi, self.data.tasks, zeta=self.zeta, gamma=self.pen.gamma)


def fit_robust(data: Dataset, pen: PenaltyConfig, rcfg: RobustConfig, init_rho=None):
    """Jointly fit the mixture and the mean shifts; returns ``(model, rho, report)``."""
    gem = RobustGEM(data, pen, rcfg).run(init_rho)
    return gem.model(), gem.rho, gem.report


def removal_order(scores) -> np.ndarray:
    """Sample indices by decreasing score, ties by increasing index."""
    scores = np.asarray(scores, dtype=float)
    return np.lexsort((np.arange(scores.size), -scores))


def two_stage(data: Dataset, pen: PenaltyConfig, rcfg: RobustConfig, init_rho=None):
    """Robust fit, drop the ``ceil(p_clean * n)`` top-scoring samples, refit without shifts.

    Returns ``(stage-2 model, kept indices, stage-2 report)``; the stage-1 report is kept
    on the returned report as ``stage1``.
    """
    model1, _, rep1 = fit_robust(data, pen, rcfg, init_rho)
    count = math.ceil(rcfg.p_clean * data.n - 1e-9)
    order = removal_order(outlier_scores(model1.zeta))
    kept = np.sort(order[count:])
    cleaned = data.rows(kept)
    warnings = []
    for j, fam in enumerate(cleaned.tasks):
        y = cleaned.Y[cleaned.observed[:, j], j]
        if y.size == 0 or (fam.kind.value == "bernoulli" and np.unique(y).size < 2):
            warnings.append(f"task {j} lost a class of observations after cleaning")
    model2, _, rep2 = fit(cleaned, pen, rcfg.base)
    rep2.warnings = warnings + rep2.warnings
    rep2.stage1 = rep1
    rep2.removed = np.sort(order[:count])
    return model2, kept, rep2
