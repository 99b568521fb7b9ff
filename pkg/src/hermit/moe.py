"""Mixture of experts: mixture weights from a sparse softmax gate on the features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from .expfamily import TaskTable
from .model import Dataset, MixtureModel, natural_params, normalize_pi
from .penalty import PenaltyConfig, soft_threshold
from .solver import GEM, FitConfig, apg_minimize


@dataclass(frozen=True, eq=False)
class GatingModel:
    alpha: np.ndarray   # (d, k)

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float)
        if a.ndim != 2 or not np.all(np.isfinite(a)):
            raise ValueError("alpha must be a finite (d, k) matrix")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @property
    def k(self) -> int:
        return self.alpha.shape[1]


def _alpha(gate):
    return gate.alpha if isinstance(gate, GatingModel) else np.asarray(gate, dtype=float)


def gating_probs(gate, X) -> np.ndarray:
    """Row-wise softmax of ``X @ alpha``."""
    alpha = _alpha(gate)
    X = np.asarray(X, dtype=float)
    if X.shape[1] != alpha.shape[0]:
        raise ValueError(f"X has {X.shape[1]} columns, alpha has {alpha.shape[0]} rows")
    return softmax(X @ alpha, axis=1)


def gate_loss(alpha, X, rho):
    """Multinomial cross-entropy ``-(1/n) sum_ir rho_ir log g_ir`` and its gradient in ``alpha``."""
    n = X.shape[0]
    logits = X @ alpha
    logg = log_softmax(logits, axis=1)
    val = -float(np.sum(rho * logg)) / n
    grad = X.T @ (np.exp(logg) - rho) / n
    return val, grad


def moe_log_likelihood(model: MixtureModel, gate, data: Dataset) -> float:
    from .model import log_likelihood
    return log_likelihood(model, data, log_prior=log_softmax(data.X @ _alpha(gate), axis=1))


class MoEGEM(GEM):
    """GEM whose prior is the gate; the alpha step replaces the closed-form weight update."""

    def __init__(self, data: Dataset, pen: PenaltyConfig, lambda2: float, cfg: FitConfig,
                 freeze_alpha: bool = False, alpha0=None):
        super().__init__(data, pen, cfg)
        if not lambda2 >= 0:
            raise ValueError("lambda2 must be non-negative")
        self.lambda2 = float(lambda2)
        self.freeze_alpha = freeze_alpha
        self.alpha = np.zeros((self.d, self.k)) if alpha0 is None else np.array(alpha0, dtype=float)
        self.alpha_scale = self.row_scale[:, :, 0]   # intercept row exempt, as for beta

    def log_prior(self):
        return log_softmax(self.X @ self.alpha, axis=1)

    def penalty_weights(self):
        # no global mixture weights exist here; every expert is penalized equally
        return np.ones(self.k)

    def extra_penalty(self) -> float:
        return self.lambda2 * float(np.abs(self.alpha * self.alpha_scale).sum())

    def extra_params(self):
        return [self.alpha]

    def initialize(self, init_rho=None):
        super().initialize(init_rho)
        self.pi = np.full(self.k, 1.0 / self.k)

    def update_prior(self, rho):
        if self.freeze_alpha:
            return
        X, lam2, scale = self.X, self.lambda2, self.alpha_scale

        def fun(a):
            return gate_loss(a, X, rho)

        def penalty(a):
            return lam2 * np.abs(a * scale).sum()

        def prox(z, step):
            return soft_threshold(z, step * lam2 * scale)

        self.alpha = apg_minimize(fun, prox, self.alpha, penalty, t_in=self.cfg.t_in,
                                  tol_inner=self.cfg.tol_inner)

    def gate(self) -> GatingModel:
        return GatingModel(self.alpha)

    def model(self) -> MixtureModel:
        pi = normalize_pi(gating_probs(self.alpha, self.X).mean(axis=0))
        return MixtureModel(self.beta, pi, self.data.tasks, gamma=self.pen.gamma)


def fit_moe(data: Dataset, pen_beta: PenaltyConfig, lambda2: float, cfg: FitConfig, init_rho=None,
            freeze_alpha: bool = False):
    """Fit experts and gate jointly; returns ``(model, gate, report)``.

    The posterior memberships of the final iterate are attached as ``report.rho``.
    """
    gem = MoEGEM(data, pen_beta, lambda2, cfg, freeze_alpha=freeze_alpha).run(init_rho)
    gem.report.rho = gem.rho
    return gem.model(), gem.gate(), gem.report


def predict_moe(model: MixtureModel, gate, X_new) -> np.ndarray:
    """Feature-only prediction ``sum_r g_r(x) * b'(x beta_jr)``."""
    G = gating_probs(gate, X_new)
    mu = TaskTable(model.families).mean(natural_params(model, X_new, zeta=False))
    return np.einsum("ijr,ir->ij", mu, G)
