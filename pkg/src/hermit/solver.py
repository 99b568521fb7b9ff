"""Generalized EM for the penalized mixture likelihood, with an accelerated proximal-gradient M-step."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import penalty as _pen
from .expfamily import TaskTable
from .model import (PI_FLOOR, Dataset, MixtureModel, _check_compatible, log_likelihood,
                    normalize_pi, posterior)
from .penalty import PenaltyConfig, PenaltyKind

log = logging.getLogger(__name__)

_TINY = 1e-300


class NumericalError(ArithmeticError):
    """The smooth objective or its gradient became non-finite."""


@dataclass
class FitConfig:
    k: int = 1
    t_out: int = 50
    t_in: int = 200
    tol_obj: float = 1e-6
    tol_param: float = 1e-3
    tol_inner: float = 1e-6
    seed: Optional[int] = 0
    use_active_set: bool = True
    update_pi: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if min(self.tol_obj, self.tol_param, self.tol_inner) <= 0:
            raise ValueError("tolerances must be positive")
        if self.t_out < 0 or self.t_in < 1:
            raise ValueError("iteration limits must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitReport:
    objective_trace: list = field(default_factory=list)
    n_outer: int = 0
    converged: bool = False
    inner_iterations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"objective_trace": [float(v) for v in self.objective_trace],
                "n_outer": self.n_outer, "converged": self.converged,
                "inner_iterations": list(self.inner_iterations), "warnings": list(self.warnings)}

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])


# ---------------------------------------------------------------------------
# accelerated proximal gradient

def _bb_step(fun, x, g, expand, bsum):
    """Barzilai-Borwein step from a short probe along the negative gradient."""
    gnorm = np.sqrt(bsum(g * g))
    xnorm = np.sqrt(bsum(x * x))
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(gnorm > 0, 1e-4 * np.maximum(xnorm, 1.0) / gnorm, 0.0)
    s = -expand(h) * g
    _, g2 = fun(x + s)
    sy = bsum(s * (g2 - g))
    ss = bsum(s * s)
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where((sy > 0) & (ss > 0), ss / sy, 1.0)
    return np.where(np.isfinite(step), step, 1.0)


def apg_minimize(fun: Callable, prox: Callable, init, penalty: Optional[Callable] = None, *,
                 fval: Optional[Callable] = None, t_in: int = 200, tol_inner: float = 1e-6,
                 block_axes=(), step=None, return_iters: bool = False):
    """Minimize ``f(x) + g(x)`` by FISTA with backtracking and a monotone restart.

    Parameters
    ----------
    fun : callable
        ``fun(x) -> (f, grad)`` for the smooth part.  ``f`` holds one value per
        independent block (shape of ``x`` along ``block_axes``; scalar when there are none).
    prox : callable
        ``prox(z, step) -> x`` for the nonsmooth part, ``step`` broadcast against ``x``.
    penalty : callable, optional
        Block values of the nonsmooth part; needed for the monotone safeguard.
    block_axes : tuple of int
        Axes of ``x`` indexing blocks whose smooth parts and penalties are separable.
        Each block gets its own step size, momentum and stopping test.

    The initial step comes from a Barzilai-Borwein probe; it is halved whenever the
    quadratic upper bound fails and grown by 10% after every accepted step.  A block
    stops when its relative l2 step drops below ``tol_inner`` or after ``t_in``
    iterations.  The composite objective of every block never increases.
    """
    x = np.array(init, dtype=float)
    block_axes = tuple(sorted(a % x.ndim for a in np.atleast_1d(block_axes))) if x.ndim else ()
    red = tuple(a for a in range(x.ndim) if a not in block_axes)
    bshape = tuple(x.shape[a] for a in block_axes)
    eshape = tuple(x.shape[a] if a in block_axes else 1 for a in range(x.ndim))

    def expand(b):
        return np.reshape(b, eshape)

    def bsum(v):
        return v.sum(axis=red) if red else v

    if penalty is None:
        penalty = lambda v: np.zeros(bshape)  # noqa: E731
    if fval is None:
        fval = lambda v: fun(v)[0]  # noqa: E731

    def evaluate(v):
        f, g = fun(v)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            raise NumericalError("non-finite smooth objective or gradient in proximal gradient solver")
        return np.broadcast_to(f, bshape), g

    fx, gx = evaluate(x)
    Fx = fx + penalty(x)
    if step is None:
        step = _bb_step(fun, x, gx, expand, bsum)
    step = np.array(np.broadcast_to(step, bshape), dtype=float)
    y, fy, gy = x, fx, gx
    theta = np.ones(bshape)
    plain = np.ones(bshape, bool)
    live = np.ones(bshape, bool)
    it = 0
    for it in range(1, t_in + 1):
        for _ in range(60):
            z = prox(y - expand(step) * gy, expand(step))
            fz = np.broadcast_to(fval(z), bshape)
            dz = z - y
            bound = fy + bsum(gy * dz) + bsum(dz * dz) / (2.0 * step)
            bad = live & ~(fz <= bound + 1e-12 * (np.abs(fy) + 1.0))
            if not bad.any():
                break
            step = np.where(bad, 0.5 * step, step)
        Fz = fz + penalty(z)
        accept = live & (Fz <= Fx)
        restart = live & ~accept
        x_new = np.where(expand(accept), z, x)
        diff = np.sqrt(bsum((x_new - x) ** 2))
        base = np.sqrt(bsum(x * x))
        small = diff <= tol_inner * np.maximum(base, 1e-12)
        done = live & ((accept & small) | (restart & plain))
        theta_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta ** 2))
        mom = np.where(accept & ~done, (theta - 1.0) / theta_new, 0.0)
        y = x_new + expand(mom) * (x_new - x)
        theta = np.where(restart, 1.0, theta_new)
        plain = mom == 0
        Fx = np.where(accept, Fz, Fx)
        step = np.where(accept, 1.1 * step, step)
        x = x_new
        live &= ~done
        if not live.any():
            break
        fy, gy = evaluate(y)
    if return_iters:
        return x, it
    return x


# ---------------------------------------------------------------------------
# weighted GLM pieces shared by the M-step variants

class WeightedGLM:
    """Smooth part of the expected complete negative log-likelihood in ``beta``.

    ``W`` (n, m, k) holds ``rho_ir * observed_ij / n``; ``offset`` (n, m, k) is added
    to the linear predictor (mean shifts).  Constant ``c(y)`` terms are dropped.
    """

    def __init__(self, X, Y0, table: TaskTable, W, offset=None):
        self.X = X
        self.Y = Y0[:, :, None]
        self.table = table
        self.W = W
        self.offset = offset

    def nat(self, beta):
        d, m, k = beta.shape
        nat = (self.X @ beta.reshape(d, m * k)).reshape(-1, m, k)
        if self.offset is not None:
            nat = nat + self.offset
        return nat

    def loss(self, nat):
        return self.table.scale(self.W * (self.table.cumulant(nat) - self.Y * nat))

    def resid(self, nat):
        """Derivative of the loss with respect to the natural parameter."""
        return self.table.scale(self.W * (self.table.mean(nat) - self.Y))

    def grad_from_resid(self, R):
        n, m, k = R.shape
        return (self.X.T @ R.reshape(n, m * k)).reshape(-1, m, k)


def _block_reduce(arr, kind: PenaltyKind):
    """Sum an (n, m, k) or (d, m, k) array down to the per-block shape of ``kind``."""
    if kind is PenaltyKind.ENTRYWISE:
        return arr.sum(axis=0)
    return arr.sum(axis=(0, 1))


def _block_axes(kind: PenaltyKind):
    return (1, 2) if kind is PenaltyKind.ENTRYWISE else (2,)


# ---------------------------------------------------------------------------
# generalized EM

class GEM:
    """Generalized EM driver; subclasses override the prior and extra M-step hooks."""

    def __init__(self, data: Dataset, pen: PenaltyConfig, cfg: FitConfig):
        self.data = data
        self.pen = pen
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.n, self.d, self.m = data.n, data.d, data.m
        self.k = cfg.k
        self.X = np.asarray(data.X)
        self.Y0 = data.Y0
        self.M = data.mask
        self.C = data.base_measure
        self.table = data.table
        self.exempt = data.has_intercept if pen.exempt_intercept is None else bool(pen.exempt_intercept)
        self.row_scale = np.ones((self.d, 1, 1))
        if self.exempt and self.d:
            self.row_scale[0] = 0.0
        self.report = FitReport()
        self.pi = np.full(self.k, 1.0 / self.k)
        self.beta = np.zeros((self.d, self.m, self.k))
        self.zero_count = np.zeros(self.beta.shape, int)
        self._inner = 0

    # -- hooks -------------------------------------------------------------
    def log_prior(self) -> np.ndarray:
        return np.broadcast_to(np.log(self.pi), (self.n, self.k))

    def offset(self):
        return None

    def penalty_weights(self) -> np.ndarray:
        return _pen.weights(self.pi, self.pen.gamma)

    def update_prior(self, rho):
        """M-step a): closed-form mixture weights with a descent safeguard on the penalized criterion."""
        if not self.cfg.update_pi:
            return
        target = rho.mean(axis=0)
        cand = normalize_pi(target)
        if self.pen.lam == 0 or self.pen.gamma == 0:
            self.pi = cand
            return
        norms = _pen.norms(self.beta, self.pen.kind, self.exempt)

        def q(p):
            return -(target @ np.log(p)) + self.pen.lam * (_pen.weights(p, self.pen.gamma) @ norms)

        q_old = q(self.pi)
        s = 1.0
        for _ in range(30):
            p = normalize_pi((1 - s) * self.pi + s * cand) if s < 1 else cand
            if q(p) <= q_old:
                self.pi = p
                return
            s *= 0.5

    def extra_m_step(self, rho):
        pass

    def extra_penalty(self) -> float:
        return 0.0

    def extra_params(self):
        return []

    # -- core steps --------------------------------------------------------
    def nat(self, beta=None):
        beta = self.beta if beta is None else beta
        nat = (self.X @ beta.reshape(self.d, -1)).reshape(self.n, self.m, self.k)
        off = self.offset()
        return nat if off is None else nat + off

    def component_loglik(self, nat=None):
        nat = self.nat() if nat is None else nat
        dens = self.table.log_density(self.Y0, nat, self.C)
        return np.einsum("ijr,ij->ir", dens, self.M)

    def beta_penalty(self, beta=None, w=None) -> float:
        beta = self.beta if beta is None else beta
        w = self.penalty_weights() if w is None else w
        if self.pen.lam == 0:
            return 0.0
        return float(self.pen.lam * w @ _pen.norms(beta, self.pen.kind, self.exempt))

    def objective_from(self, comp) -> tuple[float, float]:
        """Penalized objective and the plain negative mean log-likelihood."""
        nll = -float(np.logaddexp.reduce(self.log_prior() + comp, axis=1).sum()) / self.n
        return nll + self.beta_penalty() + self.extra_penalty(), nll

    def m_step_beta(self, rho, full_pass: bool):
        W = rho[:, None, :] * self.M[:, :, None] / self.n
        kind = self.pen.kind
        lam = self.pen.lam
        w = self.penalty_weights()
        frozen = np.zeros(self.beta.shape, bool)
        if self.cfg.use_active_set and not full_pass:
            frozen = self.zero_count >= 2
        rows = np.flatnonzero(~frozen.all(axis=(1, 2)))
        if rows.size == 0:
            return
        glm = WeightedGLM(self.X[:, rows], self.Y0, self.table, W, self.offset())
        free = (~frozen[rows]).astype(float)
        row_scale = self.row_scale[rows]

        def fun(b):
            nat = glm.nat(b)
            g = glm.grad_from_resid(glm.resid(nat))
            if frozen.any():
                g = g * free
            return _block_reduce(glm.loss(nat), kind), g

        def fval(b):
            return _block_reduce(glm.loss(glm.nat(b)), kind)

        if kind is PenaltyKind.ENTRYWISE:
            def penalty(b):
                return lam * w * np.abs(b * row_scale).sum(axis=0)
        else:
            def penalty(b):
                return lam * w * _pen.row_norms(b * row_scale).sum(axis=0)

        def prox(z, step):
            t = step * lam * w * row_scale
            if kind is PenaltyKind.ENTRYWISE:
                return _pen.soft_threshold(z, t)
            return _pen.group_soft_threshold(z, t, axis=1)

        if lam == 0:
            penalty = None
            prox = lambda z, step: z  # noqa: E731
        new, iters = apg_minimize(fun, prox, self.beta[rows], penalty, fval=fval, t_in=self.cfg.t_in,
                                  tol_inner=self.cfg.tol_inner, block_axes=_block_axes(kind),
                                  return_iters=True)
        self.beta = self.beta.copy()
        self.beta[rows] = new
        self._inner += iters

    def initialize(self, init_rho=None):
        if init_rho is None:
            labels = self.rng.integers(self.k, size=self.n)
            rho = np.eye(self.k)[labels]
        else:
            rho = np.asarray(init_rho, dtype=float)
            if rho.shape != (self.n, self.k):
                raise ValueError(f"init_rho must have shape {(self.n, self.k)}")
        self.beta = self.rng.normal(0.0, 1e-5, size=(self.d, self.m, self.k))
        if self.cfg.update_pi:
            self.pi = normalize_pi(rho.mean(axis=0))
        self.initial_m_step(rho)

    def initial_m_step(self, rho):
        self.m_step_beta(rho, full_pass=True)
        self.extra_m_step(rho)

    def _params(self):
        return np.concatenate([self.beta.ravel(), self.pi.ravel()] + [p.ravel() for p in self.extra_params()])

    def run(self, init_rho=None):
        cfg = self.cfg
        rep = self.report
        self.initialize(init_rho)
        comp = self.component_loglik()
        obj, nll = self.objective_from(comp)
        rep.objective_trace.append(obj)
        degenerate_warned = False
        force_full = False
        for t in range(cfg.t_out):
            rho = posterior(comp, self.log_prior())
            if not degenerate_warned and np.any(rho.sum(axis=0) < 1e-8 * self.n):
                rep.warnings.append(f"degenerate component at outer iteration {t}; mixture weight floored")
                degenerate_warned = True
            before = self._params()
            self.update_prior(rho)
            full_pass = (not cfg.use_active_set or force_full or t % 5 == 0 or t == cfg.t_out - 1)
            self._inner = 0
            self.m_step_beta(rho, full_pass)
            self.extra_m_step(rho)
            rep.inner_iterations.append(self._inner)
            self.zero_count = np.where(self.beta == 0, self.zero_count + 1, 0)

            comp = self.component_loglik()
            nll_prev = nll
            obj, nll = self.objective_from(comp)
            rep.objective_trace.append(obj)
            rep.n_outer = t + 1
            after = self._params()
            rel_obj = abs(nll - nll_prev) / max(abs(nll_prev), 1e-12)
            rel_par = np.max(np.abs(after - before)) / max(np.max(np.abs(before)), 1e-12)
            if rel_obj < cfg.tol_obj or rel_par < cfg.tol_param:
                if full_pass:
                    rep.converged = True
                    break
                force_full = True
            else:
                force_full = False
        self.rho = posterior(comp, self.log_prior())
        return self

    def model(self) -> MixtureModel:
        return MixtureModel(self.beta, self.pi, self.data.tasks, gamma=self.pen.gamma)


def objective(model: MixtureModel, data: Dataset, cfg: PenaltyConfig) -> float:
    """Penalized criterion ``-loglik / n + lam * sum_r pi_r**gamma ||beta_r||``."""
    _check_compatible(model, data)
    exempt = data.has_intercept if cfg.exempt_intercept is None else bool(cfg.exempt_intercept)
    return -log_likelihood(model, data) / data.n + _pen.value(model.beta, model.pi, cfg, exempt)


def fit(data: Dataset, pen: PenaltyConfig, cfg: FitConfig, init_rho=None):
    """Fit the penalized mixture by GEM; returns ``(model, responsibilities, report)``."""
    gem = GEM(data, pen, cfg).run(init_rho)
    return gem.model(), gem.rho, gem.report
