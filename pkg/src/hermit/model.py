"""Datasets with incomplete mixed-type targets and the finite-mixture model over them."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .expfamily import Family, Kind, TaskTable, check_support, parse_families

PI_FLOOR = 1e-8


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Features ``X`` (n, d), targets ``Y`` (n, m) and the observed-target mask.

    Missing targets may be given as NaN in ``Y``; the mask defaults to ``~isnan(Y)``.
    Every row needs at least one observed target.
    """

    X: np.ndarray
    Y: np.ndarray
    tasks: Sequence[Family]
    observed: Optional[np.ndarray] = None

    def __post_init__(self):
        X = _frozen(self.X)
        Y = np.array(self.Y, dtype=float)
        if X.ndim != 2 or Y.ndim != 2:
            raise ValueError("X and Y must be 2-D")
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        tasks = tuple(parse_families(self.tasks))
        if len(tasks) != Y.shape[1]:
            raise ValueError(f"{len(tasks)} task families for {Y.shape[1]} target columns")
        obs = ~np.isnan(Y) if self.observed is None else np.array(self.observed, dtype=bool)
        if obs.shape != Y.shape:
            raise ValueError("observed mask shape does not match Y")
        obs &= ~np.isnan(Y)
        if Y.shape[0] and not obs.any(axis=1).all():
            bad = np.flatnonzero(~obs.any(axis=1))
            raise ValueError(f"rows without any observed target: {bad[:10].tolist()}")
        for j, fam in enumerate(tasks):
            check_support(fam, Y[obs[:, j], j])
        Y[~obs] = np.nan
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", _frozen(Y))
        object.__setattr__(self, "observed", _frozen(obs, bool))
        object.__setattr__(self, "tasks", tasks)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.Y.shape[1]

    @cached_property
    def Y0(self) -> np.ndarray:
        """Targets with missing entries replaced by zero."""
        return np.where(self.observed, self.Y, 0.0)

    @cached_property
    def mask(self) -> np.ndarray:
        return self.observed.astype(float)

    @cached_property
    def table(self) -> TaskTable:
        return TaskTable(self.tasks)

    @cached_property
    def base_measure(self) -> np.ndarray:
        return self.table.base_measure(self.Y0) * self.mask

    @property
    def has_intercept(self) -> bool:
        return self.d > 0 and bool(np.all(self.X[:, 0] == 1.0))

    def rows(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.Y[idx], self.tasks, self.observed[idx])

    def columns(self, idx) -> "Dataset":
        """Restrict to a subset of tasks, dropping rows left with no observed target."""
        idx = np.atleast_1d(np.asarray(idx))
        obs = self.observed[:, idx]
        keep = obs.any(axis=1)
        return Dataset(self.X[keep], self.Y[keep][:, idx], [self.tasks[j] for j in idx], obs[keep])

    def with_observed(self, observed) -> "Dataset":
        return Dataset(self.X, self.Y, self.tasks, observed)

    def with_targets(self, Y) -> "Dataset":
        return Dataset(self.X, Y, self.tasks, self.observed)


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """Mixture parameters: ``beta`` (d, m, k), weights ``pi`` (k) and optional mean shifts ``zeta`` (n, m, k)."""

    beta: np.ndarray
    pi: np.ndarray
    families: Sequence[Family]
    zeta: Optional[np.ndarray] = None
    gamma: float = 1.0

    def __post_init__(self):
        beta = _frozen(self.beta)
        pi = _frozen(self.pi)
        if beta.ndim != 3:
            raise ValueError("beta must have shape (d, m, k)")
        families = tuple(parse_families(self.families))
        if len(families) != beta.shape[1]:
            raise ValueError("families length must equal beta.shape[1]")
        if pi.shape != (beta.shape[2],):
            raise ValueError("pi length must equal the number of components")
        if np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-10:
            raise ValueError(f"pi must be strictly positive and sum to one, got {pi}")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "families", families)
        if self.zeta is not None:
            zeta = _frozen(self.zeta)
            if zeta.ndim != 3 or zeta.shape[1:] != beta.shape[1:]:
                raise ValueError("zeta must have shape (n, m, k)")
            object.__setattr__(self, "zeta", zeta)

    @property
    def d(self) -> int:
        return self.beta.shape[0]

    @property
    def m(self) -> int:
        return self.beta.shape[1]

    @property
    def k(self) -> int:
        return self.beta.shape[2]

    def without_zeta(self) -> "MixtureModel":
        return replace(self, zeta=None) if self.zeta is not None else self


def normalize_pi(weights, floor: float = PI_FLOOR) -> np.ndarray:
    """Project nonnegative weights onto the simplex with every entry at least ``floor``."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    if np.all(w >= floor):
        return w
    low = w < floor
    rest = w[~low].sum()
    out = np.where(low, floor, w * (1.0 - floor * low.sum()) / rest)
    return out / out.sum()


def _check_compatible(model: MixtureModel, data: Dataset):
    if model.d != data.d:
        raise ValueError(f"model has d={model.d} but data has {data.d} features")
    if tuple(model.families) != tuple(data.tasks):
        raise ValueError("model families do not match dataset tasks")


def natural_params(model: MixtureModel, X, zeta: bool = True) -> np.ndarray:
    """``nat[i, j, r] = x_i . beta[:, j, r] + zeta[i, j, r]``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise ValueError(f"X must have {model.d} columns")
    d, m, k = model.beta.shape
    nat = (X @ model.beta.reshape(d, m * k)).reshape(X.shape[0], m, k)
    if zeta and model.zeta is not None:
        if model.zeta.shape[0] != X.shape[0]:
            raise ValueError("zeta was fitted on a different number of samples")
        nat = nat + model.zeta
    return nat


def component_loglik(model: MixtureModel, data: Dataset, task_subset=None, zeta: bool = True) -> np.ndarray:
    """``(n, k)`` matrix of ``sum_{j in Omega_i} log f(y_ij | nat_ijr)``."""
    _check_compatible(model, data)
    nat = natural_params(model, data.X, zeta=zeta)
    dens = data.table.log_density(data.Y0, nat, data.base_measure)
    mask = data.mask
    if task_subset is not None:
        mask = np.zeros_like(mask)
        idx = np.atleast_1d(np.asarray(task_subset))
        mask[:, idx] = data.mask[:, idx]
    return np.einsum("ijr,ij->ir", dens, mask)


def _log_prior(model: MixtureModel, n: int, log_prior=None) -> np.ndarray:
    if log_prior is None:
        return np.broadcast_to(np.log(model.pi), (n, model.k))
    return log_prior


def log_likelihood(model: MixtureModel, data: Dataset, log_prior=None, zeta: bool = True) -> float:
    """Observed-data log-likelihood; ``log_prior`` (n, k) replaces ``log pi`` when given."""
    comp = component_loglik(model, data, zeta=zeta)
    return float(logsumexp(_log_prior(model, data.n, log_prior) + comp, axis=1).sum())


def posterior(comp: np.ndarray, log_prior: np.ndarray) -> np.ndarray:
    a = comp + log_prior
    a = a - a.max(axis=1, keepdims=True)
    np.exp(a, out=a)
    a /= a.sum(axis=1, keepdims=True)
    return a


def responsibilities(model: MixtureModel, data: Dataset, task_subset=None, log_prior=None,
                     zeta: bool = True) -> np.ndarray:
    """Posterior membership probabilities given the observed targets (optionally a task subset).

    A row with no observed target in the subset gets the prior row.
    """
    comp = component_loglik(model, data, task_subset=task_subset, zeta=zeta)
    return posterior(comp, _log_prior(model, data.n, log_prior))


def cluster_assign(rho) -> np.ndarray:
    """Bayes-rule labels; ``argmax`` already returns the lowest index on ties."""
    return np.argmax(np.asarray(rho), axis=1)


def component_means(model: MixtureModel, X) -> np.ndarray:
    """``(n, m, k)`` conditional means ``b'(x beta_jr)`` without mean shifts."""
    nat = natural_params(model, X, zeta=False)
    return TaskTable(model.families).mean(nat)


def impute(model: MixtureModel, data: Dataset, log_prior=None) -> np.ndarray:
    """Fill unobserved targets with the posterior-weighted component means.

    Mean shifts are not used.  Rows with nothing observed fall back to the prior weights.
    """
    rho = responsibilities(model, data, log_prior=log_prior, zeta=False)
    pred = np.einsum("ijr,ir->ij", component_means(model, data.X), rho)
    return np.where(data.observed, data.Y, pred)
