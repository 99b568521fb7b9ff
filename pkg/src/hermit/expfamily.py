"""Exponential-dispersion family primitives for Gaussian, Bernoulli and Poisson targets.

Every density is written in canonical form::

    log f(y | nat) = (y * nat - b(nat)) / a + c(y, a)

with the natural parameter ``nat``.  All functions broadcast over numpy arrays.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, gammaln

NAT_CLIP = 30.0
_LOG_2PI = np.log(2.0 * np.pi)


class DomainError(ValueError):
    """Raised when an observation lies outside the support of its family."""


class Kind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    BERNOULLI = "bernoulli"
    POISSON = "poisson"


@dataclass(frozen=True)
class Family:
    """A single target's distribution: kind plus dispersion ``a(phi)``.

    The dispersion is the Gaussian variance; Bernoulli and Poisson are pinned to 1.
    """

    kind: Kind
    dispersion: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not np.isfinite(self.dispersion) or self.dispersion <= 0:
            raise ValueError(f"dispersion must be positive, got {self.dispersion}")
        if self.kind is not Kind.GAUSSIAN and self.dispersion != 1.0:
            raise ValueError(f"{self.kind.value} family has fixed dispersion 1")

    @classmethod
    def parse(cls, name: str) -> "Family":
        return cls(Kind(name.strip().lower()))

    @classmethod
    def gaussian(cls, sigma: float = 1.0) -> "Family":
        return cls(Kind.GAUSSIAN, float(sigma) ** 2)

    def __str__(self):
        return self.kind.value


GAUSSIAN = Family(Kind.GAUSSIAN)
BERNOULLI = Family(Kind.BERNOULLI)
POISSON = Family(Kind.POISSON)


def parse_families(names: Sequence[str | Family]) -> list[Family]:
    return [f if isinstance(f, Family) else Family.parse(f) for f in names]


def check_support(fam: Family, y) -> None:
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DomainError(f"non-finite observation for {fam} target")
    if fam.kind is Kind.BERNOULLI and not np.all((y == 0) | (y == 1)):
        raise DomainError("bernoulli observations must be 0 or 1")
    if fam.kind is Kind.POISSON and not np.all((y >= 0) & (y == np.round(y))):
        raise DomainError("poisson observations must be non-negative integers")


def _check_nat(nat):
    nat = np.asarray(nat, dtype=float)
    if not np.all(np.isfinite(nat)):
        raise DomainError("natural parameter must be finite")
    return nat


def cumulant(fam: Family, nat):
    """The log-partition ``b(nat)``."""
    return _cumulant_unchecked(fam.kind, np.asarray(nat, dtype=float))


def _cumulant_unchecked(kind: Kind, nat):
    if kind is Kind.GAUSSIAN:
        return 0.5 * nat ** 2
    if kind is Kind.BERNOULLI:
        return _softplus(nat)
    return np.exp(np.clip(nat, -NAT_CLIP, NAT_CLIP))


def _softplus(x):
    # log(1 + e^x) without overflow; much faster than logaddexp
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return np.logaddexp(0.0, x)
    out = np.negative(np.abs(x))
    np.exp(out, out=out)
    np.log1p(out, out=out)
    out += np.maximum(x, 0.0)
    return out


def mean(fam: Family, nat):
    """Conditional mean ``b'(nat)``."""
    nat = _check_nat(nat)
    return _mean_unchecked(fam.kind, nat)


def _mean_unchecked(kind: Kind, nat):
    if kind is Kind.GAUSSIAN:
        return nat
    if kind is Kind.BERNOULLI:
        return expit(nat)
    return np.exp(np.clip(nat, -NAT_CLIP, NAT_CLIP))


def base_measure(fam: Family, y):
    """``c(y, a)``; zero for Bernoulli."""
    y = np.asarray(y, dtype=float)
    if fam.kind is Kind.GAUSSIAN:
        return -0.5 * y ** 2 / fam.dispersion - 0.5 * (_LOG_2PI + np.log(fam.dispersion))
    if fam.kind is Kind.BERNOULLI:
        return np.zeros_like(y)
    return -gammaln(y + 1.0)


def log_density(fam: Family, y, nat):
    """Log-density of ``y`` given the natural parameter, finite for any finite ``nat``."""
    check_support(fam, y)
    nat = _check_nat(nat)
    y = np.asarray(y, dtype=float)
    if fam.kind is Kind.GAUSSIAN:
        # direct residual form keeps precision when y and nat are both large
        return -0.5 * (y - nat) ** 2 / fam.dispersion - 0.5 * (_LOG_2PI + np.log(fam.dispersion))
    if fam.kind is Kind.POISSON:
        nat = np.clip(nat, -NAT_CLIP, NAT_CLIP)
    return (y * nat - cumulant(fam, nat)) / fam.dispersion + base_measure(fam, y)


def nll_grad_nat(fam: Family, y, nat):
    """Derivative of ``-log_density`` with respect to ``nat``: ``(b'(nat) - y) / a``."""
    check_support(fam, y)
    nat = _check_nat(nat)
    return (_mean_unchecked(fam.kind, nat) - np.asarray(y, dtype=float)) / fam.dispersion


class TaskTable:
    """Column-wise view of a family list used by the vectorised fitting code.

    Evaluates ``b``, ``b'`` and ``c`` over an ``(n, m, ...)`` array whose second
    axis indexes tasks.
    """

    def __init__(self, families: Sequence[Family]):
        self.families = list(families)
        self.m = len(self.families)
        kinds = [f.kind for f in self.families]
        self.groups = {
            kind: np.flatnonzero([k is kind for k in kinds]) for kind in Kind
        }
        self.groups = {k: v for k, v in self.groups.items() if v.size}
        # contiguous task blocks are addressed by slices to avoid fancy-index copies
        self._index = {k: slice(v[0], v[-1] + 1) if np.all(np.diff(v) == 1) else v
                       for k, v in self.groups.items()}
        self.dispersion = np.array([f.dispersion for f in self.families])
        self.all_unit = bool(np.all(self.dispersion == 1.0))

    def _apply(self, nat, fn):
        if len(self.groups) == 1:
            (kind, _), = self.groups.items()
            return fn(kind, nat)
        out = np.empty_like(nat)
        for kind, idx in self._index.items():
            out[:, idx] = fn(kind, nat[:, idx])
        return out

    def cumulant(self, nat):
        return self._apply(nat, _cumulant_unchecked)

    def mean(self, nat):
        return self._apply(nat, _mean_unchecked)

    def scale(self, arr):
        """Divide an ``(n, m, ...)`` array by the per-task dispersion."""
        if self.all_unit:
            return arr
        shape = (1, self.m) + (1,) * (arr.ndim - 2)
        return arr / self.dispersion.reshape(shape)

    def base_measure(self, Y):
        """``c(y)`` for an ``(n, m)`` target matrix with zero-filled missing entries."""
        out = np.zeros_like(Y, dtype=float)
        for j, fam in enumerate(self.families):
            out[:, j] = base_measure(fam, Y[:, j])
        return out

    def log_density(self, Y, nat, C=None):
        """Elementwise log-density for targets ``Y`` (n, m) against ``nat`` (n, m, k).

        ``C`` is the precomputed base measure; missing entries must be masked by the caller.
        """
        if C is None:
            C = self.base_measure(Y)
        nat = self.clip(nat)
        return self.scale(Y[:, :, None] * nat - self.cumulant(nat)) + C[:, :, None]

    def clip(self, nat):
        """Clamp Poisson columns before exponentiation; other columns pass through."""
        if Kind.POISSON not in self.groups:
            return nat
        out = nat.copy()
        idx = self._index[Kind.POISSON]
        out[:, idx] = np.clip(nat[:, idx], -NAT_CLIP, NAT_CLIP)
        return out
