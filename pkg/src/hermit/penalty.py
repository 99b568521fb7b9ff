"""Lasso and row-group-lasso penalties weighted by mixture proportions, with their proximal maps."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np


class PenaltyKind(str, enum.Enum):
    ENTRYWISE = "entrywise"
    ROWGROUP = "rowgroup"

    @classmethod
    def parse(cls, name: str) -> "PenaltyKind":
        aliases = {"lasso": cls.ENTRYWISE, "l1": cls.ENTRYWISE, "group": cls.ROWGROUP,
                   "group_lasso": cls.ROWGROUP, "gs": cls.ROWGROUP}
        name = name.strip().lower()
        return aliases.get(name) or cls(name)


@dataclass(frozen=True)
class PenaltyConfig:
    """``lam * sum_r pi_r**gamma * ||beta_r||`` with the entrywise or row-group norm.

    ``exempt_intercept=None`` means: exempt the first feature row iff the data has an
    all-ones first column.
    """

    kind: PenaltyKind = PenaltyKind.ENTRYWISE
    lam: float = 0.0
    gamma: float = 1.0
    exempt_intercept: Optional[bool] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PenaltyKind.parse(self.kind) if isinstance(self.kind, str)
                           else PenaltyKind(self.kind))
        if not self.lam >= 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")

    @classmethod
    def from_dict(cls, d: dict) -> "PenaltyConfig":
        return cls(kind=d.get("kind", "entrywise"), lam=float(d.get("lambda", 0.0)),
                   gamma=float(d.get("gamma", 1.0)), exempt_intercept=d.get("exempt_intercept"))

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "lambda": self.lam, "gamma": self.gamma,
                "exempt_intercept": self.exempt_intercept}


def weights(pi, gamma: float) -> np.ndarray:
    return np.asarray(pi, dtype=float) ** gamma


def row_norms(beta) -> np.ndarray:
    """``(d, k)`` l2 norms of the rows of each ``beta_r``."""
    return np.sqrt(np.einsum("djr,djr->dr", beta, beta))


def norms(beta, kind: PenaltyKind, exempt_first_row: bool = False) -> np.ndarray:
    """Per-component norms ``||beta_r||_1`` or ``||beta_r||_{1,2}``; shape (k,)."""
    b = beta[1:] if exempt_first_row else beta
    if kind is PenaltyKind.ENTRYWISE:
        return np.abs(b).sum(axis=(0, 1))
    return row_norms(b).sum(axis=0)


def value(beta, pi, cfg: PenaltyConfig, exempt_first_row: bool = False) -> float:
    beta = np.asarray(beta, dtype=float)
    if cfg.lam == 0:
        return 0.0
    return float(cfg.lam * weights(pi, cfg.gamma) @ norms(beta, cfg.kind, exempt_first_row))


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def group_soft_threshold(z, t, axis):
    """Shrink each slice along ``axis`` towards zero by ``t`` in l2 norm."""
    norm = np.sqrt(np.sum(z * z, axis=axis, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norm > t, 1.0 - t / norm, 0.0)
    return z * scale


def prox(z, threshold, kind: PenaltyKind):
    """Proximal map of ``threshold * norm`` applied to a (d, m) slice (rows are the groups).

    ``threshold`` may be a scalar or broadcast against a trailing component axis.
    """
    if np.any(np.asarray(threshold) < 0):
        raise ValueError("threshold must be non-negative")
    z = np.asarray(z, dtype=float)
    kind = PenaltyKind(kind)
    if kind is PenaltyKind.ENTRYWISE:
        return soft_threshold(z, threshold)
    if z.ndim == 1:
        return group_soft_threshold(z, threshold, axis=0)
    return group_soft_threshold(z, threshold, axis=1)
