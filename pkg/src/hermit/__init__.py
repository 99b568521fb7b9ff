"""Penalized finite-mixture regression for incomplete mixed-type multi-task targets."""
from .expfamily import BERNOULLI, GAUSSIAN, POISSON, DomainError, Family, Kind
from .model import (Dataset, MixtureModel, cluster_assign, impute, log_likelihood, natural_params,
                    responsibilities)
from .penalty import PenaltyConfig, PenaltyKind
from .solver import FitConfig, FitReport, NumericalError, apg_minimize, fit, objective

__version__ = "0.1.0"
