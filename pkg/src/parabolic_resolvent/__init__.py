"""Resolvent and maximal-regularity solvers for parabolic systems.

Solves lam R v - div(B grad v) = f with conormal flux data on periodic
boxes, half spaces and bounded domains, and the matching time-dependent
problem R u_t - div(B grad u) = F.  Every solver reports the norms and
residuals needed to check its estimates numerically.
"""

__version__ = "0.1.0"

from .core import (CoefficientPair, DiscreteNorms, GridField, PeriodicBox, Sector,  # noqa: E402
                   make_constant_pair, make_variable_pair, norm)
from .errors import ConfigError, NumericalFailure, ParabolicResolventError  # noqa: E402

__all__ = [
    "CoefficientPair", "DiscreteNorms", "GridField", "PeriodicBox", "Sector",
    "make_constant_pair", "make_variable_pair", "norm",
    "ConfigError", "NumericalFailure", "ParabolicResolventError", "__version__",
]
