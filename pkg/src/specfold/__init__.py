"""Spectral-Galerkin truncations of a fast-slow fold system.

Truncated ODE right-hand sides, blow-up charts K1/K2/K3 with their
transition maps, the Riccati special orbit and its asymptote constant,
and closed-form finite-time blow-up bounds for the two-mode system.
"""

__version__ = "0.1.0"

from . import spectral
from . import vectorfields
from . import integrate
from . import manifold
from . import charts
from . import foldbound
from . import cli

__all__ = [
    "spectral",
    "vectorfields",
    "integrate",
    "manifold",
    "charts",
    "foldbound",
    "cli",
    "__version__",
]
