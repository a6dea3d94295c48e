"""Stock loan valuation under two-state drift uncertainty.

The posterior probability of the bull drift is filtered from prices; the
borrower's redemption problem is an optimal stopping problem in the
discounted price and that posterior.
"""

__version__ = "0.1.0"

from .model import Case, ModelParams, RegimeCase, classify_regime, payoff, to_undiscounted, validate

__all__ = [
    "Case",
    "ModelParams",
    "RegimeCase",
    "classify_regime",
    "payoff",
    "to_undiscounted",
    "validate",
    "__version__",
]
