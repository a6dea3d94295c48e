"""Market/loan parameters, payoff, regime classification and analytic region constraints.

All quantities are expressed in the discounted price ``x = exp(-gamma t) s``
with unit volatility.  ``u(x, pi, t)`` is the value function of the
discounted problem; the undiscounted value is recovered with
:func:`to_undiscounted`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class ModelParams:
    """Bull drift ``a``, bear drift ``b``, loan rate ``gamma``, risk-free ``r``,
    principal ``K`` and maturity ``T``.  Volatility is fixed at one."""

    a: float
    b: float
    gamma: float
    r: float
    K: float = 100.0
    T: float = 1.0

    @property
    def delta_drift(self) -> float:
        return self.a - self.b

    @property
    def sigma(self) -> float:
        return 1.0

    def replace(self, **changes) -> "ModelParams":
        kw = dict(a=self.a, b=self.b, gamma=self.gamma, r=self.r, K=self.K, T=self.T)
        kw.update(changes)
        return ModelParams(**kw)

    def as_dict(self) -> dict:
        return dict(a=self.a, b=self.b, gamma=self.gamma, r=self.r, K=self.K, T=self.T)


def validate(params: ModelParams) -> ModelParams:
    """Return ``params`` unchanged if every admissibility inequality holds."""
    vals = params.as_dict()
    for name, v in vals.items():
        if not math.isfinite(float(v)):
            raise DomainError(f"{name} must be finite, got {v!r}")
    if not params.a - params.b > 0:
        raise DomainError(f"drift gap a - b must be > 0 (got {params.a - params.b!r}): Δ ≤ 0")
    if not params.gamma > params.r:
        raise DomainError(f"loan rate must exceed risk-free rate: γ ≤ r ({params.gamma!r} ≤ {params.r!r})")
    if not params.K > 0:
        raise DomainError(f"principal must be positive: K ≤ 0 ({params.K!r})")
    if not params.T > 0:
        raise DomainError(f"maturity must be positive: T ≤ 0 ({params.T!r})")
    return params


def payoff(x, K: float):
    """Obstacle ``(x - K)^+``; works on scalars and arrays."""
    if np.ndim(x) == 0:
        return max(float(x) - K, 0.0)
    return np.maximum(np.asarray(x, dtype=float) - K, 0.0)


def to_undiscounted(value_u, t, gamma: float):
    """Map the discounted value ``u(e^{-γt}s, π, t)`` to ``V(s, π, t) = e^{γt} u``."""
    if np.ndim(value_u) == 0 and np.ndim(t) == 0:
        return math.exp(gamma * t) * float(value_u)
    return np.exp(gamma * np.asarray(t, dtype=float)) * np.asarray(value_u, dtype=float)


class Case(str, Enum):
    CASE0 = "Case0"
    CASE1 = "Case1"
    CASE2 = "Case2"
    CASE3 = "Case3"
    CASE4 = "Case4"


# Constraint kinds.  "continuation" and "boundary-bound" carry a node predicate
# whose true set must contain no redeeming node; "structure" names a rule on
# the shape of the contact set evaluated by the property suite.
KIND_CONTINUATION = "point-in-continuation"
KIND_REDEEM = "point-in-redeem"
KIND_BOUND = "boundary-bound"
KIND_STRUCTURE = "structure"

Predicate = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RegionConstraint:
    kind: str
    tag: str
    description: str
    predicate: Optional[Predicate] = field(default=None, compare=False)
    rule: Optional[str] = None
    # one-cell slack in the pi direction is allowed for envelope checks
    slack_cells: int = 0

    def mask(self, x, pi, t) -> np.ndarray:
        """Nodes where the constraint applies (broadcast over the inputs)."""
        if self.predicate is None:
            raise ValueError(f"constraint {self.tag} has no node predicate")
        x, pi, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(pi, float), np.asarray(t, float))
        return np.asarray(self.predicate(x, pi, t), dtype=bool)


@dataclass(frozen=True)
class RegimeCase:
    case: Case
    high_bull: bool
    constraints: Tuple[RegionConstraint, ...] = ()

    @property
    def id(self) -> str:
        return self.case.value

    def report(self) -> str:
        lines = [f"case={self.case.value} high_bull={str(self.high_bull).lower()}"]
        for c in self.constraints:
            lines.append(f"constraint kind={c.kind} tag={c.tag}: {c.description}")
        return "\n".join(lines)


def classify_regime(params: ModelParams) -> RegimeCase:
    """Assign the unique regime case; exact float comparisons, no tolerance band."""
    a, b, g, r = params.a, params.b, params.gamma, params.r
    if b >= g:
        case = Case.CASE0
    elif r >= a:
        case = Case.CASE1
    elif b > r:
        case = Case.CASE2
    elif b < r:
        # a > r holds here since r >= a was excluded above
        case = Case.CASE3
    else:
        case = Case.CASE4
    high_bull = a > g
    rc = RegimeCase(case, high_bull)
    return RegimeCase(case, high_bull, tuple(theoretical_constraints(rc, params)))


def theoretical_constraints(case: RegimeCase, params: ModelParams) -> list:
    """Analytic inclusions the discrete contact set must respect."""
    a, b, g, r, K = params.a, params.b, params.gamma, params.r, params.K
    d = params.delta_drift
    out = [
        RegionConstraint(
            KIND_CONTINUATION, "regions",
            "{x <= K} in continuation; redeeming region inside {x > K}",
            predicate=lambda x, pi, t: x <= K,
        )
    ]
    cid = case.case
    if cid is Case.CASE0:
        out.append(RegionConstraint(
            KIND_CONTINUATION, "case0-empty", "redeeming region empty (tau* = T)",
            predicate=lambda x, pi, t: np.ones(np.shape(x), dtype=bool),
        ))
    elif cid is Case.CASE1:
        out.append(RegionConstraint(
            KIND_STRUCTURE, "case1-no-upper", "redeeming region is {x >= X1(pi,t)}; X2 absent",
            rule="no_upper_boundary",
        ))
    elif cid is Case.CASE2:
        x2_cap = (g - r) / (b - r) * K
        out.append(RegionConstraint(
            KIND_BOUND, "band-x1", "X1(pi,t) > K",
            predicate=lambda x, pi, t: x <= K,
        ))
        out.append(RegionConstraint(
            KIND_BOUND, "band-x2", f"X2(pi,t) < (gamma-r)/(b-r) K = {x2_cap:.6g}",
            predicate=lambda x, pi, t: x >= x2_cap,
        ))
        if a > g:
            p_cap = (g - b) / d
            out.append(RegionConstraint(
                KIND_CONTINUATION, "high-bull-continuation", f"{{pi >= (gamma-b)/Delta = {p_cap:.6g}}} in continuation",
                predicate=lambda x, pi, t: pi >= p_cap,
            ))
    elif cid is Case.CASE3:
        out.append(RegionConstraint(
            KIND_CONTINUATION, "case3-band",
            "{pi > (gamma-r)K/(Delta x) + (r-b)/Delta} in continuation",
            predicate=lambda x, pi, t: pi > (g - r) * K / (d * x) + (r - b) / d,
        ))
        if a > g:
            p_cap = (g - b) / d
            out.append(RegionConstraint(
                KIND_BOUND, "case3-pi-cap", f"Pi(x,t) < (gamma-b)/Delta = {p_cap:.6g}",
                predicate=lambda x, pi, t: pi >= p_cap,
            ))
        out.append(RegionConstraint(
            KIND_STRUCTURE, "case3-unimodal", "Pi(x,t) first non-decreasing then decreasing in x",
            rule="pi_unimodal",
        ))
    else:
        out.append(RegionConstraint(
            KIND_CONTINUATION, "case4-envelope", "{pi > (gamma-r)K/(Delta x)} in continuation",
            predicate=lambda x, pi, t: pi > (g - r) * K / (d * x),
            slack_cells=1,
        ))
        if a > g:
            p_cap = (g - r) / d
            out.append(RegionConstraint(
                KIND_BOUND, "case4-pi-cap", f"Pi(x,t) < (gamma-r)/Delta = {p_cap:.6g}",
                predicate=lambda x, pi, t: pi >= p_cap,
            ))
        out.append(RegionConstraint(
            KIND_STRUCTURE, "case4-far-positive", "Pi(x,t) > 0 for all large x at fixed t < T",
            rule="pi_positive_at_large_x",
        ))
    return out


def x2_terminal(params: ModelParams, drift: Optional[float] = None) -> float:
    """Terminal upper boundary (gamma-r)/(drift-r) K of the complete-information face (inf if drift <= r)."""
    mu = params.b if drift is None else drift
    if mu <= params.r:
        return math.inf
    return (params.gamma - params.r) / (mu - params.r) * params.K
