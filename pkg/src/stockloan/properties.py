"""Pass/fail invariant checks on solved surfaces, boundaries and oracle estimates.

Each check returns a :class:`CheckReport`.  Value comparisons use ``tol * K``;
slope comparisons use the same number as an absolute slope tolerance.  A 1-D
face curve is treated as a surface with a single pi column.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .boundary1d import DEFAULT_TOL, ValueCurve1D
from .model import (KIND_STRUCTURE, ModelParams, RegimeCase, classify_regime, payoff)
from .vi2d import FreeBoundary2D, ValueSurface

REFINEMENT_RATIO = 1.5
ORACLE_TOL = 1e-2


@dataclass(frozen=True)
class CheckReport:
    check: str
    passed: bool
    worst: float
    loc: tuple
    tol: float

    def csv_line(self) -> str:
        loc = ":".join(str(int(i)) for i in self.loc)
        return f"{self.check},{str(self.passed).lower()},{self.worst!r},{loc},{self.tol!r}"


def reports_to_csv(reports: Iterable[CheckReport], fh=None) -> str:
    buf = io.StringIO() if fh is None else fh
    buf.write("check,pass,worst,loc,tol\n")
    for r in reports:
        buf.write(r.csv_line() + "\n")
    return buf.getvalue() if fh is None else ""


def exit_code(reports: Iterable[CheckReport]) -> int:
    return 0 if all(r.passed for r in reports) else 3


def _report(name, excess, tol, loc_shape=None):
    """Report from an array of signed excesses (positive = violation beyond zero)."""
    excess = np.asarray(excess, dtype=float)
    if excess.size == 0:
        return CheckReport(name, True, 0.0, (), tol)
    k = int(np.argmax(excess))
    worst = float(excess.flat[k])
    loc = np.unravel_index(k, excess.shape)
    worst = max(worst, 0.0)
    return CheckReport(name, worst <= tol, worst, tuple(int(i) for i in loc), tol)


def _combine(name, reports, tol):
    worst = max(reports, key=lambda r: r.worst - r.tol)
    return CheckReport(name, all(r.passed for r in reports), worst.worst, worst.loc, tol)


def _as_cube(surface):
    """``(u[n, i, j], x, pi or None, t, K)`` for a 2-D surface or a 1-D curve."""
    if isinstance(surface, ValueSurface):
        g = surface.grid
        return surface.u, g.x, g.pi, g.t, surface.params.K
    if isinstance(surface, ValueCurve1D):
        g = surface.grid
        return surface.u[:, :, None], g.x, None, g.t, surface.K
    raise TypeError(f"unsupported surface type {type(surface).__name__}")


# --- regularity ---------------------------------------------------------------

def check_bounds(surface, params: ModelParams, tol: float = DEFAULT_TOL) -> CheckReport:
    """``payoff - tol K <= u <= x e^{(a-r)^+ (T-t)} + tol K``, equality at maturity."""
    u, x, _, t, K = _as_cube(surface)
    phi = payoff(x, K)[None, :, None]
    tk = tol * K
    growth = np.exp(max(params.a - params.r, 0.0) * (params.T - t))[:, None, None]
    upper = x[None, :, None] * growth
    lo = _report("bounds-lower", (phi - u), tk)
    hi = _report("bounds-upper", (u - upper), tk)
    term = _report("bounds-terminal", np.abs(u[-1] - phi[0]), tk)
    return _combine("bounds", [lo, hi, term], tk)


def check_monotone_convex(surface, tol: float = DEFAULT_TOL) -> CheckReport:
    """Non-decreasing in pi and x, non-increasing in t, convex in x."""
    u, x, pi, t, K = _as_cube(surface)
    tk = tol * K
    parts = [
        _report("monotone-x", -(u[:, 1:] - u[:, :-1]), tk),
        _report("monotone-t", -(u[:-1] - u[1:]), tk),
    ]
    if u.shape[2] > 1:
        parts.append(_report("monotone-pi", -(u[:, :, 1:] - u[:, :, :-1]), tk))
    slope = (u[:, 1:] - u[:, :-1]) / np.diff(x)[None, :, None]
    parts.append(_report("convex-x", -(slope[:, 1:] - slope[:, :-1]), tk))
    return _combine("monotone-convex", parts, tk)


def lipschitz_quotients(surface, params: ModelParams):
    """Max normalised pi- and t-difference quotients on adjacent nodes.

    pi: ``|u(pi') - u(pi)| / (x (T - t) (pi' - pi))`` over ``t < T``;
    t: ``|u(s) - u(t)| / (x sqrt(t - s))``.  The pi quotient is NaN for a 1-D curve.
    """
    u, x, pi, t, _ = _as_cube(surface)
    xs = x[None, :, None]
    dt = np.diff(t)[:, None, None]
    qt = float(np.max(np.abs(u[1:] - u[:-1]) / (xs * np.sqrt(dt))))
    if pi is None or pi.size < 2:
        return math.nan, qt
    tau = (params.T - t[:-1])[:, None, None]
    dpi = np.diff(pi)[None, None, :]
    qp = float(np.max(np.abs(u[:-1, :, 1:] - u[:-1, :, :-1]) / (xs * tau * dpi)))
    return qp, qt


def check_lipschitz(surface, params: ModelParams, tol: float = DEFAULT_TOL, coarse=None,
                    ratio: float = REFINEMENT_RATIO) -> CheckReport:
    """x-slope bound ``e^{(a-r)^+ (T-t)}`` and, given a coarse twin, refinement stability.

    ``coarse`` is a solution on the grid with every size halved; the pi- and
    t-quotients of ``surface`` must not exceed ``ratio`` times those of ``coarse``.
    """
    u, x, _, t, K = _as_cube(surface)
    tk = tol * K
    slope = (u[:, 1:] - u[:, :-1]) / np.diff(x)[None, :, None]
    cap = np.exp(max(params.a - params.r, 0.0) * (params.T - t))[:, None, None]
    parts = [_report("lipschitz-x", slope - cap, tk)]
    if coarse is not None:
        qp_f, qt_f = lipschitz_quotients(surface, params)
        qp_c, qt_c = lipschitz_quotients(coarse, params)
        for name, f, c in (("refine-pi", qp_f, qp_c), ("refine-t", qt_f, qt_c)):
            if math.isnan(f) or math.isnan(c):
                continue
            r = f / c if c > 0 else (0.0 if f == 0 else math.inf)
            parts.append(CheckReport(name, r <= ratio, r, (), ratio))
    return _combine("lipschitz", parts, tk)


# --- geometry -----------------------------------------------------------------

def _structure_report(rule, boundary: FreeBoundary2D, interior):
    c = boundary.contact[:, :, interior]
    nx = boundary.x.size
    dpi = float(boundary.pi[1] - boundary.pi[0])
    if rule == "no_upper_boundary":
        has = c.any(axis=1)
        last = nx - 1 - np.argmax(c[:, ::-1, :], axis=1)
        bad = has & (last != nx - 1)
        return _count_report("structure-no-upper", bad)
    pis = boundary.pi[interior]
    any_p = c.any(axis=2)
    top = c.shape[2] - 1 - np.argmax(c[:, :, ::-1], axis=2)
    Pi = np.where(any_p, pis[top], 0.0)
    if rule == "pi_unimodal":
        bad = np.zeros(Pi.shape, dtype=bool)
        for n in range(Pi.shape[0]):
            row = Pi[n]
            k = int(np.argmax(row))
            rise = np.diff(row[: k + 1])
            fall = np.diff(row[k:])
            bad[n, 1: k + 1] = rise < -dpi - 1e-12
            bad[n, k + 1:] = fall > dpi + 1e-12
        return _count_report("structure-pi-unimodal", bad)
    if rule == "pi_positive_at_large_x":
        return _count_report("structure-pi-positive", ~(Pi[:, -1] > 0))
    raise ValueError(f"unknown structure rule {rule!r}")


def _count_report(name, bad):
    bad = np.asarray(bad, dtype=bool)
    n = int(np.count_nonzero(bad))
    loc = tuple(int(i) for i in np.argwhere(bad)[0]) if n else ()
    return CheckReport(name, n == 0, float(n), loc, 0.0)


def _monotone_boundary_reports(boundary: FreeBoundary2D, h: float, dpi: float):
    grow = math.exp(h) * (1 + 1e-12)
    x1, x2, Pi = boundary.x1, boundary.x2, boundary.Pi
    inner = slice(1, -1)

    def both(a, b):
        return ~np.isnan(a) & ~np.isnan(b)

    out = []
    a, b = x1[1:, inner], x1[:-1, inner]
    out.append(_count_report("x1-nonincreasing-t", both(a, b) & (a > b * grow)))
    a, b = x2[1:, inner], x2[:-1, inner]
    out.append(_count_report("x2-nondecreasing-t", both(a, b) & (a < b / grow)))
    a, b = x1[:, 2:-1], x1[:, 1:-2]
    out.append(_count_report("x1-nondecreasing-pi", both(a, b) & (a < b / grow)))
    a, b = x2[:, 2:-1], x2[:, 1:-2]
    out.append(_count_report("x2-nonincreasing-pi", both(a, b) & (a > b * grow)))
    out.append(_count_report("Pi-nondecreasing-t", Pi[1:] < Pi[:-1] - dpi - 1e-12))
    return out


def region_reports(boundary: FreeBoundary2D, params: ModelParams, regime: Optional[RegimeCase] = None):
    """One report per analytic constraint, structure rule and boundary monotonicity law.

    Constraints are evaluated on interior pi nodes at ``t < T``; a constraint
    with ``slack_cells = k`` only counts a contact node when the predicate also
    holds ``k`` pi cells lower.
    """
    regime = classify_regime(params) if regime is None else regime
    pi = boundary.pi
    interior = (pi > 0) & (pi < 1)
    dpi = float(pi[1] - pi[0])
    h = float(np.log(boundary.x[1] / boundary.x[0]))
    c = boundary.contact[:, :, interior]
    X = boundary.x[None, :, None]
    P = pi[interior][None, None, :]
    Tn = boundary.t[:, None, None]
    out = []
    for con in regime.constraints:
        if con.kind == KIND_STRUCTURE:
            out.append(_structure_report(con.rule, boundary, interior))
            continue
        mask = con.mask(X, P - con.slack_cells * dpi, Tn)
        out.append(_count_report(con.tag, c & mask))
    out.append(_count_report("single-interval", np.array([boundary.interval_violations > 0])))
    out.extend(_monotone_boundary_reports(boundary, h, dpi))
    return out


def check_regions(surface: ValueSurface, boundary: FreeBoundary2D, params: ModelParams) -> CheckReport:
    """Zero contact nodes inside any region the analysis puts in continuation."""
    reports = region_reports(boundary, params)
    worst = max(reports, key=lambda r: r.worst)
    return CheckReport("regions", all(r.passed for r in reports), worst.worst, worst.loc, 0.0)


def check_boundary_1d(boundary, tol_cells: int = 1) -> CheckReport:
    """Face boundaries: ``X1`` non-increasing and ``X2`` non-decreasing in t within one cell."""
    cells = boundary.cell
    h = float(np.max(cells)) if cells is not None and cells.size else 0.0
    grow = math.exp(tol_cells * h) * (1 + 1e-12)
    x1, x2 = boundary.x1, boundary.x2
    ok1 = ~np.isnan(x1[1:]) & ~np.isnan(x1[:-1])
    ok2 = ~np.isnan(x2[1:]) & ~np.isnan(x2[:-1])
    bad = np.concatenate([ok1 & (x1[1:] > x1[:-1] * grow), ok2 & (x2[1:] < x2[:-1] / grow)])
    return _count_report("boundary-1d-monotone", bad)


# --- oracles --------------------------------------------------------------------

def check_oracle_agreement(surface, estimates: Sequence, point, tol: Optional[float] = None) -> CheckReport:
    """``|u(point) - estimate| <= 2 stderr + tol`` per oracle.

    European estimates only bound the value from below, so for them the test
    is one-sided.  ``tol`` defaults to ``1e-2 K``; a lattice estimate adds its
    refinement error estimate.
    """
    x0, pi0, t0 = point
    if isinstance(surface, ValueSurface):
        K = surface.params.K
        n = int(np.argmin(np.abs(surface.grid.t - t0)))
        value = surface.at(x0, pi0, n)
    else:
        K = surface.K
        n = int(np.argmin(np.abs(surface.grid.t - t0)))
        value = surface.at(x0, n)
    tk = ORACLE_TOL * K if tol is None else tol
    parts = []
    for k, e in enumerate(estimates):
        band = 2.0 * e.stderr + tk + e.error_estimate
        if e.method == "european":
            gap = e.estimate - value - band
        else:
            gap = abs(value - e.estimate) - band
        parts.append(CheckReport(f"oracle-{e.method}", gap <= 0, max(gap + band, 0.0), (k,), band))
    if not parts:
        return CheckReport("oracle", True, 0.0, (), tk)
    worst = max(parts, key=lambda r: r.worst - r.tol)
    return CheckReport("oracle", all(r.passed for r in parts), worst.worst, worst.loc, worst.tol)


def regularity_suite(surface, params: ModelParams, tol: float = DEFAULT_TOL, coarse=None):
    return [
        check_bounds(surface, params, tol),
        check_monotone_convex(surface, tol),
        check_lipschitz(surface, params, tol, coarse),
    ]
