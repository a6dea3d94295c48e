"""Complete-information faces pi = 0 and pi = 1.

On a face the drift is known (``b`` or ``a``) and the problem is a
one-dimensional obstacle problem for

    u_t + 1/2 x^2 u_xx + (mu - gamma) x u_x + (gamma - r) u = 0

with obstacle ``(x - K)^+``.  The solver marches the penalised equation
backwards in time on a log-uniform grid with fully implicit steps.  The
closed-form objects used to pin or bound its free boundaries (the European
lower bound ``g`` and the super-solutions ``v``, ``w``) live here as well.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtr

from .errors import ConvergenceError, DomainError, GridError
from .grids import Grid1D
from .model import ModelParams, payoff, validate

DEFAULT_TOL = 1e-6
PENALTY_SCALE = 1e8
MAX_PENALTY_ITER = 60

NO_BOUNDARY = "NoBoundary"
SINGLE = "SingleBoundary"
TWO = "TwoBoundaries"
TWO_VANISHING = "TwoBoundariesVanishing"


def default_penalty(params: ModelParams) -> float:
    return PENALTY_SCALE * (params.gamma - params.r)


def resolve_drift(params: ModelParams, drift: Union[str, float]) -> float:
    if isinstance(drift, str):
        if drift == "b":
            return params.b
        if drift == "a":
            return params.a
        raise ValueError(f"drift selector must be 'a' or 'b', got {drift!r}")
    return float(drift)


def log_stencil(h: float, mu: float):
    """Weights ``(lower, upper)`` of 1/2 u_yy + mu u_y on a uniform log grid.

    Central differences while they stay monotone, upwinding otherwise.
    """
    diff = 0.5 / (h * h)
    if abs(mu) * h <= 1.0:
        return diff - 0.5 * mu / h, diff + 0.5 * mu / h
    if mu > 0:
        return diff, diff + mu / h
    return diff - mu / h, diff


def far_field_theta(x: np.ndarray) -> float:
    """Factor for ``u_N = (1 + θ) u_{N-1} - θ u_{N-2}``: zero second x-difference."""
    return float((x[-1] - x[-2]) / (x[-2] - x[-3]))


STICKY_AFTER = 8


def _step_obstacle(phi, cur, far):
    """Obstacle for one backward step; on the far-field row it also carries the
    later time level, since the value cannot decrease with time to maturity."""
    obs = phi.copy()
    obs[far] = np.maximum(phi[far], cur[far])
    return obs


def _update_active(new, phi, penal, far, far_est, active, it):
    """Next penalty active set.

    Interior nodes are active where ``u < payoff``.  On the far-field row the
    complementarity is ``u_N = max(extrapolation, payoff)``, so activity is
    judged on the extrapolated value ``far_est``.  That row is not an
    M-matrix row; after ``STICKY_AFTER`` sweeps far-field activations are
    frozen to rule out cycling.
    """
    out = (new < phi) & penal
    out[far] = far_est < phi[far]
    if it >= STICKY_AFTER:
        out |= active & far
    return out


@dataclass(frozen=True)
class ValueCurve1D:
    """Solved face value ``u[n, i] = u0(x_i, t_n)``."""

    grid: Grid1D
    u: np.ndarray
    drift: float
    K: float
    penalty: float
    penalty_residual: float
    iterations: int = 0

    @property
    def obstacle(self) -> np.ndarray:
        return payoff(self.grid.x, self.K)

    def at(self, x: float, n: int) -> float:
        """Linear interpolation in x at time node ``n``."""
        return float(np.interp(x, self.grid.x, self.u[n]))

    def to_csv(self, fh=None) -> str:
        """``# grid: ..`` header then ``t,x,u`` rows."""
        buf = io.StringIO() if fh is None else fh
        g = self.grid
        buf.write(f"# grid: nx={g.nx} nt={g.nt} xmin={g.x_min!r} xmax={g.x_max!r}\n")
        buf.write("t,x,u\n")
        for n in range(g.nt + 1):
            for i in range(g.nx):
                buf.write(f"{g.t[n]!r},{g.x[i]!r},{self.u[n, i]!r}\n")
        return buf.getvalue() if fh is None else ""


def solve_vi_1d(params: ModelParams, drift: Union[str, float] = "b", grid: Optional[Grid1D] = None,
                penalty: Optional[float] = None, max_iter: int = MAX_PENALTY_ITER) -> ValueCurve1D:
    """Backward implicit penalty solve of the face obstacle problem.

    Boundary behaviour: ``u = 0`` at ``x_min``; zero second x-difference at
    ``x_max``, with the obstacle also enforced there.  The reported residual is ``max(payoff - u, 0)`` over all nodes.
    """
    validate(params)
    mu_face = resolve_drift(params, drift)
    if grid is None:
        grid = Grid1D.build(params)
    if grid.nx < 16 or grid.x[0] <= 0 or np.any(np.diff(grid.x) <= 0):
        raise GridError("invalid 1-D grid")
    rho = default_penalty(params) if penalty is None else float(penalty)
    if not rho > 0:
        raise ValueError("penalty must be positive")

    x = grid.x
    nx, nt, dt, h = grid.nx, grid.nt, grid.dt, grid.h
    phi = payoff(x, params.K)
    lo, up = log_stencil(h, mu_face - params.gamma - 0.5)
    growth = params.gamma - params.r
    theta = far_field_theta(x)

    # row 0: Dirichlet zero; last row: zero second difference (two below the diagonal)
    diag = np.full(nx, 1.0 + dt * (lo + up) - dt * growth)
    sub = np.full(nx, -dt * lo)
    sup = np.full(nx, -dt * up)
    diag[0], sup[0] = 1.0, 0.0
    diag[-1], sub[-1] = 1.0, -(1.0 + theta)
    penal = np.ones(nx, dtype=bool)
    penal[0] = False
    far = np.zeros(nx, dtype=bool)
    far[-1] = True

    ab = np.zeros((4, nx))
    ab[0, 1:] = sup[:-1]
    ab[2, :-1] = sub[1:]
    ab[3, -3] = theta
    u = np.empty((nt + 1, nx))
    u[nt] = phi
    cur = phi.copy()
    total_iter = 0
    for n in range(nt - 1, -1, -1):
        rhs0 = cur.copy()
        rhs0[0] = 0.0
        rhs0[-1] = 0.0
        obs = _step_obstacle(phi, cur, far)
        active = (cur < obs) & penal
        for it in range(max_iter):
            pen = np.where(active, dt * rho, 0.0)
            ab[1] = diag + pen
            new = solve_banded((2, 1), ab, rhs0 + pen * obs)
            far_est = (1.0 + theta) * new[-2] - theta * new[-3]
            new_active = _update_active(new, obs, penal, far, far_est, active, it)
            if np.array_equal(new_active, active):
                break
            active = new_active
        else:
            raise ConvergenceError(f"penalty iteration exceeded {max_iter} at time node {n}")
        total_iter += it + 1
        u[n] = new
        cur = new
    resid = float(np.max(np.maximum(phi[None, :] - u, 0.0)))
    return ValueCurve1D(grid, u, mu_face, params.K, rho, resid, total_iter)


# --- closed forms -----------------------------------------------------------

def european_lower_bound_g(params: ModelParams, x, t, drift: Optional[float] = None):
    """Value of holding to maturity on the bear face (``drift`` defaults to ``b``)."""
    mu = params.b if drift is None else float(drift)
    g, r, K = params.gamma, params.r, params.K
    tau = params.T - np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(tau <= 0):
        raise DomainError("g is defined for t < T")
    sq = np.sqrt(tau)
    with np.errstate(divide="ignore"):
        lx = np.log(x) - math.log(K)
    d1 = (lx - (g - mu - 0.5) * tau) / sq
    d2 = (lx - (g - mu + 0.5) * tau) / sq
    out = x * np.exp((mu - r) * tau) * ndtr(d1) - K * np.exp((g - r) * tau) * ndtr(d2)
    out = np.where(x > 0, out, 0.0)
    return float(out) if out.ndim == 0 else out


def gamma0(params: ModelParams) -> float:
    """Loan-rate threshold b + 1/2 + sqrt(2b - 2r) for the bear face."""
    return params.b + 0.5 + math.sqrt(2 * params.b - 2 * params.r)


@dataclass(frozen=True)
class SuperSolution:
    lam: float
    x_touch: float
    K: float

    def power_branch(self, x):
        x = np.asarray(x, dtype=float)
        lam = self.lam
        return (x / lam) ** lam * ((lam - 1.0) / self.K) ** (lam - 1.0)


def super_solution_v(params: ModelParams, x=None):
    """Power super-solution touching the obstacle at ``x0 = (1 + 1/sqrt(2b-2r)) K``.

    Returns ``(v(x), x0)``; with ``x=None`` only the touch point is meaningful
    and ``v(x0)`` is returned in its place.
    """
    if not (params.gamma > params.b > params.r):
        raise DomainError("v requires gamma > b > r")
    g0 = gamma0(params)
    if params.gamma < g0 * (1 - 1e-12):
        raise DomainError(f"v requires gamma >= gamma0 = {g0:.6g}")
    ss = SuperSolution(1.0 + math.sqrt(2 * params.b - 2 * params.r), 0.0, params.K)
    x0 = ss.lam / (ss.lam - 1.0) * params.K
    xs = x0 if x is None else x
    val = ss.power_branch(xs)
    return (float(val) if np.ndim(val) == 0 else val), x0


def super_solution_w(params: ModelParams, x=None):
    """Super-solution for the ``b = r`` face when ``gamma > r + 1/2``.

    Power branch below ``x1 = 2(γ-r)/(2(γ-r)-1) K``, obstacle above it.
    Returns ``(w(x), x1)``.
    """
    if params.gamma <= params.r + 0.5:
        raise DomainError("w requires gamma > r + 1/2")
    if params.b != params.r:
        raise DomainError("w requires b == r")
    lam = 2.0 * (params.gamma - params.r)
    ss = SuperSolution(lam, 0.0, params.K)
    x1 = lam / (lam - 1.0) * params.K
    xs = np.asarray(x1 if x is None else x, dtype=float)
    val = np.where(xs < x1, ss.power_branch(np.minimum(xs, x1)), np.maximum(xs - params.K, 0.0))
    return (float(val) if val.ndim == 0 else val), x1


# --- free boundary extraction ----------------------------------------------

@dataclass(frozen=True)
class Boundary1D:
    """Per time node ``t < T``: lower/upper contact points (NaN when absent)."""

    t: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    structure: str
    x_max: float
    disappearance_time: Optional[float] = None
    cell: np.ndarray = field(default=None, repr=False)

    @property
    def has_contact(self) -> np.ndarray:
        return ~np.isnan(self.x1)

    def to_csv(self, fh=None) -> str:
        """``t,x1,x2,structure`` rows; absent boundaries are empty fields."""
        buf = io.StringIO() if fh is None else fh
        buf.write("t,x1,x2,structure\n")
        for t, a, b in zip(self.t, self.x1, self.x2):
            fa = "" if np.isnan(a) else repr(float(a))
            fb = "" if np.isnan(b) else repr(float(b))
            buf.write(f"{float(t)!r},{fa},{fb},{self.structure}\n")
        return buf.getvalue() if fh is None else ""


def contact_mask(u, phi, x, K, tol=DEFAULT_TOL):
    """Nodes where the value sits on the obstacle (within ``tol * K``) in ``x > K``."""
    return (x > K) & (u - phi <= tol * K)


def extract_boundary_1d(curve: ValueCurve1D, tol: float = DEFAULT_TOL) -> Boundary1D:
    x = curve.grid.x
    phi = curve.obstacle
    nt = curve.grid.nt
    contact = contact_mask(curve.u[:nt], phi[None, :], x[None, :], curve.K, tol)
    any_c = contact.any(axis=1)
    first = np.argmax(contact, axis=1)
    last = x.size - 1 - np.argmax(contact[:, ::-1], axis=1)
    x1 = np.where(any_c, x[first], np.nan)
    x2 = np.where(any_c, x[last], np.nan)
    t = curve.grid.t[:nt]

    disappear = None
    if not any_c.any():
        structure = NO_BOUNDARY
    else:
        if not any_c.all():
            # scan backwards from T for the first node without contact
            idx = np.where(~any_c)[0]
            k = idx[-1]
            if k + 1 < nt:
                disappear = 0.5 * (t[k] + t[k + 1])
        pinned = np.all(last[any_c] == x.size - 1)
        if pinned:
            structure = SINGLE
        elif disappear is not None:
            structure = TWO_VANISHING
        else:
            structure = TWO
    cells = np.diff(np.log(x))
    return Boundary1D(t, x1, x2, structure, float(x[-1]), disappear, cells)


def boundary_growth_probe(params: ModelParams, horizons: Sequence[float], nx: int = 600, steps_per_year: int = 100,
                          x_max: Optional[float] = None, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Lower boundary ``X1(0; T)`` on the ``b = r`` face for each horizon."""
    if params.b != params.r:
        raise DomainError("growth probe requires b == r")
    out = []
    for T in horizons:
        p = params.replace(T=float(T))
        xm = x_max if x_max is not None else 200.0 * p.K
        grid = Grid1D.build(p, nx=nx, nt=max(16, int(round(steps_per_year * T))), x_max=xm)
        curve = solve_vi_1d(p, "b", grid)
        bd = extract_boundary_1d(curve, tol)
        x1 = bd.x1[0]
        if np.isnan(x1) or x1 >= grid.x[-3]:
            raise GridError(f"X1(0; T={T}) not resolved below x_max={grid.x_max:g}; enlarge the grid")
        out.append(float(x1))
    return np.array(out)


def terminal_boundaries(curve: ValueCurve1D, params: ModelParams, fraction: float = 1e-4):
    """Left limits ``X1(T-), X2(T-)`` read off one micro-step from the payoff.

    The contact set near maturity widens like ``sqrt(T - t)``, so the first
    regular time node sits well inside the limit.  A single implicit step of
    ``fraction * dt`` on the same x grid resolves the limit; contact is taken
    as the penalty-active set ``u < payoff`` because the value gap there is far
    below any fixed tolerance.  Returns ``(x1, x2)``, NaN when no contact.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    g = curve.grid
    t = np.array([params.T - fraction * g.dt, params.T])
    probe = solve_vi_1d(params, curve.drift, Grid1D(g.x, t), curve.penalty)
    hit = (g.x > params.K) & (probe.u[0] < probe.obstacle)
    if not hit.any():
        return math.nan, math.nan
    xs = g.x[hit]
    return float(xs[0]), float(xs[-1])
