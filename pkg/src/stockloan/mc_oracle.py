"""Independent valuation oracles for the redemption problem.

Three estimators of ``u(x0, pi0, 0) = sup_tau E[e^{(gamma-r) tau} (X_tau - K)^+]``:

* ``european_value``: hold to maturity, a lower bound.
* ``lsmc_value``: regression Monte Carlo with the policy fitted on one bundle
  and valued on an independent one, so the estimate is biased low.
* ``lattice_value``: a Markov-chain dynamic programme in log price.  Along
  every filtered path ``logit(pi) - Delta log X - c t`` is constant, so the
  posterior is a deterministic function of ``(log x, t)`` once the starting
  point is fixed and the problem collapses to one state variable.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, logit

from .boundary1d import european_lower_bound_g
from .errors import DomainError, GridError, RegressionError
from .filter import BeliefState, _check_sizes, _march, affine_drift, innovations
from .model import ModelParams, payoff, validate

DEFAULT_STEPS = 100
LATTICE_BUDGET = 10_000_000

# stream ids inside one seed: the policy bundle and the valuation bundle
STREAM_POLICY = 0
STREAM_VALUE = 1


@dataclass(frozen=True)
class OracleEstimate:
    estimate: float
    stderr: float
    method: str
    n: int
    seed: Optional[int] = None
    # lattice only: |fine - coarse| over a halving of both sizes
    error_estimate: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.estimate):
            raise ValueError("estimate must be finite")
        if not self.stderr >= 0:
            raise ValueError("stderr must be non-negative")

    def csv_line(self) -> str:
        seed = "" if self.seed is None else str(self.seed)
        return f"{self.method},{self.estimate!r},{self.stderr!r},{self.n},{seed}"


def estimates_to_csv(estimates, fh=None) -> str:
    buf = io.StringIO() if fh is None else fh
    buf.write("method,estimate,stderr,n,seed\n")
    for e in estimates:
        buf.write(e.csv_line() + "\n")
    return buf.getvalue() if fh is None else ""


def _mean_se(v: np.ndarray):
    m = v.size
    se = float(np.std(v, ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    return float(np.mean(v)), se


def european_closed_form(params: ModelParams, x, pi, t):
    """Hold-to-maturity value ``pi g_a + (1 - pi) g_b``.

    Given the observations the unknown drift is ``a`` with probability ``pi``,
    so the terminal law is a two-point mixture of log-normals.
    """
    pi = np.asarray(pi, dtype=float)
    ga = european_lower_bound_g(params, x, t, drift=params.a)
    gb = european_lower_bound_g(params, x, t, drift=params.b)
    out = pi * ga + (1.0 - pi) * gb
    return float(out) if np.ndim(out) == 0 else out


def _terminal_x(params, x0, pi0, n_steps, n_paths, seed, stream):
    dt = params.T / n_steps
    dW = innovations(seed, n_paths, n_steps, dt, stream=stream)
    logx, _ = _march(params, x0, logit(pi0), dW, dt)
    return np.exp(logx[:, -1])


def european_value(params: ModelParams, x0: float, pi0: float, n_paths: int = 100_000, seed: int = 0,
                   n_steps: int = DEFAULT_STEPS) -> OracleEstimate:
    """Monte Carlo value of redeeming at maturity."""
    validate(params)
    BeliefState.from_pi(pi0)
    if x0 < 0:
        raise DomainError("x0 must be non-negative")
    if x0 == 0:
        return OracleEstimate(0.0, 0.0, "european", n_paths, seed)
    xT = _terminal_x(params, x0, pi0, n_steps, n_paths, seed, STREAM_VALUE)
    growth = math.exp((params.gamma - params.r) * params.T)
    est, se = _mean_se(growth * payoff(xT, params.K))
    return OracleEstimate(est, se, "european", n_paths, seed)


@dataclass(frozen=True)
class BasisSpec:
    """Polynomial regression basis in ``y = log(x/K)`` and ``pi``.

    With ``european=True`` the hold-to-maturity value at the regression date
    is appended as one more column.
    """

    deg_logx: int = 3
    deg_pi: int = 2
    cross: bool = True
    european: bool = True

    @property
    def size(self) -> int:
        return 1 + self.deg_logx + self.deg_pi + int(self.cross) + int(self.european)

    def design(self, x: np.ndarray, pi: np.ndarray, K: float, params: Optional[ModelParams] = None,
               t: Optional[float] = None) -> np.ndarray:
        y = np.log(x / K)
        cols = [np.ones_like(y)]
        cols += [y ** k for k in range(1, self.deg_logx + 1)]
        cols += [pi ** k for k in range(1, self.deg_pi + 1)]
        if self.cross:
            cols.append(y * pi)
        if self.european:
            if params is None or t is None:
                raise ValueError("the european column needs params and t")
            cols.append(math.exp((params.gamma - params.r) * t) * european_closed_form(params, x, pi, t))
        return np.column_stack(cols)


def _date_states(params, x0, pi0, n_dates, steps_per_date, n_paths, seed, stream):
    """``(x, pi)`` at the exercise dates, shape ``(n_paths, n_dates)``, without storing sub-steps."""
    n_steps = n_dates * steps_per_date
    _check_sizes(n_paths, n_steps)
    dt = params.T / n_steps
    dW = innovations(seed, n_paths, n_steps, dt, stream=stream)
    d = params.delta_drift
    base = params.b - params.gamma - 0.5
    logx = np.full(n_paths, math.log(x0))
    ell = np.full(n_paths, float(logit(pi0)))
    xs = np.empty((n_paths, n_dates))
    ps = np.empty((n_paths, n_dates))
    for n in range(n_steps):
        p = expit(ell)
        # same association order as filter._march, so paths agree bit for bit
        logx = logx + (d * p + base) * dt + dW[:, n]
        ell = ell + d * d * (p - 0.5) * dt + d * dW[:, n]
        if (n + 1) % steps_per_date == 0:
            k = (n + 1) // steps_per_date - 1
            xs[:, k] = np.exp(logx)
            ps[:, k] = expit(ell)
    return xs, ps


def _regress(X, target, k, rcond=1e-10):
    """Least squares on column-scaled design, truncating near-null directions.

    Along a filtered path the posterior is a smooth function of log price at
    each date, so the ``pi`` columns are close to collinear with the ``log x``
    columns.  The truncated SVD fit keeps the well-determined combinations; a
    design with no variation at all is rejected.
    """
    scale = np.abs(X).max(axis=0)
    if np.any(scale == 0):
        raise RegressionError(f"basis column identically zero at date {k}")
    beta, _, rank, _ = np.linalg.lstsq(X / scale, target, rcond=rcond)
    if rank < 2:
        raise RegressionError(f"degenerate design (rank {rank}) at date {k}")
    return beta / scale


def _continuation(params, fitted, x, pi, t):
    # holding to maturity is always available, so the continuation value is
    # never below the European value; flooring the fit removes spurious exercise
    floor = math.exp((params.gamma - params.r) * t) * european_closed_form(params, x, pi, t)
    return np.maximum(fitted, floor)


def _fit_policy(params, xs, ps, times, basis):
    """Backward regression on the policy bundle; returns one coefficient vector per date (None = never)."""
    K = params.K
    g = params.gamma - params.r
    n_dates = times.size
    cash = math.exp(g * float(times[-1])) * payoff(xs[:, -1], K)
    coefs = [None] * n_dates
    for k in range(n_dates - 2, -1, -1):
        itm = xs[:, k] > K
        if not itm.any():
            continue
        X = basis.design(xs[itm, k], ps[itm, k], K, params, times[k])
        if X.shape[0] < X.shape[1]:
            raise RegressionError(f"{X.shape[0]} in-the-money paths for {X.shape[1]} basis functions at date {k}")
        beta = _regress(X, cash[itm], k)
        now = np.exp(g * times[k]) * (xs[itm, k] - K)
        ex = now > _continuation(params, X @ beta, xs[itm, k], ps[itm, k], times[k])
        idx = np.flatnonzero(itm)[ex]
        cash[idx] = now[ex]
        coefs[k] = beta
    return coefs


def _apply_policy(params, xs, ps, times, basis, coefs):
    K = params.K
    g = params.gamma - params.r
    n_paths, n_dates = xs.shape
    value = math.exp(g * float(times[-1])) * payoff(xs[:, -1], K)
    alive = np.ones(n_paths, dtype=bool)
    stopped_at = np.full(n_paths, n_dates - 1)
    for k in range(n_dates - 1):
        beta = coefs[k]
        if beta is None:
            continue
        cand = alive & (xs[:, k] > K)
        if not cand.any():
            continue
        X = basis.design(xs[cand, k], ps[cand, k], K, params, times[k])
        now = np.exp(g * times[k]) * (xs[cand, k] - K)
        ex = now > _continuation(params, X @ beta, xs[cand, k], ps[cand, k], times[k])
        idx = np.flatnonzero(cand)[ex]
        value[idx] = now[ex]
        alive[idx] = False
        stopped_at[idx] = k
    return value, stopped_at


@dataclass(frozen=True)
class LSMCResult:
    estimate: OracleEstimate
    times: np.ndarray
    coefficients: tuple
    exercised_x: np.ndarray


def lsmc_value(params: ModelParams, x0: float, pi0: float, n_paths: int = 100_000, n_exercise_dates: int = 50,
               basis_spec: Optional[BasisSpec] = None, seed: int = 0, steps_per_date: Optional[int] = None,
               two_bundle: bool = True, details: bool = False):
    """Regression Monte Carlo on filtered paths.

    The exercise rule is fitted on one bundle and valued on an independent
    bundle (``two_bundle=True``), giving a statistically low-biased estimate.
    With one exercise date (maturity) the valuation bundle is exactly the one
    used by :func:`european_value`.
    """
    validate(params)
    BeliefState.from_pi(pi0)
    if not x0 > 0:
        raise DomainError("x0 must be positive")
    if n_exercise_dates < 1:
        raise DomainError("need at least one exercise date")
    basis = BasisSpec() if basis_spec is None else basis_spec
    spd = steps_per_date or max(1, math.ceil(DEFAULT_STEPS / n_exercise_dates))
    times = params.T * np.arange(1, n_exercise_dates + 1) / n_exercise_dates

    xv, pv = _date_states(params, x0, pi0, n_exercise_dates, spd, n_paths, seed, STREAM_VALUE)
    if two_bundle:
        xa, pa = _date_states(params, x0, pi0, n_exercise_dates, spd, n_paths, seed, STREAM_POLICY)
    else:
        xa, pa = xv, pv
    coefs = _fit_policy(params, xa, pa, times, basis)
    value, stopped = _apply_policy(params, xv, pv, times, basis, coefs)

    # redeeming at t = 0 competes with the continuation estimate
    now0 = payoff(x0, params.K)
    est, se = _mean_se(value)
    if now0 > est:
        est, se = now0, 0.0
    method = "lsmc" if two_bundle else "lsmc-single-bundle"
    out = OracleEstimate(est, se, method, n_paths, seed)
    if not details:
        return out
    early = stopped < n_exercise_dates - 1
    ex_x = xv[early, stopped[early]]
    return LSMCResult(out, times, tuple(coefs), ex_x)


# --- lattice --------------------------------------------------------------

def _stencil(h, mu):
    """Vector form of :func:`log_stencil`: central weights, upwind where ``|mu| h > 1``."""
    diff = 0.5 / (h * h)
    central = np.abs(mu) * h <= 1.0
    lo = np.where(central, diff - 0.5 * mu / h, diff + np.maximum(-mu, 0.0) / h)
    up = np.where(central, diff + 0.5 * mu / h, diff + np.maximum(mu, 0.0) / h)
    return lo, up


def _lattice(params, x0, pi0, n_time, n_space, width):
    validate(params)
    m = n_space // 2
    nodes = 2 * m + 1
    dt = params.T / n_time
    h = width / m
    y0 = math.log(x0)
    j = np.arange(nodes) - m
    y = y0 + j * h
    x = np.exp(y)
    d = params.delta_drift
    c = affine_drift(params)
    ell0 = float(logit(pi0))
    K = params.K
    phi = payoff(x, K)
    disc = math.exp((params.gamma - params.r) * dt)
    q = (x[-1] - K) / (x[-2] - K) if x[-2] > K else 1.0

    v = phi.copy()
    for n in range(n_time - 1, -1, -1):
        t = n * dt
        pi = expit(ell0 + d * (y - y0) + c * t)
        if np.any(pi <= 0.0) or np.any(pi >= 1.0):
            raise GridError(f"reconstructed posterior left (0, 1) at t={t:g}; shrink the x window")
        mu = d * pi + params.b - params.gamma - 0.5
        p_dn, p_up = _stencil(h, mu)
        p_dn *= dt
        p_up *= dt
        p_stay = 1.0 - p_up - p_dn
        if np.any(p_stay < 0):
            raise GridError(f"negative stay probability: dt={dt:g} too large for h={h:g}")
        cont = np.empty(nodes)
        cont[1:-1] = p_dn[1:-1] * v[:-2] + p_stay[1:-1] * v[1:-1] + p_up[1:-1] * v[2:]
        cont[1:-1] *= disc
        cont[0] = 0.0
        cont[-1] = q * cont[-2]
        v = np.maximum(cont, phi)
    return float(v[m])


def lattice_value(params: ModelParams, x0: float, pi0: float, n_time: int = 6000, n_space: int = 1001,
                  width: Optional[float] = None, refine: bool = True) -> OracleEstimate:
    """Dynamic programme on a trinomial log-price lattice centred at ``x0``.

    ``n_space`` is rounded up to an odd node count so ``x0`` is a node.  The
    reported stderr is 0; ``error_estimate`` is the change against a lattice
    with half the space nodes and a quarter of the time steps.
    """
    BeliefState.from_pi(pi0)
    if not x0 > 0:
        raise DomainError("x0 must be positive")
    if n_time < 1 or n_space < 3:
        raise GridError("need n_time >= 1 and n_space >= 3")
    if n_time * n_space > LATTICE_BUDGET:
        raise GridError(f"n_time * n_space = {n_time * n_space} exceeds {LATTICE_BUDGET}")
    if width is None:
        drift = abs(params.b - params.gamma - 0.5) + abs(params.delta_drift)
        width = 6.0 * math.sqrt(params.T) + drift * params.T
    fine = _lattice(params, x0, pi0, n_time, n_space, width)
    err = 0.0
    if refine and n_time >= 4 and n_space >= 7:
        coarse = _lattice(params, x0, pi0, max(1, n_time // 4), n_space // 2, width)
        err = abs(fine - coarse)
    return OracleEstimate(fine, 0.0, "lattice", n_time * n_space, None, err)
