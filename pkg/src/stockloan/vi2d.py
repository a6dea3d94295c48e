"""Penalty solver for the degenerate two-dimensional obstacle problem in (x, pi).

The generator

    1/2 x^2 u_xx + 1/2 D^2 pi^2 (1-pi)^2 u_pp + D pi (1-pi) x u_xp
        + (D pi + b - gamma) x u_x + (gamma - r) u

has a rank-one diffusion matrix: a single Brownian motion drives both the
log-price ``y`` and the log-odds ``l`` of the posterior, along the direction
``(1, D)``.  In ``(y, l)`` it reads

    1/2 d_s^2 u + mu(pi) d_s u + c d_l u + (gamma - r) u,
    d_s = d_y + D d_l,   mu = D pi + b - gamma - 1/2,

with constant ``c = D (gamma - b) + D (1 - D) / 2``.  The directional terms
are differenced along the exact direction (wide stencil, the foot points
interpolated linearly in pi), the ``c`` term is upwinded in pi.  Every
interior row is then an M-matrix row for any time step, which keeps the
scheme monotone at ``eps = 0``.  An optional ``eps u_pp`` regularisation is
discretised with standard second differences and reflecting faces.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.special import expit

from .boundary1d import DEFAULT_TOL, _step_obstacle, _update_active, default_penalty, far_field_theta, log_stencil
from .errors import ConvergenceError, StabilityError
from .filter import affine_drift
from .grids import Grid2D
from .model import ModelParams, payoff, validate

MAX_PENALTY_ITER = 60


@dataclass(frozen=True)
class ValueSurface:
    """``u[n, i, j] = u(x_i, pi_j, t_n)``."""

    grid: Grid2D
    u: np.ndarray
    params: ModelParams
    epsilon: float
    penalty: float
    penalty_residual: float
    iterations: int = 0

    @property
    def obstacle(self) -> np.ndarray:
        return payoff(self.grid.x, self.params.K)

    def at(self, x: float, pi: float, n: int = 0) -> float:
        """Bilinear interpolation (log x, pi) at time node ``n``."""
        g = self.grid
        ly = np.log(g.x)
        y = math.log(x)
        i = int(np.clip(np.searchsorted(ly, y) - 1, 0, g.nx - 2))
        j = int(np.clip(np.searchsorted(g.pi, pi) - 1, 0, g.npi - 2))
        wy = (y - ly[i]) / (ly[i + 1] - ly[i])
        wp = (pi - g.pi[j]) / (g.pi[j + 1] - g.pi[j])
        s = self.u[n]
        return float((1 - wy) * ((1 - wp) * s[i, j] + wp * s[i, j + 1])
                     + wy * ((1 - wp) * s[i + 1, j] + wp * s[i + 1, j + 1]))

    def to_csv(self, fh=None) -> str:
        """Header ``# nx,npi,nt,eps,rho,params...`` then ``t,pi,x,u`` rows."""
        buf = io.StringIO() if fh is None else fh
        g, p = self.grid, self.params
        buf.write(f"# nx={g.nx},npi={g.npi},nt={g.nt},eps={self.epsilon!r},rho={self.penalty!r},"
                  + ",".join(f"{k}={v!r}" for k, v in p.as_dict().items()) + "\n")
        buf.write("t,pi,x,u\n")
        for n in range(g.nt + 1):
            for j in range(g.npi):
                for i in range(g.nx):
                    buf.write(f"{g.t[n]!r},{g.pi[j]!r},{g.x[i]!r},{self.u[n, i, j]!r}\n")
        return buf.getvalue() if fh is None else ""


def _interp_index(pi_nodes: np.ndarray, q: np.ndarray):
    """Left node index and weight of the right node for linear interpolation."""
    k = pi_nodes[1] - pi_nodes[0]
    jl = np.clip(np.floor(q / k).astype(int), 0, pi_nodes.size - 2)
    w = (q - pi_nodes[jl]) / k
    return jl, np.clip(w, 0.0, 1.0)


def assemble_operator(params: ModelParams, grid: Grid2D, epsilon: float = 0.0, check: bool = True):
    """Sparse generator ``A`` (interior rows only) and the boundary-row matrix ``B``.

    Returns ``(A, B, interior_mask)``; the implicit step matrix is
    ``I - dt A`` on interior rows and ``B`` on the two x-boundary rows.
    """
    nx, npi = grid.nx, grid.npi
    h, k = grid.h, grid.dpi
    d = params.delta_drift
    growth = params.gamma - params.r
    c = affine_drift(params)
    pis = grid.pi
    idx = np.arange(nx * npi).reshape(nx, npi)

    rows, cols, vals = [], [], []

    def add(r, cidx, v):
        rows.append(r.ravel())
        cols.append(cidx.ravel())
        vals.append(np.broadcast_to(v, r.shape).ravel())

    ii = np.arange(1, nx - 1)
    # directional stencil foot points
    with np.errstate(divide="ignore"):
        ell = np.log(pis) - np.log1p(-pis)
    p_up = np.where((pis > 0) & (pis < 1), expit(ell + d * h), pis)
    p_dn = np.where((pis > 0) & (pis < 1), expit(ell - d * h), pis)
    mu = d * pis + params.b - params.gamma - 0.5
    w_up = np.empty(npi)
    w_dn = np.empty(npi)
    for j in range(npi):
        w_dn[j], w_up[j] = log_stencil(h, mu[j])
    ju, wu = _interp_index(pis, p_up)
    jd, wd = _interp_index(pis, p_dn)

    R = idx[ii]
    # +direction: (i+1, p_up) ; -direction: (i-1, p_dn)
    add(R, idx[ii + 1][:, ju], w_up * (1 - wu))
    add(R, idx[ii + 1][:, np.minimum(ju + 1, npi - 1)], w_up * wu)
    add(R, idx[ii - 1][:, jd], w_dn * (1 - wd))
    add(R, idx[ii - 1][:, np.minimum(jd + 1, npi - 1)], w_dn * wd)
    centre = -(w_up + w_dn) + growth

    # log-odds drift c * pi (1 - pi) d/dpi, upwinded
    adv = c * pis * (1 - pis) / k
    jin = np.arange(1, npi - 1)
    if c >= 0:
        add(R[:, jin], idx[ii][:, jin + 1], adv[jin])
    else:
        add(R[:, jin], idx[ii][:, jin - 1], -adv[jin])
    centre = centre - np.abs(adv)

    if epsilon > 0:
        e = epsilon / (k * k)
        add(R[:, jin], idx[ii][:, jin + 1], e)
        add(R[:, jin], idx[ii][:, jin - 1], e)
        # reflecting faces: ghost node mirrors the first interior node
        add(R[:, [0]], idx[ii][:, [1]], 2 * e)
        add(R[:, [npi - 1]], idx[ii][:, [npi - 2]], 2 * e)
        centre = centre - 2 * e
    add(R, R, np.broadcast_to(centre, R.shape))

    n = nx * npi
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    A.sum_duplicates()

    theta = far_field_theta(grid.x)
    top, b1, b2 = idx[nx - 1], idx[nx - 2], idx[nx - 3]
    br = np.concatenate([idx[0], top, top, top])
    bc = np.concatenate([idx[0], top, b1, b2])
    bv = np.concatenate([np.ones(npi), np.ones(npi), np.full(npi, -(1 + theta)), np.full(npi, theta)])
    B = sp.csr_matrix((bv, (br, bc)), shape=(n, n))

    interior = np.zeros((nx, npi), dtype=bool)
    interior[1:-1] = True
    if check:
        _check_monotone(A, interior.ravel())
    return A, B, interior


def _check_monotone(A, interior):
    coo = A.tocoo()
    off = (coo.row != coo.col) & interior[coo.row]
    if np.any(coo.data[off] < -1e-12):
        bad = int(np.count_nonzero(coo.data[off] < -1e-12))
        raise StabilityError(f"{bad} negative off-diagonal generator weights; scheme not monotone")


def solve_vi_2d(params: ModelParams, grid: Optional[Grid2D] = None, epsilon: float = 0.0,
                penalty: Optional[float] = None, max_iter: int = MAX_PENALTY_ITER) -> ValueSurface:
    """Backward implicit penalty marching from the terminal obstacle."""
    validate(params)
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if grid is None:
        grid = Grid2D.build(params)
    rho = default_penalty(params) if penalty is None else float(penalty)
    A, B, interior = assemble_operator(params, grid, epsilon)
    nx, npi, nt, dt = grid.nx, grid.npi, grid.nt, grid.dt
    n = nx * npi
    inner = interior.ravel()
    I_in = sp.diags(inner.astype(float))
    base = (I_in - dt * A + B).tocsc()
    phi2 = np.broadcast_to(payoff(grid.x, params.K)[:, None], (nx, npi))
    phi = np.ascontiguousarray(phi2).ravel()

    # the obstacle binds on the far-field row too
    penal = inner.copy()
    penal.reshape(nx, npi)[-1] = True
    far = np.zeros((nx, npi), dtype=bool)
    far[-1] = True
    far = far.ravel()
    theta = far_field_theta(grid.x)

    u = np.empty((nt + 1, nx, npi))
    u[nt] = phi2
    cur = phi.copy()
    total = 0
    cache_key, cache_lu = None, None
    for step in range(nt - 1, -1, -1):
        rhs = np.where(inner, cur, 0.0)
        obs = _step_obstacle(phi, cur, far)
        active = (cur < obs) & penal
        for it in range(max_iter):
            key = active.tobytes()
            if key != cache_key:
                pen_d = np.where(active, dt * rho, 0.0)
                cache_lu = splu((base + sp.diags(pen_d)).tocsc())
                cache_key = key
            pen = np.where(active, dt * rho, 0.0)
            new = cache_lu.solve(rhs + pen * obs)
            nn = new.reshape(nx, npi)
            far_est = (1.0 + theta) * nn[-2] - theta * nn[-3]
            new_active = _update_active(new, obs, penal, far, far_est, active, it)
            if np.array_equal(new_active, active):
                break
            active = new_active
        else:
            raise ConvergenceError(f"penalty iteration exceeded {max_iter} at time node {step}")
        total += it + 1
        cur = new
        u[step] = new.reshape(nx, npi)
    resid = float(np.max(np.maximum(phi2[None] - u, 0.0)))
    return ValueSurface(grid, u, params, float(epsilon), rho, resid, total)


@dataclass(frozen=True)
class EpsilonReport:
    epsilons: tuple
    successive_diffs: tuple
    ratios: tuple


def refine_epsilon(params: ModelParams, grid: Grid2D, eps_sequence: Sequence[float], penalty=None):
    """Solve along a decreasing regularisation sequence; report max-norm successive differences."""
    eps = [float(e) for e in eps_sequence]
    if any(e2 >= e1 for e1, e2 in zip(eps, eps[1:])) or min(eps) < 0:
        raise ValueError("eps_sequence must be strictly decreasing and non-negative")
    surfaces = [solve_vi_2d(params, grid, e, penalty) for e in eps]
    diffs = tuple(float(np.max(np.abs(s1.u - s0.u))) for s0, s1 in zip(surfaces, surfaces[1:]))
    ratios = tuple(d1 / d0 if d0 > 0 else 0.0 for d0, d1 in zip(diffs, diffs[1:]))
    return surfaces[-1], EpsilonReport(tuple(eps), diffs, ratios)


# --- free boundaries ---------------------------------------------------------

@dataclass(frozen=True)
class FreeBoundary2D:
    """``x1, x2``: ``(nt, npi)`` with NaN where the contact set is empty;
    ``Pi``: ``(nt, nx)`` with 0 encoding an empty set.  Time nodes ``t < T``."""

    t: np.ndarray
    x: np.ndarray
    pi: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    Pi: np.ndarray
    contact: np.ndarray = field(repr=False)
    interval_violations: int = 0
    T: float = 1.0
    K: float = 100.0

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        buf.write("t,pi,x1,x2\n")
        for n in range(self.t.size):
            for j in range(self.pi.size):
                a, b = self.x1[n, j], self.x2[n, j]
                buf.write(f"{self.t[n]!r},{self.pi[j]!r},{'' if np.isnan(a) else repr(a)},"
                          f"{'' if np.isnan(b) else repr(b)}\n")
        buf.write("t,x,Pi\n")
        for n in range(self.t.size):
            for i in range(self.x.size):
                buf.write(f"{self.t[n]!r},{self.x[i]!r},{self.Pi[n, i]!r}\n")
        return buf.getvalue() if fh is None else ""


def contact_set(surface: ValueSurface, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Boolean ``(nt, nx, npi)`` redeeming nodes for ``t < T``."""
    g, K = surface.grid, surface.params.K
    phi = payoff(g.x, K)[None, :, None]
    u = surface.u[: g.nt]
    return (g.x[None, :, None] > K) & (u - phi <= tol * K)


def extract_boundaries_2d(surface: ValueSurface, tol: float = DEFAULT_TOL) -> FreeBoundary2D:
    g = surface.grid
    c = contact_set(surface, tol)
    nt, nx, npi = c.shape
    any_x = c.any(axis=1)
    first = np.argmax(c, axis=1)
    last = nx - 1 - np.argmax(c[:, ::-1, :], axis=1)
    x1 = np.where(any_x, g.x[first], np.nan)
    x2 = np.where(any_x, g.x[last], np.nan)
    # single-interval structure along x
    count = c.sum(axis=1)
    span = np.where(any_x, last - first + 1, 0)
    violations = int(np.count_nonzero(count != span))
    any_p = c.any(axis=2)
    top = npi - 1 - np.argmax(c[:, :, ::-1], axis=2)
    Pi = np.where(any_p, g.pi[top], 0.0)
    return FreeBoundary2D(g.t[:nt], g.x, g.pi, x1, x2, Pi, c, violations, surface.params.T, surface.params.K)


def optimal_stop_policy(boundary: FreeBoundary2D):
    """Stopping rule ``(x, pi, t) -> bool`` read off the extracted ``Pi``."""
    ly = np.log(boundary.x)
    t_nodes = boundary.t
    T, K = boundary.T, boundary.K

    def policy(x, pi, t):
        x, pi, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(pi, float), np.asarray(t, float))
        out = np.zeros(x.shape, dtype=bool)
        done = t >= T
        out[done] = True
        live = ~done & (x > K)
        if np.any(live):
            n = np.clip(np.searchsorted(t_nodes, t[live], side="right") - 1, 0, t_nodes.size - 1)
            i = np.clip(np.rint(np.interp(np.log(x[live]), ly, np.arange(ly.size))).astype(int), 0, ly.size - 1)
            cap = boundary.Pi[n, i]
            hit = boundary.contact[n, i, :].any(axis=-1)
            out[live] = hit & (pi[live] <= cap)
        return out if out.ndim else bool(out)

    return policy
