"""Filtered dynamics of the discounted price and the bull-state posterior.

Under the observation filtration both processes are driven by the same
innovation Brownian motion.  The posterior is propagated in log-odds form,

    d logit(pi) = Delta^2 (pi - 1/2) dt + Delta dW,

so it never leaves (0, 1), and ``log X`` is stepped with its drift frozen at
the left endpoint.  With both drifts frozen at the same ``pi`` the
combination ``logit(pi) - Delta log X - c t`` is conserved exactly, where
``c = Delta (gamma - b) + Delta (1 - Delta) / 2``.
"""

from __future__ import annotations

import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .errors import AllocationError, DomainError
from .model import ModelParams, validate

BLOCK = 4096
MAX_ELEMENTS = 40_000_000


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("STOCKLOAN_WORKERS", "1")))
    except ValueError:
        return 1


def affine_drift(params: ModelParams) -> float:
    """Deterministic rate of ``logit(pi) - Delta log X`` along every path."""
    d = params.delta_drift
    return d * (params.gamma - params.b) + 0.5 * d * (1.0 - d)


@dataclass(frozen=True)
class BeliefState:
    pi: float
    log_odds: float

    @classmethod
    def from_pi(cls, pi: float) -> "BeliefState":
        if not 0.0 < pi < 1.0:
            raise DomainError(f"posterior must lie strictly inside (0, 1), got {pi}")
        return cls(float(pi), float(logit(pi)))

    @classmethod
    def from_log_odds(cls, ell: float) -> "BeliefState":
        if not math.isfinite(ell):
            raise DomainError("log-odds must be finite")
        return cls(float(expit(ell)), float(ell))


def step_log_odds(state: BeliefState, dt: float, dW: float, delta: float) -> BeliefState:
    """One explicit step of the log-odds recursion."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    ell = state.log_odds + delta * delta * (state.pi - 0.5) * dt + delta * dW
    return BeliefState.from_log_odds(ell)


@dataclass(frozen=True)
class PathBundle:
    """Paths on a shared uniform time grid; arrays are ``(n_paths, n_steps + 1)``."""

    t: np.ndarray
    x: np.ndarray
    pi: np.ndarray
    log_odds: np.ndarray
    w: np.ndarray
    seed: int
    dt: float

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def n_steps(self) -> int:
        return self.t.size - 1

    def to_csv(self, fh=None) -> str:
        """``path,t,x,pi`` rows after a ``# seed=.. dt=..`` header."""
        buf = io.StringIO() if fh is None else fh
        buf.write(f"# seed={self.seed} dt={self.dt!r}\n")
        buf.write("path,t,x,pi\n")
        for p in range(self.n_paths):
            for n in range(self.t.size):
                buf.write(f"{p},{self.t[n]!r},{self.x[p, n]!r},{self.pi[p, n]!r}\n")
        return buf.getvalue() if fh is None else ""


def _block_normals(seed: int, stream: int, block: int, m: int, n_steps: int) -> np.ndarray:
    # path-major draws: path j of a block is independent of the block's size
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream, block))
    rng = np.random.Generator(np.random.PCG64(ss))
    return rng.standard_normal((m, n_steps))


def _check_sizes(n_paths, n_steps):
    if n_paths < 1 or n_steps < 0:
        raise DomainError("need n_paths >= 1 and n_steps >= 0")
    if n_paths * (n_steps + 1) > MAX_ELEMENTS:
        raise AllocationError(f"{n_paths} x {n_steps + 1} nodes exceeds {MAX_ELEMENTS} per array")


def innovations(seed: int, n_paths: int, n_steps: int, dt: float, workers: int | None = None,
                stream: int = 0) -> np.ndarray:
    """Increments ``dW`` of shape ``(n_paths, n_steps)`` keyed by (seed, stream, block).

    Paths are drawn in blocks of ``BLOCK``; each block has its own generator,
    so the result does not depend on how many workers fill it.
    """
    _check_sizes(n_paths, n_steps)
    out = np.empty((n_paths, n_steps))
    if n_steps == 0:
        return out
    sq = math.sqrt(dt)
    blocks = [(b, b * BLOCK, min(n_paths, (b + 1) * BLOCK)) for b in range((n_paths + BLOCK - 1) // BLOCK)]

    def fill(spec):
        b, lo, hi = spec
        out[lo:hi] = sq * _block_normals(seed, stream, b, hi - lo, n_steps)

    workers = worker_count() if workers is None else workers
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(fill, blocks))
    else:
        for spec in blocks:
            fill(spec)
    return out


def _march(params: ModelParams, x0, ell0, dW, dt):
    d = params.delta_drift
    m, n_steps = dW.shape
    logx = np.empty((m, n_steps + 1))
    ell = np.empty((m, n_steps + 1))
    logx[:, 0] = np.log(x0)
    ell[:, 0] = ell0
    base = params.b - params.gamma - 0.5
    for n in range(n_steps):
        p = expit(ell[:, n])
        logx[:, n + 1] = logx[:, n] + (d * p + base) * dt + dW[:, n]
        ell[:, n + 1] = ell[:, n] + d * d * (p - 0.5) * dt + d * dW[:, n]
    return logx, ell


def simulate(params: ModelParams, x0: float, pi0: float, dt: float, n_steps: int, n_paths: int,
             seed: int = 0, workers: int | None = None, stream: int = 0) -> PathBundle:
    """Simulate ``n_paths`` filtered paths ``(X, pi)`` starting from ``(x0, pi0)``.

    ``stream`` selects an independent family of innovations for the same seed.
    """
    validate(params)
    if not x0 > 0:
        raise DomainError("x0 must be positive")
    if not dt > 0:
        raise DomainError("dt must be positive")
    state = BeliefState.from_pi(pi0)
    dW = innovations(seed, n_paths, n_steps, dt, workers, stream)
    logx, ell = _march(params, x0, state.log_odds, dW, dt)
    w = np.zeros((n_paths, n_steps + 1))
    np.cumsum(dW, axis=1, out=w[:, 1:])
    t = dt * np.arange(n_steps + 1)
    x, pi = np.exp(logx), expit(ell)
    x[:, 0], pi[:, 0] = x0, pi0
    return PathBundle(t, x, pi, ell, w, int(seed), float(dt))


def coupled_comparison(params: ModelParams, x0: float, pi0_low: float, pi0_high: float, dt: float,
                       n_steps: int, n_paths: int, seed: int = 0) -> int:
    """Count (path, node) pairs where the higher-started posterior fails to stay above.

    Both posteriors share innovations.  The comparison is made on log-odds,
    which is order-equivalent to comparing the posteriors but immune to
    saturation of the logistic map near 0 and 1.
    """
    if not 0.0 < pi0_low < pi0_high < 1.0:
        raise DomainError("need 0 < pi0_low < pi0_high < 1")
    validate(params)
    dW = innovations(seed, n_paths, n_steps, dt)
    _, lo = _march(params, x0, logit(pi0_low), dW, dt)
    _, hi = _march(params, x0, logit(pi0_high), dW, dt)
    return int(np.count_nonzero(hi <= lo))


def affine_consistency(bundle: PathBundle, params: ModelParams) -> float:
    """Max drift of ``logit(pi) - Delta log X - c t`` away from its initial value."""
    d = params.delta_drift
    z = bundle.log_odds - d * np.log(bundle.x) - affine_drift(params) * bundle.t[None, :]
    return float(np.max(np.abs(z - z[:, :1])))
