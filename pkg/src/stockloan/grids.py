"""Discretisation grids shared by the 1-D and 2-D solvers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import GridError
from .model import ModelParams

MIN_NODES = 16


def default_x_range(params: ModelParams, x_min: Optional[float] = None, x_max: Optional[float] = None):
    """Log-price window: four times the largest terminal boundary on top, a few
    standard deviations below ``K`` at the bottom."""
    K = params.K
    if x_max is None:
        top = K
        if params.b > params.r:
            top = max(top, (params.gamma - params.r) / (params.b - params.r) * K)
        x_max = 4.0 * top
    if x_min is None:
        x_min = K * math.exp(-max(4.0, 4.0 * math.sqrt(params.T)))
    return float(x_min), float(x_max)


def _check_x(x_min, x_max, nx, params):
    if not x_min > 0:
        raise GridError(f"x_min must be positive, got {x_min}")
    if not x_max > x_min:
        raise GridError("x_max must exceed x_min")
    if nx < MIN_NODES:
        raise GridError(f"need at least {MIN_NODES} x nodes, got {nx}")
    need = params.K
    if params.b > params.r:
        need = max(need, (params.gamma - params.r) / (params.b - params.r) * params.K)
    if x_max < 4.0 * need * (1 - 1e-12):
        raise GridError(f"x_max={x_max:g} below 4*max(K, terminal X2)={4 * need:g}")


@dataclass(frozen=True)
class Grid1D:
    x: np.ndarray
    t: np.ndarray

    @property
    def nx(self) -> int:
        return self.x.size

    @property
    def nt(self) -> int:
        """Number of time steps (``t`` has ``nt + 1`` nodes)."""
        return self.t.size - 1

    @property
    def h(self) -> float:
        return float(math.log(self.x[1] / self.x[0]))

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def x_min(self) -> float:
        return float(self.x[0])

    @property
    def x_max(self) -> float:
        return float(self.x[-1])

    @classmethod
    def build(cls, params: ModelParams, nx: int = 400, nt: int = 200,
              x_min: Optional[float] = None, x_max: Optional[float] = None) -> "Grid1D":
        x_min, x_max = default_x_range(params, x_min, x_max)
        _check_x(x_min, x_max, nx, params)
        if nt < 1:
            raise GridError("need at least one time step")
        x = np.exp(np.linspace(math.log(x_min), math.log(x_max), nx))
        t = np.linspace(0.0, params.T, nt + 1)
        return cls(x, t)


@dataclass(frozen=True)
class Grid2D:
    x: np.ndarray
    pi: np.ndarray
    t: np.ndarray

    @property
    def nx(self) -> int:
        return self.x.size

    @property
    def npi(self) -> int:
        return self.pi.size

    @property
    def nt(self) -> int:
        return self.t.size - 1

    @property
    def h(self) -> float:
        return float(math.log(self.x[1] / self.x[0]))

    @property
    def dpi(self) -> float:
        return float(self.pi[1] - self.pi[0])

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def x_slice(self) -> Grid1D:
        return Grid1D(self.x, self.t)

    @classmethod
    def build(cls, params: ModelParams, nx: int = 200, npi: int = 101, nt: int = 200,
              x_min: Optional[float] = None, x_max: Optional[float] = None) -> "Grid2D":
        x_min, x_max = default_x_range(params, x_min, x_max)
        _check_x(x_min, x_max, nx, params)
        if npi < 3:
            raise GridError("need at least three pi nodes (both faces and one interior)")
        if nt < 1:
            raise GridError("need at least one time step")
        x = np.exp(np.linspace(math.log(x_min), math.log(x_max), nx))
        pi = np.linspace(0.0, 1.0, npi)
        t = np.linspace(0.0, params.T, nt + 1)
        return cls(x, pi, t)
