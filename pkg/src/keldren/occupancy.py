"""Occupation functions, free dispersion, Keldysh propagators, G-factors.

Normalization convention: the on-shell delta lines carry one explicit
factor ``TWO_PI`` (and only there). The +-/-+ components read
``TWO_PI * reg_delta * (1+n | n)`` while the ++/-- components are
``+-i * reg_pv + pi * (1+2n) * reg_delta``; with this single choice the
sum rule g_pp + g_mm == g_pm + g_mp holds exactly at any regulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

TWO_PI = 2.0 * math.pi


def dispersion(k) -> np.ndarray | float:
    """Free dispersion |k|^2 / 2 for 3-vectors or radial |k| values.

    Accepts scalars or arrays; arrays whose last axis has length 3 are
    treated as stacked 3-vectors, anything else as radial magnitudes.
    """
    k = np.asarray(k, dtype=float)
    if k.ndim and k.shape[-1] == 3:
        return 0.5 * np.sum(k * k, axis=-1)
    return 0.5 * k * k


@dataclass(frozen=True)
class Regulator:
    """Positive energy-scale regulator for the distribution table."""

    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"regulator must be positive, got {self.eps}")


def reg_delta(x, eps) -> np.ndarray | float:
    """Lorentzian delta family (1/pi) * eps / (x^2 + eps^2)."""
    e = eps.eps if isinstance(eps, Regulator) else float(eps)
    x = np.asarray(x, dtype=float)
    return (e / math.pi) / (x * x + e * e)


def reg_pv(x, eps) -> np.ndarray | float:
    """Regularized principal value x / (x^2 + eps^2)."""
    e = eps.eps if isinstance(eps, Regulator) else float(eps)
    x = np.asarray(x, dtype=float)
    return x / (x * x + e * e)


class OccupationFunction:
    """Momentum-space density n(|k|) of a Gauss state.

    kinds:
      planck    -- exp(-beta*(w(k)-mu)) / (1 - exp(-beta*(w(k)-mu))), mu < 0
      gaussian  -- amplitude * exp(-|k|^2 / width^2)
      tabulated -- cubic interpolation of (|k|, n) samples on a uniform
                   radial grid; zero beyond the last grid point would be
                   an extrapolation, so out-of-grid queries are rejected.
    """

    def __init__(self, kind: str, *, beta: float | None = None,
                 mu: float | None = None, width: float | None = None,
                 amplitude: float | None = None,
                 grid: np.ndarray | None = None,
                 values: np.ndarray | None = None):
        self.kind = kind
        if kind == "planck":
            if beta is None or mu is None:
                raise ValueError("planck kind needs beta and mu")
            if beta <= 0:
                raise ValueError(f"beta must be positive, got {beta}")
            if mu >= 0:
                raise ValueError(f"planck kind requires mu < 0, got {mu}")
            self.beta, self.mu = float(beta), float(mu)
        elif kind == "gaussian":
            self.width = float(width if width is not None else 1.0)
            self.amplitude = float(amplitude if amplitude is not None else 1.0)
            if self.amplitude < 0 or self.width <= 0:
                raise ValueError("gaussian kind needs amplitude >= 0, width > 0")
        elif kind == "tabulated":
            grid = np.asarray(grid, dtype=float)
            values = np.asarray(values, dtype=float)
            if grid.ndim != 1 or grid.shape != values.shape or grid.size < 4:
                raise ValueError("tabulated kind needs matching 1-d arrays, >= 4 points")
            if np.any(np.diff(grid) <= 0):
                raise ValueError("tabulated grid must be strictly increasing")
            if np.any(values < 0):
                raise ValueError("occupation values must be nonnegative")
            self.grid, self.values = grid, values
            self._spline = CubicSpline(grid, values)
        else:
            raise ValueError(f"unknown occupation kind {kind!r}")

    @classmethod
    def planck(cls, beta: float, mu: float) -> "OccupationFunction":
        return cls("planck", beta=beta, mu=mu)

    @classmethod
    def gaussian(cls, width: float = 1.0, amplitude: float = 1.0) -> "OccupationFunction":
        return cls("gaussian", width=width, amplitude=amplitude)

    @classmethod
    def tabulated(cls, grid, values) -> "OccupationFunction":
        return cls("tabulated", grid=grid, values=values)

    @classmethod
    def from_csv(cls, path) -> "OccupationFunction":
        """Load a tabulated occupation from a CSV with columns |k|, n."""
        data = np.loadtxt(path, delimiter=",", comments="#")
        if data.ndim != 2 or data.shape[1] != 2:
            raise ValueError(f"{path}: expected two columns |k|, n")
        return cls.tabulated(data[:, 0], data[:, 1])

    def __call__(self, k) -> np.ndarray | float:
        """Evaluate n at 3-vector k or radial |k| (arrays allowed)."""
        k = np.asarray(k, dtype=float)
        if k.ndim and k.shape[-1] == 3:
            kr = np.sqrt(np.sum(k * k, axis=-1))
        else:
            kr = np.abs(k)
        if self.kind == "planck":
            z = np.exp(-self.beta * (0.5 * kr * kr - self.mu))
            return z / (1.0 - z)
        if self.kind == "gaussian":
            return self.amplitude * np.exp(-(kr / self.width) ** 2)
        if np.any(kr > self.grid[-1] * (1 + 1e-12)) or np.any(kr < self.grid[0] - 1e-12):
            raise ValueError("query outside tabulated grid")
        return np.clip(self._spline(kr), 0.0, None)


def occupation(n: OccupationFunction, k) -> np.ndarray | float:
    return n(k)


@dataclass(frozen=True)
class PropagatorMatrix:
    """The four regularized Keldysh components as evaluable functions.

    Components take (omega, k) with k a 3-vector or |k|; all broadcast.
    """

    n: OccupationFunction
    eps: float

    def _parts(self, omega, k):
        x = np.asarray(omega, dtype=float) - dispersion(k)
        nk = self.n(k)
        return x, nk

    def g_pm(self, omega, k):
        x, nk = self._parts(omega, k)
        return (TWO_PI * (1.0 + nk) * reg_delta(x, self.eps)).astype(complex)

    def g_mp(self, omega, k):
        x, nk = self._parts(omega, k)
        return (TWO_PI * nk * reg_delta(x, self.eps)).astype(complex)

    def g_mm(self, omega, k):
        x, nk = self._parts(omega, k)
        return 1j * reg_pv(x, self.eps) + math.pi * (1.0 + 2.0 * nk) * reg_delta(x, self.eps)

    def g_pp(self, omega, k):
        x, nk = self._parts(omega, k)
        return -1j * reg_pv(x, self.eps) + math.pi * (1.0 + 2.0 * nk) * reg_delta(x, self.eps)

    def as_matrix(self, omega, k) -> np.ndarray:
        """2x2 array [[pp, pm], [mp, mm]] at a single (omega, k)."""
        return np.array([[self.g_pp(omega, k), self.g_pm(omega, k)],
                         [self.g_mp(omega, k), self.g_mm(omega, k)]], dtype=complex)


def propagator_matrix(n: OccupationFunction, eps) -> PropagatorMatrix:
    e = eps.eps if isinstance(eps, Regulator) else float(eps)
    if e <= 0:
        raise ValueError("regulator must be positive")
    return PropagatorMatrix(n=n, eps=e)


def correlator_value(u_head: int, g_head: int, u_tail: int, g_tail: int, p,
                     n: OccupationFunction) -> np.ndarray | float:
    """Two-point correlator table of the doubled-algebra Gauss state.

    Upper indices u are +1 for creation, -1 for annihilation symbols;
    lower indices g are the contour-branch labels. Returns n(p),
    1+n(p), or 0; the delta(p-p') normalization is handled by the
    momentum routing, not here.
    """
    for v in (u_head, g_head, u_tail, g_tail):
        if v not in (1, -1):
            raise ValueError("correlator indices must be +1 or -1")
    zero = np.zeros_like(np.asarray(n(p), dtype=float)) + 0.0
    if g_head != g_tail:
        # cross-branch pairs vanish unless the upper indices agree
        if u_head == u_tail == -1:
            return n(p)
        if u_head == u_tail == 1:
            return 1.0 + np.asarray(n(p))
        return zero
    # same branch: nonzero only for opposite upper indices
    if (u_head, u_tail) == (1, -1):
        return n(p)
    if (u_head, u_tail) == (-1, 1):
        return 1.0 + np.asarray(n(p))
    return zero


def g_factor(orientation: int, sign_head: int, sign_tail: int, p, n: OccupationFunction,
             eps=None) -> np.ndarray | float:
    """Correlator selected by (Or, g+, g-) for an internal diagram line.

    The upper indices of the contracted pair are derived from the line
    data, u_head = -Or*g_head and u_tail = +Or*g_tail, and the value is
    looked up in the correlator table. The regulator is accepted for
    signature uniformity; equal-time correlators do not depend on it.
    """
    if orientation not in (1, -1) or sign_head not in (1, -1) or sign_tail not in (1, -1):
        raise ValueError("orientation and end signs must be +1 or -1")
    return correlator_value(-orientation * sign_head, sign_head,
                            orientation * sign_tail, sign_tail, p, n)
