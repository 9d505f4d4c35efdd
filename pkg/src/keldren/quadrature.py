"""Shared quadrature grids, log-scan fitting, and smooth test functions.

Everything here is deterministic: nodes depend only on the requested
orders, random sampling always goes through an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def gauss_legendre(a: float, b: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights mapped to [a, b]."""
    x, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def composite_gauss(edges: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre panels between consecutive edges."""
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = gauss_legendre(float(lo), float(hi), order)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def halflife_quadrature(eps: float, t_core: float = 40.0,
                        order_core: int = 48, order_tail: int = 48,
                        panels_core: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights for integrals of g(t)*exp(-eps*t) over [0, inf).

    A composite Gauss rule resolves the oscillatory region [0, t_core]
    (geometric panels, since integrands inherited from the 1/s^2 map
    vary fastest below t ~ 1); the slowly varying tail is mapped through
    u = exp(-eps*t) so the 1/eps mass is captured exactly even for
    eps -> 0.
    """
    edges = np.concatenate([[0.0], np.geomspace(0.2, t_core, panels_core)])
    t0, w0 = composite_gauss(edges, order_core)
    w0 = w0 * np.exp(-eps * t0)
    u_hi = np.exp(-eps * t_core)
    u, wu = gauss_legendre(0.0, u_hi, order_tail)
    t1 = -np.log(u) / eps
    w1 = wu / eps
    t = np.concatenate([t0, t1])
    w = np.concatenate([w0, w1])
    idx = np.argsort(t)
    return t[idx], w[idx]


def log_grid(lo: float, hi: float, n: int) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def fit_loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of log|y| versus log x.

    Entries with |y| below 1e-300 are dropped; if fewer than two points
    survive the data is treated as identically zero and the slope is
    +inf (decays faster than any power).
    """
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    keep = y > 1e-300
    if keep.sum() < 2:
        return float("inf")
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def scan_slope(eps: np.ndarray, values: np.ndarray, decade: float = 10.0) -> float:
    """Slope of a scan restricted to the final decade of the eps grid."""
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values, dtype=float)
    lo = eps.min()
    keep = eps <= lo * decade * (1 + 1e-12)
    return fit_loglog_slope(eps[keep], values[keep])


def pair_difference_slope(eps: np.ndarray, values: np.ndarray) -> float:
    """Convergence order from consecutive differences on a log grid.

    For values v(eps) = v0 + a*eps**alpha the differences on a geometric
    grid scale like eps**alpha, so the fitted log-log slope estimates
    alpha without knowing v0.
    """
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values, dtype=float)
    order = np.argsort(eps)
    eps, values = eps[order], values[order]
    diffs = np.abs(np.diff(values))
    return fit_loglog_slope(eps[:-1], diffs)


# ---------------------------------------------------------------------------
# Smooth separable test functions with analytic derivatives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianTestFunction:
    """Product of per-axis (polynomial * Gaussian) factors.

    value(s) = prod_i  P_i(s_i) * exp(-(s_i - c_i)^2 / w_i^2)

    Derivatives of any order are available in closed form, which the
    counterterm pairings need (delta-derivative pairings evaluate
    d^m Psi at s = 0 exactly, no finite differences).
    """

    coeffs: tuple[tuple[float, ...], ...]
    widths: tuple[float, ...]
    centers: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.centers:
            object.__setattr__(self, "centers", (0.0,) * len(self.widths))
        if len(self.coeffs) != len(self.widths):
            raise ValueError("one coefficient tuple per axis required")

    @property
    def ndim(self) -> int:
        return len(self.widths)

    def _axis_factor(self, i: int, order: int):
        """Polynomial Q with f_i^(order)(s) = Q(s) * exp(-(s-c)^2/w^2)."""
        p = np.polynomial.Polynomial(list(self.coeffs[i]))
        c, w = self.centers[i], self.widths[i]
        gauss_log_deriv = np.polynomial.Polynomial([2 * c / w**2, -2 / w**2])
        for _ in range(order):
            p = p.deriv() + p * gauss_log_deriv
        return p

    def axis_values(self, i: int, s, order: int = 0):
        s = np.asarray(s, dtype=float)
        p = self._axis_factor(i, order)
        c, w = self.centers[i], self.widths[i]
        return p(s) * np.exp(-((s - c) ** 2) / w**2)

    def __call__(self, *s):
        if len(s) != self.ndim:
            raise ValueError(f"expected {self.ndim} arguments")
        out = 1.0
        for i, si in enumerate(s):
            out = out * self.axis_values(i, si)
        return out

    def deriv(self, orders: tuple[int, ...], *s):
        if len(orders) != self.ndim or len(s) != self.ndim:
            raise ValueError("orders/arguments must match dimension")
        out = 1.0
        for i, (oi, si) in enumerate(zip(orders, s)):
            out = out * self.axis_values(i, si, order=oi)
        return out


def bump(x, lo: float, hi: float):
    """Smooth transition: 1 for x <= lo, 0 for x >= hi, C^inf between."""
    x = np.asarray(x, dtype=float)
    t = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.maximum(1 - t, 1e-300)), 0.0)
    out = b / (a + b)
    return np.where(t <= 0, 1.0, np.where(t >= 1, 0.0, out))
