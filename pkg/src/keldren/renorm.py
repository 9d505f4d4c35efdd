"""Large-time subtraction: s-variables, Taylor counterterms, scaling tools.

Amplitudes become distributions in s = 1/tau (one variable per
time-carrying tree line, Jacobian 1/s^2 per line); divergences live at
s = 0. The subtraction operator is realized concretely as Taylor
subtraction through a fixed order against the basis {s^m * eta_0(s)},
and counterterms of quotient diagrams (with some lines' times frozen
into delays) enter the recursion as distributions that are smooth in
the frozen variables and delta-supported in the rest.

All pairing integrals run in tau-space on shared per-axis grids with
the exp(-eps*tau) damping attached to the integration weights, so one
amplitude tensor per diagram feeds every pairing in the recursion.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .friedrichs import FriedrichsDiagram, QuadratureSpec, RegularizedAmplitude, freeze_lines
from .quadrature import GaussianTestFunction, bump, gauss_legendre, halflife_quadrature

_FACT = [math.factorial(k) for k in range(12)]


# ---------------------------------------------------------------------------
# s-variables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SVariables:
    """Inverse-time coordinates for a tuple of tau values."""

    s: tuple[float, ...]

    def __post_init__(self):
        if any(x <= 0 for x in self.s):
            raise ValueError("s variables must be positive")

    @property
    def tau(self) -> tuple[float, ...]:
        return tuple(1.0 / x for x in self.s)

    @property
    def jacobian(self) -> float:
        return float(np.prod([1.0 / x**2 for x in self.s]))

    @classmethod
    def from_tau(cls, tau) -> "SVariables":
        if any(t <= 0 for t in tau):
            raise ValueError("times must be positive to map to s variables")
        return cls(tuple(1.0 / t for t in tau))


def to_s_variables(amp: RegularizedAmplitude, ext: dict) -> "SAmplitude":
    return SAmplitude(amp, ext)


class SAmplitude:
    """Hat transform of an amplitude: A(1/s) * prod 1/s_i^2."""

    def __init__(self, amp: RegularizedAmplitude, ext: dict):
        self.amp = amp
        self.ext = ext
        self.axes = tuple(sorted(amp.diagram.active_tau))

    def __call__(self, *s: float) -> complex:
        sv = SVariables(tuple(s))
        tau = dict(zip(self.axes, sv.tau))
        return self.amp.evaluate(self.ext, tau) * sv.jacobian


# ---------------------------------------------------------------------------
# Unity decomposition and the scaling slice
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _mollifier_norm() -> float:
    x, w = gauss_legendre(-0.1, 0.1, 200)
    u = 10.0 * x
    vals = np.exp(-1.0 / np.maximum(1 - u * u, 1e-300))
    return float(np.sum(w * vals))


@dataclass(frozen=True)
class UnityDecomposition:
    """Cutoff xi, the partition eta_A, and the radial mollifier delta_lambda.

    xi = 1 on [0, 1/(6n)] and 0 beyond 1/(3n); eta_A(s) multiplies
    xi(s_i) outside A and (1 - xi(s_i)) inside A, so the 2^n functions
    sum to one pointwise. The mollifier has unit mass and support width
    1/10 around its center.
    """

    n: int

    def xi(self, x):
        return bump(x, 1.0 / (6.0 * self.n), 1.0 / (3.0 * self.n))

    def eta(self, subset: frozenset[int] | tuple[int, ...], s) -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, dtype=float))
        subset = frozenset(subset)
        out = np.ones(s.shape[0])
        for i in range(self.n):
            xi = self.xi(s[:, i])
            out = out * ((1.0 - xi) if i in subset else xi)
        return out

    def mollifier(self, x):
        x = np.asarray(x, dtype=float)
        u = 10.0 * x
        inside = np.abs(u) < 1.0
        vals = np.zeros_like(x)
        vals[inside] = np.exp(-1.0 / (1 - u[inside] ** 2))
        return vals / _mollifier_norm()

    def delta_lambda(self, x, lam):
        """Radial delta family (x/lam^2) * psi((x - lam)/lam)."""
        x = np.asarray(x, dtype=float)
        return x / lam**2 * self.mollifier((x - lam) / lam)


# ---------------------------------------------------------------------------
# Subtraction scheme and counterterms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SubtractionScheme:
    """Taylor subtraction depth per diagram (total order of s-monomials)."""

    order: int = 2

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("subtraction order must be nonnegative")

    def multi_indices(self, axes: tuple[str, ...]) -> list[dict[str, int]]:
        out = []
        for combo in itertools.product(range(self.order + 1), repeat=len(axes)):
            if sum(combo) <= self.order:
                out.append(dict(zip(axes, combo)))
        return out


@dataclass(frozen=True)
class Term:
    """One piece of a hat-space distribution on the axis set of a grid.

    delta: axis -> derivative order of the delta factor at s_axis = 0.
    smooth: axes carrying grid data; ``data`` has one dimension per
    smooth axis, ordered as in the owning grid's axis list.
    """

    delta: tuple[tuple[str, int], ...]
    smooth: tuple[str, ...]
    data: np.ndarray

    @property
    def delta_map(self) -> dict[str, int]:
        return dict(self.delta)


class TauGrid:
    """Shared per-axis tau nodes plus the amplitude tensor of a diagram."""

    def __init__(self, diagram: FriedrichsDiagram, ext: dict, eps: float,
                 quad: QuadratureSpec | None = None,
                 t_core: float = 40.0, order_core: int = 24,
                 panels: int = 4, order_tail: int = 24):
        self.diagram = diagram
        self.ext = ext
        self.eps = float(eps)
        self.axes = tuple(sorted(diagram.active_tau))
        self.amp = RegularizedAmplitude(diagram, 0.0, quad or QuadratureSpec())
        nodes, weights = halflife_quadrature(eps, t_core=t_core,
                                             order_core=order_core,
                                             panels_core=panels,
                                             order_tail=order_tail)
        self.nodes = {a: nodes for a in self.axes}
        self.weights = {a: weights for a in self.axes}
        mesh = np.meshgrid(*[self.nodes[a] for a in self.axes], indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        shape = tuple(len(self.nodes[a]) for a in self.axes)
        self.u_tensor = self.amp.evaluate_many(ext, self.axes, pts).reshape(shape)

    def u_term(self) -> Term:
        return Term(delta=(), smooth=self.axes, data=self.u_tensor)

    def axis_index(self, axis: str) -> int:
        return self.axes.index(axis)


class AxisTest:
    """Separable test object: per-axis value samples and derivatives at 0."""

    def __init__(self, axes: tuple[str, ...],
                 value_fns: dict[str, object], deriv0_fns: dict[str, object]):
        self.axes = axes
        self._value = value_fns
        self._deriv0 = deriv0_fns

    def axis_value(self, axis: str, s: np.ndarray) -> np.ndarray:
        return self._value[axis](s)

    def axis_deriv0(self, axis: str, order: int) -> float:
        return self._deriv0[axis](order)


def basis_test(grid: TauGrid, orders: dict[str, int]) -> AxisTest:
    """The subtraction basis element prod_i s_i^{m_i} * eta_0(s)."""
    uni = UnityDecomposition(len(grid.axes))

    def value_fn(m):
        return lambda s: np.asarray(s, dtype=float) ** m * uni.xi(s)

    def deriv0_fn(m):
        return lambda j: float(_FACT[j]) if j == m else 0.0

    return AxisTest(grid.axes,
                    {a: value_fn(orders.get(a, 0)) for a in grid.axes},
                    {a: deriv0_fn(orders.get(a, 0)) for a in grid.axes})


def psi_test(grid: TauGrid, psi: GaussianTestFunction) -> AxisTest:
    if psi.ndim != len(grid.axes):
        raise ValueError("test function dimension must match the axis count")

    def value_fn(i):
        return lambda s: psi.axis_values(i, s)

    def deriv0_fn(i):
        return lambda j: float(psi.axis_values(i, 0.0, order=j))

    return AxisTest(grid.axes,
                    {a: value_fn(i) for i, a in enumerate(grid.axes)},
                    {a: deriv0_fn(i) for i, a in enumerate(grid.axes)})


def pair_term(grid: TauGrid, term: Term, test: AxisTest,
              over: tuple[str, ...] | None = None) -> np.ndarray | complex:
    """Pair a term with a separable test over the given axes.

    Smooth axes in ``over`` are integrated with the damped weights and
    the test sampled at s = 1/tau; delta axes contribute
    (-1)^m * d^m(test)/ds^m at 0. Smooth axes outside ``over`` remain
    as data dimensions (in grid axis order).
    """
    over = grid.axes if over is None else over
    data = term.data
    factor = 1.0 + 0.0j
    for axis, order in term.delta:
        if axis not in over:
            raise ValueError("delta axes must always be paired")
        factor *= (-1.0) ** order * test.axis_deriv0(axis, order)
    smooth = list(term.smooth)
    for axis in [a for a in term.smooth if a in over]:
        dim = smooth.index(axis)
        vec = grid.weights[axis] * test.axis_value(axis, 1.0 / grid.nodes[axis])
        data = np.tensordot(data, vec, axes=([dim], [0]))
        smooth.remove(axis)
    out = data * factor
    if not smooth:
        return complex(out) if np.ndim(out) == 0 else complex(out.item())
    return out


@dataclass
class Counterterm:
    """Local distribution sum_m c_m(ext; frozen taus) * d^m delta(s).

    Coefficients are scalars for a fully recursed diagram, or arrays on
    the grid nodes of frozen axes for embedded quotient counterterms.
    """

    axes: tuple[str, ...]                 # delta axes
    coefficients: dict[tuple[tuple[str, int], ...], np.ndarray | complex]

    def coefficient(self, orders: dict[str, int]) -> np.ndarray | complex:
        key = tuple(sorted(orders.items()))
        return self.coefficients.get(key, 0.0)

    def pair(self, grid: TauGrid, test: AxisTest) -> complex:
        total = 0.0 + 0.0j
        for key, coef in self.coefficients.items():
            if np.ndim(coef) != 0:
                raise ValueError("embedded counterterm needs pairing via terms")
            factor = coef
            orders = dict(key)
            for axis in self.axes:
                m = orders.get(axis, 0)
                factor *= (-1.0) ** m * test.axis_deriv0(axis, m)
            total += factor
        return complex(total)

    def to_json(self) -> str:
        payload = {}
        for key, coef in self.coefficients.items():
            name = ",".join(f"{a}^{m}" for a, m in key) or "1"
            c = np.asarray(coef)
            payload[name] = {"re": c.real.tolist(), "im": c.imag.tolist()}
        return json.dumps({"axes": list(self.axes), "coefficients": payload},
                          sort_keys=True)


def apply_T(pairings: dict[tuple[tuple[str, int], ...], complex],
            scheme: SubtractionScheme, axes: tuple[str, ...]) -> Counterterm:
    """The subtraction operator on measured basis pairings.

    Given <D, s^m eta_0> for |m| <= N, returns the local distribution C
    with <C + D, s^m eta_0> = 0 for all such m (C = -T(D)).
    """
    coeffs = {}
    for key, val in pairings.items():
        orders = dict(key)
        if sum(orders.values()) > scheme.order:
            raise ValueError("pairing order exceeds the scheme order")
        if not np.all(np.isfinite(np.asarray(val))):
            raise ValueError("non-finite basis pairing: raise the scheme order")
        sign = np.prod([(-1.0) ** m / _FACT[m] for m in orders.values()]) if orders else 1.0
        coeffs[key] = -sign * val
    return Counterterm(axes=axes, coefficients=coeffs)


# ---------------------------------------------------------------------------
# The counterterm recursion
# ---------------------------------------------------------------------------

class RenormContext:
    """Counterterm recursion over a fixed diagram/external configuration.

    Quotient counterterms are memoized per frozen-line set; each one is
    a list of Terms that are delta-supported in the remaining axes and
    carry grid data over the frozen axes.
    """

    def __init__(self, diagram: FriedrichsDiagram, ext: dict, eps: float,
                 scheme: SubtractionScheme | None = None,
                 quad: QuadratureSpec | None = None, **grid_opts):
        if len(diagram.graph.tree.roots) != 1:
            raise ValueError("recursion applies to connected trees; use "
                             "tensor assembly for forests")
        self.scheme = scheme or SubtractionScheme()
        self.grid = TauGrid(diagram, ext, eps, quad, **grid_opts)
        self._memo: dict[frozenset, list[Term]] = {}

    @property
    def axes(self) -> tuple[str, ...]:
        return self.grid.axes

    def _inner_terms(self, frozen: frozenset) -> list[Term]:
        terms = [self.grid.u_term()]
        rest = [a for a in self.axes if a not in frozen]
        for r in range(1, len(rest)):
            for combo in itertools.combinations(rest, r):
                bigger = frozen | frozenset(combo)
                terms.extend(self.counterterm_terms(bigger))
        return terms

    def counterterm_terms(self, frozen: frozenset = frozenset()) -> list[Term]:
        frozen = frozenset(frozen)
        if frozen in self._memo:
            return self._memo[frozen]
        rest = tuple(a for a in self.axes if a not in frozen)
        if not rest:
            raise ValueError("no axes left to subtract")
        inner = self._inner_terms(frozen)
        out = []
        for orders in self.scheme.multi_indices(rest):
            test = basis_test(self.grid, orders)
            val = 0.0
            for term in inner:
                val = val + pair_term(self.grid, term, test, over=rest)
            sign = np.prod([(-1.0) ** m / _FACT[m] for m in orders.values()])
            delta = tuple(sorted(orders.items()))
            out.append(Term(delta=delta, smooth=tuple(frozen_axis for frozen_axis
                                                      in self.axes if frozen_axis in frozen),
                            data=np.asarray(-sign * val)))
        self._memo[frozen] = out
        return out

    def counterterm(self) -> Counterterm:
        """The top-level counterterm as scalar delta coefficients."""
        coeffs = {}
        for term in self.counterterm_terms(frozenset()):
            coeffs[term.delta] = complex(term.data)
        return Counterterm(axes=self.axes, coefficients=coeffs)

    # -- pairings -----------------------------------------------------------

    def bare_pairing(self, psi: GaussianTestFunction) -> complex:
        return complex(pair_term(self.grid, self.grid.u_term(), psi_test(self.grid, psi)))

    def r_pairing(self, psi: GaussianTestFunction) -> complex:
        """<R, Psi>: amplitude + all quotient counterterms + top counterterm."""
        test = psi_test(self.grid, psi)
        total = pair_term(self.grid, self.grid.u_term(), test)
        axes = self.axes
        for r in range(1, len(axes)):
            for combo in itertools.combinations(axes, r):
                for term in self.counterterm_terms(frozenset(combo)):
                    total = total + pair_term(self.grid, term, test)
        for term in self.counterterm_terms(frozenset()):
            total = total + pair_term(self.grid, term, test)
        return complex(total)

    def lambda_terms(self) -> list[Term]:
        """Counterterm assembly over subsets avoiding the root lines."""
        internal = [a for a in self.axes if a.startswith("i")]
        out = list(self.counterterm_terms(frozenset()))
        for r in range(1, len(internal) + 1):
            for combo in itertools.combinations(internal, r):
                out.extend(self.counterterm_terms(frozenset(combo)))
        return out


def counterterm_recursion(diagram: FriedrichsDiagram, ext: dict, eps: float,
                          scheme: SubtractionScheme | None = None,
                          quad: QuadratureSpec | None = None, **opts) -> Counterterm:
    return RenormContext(diagram, ext, eps, scheme, quad, **opts).counterterm()


def r_amplitude(diagram: FriedrichsDiagram, ext: dict, eps: float,
                psi: GaussianTestFunction, scheme: SubtractionScheme | None = None,
                quad: QuadratureSpec | None = None, **opts) -> complex:
    return RenormContext(diagram, ext, eps, scheme, quad, **opts).r_pairing(psi)


def lambda_assembly(diagram: FriedrichsDiagram, ext: dict, eps: float,
                    scheme: SubtractionScheme | None = None,
                    quad: QuadratureSpec | None = None, **opts) -> list[Term]:
    return RenormContext(diagram, ext, eps, scheme, quad, **opts).lambda_terms()


# ---------------------------------------------------------------------------
# Time-translation invariance
# ---------------------------------------------------------------------------

def _root_shifted(diagram: FriedrichsDiagram, t: float) -> FriedrichsDiagram:
    """Diagram with the root-line time argument shifted by t (as a delay)."""
    from dataclasses import replace
    roots = [a for a in diagram.active_tau if a.startswith("r")]
    if len(roots) != 1:
        raise ValueError("root shift needs exactly one active root line")
    root = roots[0]
    theta = []
    for lid, (path, const) in diagram.line_theta:
        theta.append((lid, (path, const + (t if root in path else 0.0))))
    return replace(diagram, line_theta=tuple(theta))


def external_phase(diagram: FriedrichsDiagram, ext: dict, t: float) -> complex:
    """exp(i * sum over external lines of Or * w(p) * t)."""
    from .occupancy import dispersion
    tot = 0.0
    for ln in diagram.graph.external_lines():
        tot += ln.orient * float(dispersion(np.asarray(ext[ln.id], dtype=float))) * t
    return complex(np.exp(1j * tot))


def check_time_translation(diagram: FriedrichsDiagram, ext: dict, eps: float,
                           t: float, scheme: SubtractionScheme | None = None,
                           quad: QuadratureSpec | None = None,
                           tol: float = 1e-8, **opts) -> tuple[bool, float]:
    """Verify phase * C(tau_root, ...) == C(tau_root + t, ...).

    Both sides are built through the same quadratures; the residual is
    the relative coefficient difference. Failures are reported, never
    silently repaired.
    """
    base = RenormContext(diagram, ext, eps, scheme, quad, **opts).counterterm()
    shifted = RenormContext(_root_shifted(diagram, t), ext, eps, scheme,
                            quad, **opts).counterterm()
    phase = external_phase(diagram, ext, t)
    num = den = 0.0
    for key in base.coefficients:
        lhs = phase * base.coefficients[key]
        rhs = shifted.coefficients.get(key, 0.0)
        num = max(num, abs(lhs - rhs))
        den = max(den, abs(lhs), abs(rhs))
    resid = num / den if den > 0 else 0.0
    return resid < tol, resid


# ---------------------------------------------------------------------------
# Scaling decomposition (single-line diagrams)
# ---------------------------------------------------------------------------

def scaling_decomposition(diagram: FriedrichsDiagram, ext: dict, eps: float,
                          psi: GaussianTestFunction,
                          scheme: SubtractionScheme | None = None,
                          quad: QuadratureSpec | None = None,
                          lam_max: float = 60.0, n_lam: int = 400,
                          n_slice: int = 40) -> complex:
    """Radial-slice evaluation of the renormalized pairing.

    Implements the lambda-scaling rewrite with the unity decomposition
    and the delta_1(1 - |s|) slice for diagrams with a single time line
    (the term with the empty index set vanishes on the slice because
    eta_0 is supported at small s). The test function must vanish at
    s = 0 to at least the scheme order, so the local counterterm drops
    and the identity closes against the direct pairing.

    The multi-line version of the display leaves the embedding of the
    quotient distributions on the slice implicit, so it is not offered
    here; use r_amplitude for those diagrams.
    """
    axes = tuple(sorted(diagram.active_tau))
    if len(axes) != 1:
        raise NotImplementedError("scaling decomposition is provided for "
                                  "single-time-line diagrams")
    scheme = scheme or SubtractionScheme()
    for j in range(scheme.order + 1):
        if abs(psi.axis_values(0, 0.0, order=j)) > 1e-12:
            raise ValueError("test function must vanish at 0 beyond the scheme order")
    uni = UnityDecomposition(1)
    amp = RegularizedAmplitude(diagram, 0.0, quad or QuadratureSpec())

    s_nodes, s_w = gauss_legendre(0.85, 1.15, n_slice)
    # lambda grid: composite Gauss panels in log space
    panels = max(8, n_lam // 25)
    log_edges = np.linspace(math.log(1e-3), math.log(lam_max), panels + 1)
    x, xw = composite_gauss(log_edges, max(12, n_lam // panels))
    lam = np.exp(x)
    lam_w = xw * lam

    S, L = np.meshgrid(s_nodes, lam, indexing="ij")
    U = S * L
    tau_pts = (1.0 / U).reshape(-1, 1)
    vals = amp.evaluate_many(ext, axes, tau_pts).reshape(U.shape)
    vals = vals * np.exp(-eps / U)
    integrand = (U ** -2.0) * vals * psi(U) * (1.0 - uni.xi(S)) \
        * S * uni.mollifier(S - 1.0)
    return complex(np.einsum("i,j,ij->", s_w, lam_w, integrand))
