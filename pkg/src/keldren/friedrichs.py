"""Friedrichs diagrams over correlation trees and their amplitudes.

A diagram couples a momentum-line graph to a directed tree: each graph
line joins two tree vertices (head strictly above tail in the tree
order, or the external node) and carries an orientation and end signs.
The amplitude is the loop-momentum integral of

    prod_v psi_v  *  prod_lines exp(i*Or*w(p)*Theta_line)  *  prod G

where Theta_line accumulates the time variables of the tree lines on
the increasing path under the graph line plus the per-line delays, and
the G factors select occupation correlators by the end decorations.
The vertex conservation deltas are solved exactly (Gaussian elimination
over the signed incidence pattern) to pick loop momenta.

Quotient diagrams freeze the time variables of contracted tree lines
into delays: the integrand is unchanged, only the bookkeeping of which
times remain free moves, which is what makes the quotient identity
checkable numerically.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .occupancy import OccupationFunction, correlator_value, dispersion
from .trees import DirectedTree, LineSubset, quotient_tree

PLUS = 0  # sentinel vertex label for the external node


class RoutingError(ValueError):
    """Momentum conservation system inconsistent with the given externals."""


class QuadratureBudgetError(RuntimeError):
    """Monte Carlo budget exhausted before reaching the target sigma."""


@dataclass(frozen=True)
class GraphLine:
    """One momentum line: head > tail in the tree order (0 = external node)."""

    id: str
    head: int
    tail: int
    orient: int
    g_tail: int
    g_head: int | None = None  # None iff head is the external node

    def __post_init__(self):
        if self.orient not in (1, -1) or self.g_tail not in (1, -1):
            raise ValueError("orientation and end signs must be +1/-1")
        if (self.head == PLUS) != (self.g_head is None):
            raise ValueError("g_head must be given exactly for non-external heads")

    @property
    def external(self) -> bool:
        return self.head == PLUS


@dataclass(frozen=True)
class FriedrichsGraph:
    """Decorated momentum-line graph over a shootless directed tree."""

    tree: DirectedTree
    lines: tuple[GraphLine, ...]
    branch: tuple[int, ...] = ()   # per-vertex contour branch, if uniform per vertex

    def __post_init__(self):
        for ln in self.lines:
            if ln.external:
                continue
            if not (self.tree.leq(ln.tail, ln.head) and ln.tail != ln.head):
                raise ValueError(f"line {ln.id}: head must lie strictly above tail")
        if not self.connected_through_external_node():
            raise ValueError("graph (with the external node adjoined) is disconnected")

    def connected_through_external_node(self) -> bool:
        nodes = set(range(1, self.tree.n_vertices + 1)) | {PLUS}
        adj: dict[int, set[int]] = {v: set() for v in nodes}
        for ln in self.lines:
            adj[ln.head].add(ln.tail)
            adj[ln.tail].add(ln.head)
        seen, todo = set(), [PLUS]
        while todo:
            v = todo.pop()
            if v in seen:
                continue
            seen.add(v)
            todo.extend(adj[v] - seen)
        return seen == nodes

    def internal_lines(self) -> list[GraphLine]:
        return [ln for ln in self.lines if not ln.external]

    def external_lines(self) -> list[GraphLine]:
        return [ln for ln in self.lines if ln.external]

    def structure_key(self) -> tuple:
        """Underlying incidence structure, decorations forgotten."""
        return tuple(sorted((ln.head, ln.tail) for ln in self.lines))

    def canonical(self) -> tuple:
        return (self.branch,
                tuple(sorted((ln.head, ln.tail, ln.orient, ln.g_tail,
                              ln.g_head if ln.g_head is not None else 0)
                             for ln in self.lines)))

    def to_json(self) -> str:
        return json.dumps({
            "tree": json.loads(self.tree.to_json()),
            "branch": list(self.branch),
            "lines": [{"id": ln.id, "head": ln.head, "tail": ln.tail,
                       "orient": ln.orient, "g_tail": ln.g_tail,
                       "g_head": ln.g_head} for ln in self.lines],
        }, sort_keys=True)


def tree_path_data(tree: DirectedTree, head: int, tail: int) -> tuple[tuple[str, ...], tuple[int, ...]]:
    """Tree lines on the increasing path tail -> head and the vertices between.

    For head = PLUS the path climbs to the component root and includes
    its root line.
    """
    path_lines, vertices = [], []
    v = tail
    vertices.append(v)
    while True:
        if v == head:
            break
        pmap = tree.parent_map
        if v in pmap:
            path_lines.append(f"i{v}")
            v = pmap[v]
            vertices.append(v)
        else:
            if head != PLUS:
                raise ValueError(f"no increasing path from {tail} to {head}")
            path_lines.append(f"r{v}")
            break
    return tuple(path_lines), tuple(vertices)


# ---------------------------------------------------------------------------
# Vertex functions
# ---------------------------------------------------------------------------

def gaussian_kernel(width: float = 1.0, amplitude: complex = 1.0):
    """Separable Gaussian test kernel prod_i amp^(1/n)*exp(-|p_i|^2/(2 w^2))."""

    def kernel(p_ends: np.ndarray) -> np.ndarray:
        # p_ends: (batch, n_ends, 3)
        return amplitude * np.exp(-0.5 * np.sum(p_ends * p_ends, axis=(-2, -1)) / width**2)

    kernel.conjugate = lambda: gaussian_kernel(width, np.conj(amplitude))
    return kernel


def zero_kernel():
    def kernel(p_ends: np.ndarray) -> np.ndarray:
        return np.zeros(p_ends.shape[0], dtype=complex)

    kernel.conjugate = lambda: zero_kernel()
    return kernel


@dataclass(frozen=True)
class VertexFunction:
    """Smooth kernel plus the partition of the vertex ends into
    momentum-conservation blocks (block indices refer to the canonical
    end order of the vertex; None means a single block)."""

    kernel: object
    blocks: tuple[tuple[int, ...], ...] | None = None

    def conjugate(self) -> "VertexFunction":
        conj = getattr(self.kernel, "conjugate", None)
        return VertexFunction(conj() if conj else self.kernel, self.blocks)


# ---------------------------------------------------------------------------
# Diagram
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FriedrichsDiagram:
    """Graph + tree + vertex functions + delays, ready for evaluation.

    ``active_tau`` lists the tree lines whose time variables are still
    free; ``line_theta`` maps each graph line to (path restricted to the
    active lines, accumulated constant delay). Quotients shrink
    ``active_tau`` and grow the constants; the integrand itself never
    changes, which realizes the quotient-diagram bookkeeping.
    """

    graph: FriedrichsGraph
    occupation: OccupationFunction
    vertex_functions: tuple[tuple[int, VertexFunction], ...]
    delay: tuple[tuple[tuple[int, str], float], ...] = ()
    active_tau: tuple[str, ...] | None = None
    line_theta: tuple[tuple[str, tuple[tuple[str, ...], float]], ...] | None = None
    contracted_tree: DirectedTree | None = None
    vertex_merge: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.active_tau is None:
            object.__setattr__(self, "active_tau", tuple(self.graph.tree.tau_lines()))
        if self.line_theta is None:
            theta = []
            delay = dict(self.delay)
            for ln in self.graph.lines:
                path, verts = tree_path_data(self.graph.tree, ln.head, ln.tail)
                const = sum(delay.get((v, ln.id), 0.0) for v in verts)
                theta.append((ln.id, (path, const)))
            object.__setattr__(self, "line_theta", tuple(theta))
        for (_v, _r), val in self.delay:
            if val < 0:
                raise ValueError("delays must be nonnegative")

    # -- convenience -------------------------------------------------------

    @property
    def tree(self) -> DirectedTree:
        return self.contracted_tree if self.contracted_tree is not None else self.graph.tree

    @property
    def theta_map(self) -> dict[str, tuple[tuple[str, ...], float]]:
        return dict(self.line_theta)

    def vertex_function(self, v: int) -> VertexFunction:
        return dict(self.vertex_functions)[v]

    def theta(self, line_id: str, tau: dict[str, float]) -> float:
        path, const = self.theta_map[line_id]
        return const + sum(tau[r] for r in path)

    def external_ids(self) -> list[str]:
        return [ln.id for ln in self.graph.external_lines()]

    def covering_counts(self) -> dict[str, int]:
        """Graph lines whose path covers each active tree line."""
        counts = {r: 0 for r in self.graph.tree.tau_lines()}
        for ln in self.graph.lines:
            path, _ = tree_path_data(self.graph.tree, ln.head, ln.tail)
            for r in path:
                counts[r] += 1
        return counts

    @property
    def admissible(self) -> bool:
        """Every tree line is covered by at least three graph lines."""
        return all(c >= 3 for c in self.covering_counts().values())

    def conjugate(self) -> "FriedrichsDiagram":
        """Image under the involution: flip orientations and end signs,
        conjugate the vertex kernels."""
        lines = tuple(replace(ln, orient=-ln.orient, g_tail=-ln.g_tail,
                              g_head=None if ln.g_head is None else -ln.g_head)
                      for ln in self.graph.lines)
        graph = FriedrichsGraph(self.graph.tree, lines,
                                tuple(-b for b in self.graph.branch))
        vfs = tuple((v, vf.conjugate()) for v, vf in self.vertex_functions)
        return replace(self, graph=graph, vertex_functions=vfs)

    def to_json(self) -> str:
        return json.dumps({
            "graph": json.loads(self.graph.to_json()),
            "active_tau": list(self.active_tau),
            "line_theta": {k: [list(p), c] for k, (p, c) in self.line_theta},
            "delay": [[list(k), v] for k, v in self.delay],
        }, sort_keys=True)


def make_diagram(graph: FriedrichsGraph, occupation: OccupationFunction,
                 kernels: dict[int, VertexFunction] | None = None,
                 delay: dict[tuple[int, str], float] | None = None,
                 default_width: float = 1.0) -> FriedrichsDiagram:
    kernels = dict(kernels or {})
    vfs = []
    for v in range(1, graph.tree.n_vertices + 1):
        vfs.append((v, kernels.get(v, VertexFunction(gaussian_kernel(default_width)))))
    return FriedrichsDiagram(graph=graph, occupation=occupation,
                             vertex_functions=tuple(vfs),
                             delay=tuple(sorted((delay or {}).items())))


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------

def _vertex_ops(n_ends: int) -> tuple[int, ...]:
    if n_ends % 2:
        raise ValueError("vertices need an even number of line ends")
    return (1,) * (n_ends // 2) + (-1,) * (n_ends // 2)


def enumerate_diagrams(tree: DirectedTree, max_lines_per_vertex: int = 4,
                       branches: tuple[int, ...] | None = None,
                       cap: int = 200_000) -> list[FriedrichsGraph]:
    """All Friedrichs graphs over a shootless tree with fixed vertex arity.

    Each vertex carries max_lines_per_vertex line ends, half creation
    and half annihilation, all on one contour branch (pair-interaction
    vertices). Ends pair into internal lines only between order-
    comparable vertices and only when the derived orientation is
    consistent for both ends; unpaired ends become external lines. The
    result is deduplicated (ends of equal type at a vertex are
    interchangeable) and canonically ordered.
    """
    if tree.shoots:
        raise ValueError("diagrams are built over trees without shoots")
    nv = tree.n_vertices
    ops = _vertex_ops(max_lines_per_vertex)
    ends = [(v, i) for v in range(1, nv + 1) for i in range(len(ops))]
    comparable = {}
    for v, w in itertools.product(range(1, nv + 1), repeat=2):
        if v != w and tree.leq(w, v):
            comparable[(v, w)] = True  # v strictly above w

    branch_choices = [branches] if branches is not None else \
        list(itertools.product((1, -1), repeat=nv))

    seen, out = set(), []
    for branch in branch_choices:
        if len(branch) != nv:
            raise ValueError("branch assignment must cover all vertices")

        def op(end):
            return ops[end[1]]

        def g_of(end):
            return branch[end[0] - 1]

        def pairings(remaining):
            if not remaining:
                yield []
                return
            first = remaining[0]
            rest = remaining[1:]
            # first end stays external
            for tail_pairs in pairings(rest):
                yield tail_pairs
            # or pairs with a later end
            for j, other in enumerate(rest):
                if other[0] == first[0]:
                    continue
                if (first[0], other[0]) in comparable:
                    head, tail = first, other
                elif (other[0], first[0]) in comparable:
                    head, tail = other, first
                else:
                    continue
                # orientation consistency: u_head = -Or*g_head, u_tail = +Or*g_tail
                orient = op(tail) * g_of(tail)
                if op(head) != -orient * g_of(head):
                    continue
                for tail_pairs in pairings(rest[:j] + rest[j + 1:]):
                    yield [(head, tail, orient)] + tail_pairs

        count = 0
        for pairs in pairings(ends):
            count += 1
            if count > cap:
                raise ValueError(f"diagram enumeration exceeded cap {cap}")
            paired_ends = {e for h, t, _ in pairs for e in (h, t)}
            lines = []
            for k, (h, t, orient) in enumerate(sorted(
                    pairs, key=lambda p: (p[0][0], p[1][0], p[2], p[0][1], p[1][1]))):
                lines.append(GraphLine(id=f"l{k}", head=h[0], tail=t[0],
                                       orient=orient, g_tail=g_of(t), g_head=g_of(h)))
            exts = sorted((e for e in ends if e not in paired_ends),
                          key=lambda e: (e[0], -op(e), e[1]))
            for k, e in enumerate(exts):
                orient = -g_of(e) * op(e)
                lines.append(GraphLine(id=f"e{k}", head=PLUS, tail=e[0],
                                       orient=orient, g_tail=g_of(e)))
            try:
                graph = FriedrichsGraph(tree, tuple(lines), tuple(branch))
            except ValueError:
                continue  # disconnected through the external node
            key = graph.canonical()
            if key not in seen:
                seen.add(key)
                out.append(graph)
    out.sort(key=lambda g: g.canonical())
    return out


# ---------------------------------------------------------------------------
# Momentum routing
# ---------------------------------------------------------------------------

def _rref(matrix: list[list[Fraction]]) -> tuple[list[list[Fraction]], list[int]]:
    m = [row[:] for row in matrix]
    rows, cols = len(m), len(m[0]) if m else 0
    pivots, r = [], 0
    for c in range(cols):
        if r >= rows:
            break
        piv = next((i for i in range(r, rows) if m[i][c] != 0), None)
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        inv = m[r][c]
        m[r] = [x / inv for x in m[r]]
        for i in range(rows):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
    return m, pivots


@dataclass(frozen=True)
class MomentumRouting:
    """Solved conservation system for a diagram.

    internal momentum stack = solution @ [externals] + loops @ [loop vars],
    plus a list of pure-external constraint rows that must vanish.
    """

    internal_ids: tuple[str, ...]
    external_ids: tuple[str, ...]
    solution: np.ndarray       # (n_internal, n_external)
    loops: np.ndarray          # (n_internal, n_loops)
    constraints: np.ndarray    # (n_constraints, n_external)

    @property
    def n_loops(self) -> int:
        return self.loops.shape[1]


def vertex_end_list(d: FriedrichsDiagram, v: int) -> list[tuple[str, str]]:
    """Incident (line id, 'head'|'tail') pairs at vertex v in canonical order."""
    ends = []
    for ln in d.graph.lines:
        if ln.head == v:
            ends.append((ln.id, "head"))
        if ln.tail == v:
            ends.append((ln.id, "tail"))
    return sorted(ends)


def _end_sign(ln: GraphLine, role: str) -> int:
    """+1 when the orientation arrow points into the vertex at this end."""
    into_head = ln.orient == 1
    return (1 if into_head else -1) if role == "head" else (-1 if into_head else 1)


def route_momenta(d: FriedrichsDiagram) -> MomentumRouting:
    internal = [ln for ln in d.graph.lines if not ln.external]
    external = [ln for ln in d.graph.lines if ln.external]
    int_ids = [ln.id for ln in internal]
    ext_ids = [ln.id for ln in external]
    col = {lid: j for j, lid in enumerate(int_ids + ext_ids)}
    by_id = {ln.id: ln for ln in d.graph.lines}

    rows = []
    for v in range(1, d.graph.tree.n_vertices + 1):
        ends = vertex_end_list(d, v)
        vf = d.vertex_function(v)
        blocks = vf.blocks or (tuple(range(len(ends))),)
        for block in blocks:
            if not block:
                raise ValueError("empty conservation block")
            if all(ends[i][1] == "head" for i in block):
                raise ValueError("each block needs at least one tail end")
            row = [Fraction(0)] * len(col)
            for i in block:
                lid, role = ends[i]
                row[col[lid]] += _end_sign(by_id[lid], role)
            rows.append(row)

    nI, nE = len(int_ids), len(ext_ids)
    if not rows:
        return MomentumRouting(tuple(int_ids), tuple(ext_ids),
                               np.zeros((nI, nE)), np.eye(nI), np.zeros((0, nE)))
    red, pivots = _rref(rows)
    pivots_int = [c for c in pivots if c < nI]
    free_int = [c for c in range(nI) if c not in pivots_int]

    solution = np.zeros((nI, nE))
    loops = np.zeros((nI, len(free_int)))
    for j, c in enumerate(free_int):
        loops[c, j] = 1.0
    constraints = []
    for r, row in enumerate(red):
        if r >= len(pivots):
            break
        c = pivots[r]
        if c < nI:
            # p_c = -sum(other internal free) - sum(external part)
            for j, fc in enumerate(free_int):
                loops[c, j] = -float(row[fc])
            for e in range(nE):
                solution[c, e] = -float(row[nI + e])
        else:
            constraints.append([float(x) for x in row[nI:]])
    return MomentumRouting(tuple(int_ids), tuple(ext_ids), solution, loops,
                           np.array(constraints).reshape(-1, nE))


# ---------------------------------------------------------------------------
# Amplitude evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureSpec:
    """Loop-momentum integration recipe.

    kind 'grid': tensor Gauss-Legendre with the given order per axis on
    [-box, box]^3 per loop momentum. kind 'mc': Gaussian importance
    sampling with deterministic seed; a target_sigma, when set, is
    enforced after sampling (budget error when missed).
    """

    kind: str = "grid"
    order: int = 16
    box: float = 6.0
    samples: int = 20_000
    seed: int = 0
    importance_width: float = 1.5
    target_sigma: float | None = None

    def __post_init__(self):
        if self.kind not in ("grid", "mc"):
            raise ValueError("quadrature kind must be 'grid' or 'mc'")


def _loop_points(spec: QuadratureSpec, n_loops: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample/grid points of shape (B, n_loops, 3) with weights (B,)."""
    dim = 3 * n_loops
    if n_loops == 0:
        return np.zeros((1, 0, 3)), np.ones(1)
    if spec.kind == "grid":
        total = spec.order ** dim
        if total > 5_000_000:
            raise ValueError(
                f"grid quadrature with {n_loops} loops needs {total} points; use mc")
        x, w = np.polynomial.legendre.leggauss(spec.order)
        x = x * spec.box
        w = w * spec.box
        idx = np.unravel_index(np.arange(total), (spec.order,) * dim)
        pts = np.stack([x[i] for i in idx], axis=-1)
        wts = np.prod(np.stack([w[i] for i in idx]), axis=0)
        return pts.reshape(-1, n_loops, 3), wts
    rng = np.random.default_rng(spec.seed)
    s = spec.importance_width
    pts = rng.normal(scale=s, size=(spec.samples, dim))
    pdf = np.exp(-0.5 * np.sum(pts * pts, axis=1) / s**2) / (
        (2 * math.pi) ** (dim / 2) * s**dim)
    return pts.reshape(-1, n_loops, 3), 1.0 / (pdf * spec.samples)


def _integrand(d: FriedrichsDiagram, routing: MomentumRouting,
               ext: dict[str, np.ndarray], tau: dict[str, float],
               eps: float, loop_pts: np.ndarray) -> np.ndarray:
    B = loop_pts.shape[0]
    ext_stack = (np.array([ext[i] for i in routing.external_ids], dtype=float)
                 if routing.external_ids else np.zeros((0, 3)))
    internal = (np.einsum("ie,ex->ix", routing.solution, ext_stack)[None, :, :]
                + np.einsum("il,blx->bix", routing.loops, loop_pts))
    momenta = {lid: internal[:, j, :] for j, lid in enumerate(routing.internal_ids)}
    for lid in routing.external_ids:
        momenta[lid] = np.broadcast_to(np.asarray(ext[lid], dtype=float), (B, 3))

    by_id = {ln.id: ln for ln in d.graph.lines}
    values = np.ones(B, dtype=complex)
    theta_map = d.theta_map
    for lid, p in momenta.items():
        ln = by_id[lid]
        path, const = theta_map[lid]
        theta = const + sum(tau[r] for r in path)
        w = dispersion(p)
        values = values * np.exp(1j * ln.orient * w * theta)
        if not ln.external:
            pr = np.sqrt(np.maximum(np.sum(p * p, axis=-1), 0.0))
            values = values * correlator_value(-ln.orient * ln.g_head, ln.g_head,
                                               ln.orient * ln.g_tail, ln.g_tail,
                                               pr, d.occupation)
    for v in range(1, d.graph.tree.n_vertices + 1):
        ends = vertex_end_list(d, v)
        if not ends:
            continue
        p_ends = np.stack([momenta[lid] for lid, _ in ends], axis=1)
        values = values * d.vertex_function(v).kernel(p_ends)
    if eps > 0 and loop_pts.shape[1]:
        values = values * np.exp(-eps * np.sum(loop_pts * loop_pts, axis=(1, 2)))
    return values


@dataclass
class RegularizedAmplitude:
    """Deterministic evaluator of a diagram amplitude.

    Routing is solved once at construction; evaluation is a pure
    function of (external momenta, time variables), reentrant across
    threads, with the quadrature fixed by the spec (incl. seed).
    """

    diagram: FriedrichsDiagram
    eps: float = 0.0
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)

    def __post_init__(self):
        self.routing = route_momenta(self.diagram)

    def evaluate_with_sigma(self, ext: dict[str, np.ndarray],
                            tau: dict[str, float]) -> tuple[complex, float]:
        missing = set(self.routing.external_ids) - set(ext)
        if missing:
            raise ValueError(f"missing external momenta: {sorted(missing)}")
        extra = set(self.diagram.active_tau) - set(tau)
        if extra:
            raise ValueError(f"missing time variables: {sorted(extra)}")
        if self.routing.constraints.size:
            ext_stack = np.array([ext[i] for i in self.routing.external_ids])
            resid = self.routing.constraints @ ext_stack
            if np.abs(resid).max() > 1e-9:
                raise RoutingError(
                    f"external momenta violate conservation by {np.abs(resid).max():.3e}")
        pts, wts = _loop_points(self.quad, self.routing.n_loops)
        vals = _integrand(self.diagram, self.routing, ext, tau, self.eps, pts)
        total = complex(np.sum(vals * wts))
        sigma = 0.0
        if self.quad.kind == "mc" and len(vals) > 1:
            contrib = vals * wts * len(vals)
            sigma = float(np.sqrt((np.abs(contrib - contrib.mean()) ** 2).mean()
                                  / len(vals)))
            if self.quad.target_sigma is not None and sigma > self.quad.target_sigma:
                raise QuadratureBudgetError(
                    f"mc sigma {sigma:.3e} above target {self.quad.target_sigma:.3e}")
        return total, sigma

    def evaluate(self, ext: dict[str, np.ndarray], tau: dict[str, float]) -> complex:
        return self.evaluate_with_sigma(ext, tau)[0]

    def evaluate_many(self, ext: dict[str, np.ndarray], tau_axes: tuple[str, ...],
                      tau_points: np.ndarray, chunk: int = 512) -> np.ndarray:
        """Amplitude at many time configurations sharing one loop grid.

        tau_points has shape (T, len(tau_axes)); the tau-independent part
        of the integrand is evaluated once, the phase factors (linear in
        the time variables) are applied per configuration.
        """
        d = self.diagram
        if set(tau_axes) != set(d.active_tau):
            raise ValueError("tau_axes must cover the active time lines")
        tau_points = np.asarray(tau_points, dtype=float)
        base_tau = {r: 0.0 for r in tau_axes}
        pts, wts = _loop_points(self.quad, self.routing.n_loops)
        base_vals = _integrand(d, self.routing, ext, base_tau, self.eps, pts)

        # frequency coefficients: exponent = sum_lines Or*w(p_line)*Theta_line
        ext_stack = (np.array([ext[i] for i in self.routing.external_ids], dtype=float)
                     if self.routing.external_ids else np.zeros((0, 3)))
        internal = (np.einsum("ie,ex->ix", self.routing.solution, ext_stack)[None, :, :]
                    + np.einsum("il,blx->bix", self.routing.loops, pts))
        momenta = {lid: internal[:, j, :]
                   for j, lid in enumerate(self.routing.internal_ids)}
        for lid in self.routing.external_ids:
            momenta[lid] = np.broadcast_to(np.asarray(ext[lid], dtype=float),
                                           (pts.shape[0], 3))
        theta_map = d.theta_map
        by_id = {ln.id: ln for ln in d.graph.lines}
        freq = np.zeros((pts.shape[0], len(tau_axes)))
        for lid, p in momenta.items():
            path, _ = theta_map[lid]
            w = by_id[lid].orient * dispersion(p)
            for j, axis in enumerate(tau_axes):
                if axis in path:
                    freq[:, j] += w

        out = np.empty(tau_points.shape[0], dtype=complex)
        for lo in range(0, tau_points.shape[0], chunk):
            hi = min(lo + chunk, tau_points.shape[0])
            phases = np.exp(1j * freq @ tau_points[lo:hi].T)  # (B, chunk)
            out[lo:hi] = (base_vals * wts) @ phases
        return out


def evaluate_amplitude(d: FriedrichsDiagram, ext: dict[str, np.ndarray],
                       tau: dict[str, float], eps: float = 0.0,
                       quad: QuadratureSpec | None = None) -> complex:
    return RegularizedAmplitude(d, eps, quad or QuadratureSpec()).evaluate(ext, tau)


# ---------------------------------------------------------------------------
# Quotients and freezing
# ---------------------------------------------------------------------------

def freeze_lines(d: FriedrichsDiagram, lines, tau: dict[str, float]) -> FriedrichsDiagram:
    """Reclassify the given active tree lines as fixed delays.

    Works for any time-carrying line (internal or root); used both by
    the public quotient_diagram and by the subtraction recursion.
    """
    lines = frozenset(lines)
    bad = lines - set(d.active_tau)
    if bad:
        raise ValueError(f"not active time lines: {sorted(bad)}")
    missing = lines - set(tau)
    if missing:
        raise ValueError(f"no time value given for {sorted(missing)}")
    theta = []
    for lid, (path, const) in d.line_theta:
        const = const + sum(tau[r] for r in path if r in lines)
        theta.append((lid, (tuple(r for r in path if r not in lines), const)))
    return replace(d, active_tau=tuple(r for r in d.active_tau if r not in lines),
                   line_theta=tuple(theta))


def quotient_diagram(d: FriedrichsDiagram, subset, tau: dict[str, float]) -> FriedrichsDiagram:
    """Contract a subset of internal tree lines, absorbing their times.

    The returned diagram carries the contracted tree and the vertex
    merge map; the accumulated delays follow the quotient rule (frozen
    path times plus existing delays). Loops created by the contraction
    stay in the integrand with their now-constant phase.
    """
    lines = subset.lines if isinstance(subset, LineSubset) else frozenset(subset)
    internal = set(d.graph.tree.internal_lines())
    bad = lines - internal
    if bad:
        raise ValueError(f"quotient subset must be internal tree lines, got {sorted(bad)}")
    qt, merge = quotient_tree(d.graph.tree, lines)
    frozen = freeze_lines(d, lines, tau)
    # remap surviving tree-line ids to the contracted tree's labels
    remap = {}
    for c, _p in d.graph.tree.parent:
        if f"i{c}" not in lines:
            remap[f"i{c}"] = f"i{merge[c]}"
    for v in d.graph.tree.roots:
        remap[f"r{v}"] = f"r{merge[v]}"
    theta = tuple((lid, (tuple(remap[r] for r in path), const))
                  for lid, (path, const) in frozen.line_theta)
    active = tuple(sorted(remap[r] for r in frozen.active_tau))
    return replace(frozen, line_theta=theta, active_tau=active,
                   contracted_tree=qt,
                   vertex_merge=tuple(sorted(merge.items())))
