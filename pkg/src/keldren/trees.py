"""Directed trees of correlations: enumeration, order, subtrees, quotients.

A connected right tree is stored as a rooted labeled tree: vertices are
1..n, every non-root vertex has a parent (its unique internal line
toward the root), the root vertex carries the single root line, and
shoots hang off arbitrary vertices carrying their own labeling. Forests
(several right components) use the same encoding with one root line per
component.

Line identifiers are stable strings: ``i<v>`` for the internal line
from vertex v to its parent, ``r<v>`` for the root line at root vertex
v, and ``s<j>`` for the shoot with label j.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

DEFAULT_VERTEX_CAP = 6


@dataclass(frozen=True)
class DirectedTree:
    """Right forest with labeled vertices and labeled shoots."""

    n_vertices: int
    parent: tuple[tuple[int, int], ...]   # (child, parent) pairs, child-sorted
    roots: tuple[int, ...]                # root vertices, sorted
    shoots: tuple[int, ...] = ()          # shoots[j-1] = vertex of shoot j

    def __post_init__(self):
        verts = set(range(1, self.n_vertices + 1))
        pmap = dict(self.parent)
        if set(pmap) | set(self.roots) != verts or set(pmap) & set(self.roots):
            raise ValueError("every vertex needs exactly one of: parent, root line")
        for c, p in pmap.items():
            if p not in verts:
                raise ValueError(f"parent {p} of {c} is not a vertex")
        for v in verts:
            seen = set()
            while v in pmap:
                if v in seen:
                    raise ValueError("parent map contains a cycle")
                seen.add(v)
                v = pmap[v]
        if any(v not in verts for v in self.shoots):
            raise ValueError("shoot attached to missing vertex")

    # -- basic structure ---------------------------------------------------

    @property
    def parent_map(self) -> dict[int, int]:
        return dict(self.parent)

    def children(self, v: int) -> list[int]:
        return sorted(c for c, p in self.parent if p == v)

    def root_of(self, v: int) -> int:
        pmap = self.parent_map
        while v in pmap:
            v = pmap[v]
        return v

    def ancestors(self, v: int) -> list[int]:
        """Strict ancestors of v, nearest first."""
        out, pmap = [], self.parent_map
        while v in pmap:
            v = pmap[v]
            out.append(v)
        return out

    def internal_lines(self) -> list[str]:
        return [f"i{c}" for c, _ in self.parent]

    def root_lines(self) -> list[str]:
        return [f"r{v}" for v in self.roots]

    def shoot_lines(self) -> list[str]:
        return [f"s{j + 1}" for j in range(len(self.shoots))]

    def tau_lines(self) -> list[str]:
        """Lines that carry a time variable (all except shoots)."""
        return self.internal_lines() + self.root_lines()

    def line_ends(self, line: str) -> tuple[int, ...]:
        """Vertices incident to a line (upper vertex first for internal)."""
        if line.startswith("i"):
            c = int(line[1:])
            return (self.parent_map[c], c)
        if line.startswith("r"):
            return (int(line[1:]),)
        if line.startswith("s"):
            return (self.shoots[int(line[1:]) - 1],)
        raise KeyError(line)

    def is_connected(self) -> bool:
        return len(self.roots) == 1 and self.n_vertices > 0

    def components(self) -> list[frozenset[int]]:
        comp: dict[int, set[int]] = {r: {r} for r in self.roots}
        for v in range(1, self.n_vertices + 1):
            comp[self.root_of(v)].add(v)
        return [frozenset(comp[r]) for r in sorted(comp)]

    # -- partial order -----------------------------------------------------

    def leq(self, v: int, w: int) -> bool:
        """v <= w in the tree order (w an ancestor of v, same component)."""
        return v == w or w in self.ancestors(v)

    # -- serialization -----------------------------------------------------

    def canonical(self) -> tuple:
        return (self.n_vertices, self.parent, self.roots, self.shoots)

    def to_json(self) -> str:
        lines = [{"id": f"i{c}", "kind": "internal", "ends": [p, c]}
                 for c, p in self.parent]
        lines += [{"id": f"r{v}", "kind": "root", "vertex": v} for v in self.roots]
        lines += [{"id": f"s{j + 1}", "kind": "shoot", "vertex": v,
                   "shoot_label": j + 1} for j, v in enumerate(self.shoots)]
        return json.dumps({"n_vertices": self.n_vertices, "lines": lines},
                          sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DirectedTree":
        obj = json.loads(text)
        parent, roots, shoots = [], [], {}
        for ln in obj["lines"]:
            if ln["kind"] == "internal":
                parent.append((ln["ends"][1], ln["ends"][0]))
            elif ln["kind"] == "root":
                roots.append(ln["vertex"])
            else:
                shoots[ln["shoot_label"]] = ln["vertex"]
        return cls(obj["n_vertices"], tuple(sorted(parent)), tuple(sorted(roots)),
                   tuple(shoots[k] for k in sorted(shoots)))


@dataclass(frozen=True)
class CorrelationTree:
    """Directed tree plus time variables on its non-shoot lines."""

    tree: DirectedTree
    tau: tuple[tuple[str, float], ...]

    def __post_init__(self):
        tau = dict(self.tau)
        expected = set(self.tree.tau_lines())
        if set(tau) != expected:
            raise ValueError(f"tau must be defined exactly on {sorted(expected)}")
        if any(t < 0 for t in tau.values()):
            raise ValueError("time variables must be nonnegative")

    @property
    def tau_map(self) -> dict[str, float]:
        return dict(self.tau)

    @classmethod
    def make(cls, tree: DirectedTree, tau: dict[str, float]) -> "CorrelationTree":
        return cls(tree, tuple(sorted(tau.items())))


@dataclass(frozen=True)
class LineSubset:
    """Subset of the internal lines of a directed tree."""

    tree: DirectedTree
    lines: frozenset[str]

    def __post_init__(self):
        internal = set(self.tree.internal_lines())
        bad = self.lines - internal
        if bad:
            raise ValueError(f"not internal lines of the tree: {sorted(bad)}")


def disjoint_union(a: DirectedTree, b: DirectedTree) -> DirectedTree:
    """Forest with b's vertices relabeled after a's."""
    off = a.n_vertices
    parent = a.parent + tuple((c + off, p + off) for c, p in b.parent)
    roots = a.roots + tuple(r + off for r in b.roots)
    shoots = a.shoots + tuple(v + off for v in b.shoots)
    return DirectedTree(a.n_vertices + b.n_vertices, tuple(sorted(parent)),
                        tuple(sorted(roots)), shoots)


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------

def _acyclic(parent: dict[int, int], n: int) -> bool:
    for v in range(1, n + 1):
        seen = set()
        while v in parent:
            if v in seen:
                return False
            seen.add(v)
            v = parent[v]
    return True


def enumerate_trees(n_vertices: int, shoots: int = 0,
                    cap: int = DEFAULT_VERTEX_CAP) -> list[DirectedTree]:
    """All connected right trees with the given vertex and shoot counts.

    Vertex labels are structural (the labeling map is the identity on
    1..n), so two trees are identical only when their parent arrays,
    root vertex and shoot attachment agree; this matches counting each
    labeled tree once. Deterministic canonical order.
    """
    if n_vertices > cap:
        raise ValueError(f"vertex count {n_vertices} exceeds cap {cap}")
    if n_vertices == 0:
        return []
    out = []
    verts = list(range(1, n_vertices + 1))
    for root in verts:
        others = [v for v in verts if v != root]
        for choice in itertools.product(verts, repeat=len(others)):
            parent = dict(zip(others, choice))
            if not _acyclic(parent, n_vertices):
                continue
            for attach in itertools.product(verts, repeat=shoots):
                out.append(DirectedTree(
                    n_vertices, tuple(sorted(parent.items())), (root,), attach))
    out.sort(key=lambda t: t.canonical())
    return out


# ---------------------------------------------------------------------------
# Partial order, antichains, right subtrees
# ---------------------------------------------------------------------------

def partial_order(t: DirectedTree) -> set[tuple[int, int]]:
    """The reflexive order relation as a set of (v, w) pairs with v <= w."""
    rel = set()
    for v in range(1, t.n_vertices + 1):
        rel.add((v, v))
        for w in t.ancestors(v):
            rel.add((v, w))
    return rel


def antichains(t: DirectedTree) -> list[tuple[int, ...]]:
    """All antichains of the tree order, the empty one included."""
    verts = range(1, t.n_vertices + 1)
    out = []
    for r in range(t.n_vertices + 1):
        for combo in itertools.combinations(verts, r):
            ok = all(not t.leq(a, b) and not t.leq(b, a)
                     for a, b in itertools.combinations(combo, 2))
            if ok:
                out.append(combo)
    return out


@dataclass(frozen=True)
class RightSubtree:
    """Right subtree generated by an antichain, with the label map back."""

    antichain: tuple[int, ...]
    tree: DirectedTree
    vertex_map: tuple[tuple[int, int], ...]  # (subtree label, original label)

    @property
    def to_original(self) -> dict[int, int]:
        return dict(self.vertex_map)


def right_subtrees(t: DirectedTree) -> list[RightSubtree]:
    """One right subtree per antichain: the part of the tree at or below
    the antichain vertices, with the cut lines promoted to roots."""
    out = []
    for chain in antichains(t):
        keep = sorted(v for v in range(1, t.n_vertices + 1)
                      if any(t.leq(v, a) for a in chain))
        relabel = {old: new for new, old in enumerate(keep, start=1)}
        parent, roots = [], []
        for v in keep:
            if v in chain:
                roots.append(relabel[v])
            else:
                parent.append((relabel[v], relabel[t.parent_map[v]]))
        shoots = tuple(relabel[v] for v in t.shoots if v in keep)
        sub = DirectedTree(len(keep), tuple(sorted(parent)),
                           tuple(sorted(roots)), shoots)
        out.append(RightSubtree(chain, sub,
                                tuple((relabel[v], v) for v in keep)))
    return out


# ---------------------------------------------------------------------------
# Quotients
# ---------------------------------------------------------------------------

def quotient_tree(t: DirectedTree, subset) -> tuple[DirectedTree, dict[int, int]]:
    """Contract a subset of internal lines; returns (tree, merge map).

    The merge map sends each original vertex to its class label in the
    quotient. Root and shoot lines survive unchanged (reattached to the
    merged classes); contracting a root or shoot line is rejected.
    """
    lines = subset.lines if isinstance(subset, LineSubset) else frozenset(subset)
    internal = set(t.internal_lines())
    bad = lines - internal
    if bad:
        raise ValueError(f"cannot contract non-internal lines: {sorted(bad)}")

    cls = {v: v for v in range(1, t.n_vertices + 1)}

    def find(v):
        while cls[v] != v:
            cls[v] = cls[cls[v]]
            v = cls[v]
        return v

    pmap = t.parent_map
    for ln in lines:
        c = int(ln[1:])
        a, b = find(c), find(pmap[c])
        if a != b:
            cls[max(a, b)] = min(a, b)

    reps = sorted({find(v) for v in range(1, t.n_vertices + 1)})
    new_label = {rep: i for i, rep in enumerate(reps, start=1)}
    merge = {v: new_label[find(v)] for v in range(1, t.n_vertices + 1)}

    parent, roots = [], []
    for c, p in t.parent:
        if f"i{c}" in lines:
            continue
        parent.append((merge[c], merge[p]))
    roots = [merge[r] for r in t.roots]
    shoots = tuple(merge[v] for v in t.shoots)
    qt = DirectedTree(len(reps), tuple(sorted(parent)), tuple(sorted(roots)), shoots)
    return qt, merge
