"""Discrete factor graphs, cluster-graph construction and the MODEL text format."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ModelError


@dataclass(frozen=True)
class Variable:
    id: int
    cardinality: int

    def __post_init__(self):
        if self.cardinality < 2:
            raise ModelError(f"variable {self.id}: cardinality must be >= 2")


@dataclass
class Factor:
    """A strictly positive table over an ordered scope.

    ``table`` is flat, row-major, with the last scope variable varying fastest.
    """

    scope: tuple[int, ...]
    table: np.ndarray

    def __post_init__(self):
        self.scope = tuple(int(v) for v in self.scope)
        self.table = np.asarray(self.table, dtype=np.float64).ravel()
        if len(set(self.scope)) != len(self.scope):
            raise ModelError(f"duplicate variable in scope {self.scope}")

    def check(self, cardinalities: Sequence[int]) -> None:
        for v in self.scope:
            if not 0 <= v < len(cardinalities):
                raise ModelError(f"factor references unknown variable id {v}")
        expected = math.prod(cardinalities[v] for v in self.scope)
        if self.table.size != expected:
            raise ModelError(
                f"table length mismatch: scope {self.scope} needs {expected}, got {self.table.size}"
            )
        if not np.all(self.table > 0) or not np.all(np.isfinite(self.table)):
            raise ModelError(f"non-positive entry in factor over {self.scope}")

    def shaped(self, cardinalities: Sequence[int]) -> np.ndarray:
        return self.table.reshape([cardinalities[v] for v in self.scope])


def check_model(cardinalities: Sequence[int], factors: Sequence[Factor]) -> None:
    for v, k in enumerate(cardinalities):
        Variable(v, int(k))
    for f in factors:
        f.check(cardinalities)


def expand_to(table: np.ndarray, scope: Sequence[int], target: Sequence[int]) -> np.ndarray:
    """Reshape a shaped table over ``scope`` so it broadcasts against ``target``'s axes."""
    perm = sorted(range(len(scope)), key=lambda k: target.index(scope[k]))
    t = np.transpose(table, perm)
    shape = [1] * len(target)
    for k in perm:
        shape[target.index(scope[k])] = table.shape[k]
    return t.reshape(shape)


@dataclass
class Cluster:
    scope: tuple[int, ...]
    potential: np.ndarray  # shaped, axes follow scope


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    sepset: tuple[int, ...]


@dataclass
class ClusterGraph:
    """Clusters joined by directed message slots.

    Edge ids are the positions in ``edges``, which are sorted by
    (source, target); every edge has its reverse in the list.  The flat
    arrays in :attr:`layout` are what the propagation kernels consume.
    """

    cardinalities: tuple[int, ...]
    clusters: list[Cluster]
    edges: list[Edge]
    factor_assignment: list[int]
    kind: str = "bethe"
    layout: "GraphLayout" = field(init=False, repr=False)

    def __post_init__(self):
        self.cardinalities = tuple(int(c) for c in self.cardinalities)
        self.edges = sorted(self.edges, key=lambda e: (e.source, e.target))
        index = {(e.source, e.target): i for i, e in enumerate(self.edges)}
        if len(index) != len(self.edges):
            raise ModelError("duplicate directed edge")
        self.reverse = []
        for e in self.edges:
            r = index.get((e.target, e.source))
            if r is None or self.edges[r].sepset != e.sepset:
                raise ModelError(f"edge {e.source}->{e.target} lacks a matching reverse edge")
            self.reverse.append(r)
        self.edge_index = index
        for e in self.edges:
            if not e.sepset:
                raise ModelError("empty sepset")
            for v in e.sepset:
                if v not in self.clusters[e.source].scope or v not in self.clusters[e.target].scope:
                    raise ModelError(f"sepset variable {v} missing from an endpoint of {e}")
        self.layout = GraphLayout(self)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def in_edges(self, s: int) -> list[int]:
        lo, hi = self.layout.in_ptr[s], self.layout.in_ptr[s + 1]
        return [int(e) for e in self.layout.in_edges[lo:hi]]

    def out_edges(self, s: int) -> list[int]:
        lo, hi = self.layout.out_ptr[s], self.layout.out_ptr[s + 1]
        return [int(e) for e in self.layout.out_edges[lo:hi]]

    def dependents(self, m: int) -> list[int]:
        """Edges whose update reads message ``m``."""
        e = self.edges[m]
        return [d for d in self.out_edges(e.target) if d != self.reverse[m]]

    def inputs(self, m: int) -> list[int]:
        """Edges read by the update of message ``m``."""
        e = self.edges[m]
        return [i for i in self.in_edges(e.source) if i != self.reverse[m]]

    def message_shape(self, m: int) -> tuple[int, ...]:
        return tuple(self.cardinalities[v] for v in self.edges[m].sepset)

    def undirected_edges(self) -> list[tuple[int, int]]:
        return [(e.source, e.target) for e in self.edges if e.source < e.target]


class GraphLayout:
    """Flat integer/float arrays describing a cluster graph for the kernels."""

    def __init__(self, g: ClusterGraph):
        card = g.cardinalities
        nc = len(g.clusters)
        ne = len(g.edges)
        pot_size = np.array([c.potential.size for c in g.clusters], dtype=np.intp)
        self.pot_off = np.zeros(nc, dtype=np.intp)
        if nc:
            self.pot_off[1:] = np.cumsum(pot_size)[:-1]
        self.pot_size = pot_size
        self.pot = np.concatenate([c.potential.ravel() for c in g.clusters]) if nc else np.zeros(0)
        self.pot = np.ascontiguousarray(self.pot, dtype=np.float64)

        self.src = np.array([e.source for e in g.edges], dtype=np.intp)
        self.dst = np.array([e.target for e in g.edges], dtype=np.intp)
        self.rev = np.array(g.reverse, dtype=np.intp)
        self.msg_size = np.array(
            [math.prod(card[v] for v in e.sepset) for e in g.edges], dtype=np.intp
        )
        self.msg_off = np.zeros(ne, dtype=np.intp)
        if ne:
            self.msg_off[1:] = np.cumsum(self.msg_size)[:-1]
        self.n_values = int(self.msg_size.sum())

        # CSR adjacency, each row in ascending edge id
        self.in_ptr, self.in_edges = _csr(nc, self.dst)
        self.out_ptr, self.out_edges = _csr(nc, self.src)

        src_maps, dst_maps = [], []
        for e in g.edges:
            src_maps.append(_sepset_map(g.clusters[e.source].scope, e.sepset, card))
            dst_maps.append(_sepset_map(g.clusters[e.target].scope, e.sepset, card))
        self.src_map, self.src_map_off = _flatten(src_maps)
        self.dst_map, self.dst_map_off = _flatten(dst_maps)
        self.max_pot = int(pot_size.max()) if nc else 1
        self.max_msg = int(self.msg_size.max()) if ne else 1


def _csr(n: int, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(keys, kind="stable").astype(np.intp)
    counts = np.bincount(keys, minlength=n) if keys.size else np.zeros(n, dtype=np.intp)
    ptr = np.zeros(n + 1, dtype=np.intp)
    ptr[1:] = np.cumsum(counts)
    return ptr, order


def _flatten(parts: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    off = np.zeros(len(parts), dtype=np.intp)
    if parts:
        off[1:] = np.cumsum([p.size for p in parts])[:-1]
        flat = np.concatenate(parts).astype(np.intp)
    else:
        flat = np.zeros(0, dtype=np.intp)
    return np.ascontiguousarray(flat), off


def _sepset_map(scope, sepset, card) -> np.ndarray:
    """For each row-major assignment of ``scope``, the row-major index of its sepset restriction."""
    shape = [card[v] for v in scope]
    idx = np.indices(shape).reshape(len(scope), -1)
    sub = [idx[scope.index(v)] for v in sepset]
    return np.ravel_multi_index(sub, [card[v] for v in sepset]).astype(np.intp)


def build_bethe_graph(factors: Sequence[Factor], cardinalities: Sequence[int]) -> ClusterGraph:
    """Variable clusters (ids ``0..n-1``) followed by one cluster per multi-variable factor."""
    if not factors:
        raise ModelError("empty factor list")
    check_model(cardinalities, factors)
    n = len(cardinalities)
    clusters = [Cluster((v,), np.ones(cardinalities[v])) for v in range(n)]
    assignment = []
    edges = []
    for f in factors:
        if len(f.scope) == 1:
            v = f.scope[0]
            clusters[v].potential = clusters[v].potential * f.table
            assignment.append(v)
            continue
        c = len(clusters)
        clusters.append(Cluster(f.scope, f.shaped(cardinalities).copy()))
        assignment.append(c)
        for v in f.scope:
            edges.append(Edge(c, v, (v,)))
            edges.append(Edge(v, c, (v,)))
    return ClusterGraph(cardinalities, clusters, edges, assignment, kind="bethe")


def build_pairwise_loop_graph(factors: Sequence[Factor], cardinalities: Sequence[int]) -> ClusterGraph:
    """One cluster per pairwise factor, joined wherever two clusters share a variable."""
    if not factors:
        raise ModelError("empty factor list")
    check_model(cardinalities, factors)
    pair_idx = [i for i, f in enumerate(factors) if len(f.scope) == 2]
    clusters = [Cluster(factors[i].scope, factors[i].shaped(cardinalities).copy()) for i in pair_idx]
    assignment = [-1] * len(factors)
    for c, i in enumerate(pair_idx):
        assignment[i] = c
    for i, f in enumerate(factors):
        if len(f.scope) == 2:
            continue
        if len(f.scope) != 1:
            raise ModelError(f"factor {i} has scope size {len(f.scope)}; only pairwise and univariate allowed")
        v = f.scope[0]
        hosts = [c for c, cl in enumerate(clusters) if v in cl.scope]
        if not hosts:
            raise ModelError(f"univariate factor on variable {v} cannot be absorbed")
        c = min(hosts, key=lambda c: (tuple(sorted(clusters[c].scope)), c))
        cl = clusters[c]
        cl.potential = cl.potential * expand_to(f.table, (v,), cl.scope)
        assignment[i] = c
    edges = []
    for a in range(len(clusters)):
        for b in range(a + 1, len(clusters)):
            shared = set(clusters[a].scope) & set(clusters[b].scope)
            if len(shared) > 1:
                raise ModelError(f"clusters {a} and {b} share {len(shared)} variables")
            if shared:
                sep = tuple(shared)
                edges.append(Edge(a, b, sep))
                edges.append(Edge(b, a, sep))
    return ClusterGraph(cardinalities, clusters, edges, assignment, kind="pairwise")


def build_graph(factors, cardinalities, kind: str = "bethe") -> ClusterGraph:
    if kind == "bethe":
        return build_bethe_graph(factors, cardinalities)
    if kind == "pairwise":
        return build_pairwise_loop_graph(factors, cardinalities)
    raise ModelError(f"unknown graph construction {kind!r}")


def load_model(text: str) -> tuple[tuple[int, ...], list[Factor]]:
    tokens = text.split()
    pos = 0

    def take(what: str) -> str:
        nonlocal pos
        if pos >= len(tokens):
            raise ModelError(f"malformed header: unexpected end of input reading {what}")
        tok = tokens[pos]
        pos += 1
        return tok

    def take_int(what: str) -> int:
        tok = take(what)
        try:
            return int(tok)
        except ValueError:
            raise ModelError(f"malformed header: expected integer {what}, got {tok!r}") from None

    if take("preamble") != "MARKOV":
        raise ModelError("malformed header: expected MARKOV")
    n = take_int("variable count")
    if n < 1:
        raise ModelError("malformed header: variable count must be positive")
    card = tuple(take_int("cardinality") for _ in range(n))
    for v, k in enumerate(card):
        if k < 2:
            raise ModelError(f"malformed header: variable {v} has cardinality {k}")
    nf = take_int("factor count")
    if nf < 0:
        raise ModelError("malformed header: negative factor count")
    scopes = []
    for _ in range(nf):
        k = take_int("scope size")
        scope = tuple(take_int("variable id") for _ in range(k))
        if len(set(scope)) != len(scope):
            raise ModelError(f"duplicate variable in scope {scope}")
        for v in scope:
            if not 0 <= v < n:
                raise ModelError(f"factor references unknown variable id {v}")
        scopes.append(scope)
    factors = []
    for scope in scopes:
        length = take_int("table length")
        expected = math.prod(card[v] for v in scope)
        if length != expected:
            raise ModelError(f"table length mismatch: scope {scope} needs {expected}, declared {length}")
        vals = []
        for _ in range(length):
            tok = take("table entry")
            try:
                vals.append(float(tok))
            except ValueError:
                raise ModelError(f"bad table entry {tok!r}") from None
        f = Factor(scope, np.array(vals))
        f.check(card)
        factors.append(f)
    if pos != len(tokens):
        raise ModelError("trailing tokens after last factor table")
    return card, factors


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_model(cardinalities: Sequence[int], factors: Iterable[Factor]) -> str:
    factors = list(factors)
    lines = ["MARKOV", str(len(cardinalities)), " ".join(str(int(c)) for c in cardinalities), str(len(factors))]
    for f in factors:
        lines.append(" ".join(str(t) for t in (len(f.scope), *f.scope)))
    for f in factors:
        lines.append("")
        lines.append(str(f.table.size))
        lines.append(" ".join(_fmt(x) for x in f.table))
    return "\n".join(lines) + "\n"


def read_model(path) -> tuple[tuple[int, ...], list[Factor]]:
    with open(path, encoding="ascii") as fh:
        return load_model(fh.read())


def write_model(path, cardinalities, factors) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(save_model(cardinalities, factors))


def four_cycle_model() -> tuple[tuple[int, ...], list[Factor]]:
    """Four binary variables in a single loop with the reference potentials.

    Scopes are (X0,X1), (X1,X2), (X2,X3), (X3,X0).
    """
    phi1 = [0.25, 0.25, 0.5, 0.25]
    phi23 = [1.0, 0.5, 0.5, 0.5]
    phi4 = [1.0, 0.5, 0.5, 1.0]
    factors = [
        Factor((0, 1), phi1),
        Factor((1, 2), phi23),
        Factor((2, 3), phi23),
        Factor((3, 0), phi4),
    ]
    return (2, 2, 2, 2), factors
