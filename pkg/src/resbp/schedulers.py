"""Message schedules and the run loop.

Every schedule installs damped single-message updates and counts each one;
synchronous sweeps count ``|M|`` updates.  Convergence always means the
max residual over all edges is at most ``tol`` at the returned state.
"""

from __future__ import annotations

import enum
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import ClusterGraph
from .propagation import MessageState, Variant, make_engine
from .rng import SplitMix64


class Scheduler(str, enum.Enum):
    SYNCHRONOUS = "sbp"
    ROUND_ROBIN = "rr"
    NAIVE_ASYNC = "abp"
    TRP = "trp"
    RESIDUAL = "rbp"

    @classmethod
    def parse(cls, name) -> "Scheduler":
        if isinstance(name, Scheduler):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(f"unknown scheduler {name!r}") from None


@dataclass
class TreeSchedule:
    """Forward pass over a spanning tree (or forest); backward is the reverse, flipped."""

    forward: tuple[int, ...]
    graph: ClusterGraph = field(repr=False)

    @property
    def backward(self) -> tuple[int, ...]:
        rev = self.graph.reverse
        return tuple(rev[e] for e in reversed(self.forward))

    @property
    def clusters(self) -> set[int]:
        out = set()
        for e in self.forward:
            ed = self.graph.edges[e]
            out.update((ed.source, ed.target))
        return out

    def undirected(self) -> list[tuple[int, int]]:
        return [tuple(sorted((self.graph.edges[e].source, self.graph.edges[e].target))) for e in self.forward]

    @classmethod
    def from_tree(cls, graph: ClusterGraph, pairs: Sequence[tuple[int, int]], roots: Sequence[int]) -> "TreeSchedule":
        """Order tree edges leaf-to-root, each component hanging from its root."""
        adj: dict[int, list[int]] = {}
        for a, b in pairs:
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
        forward = []
        seen = set()
        for root in roots:
            if root in seen:
                continue
            seen.add(root)
            order = [(root, None)]
            queue = deque([root])
            while queue:
                u = queue.popleft()
                for w in sorted(adj.get(u, ())):
                    if w not in seen:
                        seen.add(w)
                        order.append((w, u))
                        queue.append(w)
            for child, parent in reversed(order[1:]):
                forward.append(graph.edge_index[(child, parent)])
        if len(forward) != len(pairs):
            raise ValueError("tree edges are cyclic or not reachable from the roots")
        sched = cls(tuple(forward), graph)
        sched.validate()
        return sched

    def validate(self) -> None:
        g = self.graph
        und = self.undirected()
        if len(set(und)) != len(und):
            raise ValueError("tree schedule repeats an edge")
        parent = {}

        def find(x):
            while parent.get(x, x) != x:
                x = parent[x]
            return x

        for a, b in und:
            ra, rb = find(a), find(b)
            if ra == rb:
                raise ValueError("tree schedule contains a cycle")
            parent[ra] = rb
        done = set()
        for e in self.forward:
            ed = g.edges[e]
            for a, b in und:
                if ed.source in (a, b) and ed.target not in (a, b):
                    other = b if a == ed.source else a
                    feeder = g.edge_index[(other, ed.source)]
                    if feeder not in done:
                        raise ValueError(f"edge {e} precedes its feeder {feeder} in the forward pass")
            done.add(e)


def grid_side(graph: ClusterGraph) -> Optional[int]:
    """Side length if ``graph`` is the Bethe graph of an N x N grid, else None."""
    n = len(graph.cardinalities)
    side = math.isqrt(n)
    if graph.kind != "bethe" or side < 2 or side * side != n:
        return None
    want = set()
    for r in range(side):
        for c in range(side):
            v = r * side + c
            if c + 1 < side:
                want.add((v, v + 1))
            if r + 1 < side:
                want.add((v, v + side))
    have = [tuple(sorted(cl.scope)) for cl in graph.clusters[n:]]
    if len(have) != len(want) or set(have) != want:
        return None
    return side


def make_snake_trees(graph: ClusterGraph, n: Optional[int] = None) -> list[TreeSchedule]:
    """Horizontal (row boustrophedon) and vertical (column boustrophedon) spanning paths."""
    side = grid_side(graph)
    if side is None or (n is not None and n != side):
        raise ValueError("snake trees need the Bethe graph of an N x N grid")
    nv = side * side
    factor_of = {tuple(sorted(cl.scope)): nv + k for k, cl in enumerate(graph.clusters[nv:])}
    trees = []
    for path in (snake_path(side), snake_path(side, vertical=True)):
        pairs = []
        for u, w in zip(path, path[1:]):
            f = factor_of[tuple(sorted((u, w)))]
            pairs += [(u, f), (f, w)]
        trees.append(TreeSchedule.from_tree(graph, pairs, [path[-1]]))
    return trees


def snake_path(side: int, vertical: bool = False) -> list[int]:
    """Row-major variable ids visited by the boustrophedon path."""
    if vertical:
        return [(r if c % 2 == 0 else side - 1 - r) * side + c for c in range(side) for r in range(side)]
    return [r * side + (c if r % 2 == 0 else side - 1 - c) for r in range(side) for c in range(side)]


def random_spanning_trees(graph: ClusterGraph, count: int, seed: int) -> list[TreeSchedule]:
    """Random spanning forests (Kruskal over a seeded shuffle), rooted at each component's lowest cluster."""
    rng = SplitMix64(seed)
    trees = []
    for _ in range(count):
        pairs = rng.shuffle(sorted(graph.undirected_edges()))
        parent = list(range(len(graph.clusters)))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        chosen = []
        for a, b in pairs:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
                chosen.append((a, b))
        lowest: dict[int, int] = {}
        for c in range(len(parent)):
            lowest.setdefault(find(c), c)
        roots = sorted(lowest.values())
        trees.append(TreeSchedule.from_tree(graph, chosen, roots))
    return trees


@dataclass
class RunConfig:
    scheduler: Scheduler = Scheduler.RESIDUAL
    variant: Variant = Variant.SUM_PRODUCT
    gamma: float = 0.2
    tol: float = 1e-5
    max_updates: int = 10_000_000
    max_seconds: float = math.inf
    seed: Optional[int] = 0
    order: Optional[Sequence[int]] = None
    trees: Optional[list[TreeSchedule]] = None
    backend: Optional[str] = None

    def __post_init__(self):
        self.scheduler = Scheduler.parse(self.scheduler)
        self.variant = Variant.parse(self.variant)
        self.gamma = float(self.gamma)
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_updates < 1:
            raise ValueError("max_updates must be at least 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("damping must lie in [0, 1)")


@dataclass
class RunRecord:
    model_id: str
    config: RunConfig
    converged: bool
    updates: int
    sweeps: int
    wall_ms: float
    final_max_residual: float
    floored_entries: int
    edge_updates: np.ndarray = field(repr=False)

    def key(self):
        """Everything except wall time, for determinism checks."""
        return (self.model_id, self.config.scheduler.value, self.config.variant.short, self.converged,
                self.updates, self.sweeps, self.final_max_residual, self.floored_entries,
                tuple(self.edge_updates.tolist()))


def _record(graph, engine, config, model_id, result, t0):
    converged, updates, sweeps, final = result
    rec = RunRecord(
        model_id=model_id,
        config=config,
        converged=bool(converged),
        updates=int(updates),
        sweeps=int(sweeps),
        wall_ms=(time.perf_counter() - t0) * 1000.0,
        final_max_residual=float(final),
        floored_entries=int(engine.floored),
        edge_updates=engine.edge_updates,
    )
    return rec, MessageState(graph, engine.values)


def _engine(graph, state0, config, residual_queue=False):
    return make_engine(graph, state0, config.variant, config.gamma, residual_queue, config.backend)


def run_synchronous(graph, state0, config, model_id=""):
    t0 = time.perf_counter()
    eng = _engine(graph, state0, config)
    res = eng.run_sync(config.tol, config.max_updates, config.max_seconds)
    return _record(graph, eng, config, model_id, res, t0)


def default_order(graph) -> list[int]:
    """Edge ids are already sorted by (source, target)."""
    return list(range(graph.n_edges))


def run_round_robin(graph, state0, config, model_id=""):
    order = default_order(graph) if config.order is None else [int(e) for e in config.order]
    if sorted(order) != list(range(graph.n_edges)):
        raise ValueError("round-robin order is not a permutation of the edges")
    t0 = time.perf_counter()
    eng = _engine(graph, state0, config)
    res = eng.run_round_robin(np.array(order, dtype=np.intp), config.tol, config.max_updates, config.max_seconds)
    return _record(graph, eng, config, model_id, res, t0)


def run_naive_async(graph, state0, config, model_id=""):
    t0 = time.perf_counter()
    eng = _engine(graph, state0, config)
    res = eng.run_abp(config.tol, config.max_updates, config.max_seconds)
    return _record(graph, eng, config, model_id, res, t0)


def trp_trees(graph, config) -> list[TreeSchedule]:
    if config.trees is not None:
        trees = list(config.trees)
    elif grid_side(graph) is not None:
        trees = make_snake_trees(graph)
    elif config.seed is not None:
        trees = random_spanning_trees(graph, 2, config.seed)
    else:
        raise ValueError("TRP needs trees: not a grid model and no seed for random spanning trees")
    if graph.n_edges and not any(t.forward for t in trees):
        raise ValueError("TRP needs a nonempty tree list")
    return trees


def trp_cycle(trees: Sequence[TreeSchedule], graph: Optional[ClusterGraph] = None) -> list[int]:
    """Forward then backward pass of each tree in turn.

    With ``graph`` given, messages no tree covers are appended once per cycle
    in edge-id order; otherwise they would never move and the run could not
    converge.
    """
    cycle = []
    for t in trees:
        cycle += t.forward
        cycle += t.backward
    if graph is not None:
        covered = set(cycle)
        cycle += [e for e in range(graph.n_edges) if e not in covered]
    return cycle


def run_trp(graph, state0, config, model_id=""):
    cycle = trp_cycle(trp_trees(graph, config), graph)
    t0 = time.perf_counter()
    eng = _engine(graph, state0, config)
    res = eng.run_trp(np.array(cycle, dtype=np.intp), config.tol, config.max_updates, config.max_seconds)
    return _record(graph, eng, config, model_id, res, t0)


def run_residual(graph, state0, config, model_id=""):
    t0 = time.perf_counter()
    eng = _engine(graph, state0, config, residual_queue=True)
    res = eng.run(config.tol, config.max_updates, config.max_seconds)
    return _record(graph, eng, config, model_id, res, t0)


_RUNNERS = {
    Scheduler.SYNCHRONOUS: run_synchronous,
    Scheduler.ROUND_ROBIN: run_round_robin,
    Scheduler.NAIVE_ASYNC: run_naive_async,
    Scheduler.TRP: run_trp,
    Scheduler.RESIDUAL: run_residual,
}


def run(graph: ClusterGraph, config: RunConfig, state0: Optional[MessageState] = None, model_id: str = ""):
    """Run ``config.scheduler`` from ``state0`` (uniform messages by default)."""
    if state0 is None:
        state0 = MessageState.uniform(graph)
    return _RUNNERS[config.scheduler](graph, state0, config, model_id)
