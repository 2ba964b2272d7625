"""Message update operators, damping, distances, residuals and beliefs.

These are the readable single-message versions.  Schedulers run the same
arithmetic through the kernel engines in ``_kernels``/``_pykernels``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ._backend import get_kernels
from .errors import DegenerateMessageError
from .model import ClusterGraph

FLOOR = 1e-300


class Variant(enum.IntEnum):
    SUM_PRODUCT = 0
    MAX_PRODUCT = 1

    @classmethod
    def parse(cls, name) -> "Variant":
        if isinstance(name, (Variant, int)):
            return cls(int(name))
        key = str(name).lower()
        if key in ("sum", "sum_product", "sumproduct"):
            return cls.SUM_PRODUCT
        if key in ("max", "max_product", "maxproduct"):
            return cls.MAX_PRODUCT
        raise ValueError(f"unknown variant {name!r}")

    @property
    def short(self) -> str:
        return "sum" if self is Variant.SUM_PRODUCT else "max"


class MessageState:
    """One normalized table per directed edge, stored back to back in ``values``."""

    def __init__(self, graph: ClusterGraph, values):
        self.graph = graph
        self.values = np.array(values, dtype=np.float64)
        if self.values.shape != (graph.layout.n_values,):
            raise ValueError("message vector does not match the graph")

    @classmethod
    def uniform(cls, graph: ClusterGraph) -> "MessageState":
        L = graph.layout
        return cls(graph, np.repeat(1.0 / L.msg_size, L.msg_size) if len(L.msg_size) else [])

    @classmethod
    def random(cls, graph: ClusterGraph, rng: np.random.Generator) -> "MessageState":
        """Entries uniform on (0, 1), then each message normalized."""
        L = graph.layout
        vals = rng.uniform(0.0, 1.0, size=L.n_values)
        vals = np.maximum(vals, FLOOR)
        sums = np.add.reduceat(vals, L.msg_off) if len(L.msg_off) else np.zeros(0)
        return cls(graph, vals / np.repeat(sums, L.msg_size))

    def __len__(self):
        return self.graph.n_edges

    def __getitem__(self, m: int) -> np.ndarray:
        L = self.graph.layout
        off = L.msg_off[m]
        return self.values[off:off + L.msg_size[m]]

    def __setitem__(self, m: int, table) -> None:
        self[m][:] = np.asarray(table, dtype=np.float64).ravel()

    def copy(self) -> "MessageState":
        return MessageState(self.graph, self.values)

    def check(self, atol: float = 1e-12) -> None:
        for m in range(len(self)):
            t = self[m]
            if not np.all(t > 0):
                raise ValueError(f"message {m} has a non-positive entry")
            if abs(t.sum() - 1.0) > atol:
                raise ValueError(f"message {m} is not normalized")


def normalize(table: np.ndarray) -> tuple[np.ndarray, int]:
    """Scale to sum 1, floor tiny entries at ``FLOOR`` and rescale.  Returns the table and floor count."""
    total = float(table.sum())
    if not (total > 0.0 and np.isfinite(total)):
        raise DegenerateMessageError(f"message normalizer is {total!r}")
    out = table / total
    low = out < FLOOR
    n = int(low.sum())
    if n:
        out[low] = FLOOR
        out = out / out.sum()
    return out, n


def compute_message(graph: ClusterGraph, state: MessageState, m: int, variant=Variant.SUM_PRODUCT) -> np.ndarray:
    """Recompute message ``m`` = (s -> t) from the current state.

    The source potential is multiplied by every message into ``s`` except the
    one from ``t``, then summed (or maxed) down to the sepset and normalized.
    """
    variant = Variant.parse(variant)
    L = graph.layout
    s = L.src[m]
    prod = graph.clusters[s].potential.ravel().copy()
    n = prod.size
    for r in graph.inputs(m):
        dm = L.dst_map[L.dst_map_off[r]:L.dst_map_off[r] + n]
        prod = prod * state.values[L.msg_off[r] + dm]
    sm = L.src_map[L.src_map_off[m]:L.src_map_off[m] + n]
    out = np.zeros(L.msg_size[m])
    if variant is Variant.SUM_PRODUCT:
        np.add.at(out, sm, prod)
    else:
        np.maximum.at(out, sm, prod)
    return normalize(out)[0]


def damp(old, raw, gamma: float) -> np.ndarray:
    """Linear blend ``(1 - gamma) * raw + gamma * old``, renormalized."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"damping {gamma} outside [0, 1]")
    old = np.asarray(old, dtype=np.float64)
    raw = np.asarray(raw, dtype=np.float64)
    if old.shape != raw.shape:
        raise ValueError("damping tables differ in shape")
    if gamma == 0.0:
        return raw.copy()
    if gamma == 1.0:
        return old.copy()
    return normalize((1.0 - gamma) * raw + gamma * old)[0]


def message_distance(a, b) -> float:
    """L-infinity distance between two message tables."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("message tables differ in shape")
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def global_distance(a: MessageState, b: MessageState) -> float:
    """Max over edges of the per-message distance."""
    if a.graph is not b.graph and a.values.shape != b.values.shape:
        raise ValueError("states belong to different graphs")
    return max((message_distance(a[m], b[m]) for m in range(len(a))), default=0.0)


def residual(graph, state, m, variant=Variant.SUM_PRODUCT, gamma: float = 0.0) -> float:
    """Change the damped update of ``m`` would apply at ``state``."""
    new = damp(state[m], compute_message(graph, state, m, variant), gamma)
    return message_distance(new, state[m])


def max_residual(graph, state, variant=Variant.SUM_PRODUCT, gamma: float = 0.0) -> float:
    return max((residual(graph, state, m, variant, gamma) for m in range(graph.n_edges)), default=0.0)


def synchronous_update(graph, state, variant=Variant.SUM_PRODUCT) -> MessageState:
    """All messages recomputed from ``state`` at once (undamped)."""
    new = state.copy()
    for m in range(graph.n_edges):
        new[m] = compute_message(graph, state, m, variant)
    return new


@dataclass
class Beliefs:
    clusters: list[np.ndarray]  # shaped like each cluster's potential
    variables: list[np.ndarray]


def compute_beliefs(graph: ClusterGraph, state: MessageState, variant=Variant.SUM_PRODUCT) -> Beliefs:
    variant = Variant.parse(variant)
    L = graph.layout
    cluster_beliefs = []
    for s, cl in enumerate(graph.clusters):
        prod = cl.potential.ravel().copy()
        n = prod.size
        for r in graph.in_edges(s):
            dm = L.dst_map[L.dst_map_off[r]:L.dst_map_off[r] + n]
            prod = prod * state.values[L.msg_off[r] + dm]
        cluster_beliefs.append(normalize(prod)[0].reshape(cl.potential.shape))

    host: dict[int, int] = {}
    for s, cl in enumerate(graph.clusters):
        for v in cl.scope:
            best = host.get(v)
            if best is None or len(cl.scope) < len(graph.clusters[best].scope):
                host[v] = s
    reduce = np.sum if variant is Variant.SUM_PRODUCT else np.max
    variables = []
    for v, k in enumerate(graph.cardinalities):
        s = host.get(v)
        if s is None:
            variables.append(np.full(k, 1.0 / k))
            continue
        scope = graph.clusters[s].scope
        axes = tuple(i for i, u in enumerate(scope) if u != v)
        marg = reduce(cluster_beliefs[s], axis=axes) if axes else cluster_beliefs[s]
        variables.append(normalize(np.asarray(marg, dtype=np.float64).ravel())[0])
    return Beliefs(cluster_beliefs, variables)


def make_engine(graph: ClusterGraph, state: MessageState, variant=Variant.SUM_PRODUCT,
                gamma: float = 0.0, residual_queue: bool = False, backend=None):
    """Kernel engine over a copy of ``state``."""
    k = get_kernels(backend)
    cls = k.ResidualEngine if residual_queue else k.Engine
    return cls(graph.layout, state.values, int(Variant.parse(variant)), float(gamma))
