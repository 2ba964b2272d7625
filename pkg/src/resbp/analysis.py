"""Local contraction factors, round-robin rate bounds and the residual progress bound.

Workflow for a small model: certify a fixed point, sample local contraction
factors around it, then solve the per-message rate inequalities for any
update order.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .model import ClusterGraph
from .propagation import FLOOR, MessageState, Variant, max_residual
from .schedulers import RunConfig, Scheduler, run

# Analytic worst-case contraction factor for the four-cycle model; kept only as a
# reference point next to the sampled estimates.
REFERENCE_CONTRACTION = 0.88

CERTIFY_TOL = 1e-10
DIST_GUARD = 1e-9
CHUNK = 10_000


class NoFixedPointError(RuntimeError):
    pass


@dataclass
class FixedPointEstimate:
    state: MessageState
    residual: float  # undamped max residual at ``state``

    def __post_init__(self):
        if not self.residual <= CERTIFY_TOL:
            raise NoFixedPointError(f"residual {self.residual:.3e} above {CERTIFY_TOL}")


@dataclass
class ContractionEstimate:
    alpha: np.ndarray
    rho_s: float
    rho_m: np.ndarray
    rho_a: float
    samples_used: int
    mode: str


class Rates(NamedTuple):
    rho_m: np.ndarray
    rho_a: float
    rho_s: float


def find_fixed_point(graph: ClusterGraph, variant=Variant.SUM_PRODUCT, init: Optional[MessageState] = None,
                     gamma: float = 0.2, max_updates: int = 2_000_000) -> FixedPointEstimate:
    """Run the residual schedule to a certified fixed point of the undamped operator."""
    # damped residual is (1 - gamma) times the undamped one; leave headroom for rounding
    cfg = RunConfig(Scheduler.RESIDUAL, variant, gamma=gamma, tol=0.5 * CERTIFY_TOL * (1.0 - gamma),
                    max_updates=max_updates)
    rec, state = run(graph, cfg, init)
    if not rec.converged:
        raise NoFixedPointError(f"no convergence within {max_updates} updates")
    return FixedPointEstimate(state, max_residual(graph, state, variant, 0.0))


# -- batched message operator ---------------------------------------------------------


class BatchOperator:
    """Undamped ``f_m`` evaluated on many message vectors at once."""

    def __init__(self, graph: ClusterGraph, variant=Variant.SUM_PRODUCT):
        self.graph = graph
        self.variant = Variant.parse(variant)
        L = graph.layout
        self.slots = [np.arange(L.msg_off[m], L.msg_off[m] + L.msg_size[m]) for m in range(graph.n_edges)]
        self._plan = []
        for m in range(graph.n_edges):
            s = L.src[m]
            pot = graph.clusters[s].potential.ravel()
            n = pot.size
            reads = [L.msg_off[r] + L.dst_map[L.dst_map_off[r]:L.dst_map_off[r] + n] for r in graph.inputs(m)]
            smap = L.src_map[L.src_map_off[m]:L.src_map_off[m] + n]
            self._plan.append((pot, reads, smap, int(L.msg_size[m])))

    def __call__(self, m: int, values: np.ndarray) -> np.ndarray:
        pot, reads, smap, k = self._plan[m]
        prod = np.broadcast_to(pot, (values.shape[0], pot.size)).copy()
        for idx in reads:
            prod *= values[:, idx]
        out = np.zeros((values.shape[0], k))
        for j in range(k):
            cols = prod[:, smap == j]
            out[:, j] = cols.sum(axis=1) if self.variant is Variant.SUM_PRODUCT else cols.max(axis=1)
        out /= out.sum(axis=1, keepdims=True)
        np.maximum(out, FLOOR, out=out)
        return out / out.sum(axis=1, keepdims=True)

    def synchronous(self, values: np.ndarray) -> np.ndarray:
        out = np.empty_like(values)
        for m, slot in enumerate(self.slots):
            out[:, slot] = self(m, values)
        return out

    def distances(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Per-message L-infinity distances, shape (batch, |M|)."""
        diff = np.abs(a - b)
        return np.stack([diff[:, s].max(axis=1) for s in self.slots], axis=1)


def random_messages(graph: ClusterGraph, rng: np.random.Generator, count: int) -> np.ndarray:
    L = graph.layout
    vals = np.maximum(rng.uniform(0.0, 1.0, size=(count, L.n_values)), FLOOR)
    for m in range(graph.n_edges):
        sl = slice(L.msg_off[m], L.msg_off[m] + L.msg_size[m])
        vals[:, sl] /= vals[:, sl].sum(axis=1, keepdims=True)
    return vals


def _chunks(n_samples):
    k = 0
    while n_samples > 0:
        size = min(CHUNK, n_samples)
        yield k, size
        n_samples -= size
        k += 1


def estimate_alpha(graph: ClusterGraph, z_star: FixedPointEstimate | MessageState, n_samples: int, seed: int = 0,
                   mode: str = "single", variant=Variant.SUM_PRODUCT) -> tuple[np.ndarray, int]:
    """Sampled local contraction factors ``alpha[m, i]`` around the fixed point.

    ``single`` perturbs one input message at a time and takes the worst ratio
    of output to input distance.  ``joint`` draws whole random message vectors
    and charges each ratio to the input message furthest from the fixed point.
    Entries for non-inputs are exactly zero.  Returns (alpha, samples used).
    Chunk ``k`` draws from ``default_rng([seed, k])`` so results do not depend
    on how chunks are scheduled.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    z = (z_star.state if isinstance(z_star, FixedPointEstimate) else z_star).values
    op = BatchOperator(graph, variant)
    M = graph.n_edges
    alpha = np.zeros((M, M))
    used = 0
    if mode == "single":
        deps = [(m, i) for m in range(M) for i in graph.inputs(m)]
        for k, size in _chunks(n_samples):
            rng = np.random.default_rng([seed, k])
            for m, i in deps:
                v = np.tile(z, (size, 1))
                v[:, op.slots[i]] = random_messages(graph, rng, size)[:, op.slots[i]]
                den = np.abs(v[:, op.slots[i]] - z[op.slots[i]]).max(axis=1)
                num = np.abs(op(m, v) - z[op.slots[m]]).max(axis=1)
                ok = den >= DIST_GUARD
                used += int(ok.sum())
                if ok.any():
                    alpha[m, i] = max(alpha[m, i], float((num[ok] / den[ok]).max()))
    elif mode == "joint":
        inputs = [np.array(graph.inputs(m), dtype=int) for m in range(M)]
        for k, size in _chunks(n_samples):
            rng = np.random.default_rng([seed, k])
            v = random_messages(graph, rng, size)
            d_in = op.distances(v, z[None, :])
            used += size
            for m in range(M):
                if inputs[m].size == 0:
                    continue
                num = np.abs(op(m, v) - z[op.slots[m]]).max(axis=1)
                sub = d_in[:, inputs[m]]
                which = sub.argmax(axis=1)
                den = sub[np.arange(size), which]
                ok = den >= DIST_GUARD
                ratio = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
                for slot, i in enumerate(inputs[m]):
                    sel = which == slot
                    if sel.any():
                        alpha[m, i] = max(alpha[m, i], float(ratio[sel].max()))
    else:
        raise ValueError(f"unknown estimator mode {mode!r}")
    return alpha, used


def solve_rates(alpha: np.ndarray, order: Sequence[int], trace: Optional[list] = None) -> Rates:
    """Least per-message rates for a round-robin order, by monotone iteration from ``rho_s``.

    ``rho_m = max(max_{i before m} alpha[m,i] * rho_i, max_{i not before m} alpha[m,i])``.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    M = alpha.shape[0]
    if alpha.shape != (M, M) or np.any(alpha < 0):
        raise ValueError("alpha must be a square nonnegative matrix")
    order = [int(m) for m in order]
    if sorted(order) != list(range(M)):
        raise ValueError("order must be a permutation of the messages")
    if np.any(alpha > 1):
        warnings.warn("alpha has entries above 1; rates lose their bound meaning", RuntimeWarning)
    rho_s = float(alpha.max()) if M else 0.0
    rho = np.full(M, rho_s)
    pos = np.empty(M, dtype=int)
    pos[order] = np.arange(M)
    before = pos[None, :] < pos[:, None]  # before[m, i]: i precedes m
    if trace is not None:
        trace.append(rho.copy())
    while True:
        change = 0.0
        for m in order:
            a = alpha[m]
            early = a[before[m]] * rho[before[m]]
            late = a[~before[m]]
            new = max(early.max(initial=0.0), late.max(initial=0.0))
            change = max(change, abs(new - rho[m]))
            rho[m] = new
        if trace is not None:
            trace.append(rho.copy())
        if change <= 1e-12:
            break
    return Rates(rho, float(rho.max(initial=0.0)), rho_s)


def residual_progress_bound(alpha_local: float, dist_before: float, residual: float) -> float:
    """Upper bound on the distance to the fixed point after one update.

    ``dist_before - (1 - a) / (1 + a) * residual``, floored at zero.
    """
    if not alpha_local < 1:
        raise ValueError("contraction factor must be below 1")
    if alpha_local < 0 or dist_before < 0 or residual < 0:
        raise ValueError("inputs must be nonnegative")
    return max(0.0, dist_before - (1.0 - alpha_local) / (1.0 + alpha_local) * residual)


def random_orders(M: int, count: int, seed: int) -> list[list[int]]:
    rng = np.random.default_rng(seed)
    return [rng.permutation(M).tolist() for _ in range(count)]


def contraction_analysis(graph: ClusterGraph, samples: int, seed: int, orders: int, mode: str = "single",
                         variant=Variant.SUM_PRODUCT):
    """Fixed point, sampled alpha and rates for ``orders`` random orders.

    Returns (fixed point, ContractionEstimate for the lexicographic order, list of rho_a per random order).
    """
    fp = find_fixed_point(graph, variant)
    alpha, used = estimate_alpha(graph, fp, samples, seed, mode, variant)
    base = solve_rates(alpha, list(range(graph.n_edges)))
    est = ContractionEstimate(alpha, base.rho_s, base.rho_m, base.rho_a, used, mode)
    per_order = [solve_rates(alpha, o).rho_a for o in random_orders(graph.n_edges, orders, seed)]
    return fp, est, per_order


def report_csv(est: ContractionEstimate, per_order: Sequence[float]) -> str:
    """Sparse alpha triplets, per-message rates and summary rates as ``kind,m,i,value`` rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "m", "i", "value"])
    for m, i in zip(*np.nonzero(est.alpha)):
        w.writerow(["alpha", int(m), int(i), repr(float(est.alpha[m, i]))])
    for m, r in enumerate(est.rho_m):
        w.writerow(["rho_m", m, "", repr(float(r))])
    w.writerow(["rho_s", "", "", repr(est.rho_s)])
    w.writerow(["rho_a", "", "", repr(est.rho_a)])
    for k, r in enumerate(per_order):
        w.writerow(["rho_a_order", k, "", repr(float(r))])
    if per_order:
        w.writerow(["rho_a_mean", "", "", repr(float(np.mean(per_order)))])
        w.writerow(["rho_a_sd", "", "", repr(float(np.std(per_order)))])
    w.writerow(["samples_used", "", "", est.samples_used])
    w.writerow(["reference_contraction", "", "", REFERENCE_CONTRACTION])
    return buf.getvalue()
