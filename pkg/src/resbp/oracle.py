"""Exact inference references and approximation-quality metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import Factor, check_model, expand_to

MAX_JOINT = 1 << 24
MAX_TABLE = 1 << 26


class TooLargeError(ValueError):
    """Exact inference would need a table beyond the configured cap."""


@dataclass
class ExactMarginals:
    marginals: list[np.ndarray]
    log_z: float
    map_assignment: Optional[tuple[int, ...]] = None
    map_unique: Optional[bool] = None


def _logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    if axis is None:
        return out.reshape(())
    return np.squeeze(out, axis=axis)


def brute_force_marginals(cardinalities: Sequence[int], factors: Sequence[Factor]) -> ExactMarginals:
    """Enumerate the full joint in log space; also reports the MAP assignment."""
    check_model(cardinalities, factors)
    card = tuple(int(c) for c in cardinalities)
    size = math.prod(card)
    if size > MAX_JOINT:
        raise TooLargeError(f"joint state space {size} exceeds {MAX_JOINT}")
    n = len(card)
    joint = np.zeros(card)
    everything = tuple(range(n))
    for f in factors:
        joint = joint + expand_to(np.log(f.shaped(card)), f.scope, everything)
    log_z = float(_logsumexp(joint))
    p = np.exp(joint - log_z)
    marginals = []
    for v in range(n):
        axes = tuple(a for a in range(n) if a != v)
        m = p.sum(axis=axes) if axes else p
        marginals.append(m / m.sum())
    flat = joint.ravel()
    best = int(np.argmax(flat))
    ties = int(np.sum(flat >= flat[best] - 1e-12 * max(1.0, abs(flat[best]))))
    assignment = tuple(int(i) for i in np.unravel_index(best, card))
    return ExactMarginals(marginals, log_z, assignment, ties == 1)


def _product(parts, card, cap):
    scope = tuple(sorted({v for s, _ in parts for v in s}))
    size = math.prod(card[v] for v in scope)
    if size > cap:
        raise TooLargeError(f"intermediate table of {size} entries exceeds {cap}")
    total = np.zeros([card[v] for v in scope])
    for s, t in parts:
        total = total + expand_to(t, s, scope)
    return scope, total


def variable_elimination_marginals(cardinalities: Sequence[int], factors: Sequence[Factor],
                                   elimination_order: Optional[Sequence[int]] = None,
                                   max_table: int = MAX_TABLE) -> ExactMarginals:
    """Exact marginals from one elimination pass and a calibrating backward pass.

    The buckets created while eliminating form a tree; sending messages back
    down it gives every variable's marginal without re-running elimination.
    Default order is ascending variable id (row-major on grids).
    """
    check_model(cardinalities, factors)
    card = tuple(int(c) for c in cardinalities)
    n = len(card)
    order = list(range(n)) if elimination_order is None else [int(v) for v in elimination_order]
    if sorted(order) != list(range(n)):
        raise ValueError("elimination order must be a permutation of the variables")

    # factors carry an owner tag: -1 for originals, else the bucket that produced them
    active = [(f.scope, np.log(f.shaped(card)), -1) for f in factors]
    covered = {v for f in factors for v in f.scope}
    active += [((v,), np.zeros(card[v]), -1) for v in range(n) if v not in covered]

    buckets = []  # (variable, scope, combined log table, children, upward message scope)
    parent_of = {}
    log_z = 0.0
    for x in order:
        mine = [a for a in active if x in a[0]]
        active = [a for a in active if x not in a[0]]
        scope, combined = _product([(s, t) for s, t, _ in mine], card, max_table)
        children = [owner for _, _, owner in mine if owner >= 0]
        i = len(buckets)
        for c in children:
            parent_of[c] = i
        msg = _logsumexp(combined, axis=scope.index(x))
        msg_scope = tuple(v for v in scope if v != x)
        buckets.append((x, scope, combined, children, msg_scope, msg))
        if msg_scope:
            active.append((msg_scope, msg, i))
        else:
            log_z += float(msg)

    marginals: list[Optional[np.ndarray]] = [None] * n
    full: dict[int, np.ndarray] = {}
    for i in range(len(buckets) - 1, -1, -1):
        x, scope, combined, children, msg_scope, msg = buckets[i]
        belief = full.pop(i, combined)
        axes = tuple(k for k, v in enumerate(scope) if v != x)
        m = _logsumexp(belief, axis=axes) if axes else belief
        m = np.exp(m - _logsumexp(m))
        marginals[x] = m / m.sum()
        for c in children:
            _, c_scope, c_combined, _, c_msg_scope, c_msg = buckets[c]
            rest = belief - expand_to(c_msg, c_msg_scope, scope)
            drop = tuple(k for k, v in enumerate(scope) if v not in c_msg_scope)
            down = _logsumexp(rest, axis=drop) if drop else rest
            kept = tuple(v for v in scope if v in c_msg_scope)
            full[c] = c_combined + expand_to(down, kept, c_scope)
    return ExactMarginals(marginals, log_z)


def avg_kl(beliefs: Sequence[np.ndarray], exact: ExactMarginals) -> float:
    """Mean over variables of KL(exact || belief), natural log."""
    if len(beliefs) != len(exact.marginals):
        raise ValueError("beliefs and exact marginals cover different variables")
    total = 0.0
    for q, p in zip(beliefs, exact.marginals):
        q = np.asarray(q, dtype=np.float64).ravel()
        p = np.asarray(p, dtype=np.float64).ravel()
        if q.shape != p.shape:
            raise ValueError("cardinality mismatch between belief and exact marginal")
        if np.any(q <= 0):
            raise ValueError("zero belief entry")
        nz = p > 0
        total += float(np.sum(p[nz] * np.log(p[nz] / q[nz])))
    return total / len(beliefs) if beliefs else 0.0
