"""Pure-Python propagation kernels.

Mirrors ``_kernels.pyx`` operation for operation, so both backends produce
bit-identical message states, counters and records.
"""

from __future__ import annotations

import math
import time
from collections import deque

import numpy as np

from .errors import DegenerateMessageError
from .heap import ResidualQueue

NAME = "python"
FLOOR = 1e-300
_CHECK_EVERY = 1024


def _deadline(max_seconds):
    if max_seconds is None or math.isinf(max_seconds):
        return math.inf
    return time.perf_counter() + max_seconds


class Engine:
    def __init__(self, layout, values, variant: int, gamma: float):
        self.variant = int(variant)
        self.gamma = float(gamma)
        self.floored = 0
        self.ne = len(layout.src)
        self._vals = [float(x) for x in np.asarray(values, dtype=np.float64)]
        self._upd = [0] * self.ne
        pot = layout.pot.tolist()
        in_ptr = layout.in_ptr.tolist()
        in_edges = layout.in_edges.tolist()
        out_ptr = layout.out_ptr.tolist()
        out_edges = layout.out_edges.tolist()
        dmap = layout.dst_map.tolist()
        smap = layout.src_map.tolist()
        self.msg_off = layout.msg_off.tolist()
        self.msg_size = layout.msg_size.tolist()
        # per edge: (potential slice, [(input offset, input map)], source map, offset, size)
        self._spec = []
        self._deps = []
        for e in range(self.ne):
            s = int(layout.src[e])
            t = int(layout.dst[e])
            rv = int(layout.rev[e])
            po, n = int(layout.pot_off[s]), int(layout.pot_size[s])
            inputs = []
            for k in range(in_ptr[s], in_ptr[s + 1]):
                r = in_edges[k]
                if r == rv:
                    continue
                mo = int(layout.dst_map_off[r])
                inputs.append((self.msg_off[r], dmap[mo:mo + n]))
            so = int(layout.src_map_off[e])
            self._spec.append((pot[po:po + n], inputs, smap[so:so + n], self.msg_off[e], self.msg_size[e]))
            self._deps.append([out_edges[k] for k in range(out_ptr[t], out_ptr[t + 1]) if out_edges[k] != rv])

    # -- single-message primitives -------------------------------------------------

    def _normalize(self, out):
        total = 0.0
        for x in out:
            total = total + x
        if not (total > 0.0 and total < math.inf):
            raise DegenerateMessageError(f"message normalizer is {total!r}")
        k = len(out)
        for j in range(k):
            out[j] = out[j] / total
        nfl = 0
        for j in range(k):
            if out[j] < FLOOR:
                out[j] = FLOOR
                nfl += 1
        if nfl:
            self.floored += nfl
            total = 0.0
            for x in out:
                total = total + x
            for j in range(k):
                out[j] = out[j] / total
        return out

    def _raw(self, e):
        pot, inputs, smap, _, k = self._spec[e]
        tmp = list(pot)
        n = len(tmp)
        vals = self._vals
        for roff, rmap in inputs:
            for a in range(n):
                tmp[a] = tmp[a] * vals[roff + rmap[a]]
        out = [0.0] * k
        if self.variant == 0:
            for a in range(n):
                j = smap[a]
                out[j] = out[j] + tmp[a]
        else:
            for a in range(n):
                j = smap[a]
                if tmp[a] > out[j]:
                    out[j] = tmp[a]
        return self._normalize(out)

    def _damp(self, e, raw):
        g = self.gamma
        off, k = self.msg_off[e], self.msg_size[e]
        if g == 0.0:
            return list(raw)
        old = self._vals
        if g == 1.0:
            return old[off:off + k]
        out = [(1.0 - g) * raw[j] + g * old[off + j] for j in range(k)]
        return self._normalize(out)

    def _dist(self, e, msg):
        off = self.msg_off[e]
        vals = self._vals
        r = 0.0
        for j in range(len(msg)):
            d = abs(msg[j] - vals[off + j])
            if d > r:
                r = d
        return r

    def _install(self, e, msg):
        off = self.msg_off[e]
        self._vals[off:off + len(msg)] = msg
        self._upd[e] += 1

    @property
    def values(self):
        return np.array(self._vals, dtype=np.float64)

    @property
    def edge_updates(self):
        return np.array(self._upd, dtype=np.int64)

    def message(self, e):
        return np.array(self._raw(e))

    def damped(self, e):
        return np.array(self._damp(e, self._raw(e)))

    def residual(self, e):
        return self._dist(e, self._damp(e, self._raw(e)))

    def residuals(self):
        return np.array([self.residual(e) for e in range(self.ne)], dtype=np.float64)

    def max_residual(self):
        r = 0.0
        for e in range(self.ne):
            x = self.residual(e)
            if x > r:
                r = x
        return r

    def update(self, e):
        new = self._damp(e, self._raw(e))
        change = self._dist(e, new)
        self._install(e, new)
        return change

    # -- schedules -----------------------------------------------------------------

    def run_sync(self, tol, max_updates, max_seconds):
        ne = self.ne
        if ne == 0:
            return True, 0, 0, 0.0
        deadline = _deadline(max_seconds)
        updates = sweeps = 0
        while updates + ne <= max_updates and time.perf_counter() <= deadline:
            new = []
            worst = 0.0
            for e in range(ne):
                msg = self._damp(e, self._raw(e))
                d = self._dist(e, msg)
                if d > worst:
                    worst = d
                new.append(msg)
            for e in range(ne):
                self._install(e, new[e])
            updates += ne
            sweeps += 1
            if worst <= tol:
                final = self.max_residual()
                if final <= tol:
                    return True, updates, sweeps, final
        return False, updates, sweeps, self.max_residual()

    def run_round_robin(self, order, tol, max_updates, max_seconds):
        order = [int(e) for e in order]
        if self.ne == 0:
            return True, 0, 0, 0.0
        deadline = _deadline(max_seconds)
        updates = sweeps = 0
        while True:
            worst = 0.0
            for e in order:
                if updates >= max_updates or (
                    updates % _CHECK_EVERY == 0 and time.perf_counter() > deadline
                ):
                    return False, updates, sweeps, self.max_residual()
                d = self.update(e)
                updates += 1
                if d > worst:
                    worst = d
            sweeps += 1
            if worst <= tol:
                final = self.max_residual()
                if final <= tol:
                    return True, updates, sweeps, final

    def run_abp(self, tol, max_updates, max_seconds):
        ne = self.ne
        deadline = _deadline(max_seconds)
        queue = deque(range(ne))
        queued = [True] * ne
        updates = 0
        while True:
            while queue:
                if updates >= max_updates or (
                    updates % _CHECK_EVERY == 0 and time.perf_counter() > deadline
                ):
                    return False, updates, 0, self.max_residual()
                e = queue.popleft()
                queued[e] = False
                d = self.update(e)
                updates += 1
                if d > tol:
                    for x in self._deps[e]:
                        if not queued[x]:
                            queued[x] = True
                            queue.append(x)
            final = 0.0
            for e in range(ne):
                r = self.residual(e)
                if r > final:
                    final = r
                if r > tol:
                    queued[e] = True
                    queue.append(e)
            if not queue:
                return True, updates, 0, final

    def run_trp(self, cycle, tol, max_updates, max_seconds):
        cycle = [int(e) for e in cycle]
        if self.ne == 0:
            return True, 0, 0, 0.0
        deadline = _deadline(max_seconds)
        updates = sweeps = 0
        while True:
            for e in cycle:
                if updates >= max_updates or (
                    updates % _CHECK_EVERY == 0 and time.perf_counter() > deadline
                ):
                    return False, updates, sweeps, self.max_residual()
                self.update(e)
                updates += 1
            sweeps += 1
            final = self.max_residual()
            if final <= tol:
                return True, updates, sweeps, final


class ResidualEngine(Engine):
    """Greedy max-residual schedule with incrementally maintained residuals."""

    def __init__(self, layout, values, variant, gamma):
        super().__init__(layout, values, variant, gamma)
        self._pending = [None] * self.ne
        res = [self._refresh_value(e) for e in range(self.ne)]
        self.queue = ResidualQueue(res)

    def _refresh_value(self, e):
        msg = self._damp(e, self._raw(e))
        self._pending[e] = msg
        return self._dist(e, msg)

    def _refresh(self, e):
        self.queue.update(e, self._refresh_value(e))

    def stored_residuals(self):
        return np.array(self.queue.keys, dtype=np.float64)

    def peek(self):
        return self.queue.peek()

    def heap_ok(self):
        return self.queue.check()

    def step(self):
        e, r = self.queue.peek()
        self._install(e, self._pending[e])
        self._refresh(e)
        for d in self._deps[e]:
            self._refresh(d)
        return e, r

    def run(self, tol, max_updates, max_seconds):
        if self.ne == 0:
            return True, 0, 0, 0.0
        deadline = _deadline(max_seconds)
        updates = 0
        while True:
            top = self.queue.keys[self.queue.heap[0]]
            if top <= tol:
                return True, updates, 0, top
            if updates >= max_updates or (
                updates % _CHECK_EVERY == 0 and time.perf_counter() > deadline
            ):
                return False, updates, 0, top
            self.step()
            updates += 1
