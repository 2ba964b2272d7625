# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled propagation kernels.

Same arithmetic, in the same order, as ``_pykernels``; keep the two in step.
"""

import math
import time

import numpy as np

from libc.math cimport fabs, INFINITY
from libc.stdint cimport int64_t
from libc.string cimport memcpy

from .errors import DegenerateMessageError

NAME = "cython"

cdef double FLOOR = 1e-300
cdef Py_ssize_t CHECK_EVERY = 1024


cdef Py_ssize_t* _iptr(object arr, list keep) except NULL:
    cdef Py_ssize_t[::1] mv
    a = np.ascontiguousarray(arr, dtype=np.intp)
    if a.size == 0:
        a = np.zeros(1, dtype=np.intp)
    keep.append(a)
    mv = a
    return &mv[0]


cdef double* _dptr(object arr, list keep) except NULL:
    cdef double[::1] mv
    a = np.ascontiguousarray(arr, dtype=np.float64)
    if a.size == 0:
        a = np.zeros(1, dtype=np.float64)
    keep.append(a)
    mv = a
    return &mv[0]


def _deadline(max_seconds):
    if max_seconds is None or math.isinf(max_seconds):
        return math.inf
    return time.perf_counter() + max_seconds


cdef class Engine:
    cdef list _keep
    cdef object _vals_arr, _upd_arr
    cdef double* pot
    cdef Py_ssize_t* pot_off
    cdef Py_ssize_t* pot_size
    cdef Py_ssize_t* src
    cdef Py_ssize_t* dst
    cdef Py_ssize_t* rev
    cdef Py_ssize_t* msg_off
    cdef Py_ssize_t* msg_size
    cdef Py_ssize_t* in_ptr
    cdef Py_ssize_t* in_edges
    cdef Py_ssize_t* out_ptr
    cdef Py_ssize_t* out_edges
    cdef Py_ssize_t* src_map
    cdef Py_ssize_t* src_map_off
    cdef Py_ssize_t* dst_map
    cdef Py_ssize_t* dst_map_off
    cdef double* vals
    cdef double* tmp
    cdef double* raw
    cdef double* dmp
    cdef double* scratch
    cdef int64_t* upd
    cdef public long long floored
    cdef readonly int variant
    cdef readonly double gamma
    cdef readonly Py_ssize_t ne
    cdef Py_ssize_t nv

    def __init__(self, layout, values, int variant, double gamma):
        cdef int64_t[::1] umv
        self._keep = []
        keep = self._keep
        self.variant = variant
        self.gamma = gamma
        self.floored = 0
        self.ne = len(layout.src)
        self.nv = layout.n_values
        self.pot = _dptr(layout.pot, keep)
        self.pot_off = _iptr(layout.pot_off, keep)
        self.pot_size = _iptr(layout.pot_size, keep)
        self.src = _iptr(layout.src, keep)
        self.dst = _iptr(layout.dst, keep)
        self.rev = _iptr(layout.rev, keep)
        self.msg_off = _iptr(layout.msg_off, keep)
        self.msg_size = _iptr(layout.msg_size, keep)
        self.in_ptr = _iptr(layout.in_ptr, keep)
        self.in_edges = _iptr(layout.in_edges, keep)
        self.out_ptr = _iptr(layout.out_ptr, keep)
        self.out_edges = _iptr(layout.out_edges, keep)
        self.src_map = _iptr(layout.src_map, keep)
        self.src_map_off = _iptr(layout.src_map_off, keep)
        self.dst_map = _iptr(layout.dst_map, keep)
        self.dst_map_off = _iptr(layout.dst_map_off, keep)
        self._vals_arr = np.array(values, dtype=np.float64, copy=True)
        if self._vals_arr.size != self.nv:
            raise ValueError("message vector does not match the graph")
        self.vals = _dptr(self._vals_arr, keep)
        self.tmp = _dptr(np.zeros(layout.max_pot), keep)
        self.raw = _dptr(np.zeros(layout.max_msg), keep)
        self.dmp = _dptr(np.zeros(layout.max_msg), keep)
        self.scratch = _dptr(np.zeros(max(self.nv, 1)), keep)
        self._upd_arr = np.zeros(max(self.ne, 1), dtype=np.int64)
        umv = self._upd_arr
        self.upd = &umv[0]

    # -- single-message primitives -------------------------------------------------

    cdef int _normalize(self, double* out, Py_ssize_t k) except -1:
        cdef double total = 0.0
        cdef Py_ssize_t j, nfl = 0
        for j in range(k):
            total = total + out[j]
        if not (total > 0.0 and total < INFINITY):
            raise DegenerateMessageError(f"message normalizer is {total!r}")
        for j in range(k):
            out[j] = out[j] / total
        for j in range(k):
            if out[j] < FLOOR:
                out[j] = FLOOR
                nfl += 1
        if nfl:
            self.floored += nfl
            total = 0.0
            for j in range(k):
                total = total + out[j]
            for j in range(k):
                out[j] = out[j] / total
        return 0

    cdef int _raw(self, Py_ssize_t e, double* out) except -1:
        cdef Py_ssize_t s = self.src[e]
        cdef Py_ssize_t n = self.pot_size[s]
        cdef Py_ssize_t po = self.pot_off[s]
        cdef Py_ssize_t rv = self.rev[e]
        cdef Py_ssize_t k = self.msg_size[e]
        cdef Py_ssize_t a, j, q, r, roff
        cdef Py_ssize_t* dm
        cdef Py_ssize_t* sm
        cdef double* tmp = self.tmp
        cdef double* vals = self.vals
        for a in range(n):
            tmp[a] = self.pot[po + a]
        for q in range(self.in_ptr[s], self.in_ptr[s + 1]):
            r = self.in_edges[q]
            if r == rv:
                continue
            roff = self.msg_off[r]
            dm = self.dst_map + self.dst_map_off[r]
            for a in range(n):
                tmp[a] = tmp[a] * vals[roff + dm[a]]
        for j in range(k):
            out[j] = 0.0
        sm = self.src_map + self.src_map_off[e]
        if self.variant == 0:
            for a in range(n):
                j = sm[a]
                out[j] = out[j] + tmp[a]
        else:
            for a in range(n):
                j = sm[a]
                if tmp[a] > out[j]:
                    out[j] = tmp[a]
        return self._normalize(out, k)

    cdef int _damp(self, Py_ssize_t e, double* raw, double* out) except -1:
        cdef double g = self.gamma
        cdef Py_ssize_t k = self.msg_size[e]
        cdef double* old = self.vals + self.msg_off[e]
        cdef Py_ssize_t j
        if g == 0.0:
            memcpy(out, raw, k * sizeof(double))
            return 0
        if g == 1.0:
            memcpy(out, old, k * sizeof(double))
            return 0
        for j in range(k):
            out[j] = (1.0 - g) * raw[j] + g * old[j]
        return self._normalize(out, k)

    cdef double _dist(self, Py_ssize_t e, double* msg) noexcept:
        cdef double* old = self.vals + self.msg_off[e]
        cdef double r = 0.0, d
        cdef Py_ssize_t j
        for j in range(self.msg_size[e]):
            d = fabs(msg[j] - old[j])
            if d > r:
                r = d
        return r

    cdef inline void _install(self, Py_ssize_t e, double* msg) noexcept:
        memcpy(self.vals + self.msg_off[e], msg, self.msg_size[e] * sizeof(double))
        self.upd[e] += 1

    cdef double _residual(self, Py_ssize_t e) except -1.0:
        self._raw(e, self.raw)
        self._damp(e, self.raw, self.dmp)
        return self._dist(e, self.dmp)

    cdef double _max_residual(self) except -1.0:
        cdef double r = 0.0, x
        cdef Py_ssize_t e
        for e in range(self.ne):
            x = self._residual(e)
            if x > r:
                r = x
        return r

    cdef double _update(self, Py_ssize_t e) except -1.0:
        cdef double change
        self._raw(e, self.raw)
        self._damp(e, self.raw, self.dmp)
        change = self._dist(e, self.dmp)
        self._install(e, self.dmp)
        return change

    cdef bint _out_of_time(self, Py_ssize_t updates, double deadline):
        return updates % CHECK_EVERY == 0 and time.perf_counter() > deadline

    # -- python surface ------------------------------------------------------------

    @property
    def values(self):
        return np.array(self._vals_arr[:self.nv], dtype=np.float64, copy=True)

    @property
    def edge_updates(self):
        return np.array(self._upd_arr[:self.ne], dtype=np.int64, copy=True)

    def _check_edge(self, Py_ssize_t e):
        if not 0 <= e < self.ne:
            raise IndexError(f"edge {e} out of range")

    def message(self, Py_ssize_t e):
        self._check_edge(e)
        self._raw(e, self.raw)
        return np.array(<double[:self.msg_size[e]]> self.raw, copy=True)

    def damped(self, Py_ssize_t e):
        self._check_edge(e)
        self._raw(e, self.raw)
        self._damp(e, self.raw, self.dmp)
        return np.array(<double[:self.msg_size[e]]> self.dmp, copy=True)

    def residual(self, Py_ssize_t e):
        self._check_edge(e)
        return self._residual(e)

    def residuals(self):
        out = np.zeros(self.ne, dtype=np.float64)
        cdef double[::1] mv = out
        cdef Py_ssize_t e
        for e in range(self.ne):
            mv[e] = self._residual(e)
        return out

    def max_residual(self):
        return self._max_residual()

    def update(self, Py_ssize_t e):
        self._check_edge(e)
        return self._update(e)

    # -- schedules -----------------------------------------------------------------

    def run_sync(self, double tol, long long max_updates, max_seconds):
        cdef Py_ssize_t ne = self.ne, e
        cdef long long updates = 0, sweeps = 0
        cdef double worst, d, final
        cdef double deadline = _deadline(max_seconds)
        if ne == 0:
            return True, 0, 0, 0.0
        while updates + ne <= max_updates and time.perf_counter() <= deadline:
            worst = 0.0
            for e in range(ne):
                self._raw(e, self.raw)
                self._damp(e, self.raw, self.scratch + self.msg_off[e])
                d = self._dist(e, self.scratch + self.msg_off[e])
                if d > worst:
                    worst = d
            memcpy(self.vals, self.scratch, self.nv * sizeof(double))
            for e in range(ne):
                self.upd[e] += 1
            updates += ne
            sweeps += 1
            if worst <= tol:
                final = self._max_residual()
                if final <= tol:
                    return True, updates, sweeps, final
        return False, updates, sweeps, self._max_residual()

    def run_round_robin(self, order, double tol, long long max_updates, max_seconds):
        cdef Py_ssize_t[::1] o = np.ascontiguousarray(order, dtype=np.intp)
        cdef Py_ssize_t n = o.shape[0], q
        cdef long long updates = 0, sweeps = 0
        cdef double worst, d, final
        cdef double deadline = _deadline(max_seconds)
        if self.ne == 0:
            return True, 0, 0, 0.0
        while True:
            worst = 0.0
            for q in range(n):
                if updates >= max_updates or self._out_of_time(updates, deadline):
                    return False, updates, sweeps, self._max_residual()
                d = self._update(o[q])
                updates += 1
                if d > worst:
                    worst = d
            sweeps += 1
            if worst <= tol:
                final = self._max_residual()
                if final <= tol:
                    return True, updates, sweeps, final

    def run_abp(self, double tol, long long max_updates, max_seconds):
        cdef Py_ssize_t ne = self.ne, e, x, q, t, rv
        cdef long long updates = 0
        cdef double d, r, final
        cdef double deadline = _deadline(max_seconds)
        ring_arr = np.arange(max(ne, 1), dtype=np.intp)
        flag_arr = np.ones(max(ne, 1), dtype=np.uint8)
        cdef Py_ssize_t[::1] ring = ring_arr
        cdef unsigned char[::1] queued = flag_arr
        cdef Py_ssize_t head = 0, count = ne
        while True:
            while count > 0:
                if updates >= max_updates or self._out_of_time(updates, deadline):
                    return False, updates, 0, self._max_residual()
                e = ring[head]
                head += 1
                if head == ne:
                    head = 0
                count -= 1
                queued[e] = 0
                d = self._update(e)
                updates += 1
                if d > tol:
                    t = self.dst[e]
                    rv = self.rev[e]
                    for q in range(self.out_ptr[t], self.out_ptr[t + 1]):
                        x = self.out_edges[q]
                        if x != rv and not queued[x]:
                            queued[x] = 1
                            ring[(head + count) % ne] = x
                            count += 1
            final = 0.0
            for e in range(ne):
                r = self._residual(e)
                if r > final:
                    final = r
                if r > tol:
                    queued[e] = 1
                    ring[(head + count) % ne] = e
                    count += 1
            if count == 0:
                return True, updates, 0, final

    def run_trp(self, cycle, double tol, long long max_updates, max_seconds):
        cdef Py_ssize_t[::1] c = np.ascontiguousarray(cycle, dtype=np.intp)
        cdef Py_ssize_t n = c.shape[0], q
        cdef long long updates = 0, sweeps = 0
        cdef double final
        cdef double deadline = _deadline(max_seconds)
        if self.ne == 0:
            return True, 0, 0, 0.0
        while True:
            for q in range(n):
                if updates >= max_updates or self._out_of_time(updates, deadline):
                    return False, updates, sweeps, self._max_residual()
                self._update(c[q])
                updates += 1
            sweeps += 1
            final = self._max_residual()
            if final <= tol:
                return True, updates, sweeps, final


cdef class ResidualEngine(Engine):
    """Greedy max-residual schedule over an indexed max-heap."""

    cdef object _res_arr, _heap_arr, _pos_arr, _pend_arr
    cdef double* res
    cdef Py_ssize_t* heap
    cdef Py_ssize_t* hpos
    cdef double* pend

    def __init__(self, layout, values, int variant, double gamma):
        cdef Py_ssize_t e, i
        super().__init__(layout, values, variant, gamma)
        keep = self._keep
        n = max(self.ne, 1)
        self._res_arr = np.zeros(n)
        self.res = _dptr(self._res_arr, keep)
        self._heap_arr = np.arange(n, dtype=np.intp)
        self.heap = _iptr(self._heap_arr, keep)
        self._pos_arr = np.arange(n, dtype=np.intp)
        self.hpos = _iptr(self._pos_arr, keep)
        self.pend = _dptr(np.zeros(max(self.nv, 1)), keep)
        for e in range(self.ne):
            self.res[e] = self._refresh_value(e)
        for i in range(self.ne // 2 - 1, -1, -1):
            self._sift_down(i)

    cdef inline bint _above(self, Py_ssize_t a, Py_ssize_t b) noexcept:
        cdef double ka = self.res[a], kb = self.res[b]
        return ka > kb or (ka == kb and a < b)

    cdef inline void _swap(self, Py_ssize_t i, Py_ssize_t j) noexcept:
        cdef Py_ssize_t a = self.heap[i], b = self.heap[j]
        self.heap[i] = b
        self.heap[j] = a
        self.hpos[b] = i
        self.hpos[a] = j

    cdef void _sift_up(self, Py_ssize_t i) noexcept:
        cdef Py_ssize_t p
        while i > 0:
            p = (i - 1) >> 1
            if self._above(self.heap[i], self.heap[p]):
                self._swap(i, p)
                i = p
            else:
                break

    cdef void _sift_down(self, Py_ssize_t i) noexcept:
        cdef Py_ssize_t n = self.ne, left, best
        while True:
            left = 2 * i + 1
            best = i
            if left < n and self._above(self.heap[left], self.heap[best]):
                best = left
            if left + 1 < n and self._above(self.heap[left + 1], self.heap[best]):
                best = left + 1
            if best == i:
                return
            self._swap(i, best)
            i = best

    cdef double _refresh_value(self, Py_ssize_t e) except -1.0:
        cdef double* slot = self.pend + self.msg_off[e]
        self._raw(e, self.raw)
        self._damp(e, self.raw, slot)
        return self._dist(e, slot)

    cdef int _refresh(self, Py_ssize_t e) except -1:
        self.res[e] = self._refresh_value(e)
        self._sift_up(self.hpos[e])
        self._sift_down(self.hpos[e])
        return 0

    cdef Py_ssize_t _step(self) except -1:
        cdef Py_ssize_t e = self.heap[0], t = self.dst[e], rv = self.rev[e], q, x
        self._install(e, self.pend + self.msg_off[e])
        self._refresh(e)
        for q in range(self.out_ptr[t], self.out_ptr[t + 1]):
            x = self.out_edges[q]
            if x != rv:
                self._refresh(x)
        return e

    def stored_residuals(self):
        return np.array(self._res_arr[:self.ne], copy=True)

    def peek(self):
        if self.ne == 0:
            raise IndexError("peek into an empty queue")
        e = self.heap[0]
        return e, self.res[e]

    def heap_ok(self):
        cdef Py_ssize_t i
        h = self._heap_arr[:self.ne]
        if sorted(h.tolist()) != list(range(self.ne)):
            return False
        for i in range(self.ne):
            if self.hpos[self.heap[i]] != i:
                return False
            if i and self._above(self.heap[i], self.heap[(i - 1) >> 1]):
                return False
        return True

    def step(self):
        cdef double r
        if self.ne == 0:
            raise IndexError("step on a graph without edges")
        r = self.res[self.heap[0]]
        e = self._step()
        return e, r

    def run(self, double tol, long long max_updates, max_seconds):
        cdef long long updates = 0
        cdef double top
        cdef double deadline = _deadline(max_seconds)
        if self.ne == 0:
            return True, 0, 0, 0.0
        while True:
            top = self.res[self.heap[0]]
            if top <= tol:
                return True, updates, 0, top
            if updates >= max_updates or self._out_of_time(updates, deadline):
                return False, updates, 0, top
            self._step()
            updates += 1
