"""Indexed max-heap over message residuals."""

from __future__ import annotations

from typing import Sequence


class ResidualQueue:
    """Max-heap of edge ids keyed by residual, with O(log n) update-key.

    Every edge ``0..n-1`` is always present exactly once.  Ties on the key
    go to the lower edge id, so the top is deterministic.
    """

    __slots__ = ("keys", "heap", "pos")

    def __init__(self, residuals: Sequence[float]):
        self.keys = [float(r) for r in residuals]
        n = len(self.keys)
        self.heap = list(range(n))
        self.pos = list(range(n))
        for i in range(n // 2 - 1, -1, -1):
            self._sift_down(i)

    def __len__(self):
        return len(self.heap)

    def __contains__(self, edge):
        return 0 <= edge < len(self.pos)

    def _above(self, a: int, b: int) -> bool:
        ka, kb = self.keys[a], self.keys[b]
        return ka > kb or (ka == kb and a < b)

    def _swap(self, i: int, j: int) -> None:
        h = self.heap
        h[i], h[j] = h[j], h[i]
        self.pos[h[i]] = i
        self.pos[h[j]] = j

    def _sift_up(self, i: int) -> None:
        h = self.heap
        while i > 0:
            p = (i - 1) >> 1
            if self._above(h[i], h[p]):
                self._swap(i, p)
                i = p
            else:
                break

    def _sift_down(self, i: int) -> None:
        h = self.heap
        n = len(h)
        while True:
            left = 2 * i + 1
            best = i
            if left < n and self._above(h[left], h[best]):
                best = left
            if left + 1 < n and self._above(h[left + 1], h[best]):
                best = left + 1
            if best == i:
                return
            self._swap(i, best)
            i = best

    def peek(self) -> tuple[int, float]:
        if not self.heap:
            raise IndexError("peek into an empty queue")
        e = self.heap[0]
        return e, self.keys[e]

    def update(self, edge: int, residual: float) -> None:
        self.keys[edge] = residual
        self._sift_up(self.pos[edge])
        self._sift_down(self.pos[edge])

    def check(self) -> bool:
        """Heap property and index consistency."""
        h = self.heap
        if sorted(h) != list(range(len(h))):
            return False
        for i, e in enumerate(h):
            if self.pos[e] != i:
                return False
            if i and self._above(e, h[(i - 1) >> 1]):
                return False
        return True
