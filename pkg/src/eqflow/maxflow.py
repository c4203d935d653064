"""Dinic max-flow over a small adjacency-list residual graph.

Capacities may be ints, Fractions or floats; ``None`` means unbounded.
With integer or Fraction capacities the result is exact. With floats, a
residual capacity at or below ``eps`` is treated as saturated.
"""

from __future__ import annotations

from collections import deque


class MaxFlow:
    def __init__(self, n: int, eps: float = 0.0):
        self.n = n
        self.eps = eps
        self.head: list[int] = []
        self.cap: list = []
        self.adj: list[list[int]] = [[] for _ in range(n)]

    def add_edge(self, u: int, v: int, cap) -> int:
        """Add u->v with capacity ``cap`` (None = infinite); returns the edge id."""
        eid = len(self.head)
        self.head += [v, u]
        self.cap += [cap, 0]
        self.adj[u].append(eid)
        self.adj[v].append(eid + 1)
        return eid

    def _open(self, e: int) -> bool:
        c = self.cap[e]
        return c is None or c > self.eps

    def _bfs(self, s: int, t: int) -> list[int] | None:
        level = [-1] * self.n
        level[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for e in self.adj[u]:
                v = self.head[e]
                if level[v] < 0 and self._open(e):
                    level[v] = level[u] + 1
                    queue.append(v)
        return level if level[t] >= 0 else None

    def _dfs(self, u: int, t: int, pushed, level: list[int], it: list[int]):
        if u == t:
            return pushed
        while it[u] < len(self.adj[u]):
            e = self.adj[u][it[u]]
            v = self.head[e]
            if level[v] == level[u] + 1 and self._open(e):
                c = self.cap[e]
                amount = c if pushed is None else (pushed if c is None else min(pushed, c))
                got = self._dfs(v, t, amount, level, it)
                if got is None:
                    return None
                if got > self.eps:
                    if self.cap[e] is not None:
                        self.cap[e] -= got
                    if self.cap[e ^ 1] is not None:
                        self.cap[e ^ 1] += got
                    return got
            it[u] += 1
        return 0

    def run(self, s: int, t: int):
        """Maximum s-t flow value. Unbounded flows raise ValueError."""
        total = 0
        while True:
            level = self._bfs(s, t)
            if level is None:
                return total
            it = [0] * self.n
            while True:
                got = self._dfs(s, t, None, level, it)
                if got is None:
                    raise ValueError("unbounded s-t path")
                if not got or got <= self.eps:
                    break
                total += got

    def flow_on(self, eid: int):
        """Flow currently carried by the forward edge ``eid``."""
        return self.cap[eid ^ 1]

    def source_side(self, s: int) -> set[int]:
        """Nodes reachable from s in the residual graph: the canonical min cut."""
        seen = {s}
        stack = [s]
        while stack:
            u = stack.pop()
            for e in self.adj[u]:
                v = self.head[e]
                if v not in seen and self._open(e):
                    seen.add(v)
                    stack.append(v)
        return seen
