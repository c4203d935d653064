"""Directed network substrate: nodes, arcs and the incidence operator.

Nodes are opaque string names mapped to dense indices; every routine in the
package works on indices. The incidence matrix is never materialized.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ValidationError

EPS_MASS = 1e-9

UNREACHABLE = -1


@dataclass(frozen=True)
class Network:
    nodes: tuple[str, ...]
    arcs: tuple[tuple[int, int], ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)
    _arc_index: dict[tuple[int, int], int] = field(init=False, repr=False, compare=False)
    _out: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    _in: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        nodes = tuple(str(n) for n in self.nodes)
        arcs = tuple((int(a), int(b)) for a, b in self.arcs)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "arcs", arcs)

        index: dict[str, int] = {}
        for i, name in enumerate(nodes):
            if name in index:
                raise ValidationError(f"duplicate node {name!r}", field=f"nodes[{i}]")
            index[name] = i
        arc_index: dict[tuple[int, int], int] = {}
        out: list[list[int]] = [[] for _ in nodes]
        inc: list[list[int]] = [[] for _ in nodes]
        for k, (a, b) in enumerate(arcs):
            where = f"arcs[{k}]"
            if not (0 <= a < len(nodes) and 0 <= b < len(nodes)):
                raise ValidationError(f"node index out of range in {(a, b)}", field=where)
            if a == b:
                raise ValidationError(f"self-loop at node {nodes[a]!r}", field=where)
            if (a, b) in arc_index:
                raise ValidationError(
                    f"duplicate arc {nodes[a]!r}->{nodes[b]!r}", field=where
                )
            arc_index[(a, b)] = k
            out[a].append(k)
            inc[b].append(k)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_arc_index", arc_index)
        object.__setattr__(self, "_out", tuple(tuple(o) for o in out))
        object.__setattr__(self, "_in", tuple(tuple(i) for i in inc))

    @classmethod
    def from_names(cls, nodes: Sequence[str], arcs: Iterable[tuple[str, str]]) -> "Network":
        index = {name: i for i, name in enumerate(nodes)}
        pairs = []
        for k, (a, b) in enumerate(arcs):
            for end in (a, b):
                if end not in index:
                    raise ValidationError(f"unknown node {end!r}", field=f"arcs[{k}]")
            pairs.append((index[a], index[b]))
        return cls(tuple(nodes), tuple(pairs))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_arcs(self) -> int:
        return len(self.arcs)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ValidationError(f"unknown node {name!r}") from None

    def arc_id(self, tail: int, head: int) -> int | None:
        return self._arc_index.get((tail, head))

    def out_arcs(self, node: int) -> tuple[int, ...]:
        return self._out[node]

    def in_arcs(self, node: int) -> tuple[int, ...]:
        return self._in[node]

    def subnetwork(self, keep_nodes: Sequence[int], keep_arcs: Iterable[int] | None = None
                   ) -> tuple["Network", list[int], list[int]]:
        """Induced (or arc-filtered) subnetwork.

        Returns the new network plus the maps new-node -> old-node and
        new-arc -> old-arc.
        """
        old_to_new = {old: new for new, old in enumerate(keep_nodes)}
        arc_pool = range(self.n_arcs) if keep_arcs is None else keep_arcs
        arc_map = [k for k in arc_pool
                   if self.arcs[k][0] in old_to_new and self.arcs[k][1] in old_to_new]
        sub = Network(tuple(self.nodes[i] for i in keep_nodes),
                      tuple((old_to_new[self.arcs[k][0]], old_to_new[self.arcs[k][1]])
                            for k in arc_map))
        return sub, list(keep_nodes), arc_map


def incidence_apply(net: Network, mu: Sequence[float]) -> list:
    """Net inflow at every node: inflow minus outflow along the arcs."""
    if len(mu) != net.n_arcs:
        raise ValidationError(f"flow has {len(mu)} entries, network has {net.n_arcs} arcs",
                              field="mu")
    v = [0] * net.n_nodes
    for (a, b), m in zip(net.arcs, mu):
        v[a] -= m
        v[b] += m
    return v


def indicator_image(net: Network, subset: Iterable[int]) -> list[int]:
    """Per-arc value of the incidence matrix applied to the indicator of ``subset``."""
    members = set(subset)
    return [int(b in members) - int(a in members) for a, b in net.arcs]


def cut_arcs(net: Network, subset: Iterable[int]) -> tuple[list[int], list[int]]:
    members = set(subset)
    outward, inward = [], []
    for k, (a, b) in enumerate(net.arcs):
        if a in members and b not in members:
            outward.append(k)
        elif b in members and a not in members:
            inward.append(k)
    return outward, inward


def is_retaining(net: Network, subset: Iterable[int]) -> bool:
    """True when no arc leaves the subset."""
    return not cut_arcs(net, subset)[0]


def is_repelling(net: Network, subset: Iterable[int]) -> bool:
    """True when no arc enters the subset."""
    return not cut_arcs(net, subset)[1]


def hop_distance(net: Network, start: int, targets: Iterable[int]) -> int:
    """BFS distance along arc directions to the nearest target, or UNREACHABLE."""
    goal = set(targets)
    if start in goal:
        return 0
    dist = {start: 0}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for k in net.out_arcs(u):
            w = net.arcs[k][1]
            if w in dist:
                continue
            dist[w] = dist[u] + 1
            if w in goal:
                return dist[w]
            queue.append(w)
    return UNREACHABLE


def reachable_from(net: Network, sources: Iterable[int], reverse: bool = False) -> set[int]:
    """Nodes reachable from ``sources`` (or that can reach them when ``reverse``)."""
    seen = set(sources)
    stack = list(seen)
    while stack:
        u = stack.pop()
        arcs = net.in_arcs(u) if reverse else net.out_arcs(u)
        for k in arcs:
            w = net.arcs[k][0] if reverse else net.arcs[k][1]
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen
