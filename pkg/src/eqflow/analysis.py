"""Loop profitability, reduced connections and flow decomposition."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import networkx as nx
import numpy as np

from .connections import (
    Affine,
    AnyConnection,
    ComposedConnection,
    Penalty,
    PiecewiseLinear,
    compose,
    dominates,
    identity,
    normalize,
    pwl_max,
    to_pwl,
)
from .errors import GuardError, ProfitableLoopError, ValidationError
from .network import EPS_MASS, Network, incidence_apply

LOOP_ENUMERATION_MAX_NODES = 15
GRID_POINTS = 1025


@dataclass
class LoopReport:
    ok: bool
    violating_loop: list[int] | None = None  # closed: first node repeated at the end
    profit_at: tuple[float, float] | None = None  # (p, H(p) - p)
    method: str = ""


def loop_composition(G: Sequence[AnyConnection], net: Network, cycle: Sequence[int]):
    """H = G[x0x1] o G[x1x2] o ... o G[xk x0] for the closed cycle (x0, ..., xk, x0)."""
    chain = []
    for a, b in zip(cycle[:-1], cycle[1:]):
        k = net.arc_id(a, b)
        if k is None:
            raise ValidationError(f"no arc {net.nodes[a]}->{net.nodes[b]} on the loop")
        chain.append(G[k])
    out = chain[-1]
    for g in reversed(chain[:-1]):
        out = compose(g, out)
    return out


def _affine(g) -> Affine | None:
    if isinstance(g, Affine):
        return g
    if isinstance(g, Penalty):
        return Affine(1.0, -g.n)
    return None


def _nonpositive_cycle(n: int, edges: list[tuple[int, int, Fraction]]) -> list[int] | None:
    """Exact Bellman-Ford for a cycle with weight sum <= 0.

    Weights are compared lexicographically as (w, -1) so zero-weight cycles
    count as negative. Returns the closed cycle in edge direction.
    """
    dist = [(Fraction(0), 0)] * n
    parent: list[int | None] = [None] * n
    last = -1
    for _ in range(n):
        last = -1
        for k, (u, v, w) in enumerate(edges):
            cand = (dist[u][0] + w, dist[u][1] - 1)
            if cand < dist[v]:
                dist[v] = cand
                parent[v] = k
                last = v
        if last < 0:
            return None
    v = last
    for _ in range(n):
        v = edges[parent[v]][0]
    cycle = [v]
    u = edges[parent[v]][0]
    while u != v:
        cycle.append(u)
        u = edges[parent[u]][0]
    cycle.append(v)
    cycle.reverse()
    return cycle


def _affine_report(net: Network, G, cycle: list[int], method: str) -> LoopReport:
    h = loop_composition(G, net, cycle)
    if h.slope != 1.0:
        p = h.intercept / (1.0 - h.slope)
    else:
        p = 0.0
    return LoopReport(False, cycle, (p, h(p) - p), method)


def _check_affine(net: Network, G: Sequence[Affine]) -> LoopReport:
    graph = nx.DiGraph()
    graph.add_nodes_from(range(net.n_nodes))
    graph.add_edges_from(net.arcs)
    comp_of = {}
    for c, comp in enumerate(nx.strongly_connected_components(graph)):
        for v in comp:
            comp_of[v] = c
    inner = [k for k, (a, b) in enumerate(net.arcs) if comp_of[a] == comp_of[b]]
    if not inner:
        return LoopReport(True, method="acyclic")

    # multiplicative potentials: arc u->v with slope s forces phi_v = phi_u / s
    phi: dict[int, Fraction] = {}
    undirected: dict[int, list[tuple[int, int]]] = {}
    for k in inner:
        a, b = net.arcs[k]
        undirected.setdefault(a, []).append((k, b))
        undirected.setdefault(b, []).append((k, a))
    bad_arc = None
    for root in sorted(undirected):
        if root in phi:
            continue
        phi[root] = Fraction(1)
        stack = [root]
        while stack:
            u = stack.pop()
            for k, w in undirected[u]:
                a, b = net.arcs[k]
                s = Fraction(G[k].slope)
                want = phi[a] / s if w == b else phi[b] * s
                if w not in phi:
                    phi[w] = want
                    stack.append(w)
                elif phi[w] != want and bad_arc is None:
                    bad_arc = k
    if bad_arc is not None:
        # some directed cycle has composite slope != 1, hence a fixed point
        a, b = net.arcs[bad_arc]
        sub = graph.subgraph([v for v in graph if comp_of[v] == comp_of[a]])
        for cyc in nx.simple_cycles(sub):
            closed = list(cyc) + [cyc[0]]
            slope = Fraction(1)
            for u, v in zip(closed[:-1], closed[1:]):
                slope *= Fraction(G[net.arc_id(u, v)].slope)
            if slope != 1:
                return _affine_report(net, G, closed, "slope")
        raise AssertionError("inconsistent slopes without a witness cycle")
    # rescaled prices turn every loop into a pure shift by -sum(cost / phi_tail)
    edges = [(a, b, Fraction(-G[k].intercept) / phi[a])
             for k in inner for a, b in [net.arcs[k]]]
    cycle = _nonpositive_cycle(net.n_nodes, edges)
    if cycle is None:
        return LoopReport(True, method="bellman-ford")
    return _affine_report(net, G, cycle, "bellman-ford")


def _loop_profit(h: PiecewiseLinear) -> tuple[float, float] | None:
    """A price p with H(p) >= p, or None when H(p) < p on the whole line."""
    xs = h.breakpoints
    best = None
    for x in xs:
        gap = h(x) - x
        if gap >= 0 and (best is None or gap > best[1]):
            best = (x, gap)
    if best is not None:
        return best
    if h.left_slope < 1.0:
        x = xs[0] - 1.0 - (h(xs[0]) - xs[0]) / (h.left_slope - 1.0)
        return x, h(x) - x
    if h.right_slope > 1.0:
        x = xs[-1] + 1.0 - (h(xs[-1]) - xs[-1]) / (h.right_slope - 1.0)
        return x, h(x) - x
    return None


def check_no_profitable_loops(net: Network, G: Sequence[AnyConnection],
                              price_box: float = 1e3) -> LoopReport:
    """Every directed loop must satisfy H(p) < p for all real p."""
    if price_box <= 0:
        raise ValidationError("price_box must be positive", field="price_box")
    if len(G) != net.n_arcs:
        raise ValidationError("one connection function per arc is required", field="G")
    affines = [_affine(g) for g in G]
    if all(a is not None for a in affines):
        return _check_affine(net, affines)

    graph = nx.DiGraph()
    graph.add_nodes_from(range(net.n_nodes))
    graph.add_edges_from(net.arcs)
    if nx.is_directed_acyclic_graph(graph):
        return LoopReport(True, method="acyclic")
    if net.n_nodes > LOOP_ENUMERATION_MAX_NODES:
        raise GuardError(f"loop certification for non-affine connections enumerates cycles; "
                         f"{net.n_nodes} nodes exceeds {LOOP_ENUMERATION_MAX_NODES}")
    grid = np.linspace(-price_box, price_box, GRID_POINTS)
    for cyc in sorted(nx.simple_cycles(graph), key=lambda c: (len(c), sorted(c))):
        start = cyc.index(min(cyc))
        closed = cyc[start:] + cyc[:start] + [cyc[start]]
        h = to_pwl(loop_composition(G, net, closed))
        hit = _loop_profit(h)
        if hit is None:
            values = np.array([h(float(p)) for p in grid])
            gaps = values - grid
            i = int(np.argmax(gaps))
            if gaps[i] >= 0:
                hit = (float(grid[i]), float(gaps[i]))
        if hit is not None:
            return LoopReport(False, closed, hit, "enumeration")
    return LoopReport(True, method="enumeration")


def require_no_profitable_loops(net: Network, G, price_box: float = 1e3) -> LoopReport:
    report = check_no_profitable_loops(net, G, price_box)
    if not report.ok:
        p, gain = report.profit_at
        raise ProfitableLoopError(
            "profitable loop: " + " -> ".join(net.nodes[v] for v in report.violating_loop),
            witness={"loop": [net.nodes[v] for v in report.violating_loop],
                     "price": p, "gain": gain})
    return report


# ---------------------------------------------------------------------------
# reduced connections

def _rel_gt(new: float, old: float, rel: float = 1e-13) -> bool:
    if old == -math.inf:
        return new > old
    if new == math.inf:
        return old != math.inf
    return new > old + rel * max(1.0, abs(old))


def reduced_connection_map(net: Network, G: Sequence[AnyConnection], y: int, p_y: float,
                           include_empty_path: bool = False) -> list[float]:
    """Best composed connection value over paths x ~> y, for every x at once.

    -inf marks nodes with no path to y, +inf nodes whose sup is unbounded.
    The entry for y is the best nontrivial loop through y unless
    ``include_empty_path`` is set, in which case it is p_y.
    """
    n = net.n_nodes
    values = [-math.inf] * n
    values[y] = p_y

    def sweep(vals: list[float]) -> tuple[list[float], set[int]]:
        new = list(vals)
        changed = set()
        for x in range(n):
            if x == y:
                continue
            best = vals[x]
            for k in net.out_arcs(x):
                z = net.arcs[k][1]
                if vals[z] > -math.inf:
                    cand = G[k](vals[z])
                    if _rel_gt(cand, best):
                        best = cand
            if best != vals[x]:
                new[x] = best
                changed.add(x)
        return new, changed

    for _ in range(n):
        values, changed = sweep(values)
        if not changed:
            break
    else:
        improving: set[int] = set()
        for _ in range(n):
            values, changed = sweep(values)
            improving |= changed
            if not changed:
                break
        if improving:
            stack = list(improving)
            while stack:
                u = stack.pop()
                values[u] = math.inf
                for k in net.in_arcs(u):
                    w = net.arcs[k][0]
                    if w != y and values[w] != math.inf and values[w] > -math.inf:
                        stack.append(w)
    loop_best = -math.inf
    for k in net.out_arcs(y):
        z = net.arcs[k][1]
        if z != y and values[z] > -math.inf:
            loop_best = max(loop_best, G[k](values[z]))
    values[y] = p_y if include_empty_path else loop_best
    return values


def reduced_connection(net: Network, G: Sequence[AnyConnection], x: int, y: int,
                       p_y: float, include_empty_path: bool = False) -> float:
    return reduced_connection_map(net, G, y, p_y, include_empty_path)[x]


def reduced_connection_functions(net: Network, G: Sequence[AnyConnection], y: int
                                 ) -> list[AnyConnection | None]:
    """Reduced connection to ``y`` as an exact function of p_y for every other node.

    None marks nodes with no directed path to y. Raises ProfitableLoopError if
    the envelope keeps growing past |Z| sweeps.
    """
    n = net.n_nodes
    funcs: list[AnyConnection | None] = [None] * n
    funcs[y] = identity()
    for sweep in range(n + 1):
        changed = False
        new = list(funcs)
        for x in range(n):
            if x == y:
                continue
            best = funcs[x]
            for k in net.out_arcs(x):
                z = net.arcs[k][1]
                if funcs[z] is None:
                    continue
                cand = compose(G[k], funcs[z])
                if isinstance(cand, ComposedConnection):
                    cand = to_pwl(cand)
                cand = normalize(cand)
                if best is None:
                    best = cand
                elif not dominates(best, cand):
                    best = pwl_max(best, cand)
            if best is not funcs[x]:
                new[x] = best
                changed = True
        funcs = new
        if not changed:
            break
        if sweep == n:
            raise ProfitableLoopError(
                f"reduced connection to {net.nodes[y]!r} is unbounded",
                witness={"target": net.nodes[y]})
    funcs[y] = None
    return funcs


# ---------------------------------------------------------------------------
# flow decomposition

@dataclass
class FlowDecomposition:
    path_flows: list[tuple[list[int], float]] = field(default_factory=list)
    loop_flows: list[tuple[list[int], float]] = field(default_factory=list)

    def recompose(self, net: Network) -> list[float]:
        mu = [0.0] * net.n_arcs
        for nodes, mass in self.path_flows + self.loop_flows:
            for a, b in zip(nodes[:-1], nodes[1:]):
                mu[net.arc_id(a, b)] += mass
        return mu

    @property
    def loop_mass(self) -> float:
        return sum(m for _, m in self.loop_flows)


def flow_decompose(net: Network, mu: Sequence[float], q: Sequence[float],
                   eps: float = EPS_MASS) -> FlowDecomposition:
    """Greedy peeling into source-to-target paths, then leftover loops."""
    if any(m < -eps for m in mu):
        raise ValidationError("internal flows must be nonnegative", field="mu")
    scale = max(1.0, sum(abs(v) for v in q), max((abs(m) for m in mu), default=0.0))
    tol = eps * scale
    balance = incidence_apply(net, list(mu))
    if any(abs(b - v) > tol for b, v in zip(balance, q)):
        raise ValidationError("flow does not satisfy mass balance for q", field="mu")
    rest = [float(m) for m in mu]
    excess = [float(v) for v in q]  # residual: negative at sources, positive at targets
    out = FlowDecomposition()

    def next_arc(u: int) -> int | None:
        for k in net.out_arcs(u):
            if rest[k] > tol:
                return k
        return None

    def peel_cycle(nodes: list[int]) -> None:
        arcs = [net.arc_id(a, b) for a, b in zip(nodes[:-1], nodes[1:])]
        mass = min(rest[k] for k in arcs)
        for k in arcs:
            rest[k] -= mass
        out.loop_flows.append((nodes, mass))

    while True:
        src = next((z for z in range(net.n_nodes) if excess[z] < -tol and next_arc(z) is not None),
                   None)
        if src is None:
            break
        path = [src]
        seen = {src: 0}
        arcs: list[int] = []
        while True:
            u = path[-1]
            if u != src and excess[u] > tol:
                break
            k = next_arc(u)
            if k is None:
                break
            w = net.arcs[k][1]
            if w in seen:
                i = seen[w]
                peel_cycle(path[i:] + [w])
                for v in path[i + 1:]:
                    del seen[v]
                path = path[: i + 1]
                arcs = arcs[:i]
                continue
            seen[w] = len(path)
            path.append(w)
            arcs.append(k)
        if not arcs:
            continue
        dst = path[-1]
        if excess[dst] <= tol:
            # stuck on float dust short of a target
            rest[arcs[-1]] = 0.0
            continue
        mass = min(min(rest[k] for k in arcs), -excess[src], excess[dst])
        for k in arcs:
            rest[k] -= mass
        excess[src] += mass
        excess[dst] -= mass
        out.path_flows.append((path, mass))

    for k0 in range(net.n_arcs):
        while rest[k0] > tol:
            a, b = net.arcs[k0]
            path = [a, b]
            seen = {a: 0, b: 1}
            while True:
                k = next_arc(path[-1])
                if k is None:
                    break
                w = net.arcs[k][1]
                if w in seen:
                    peel_cycle(path[seen[w]:] + [w])
                    break
                seen[w] = len(path)
                path.append(w)
            if k is None:
                # float dust that cannot close a loop
                rest[k0] = 0.0
    return out
