"""Bipartite imperfectly-transferable-utility matching.

Sources X ship n_x, targets Y receive m_y, and arc xy is governed by an
increasing connection Gtil_xy. An equilibrium is a flow meeting the margins
plus prices with p_x >= Gtil_xy(p_y) on every arc and equality wherever flow
moves. Incomplete arc sets are handled by completing them with penalty arcs
p - n and doubling n until the penalty arcs fall silent.

Two solvers sit behind ``solve_complete_bipartite``:

* transferable utility (every arc p - c): a transportation problem solved by
  successive shortest paths; prices are its optimal dual potentials;
* general monotone connections: a primal-dual augmenting-path method. The
  ground node keeps its price throughout. Prices only move through monotone
  propagation of the constraints p_u >= F(p_v), so they stay feasible at all
  times and the flow stays on tight arcs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import networkx as nx
import numpy as np

from .connections import Affine, ConnectionFunction, Penalty, to_pwl
from .errors import ConvergenceError, HallViolationError, ValidationError
from .feasibility import hall_check
from .maxflow import MaxFlow
from .network import EPS_MASS

DEFAULT_TOL = 1e-8
MAX_DOUBLINGS = 60


@dataclass(frozen=True)
class BipartiteProblem:
    sources: tuple[str, ...]
    targets: tuple[str, ...]
    n: tuple[float, ...]
    m: tuple[float, ...]
    gtil: Mapping[tuple[int, int], ConnectionFunction]
    penalty_arcs: frozenset = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "n", tuple(float(v) for v in self.n))
        object.__setattr__(self, "m", tuple(float(v) for v in self.m))
        object.__setattr__(self, "gtil", dict(self.gtil))
        object.__setattr__(self, "penalty_arcs", frozenset(self.penalty_arcs))
        if len(self.n) != len(self.sources) or len(self.m) != len(self.targets):
            raise ValidationError("one margin per node is required", field="margins")
        if any(v <= 0 for v in self.n + self.m):
            raise ValidationError("margins must be strictly positive", field="margins")
        total = sum(self.n) + sum(self.m)
        if abs(sum(self.n) - sum(self.m)) > EPS_MASS * max(1.0, total):
            raise ValidationError(f"margins differ: {sum(self.n)!r} vs {sum(self.m)!r}",
                                  field="margins")
        for i, j in self.gtil:
            if not (0 <= i < len(self.sources) and 0 <= j < len(self.targets)):
                raise ValidationError(f"arc {(i, j)} out of range", field="gtil")

    @property
    def arcs(self) -> list[tuple[int, int]]:
        return sorted(self.gtil)

    @property
    def is_complete(self) -> bool:
        return len(self.gtil) == len(self.sources) * len(self.targets)

    @property
    def is_transferable(self) -> bool:
        return all(_cost_of(g) is not None for g in self.gtil.values())

    def restrict(self, xs: Sequence[int], ys: Sequence[int]) -> "BipartiteProblem":
        """Sub-problem on the given source and target indices."""
        xi = {old: new for new, old in enumerate(xs)}
        yi = {old: new for new, old in enumerate(ys)}
        return BipartiteProblem(
            tuple(self.sources[i] for i in xs), tuple(self.targets[j] for j in ys),
            tuple(self.n[i] for i in xs), tuple(self.m[j] for j in ys),
            {(xi[i], yi[j]): g for (i, j), g in self.gtil.items() if i in xi and j in yi},
            frozenset((xi[i], yi[j]) for i, j in self.penalty_arcs if i in xi and j in yi))


@dataclass
class BipartiteEquilibrium:
    flow: np.ndarray  # |X| x |Y|
    p_x: np.ndarray
    p_y: np.ndarray
    ground: str
    residuals: tuple[float, float, float] = (0.0, 0.0, 0.0)
    meta: dict[str, Any] = field(default_factory=dict)

    def prices(self, bp: BipartiteProblem) -> dict[str, float]:
        out = {name: float(v) for name, v in zip(bp.sources, self.p_x)}
        out.update({name: float(v) for name, v in zip(bp.targets, self.p_y)})
        return out


def _cost_of(g: ConnectionFunction) -> float | None:
    if isinstance(g, Penalty):
        return g.n
    if isinstance(g, Affine) and g.slope == 1.0:
        return -g.intercept
    return None


def equilibrium_residuals(bp: BipartiteProblem, eq: BipartiteEquilibrium
                          ) -> tuple[float, float, float]:
    """(margin, positive rent, complementary slackness) residuals; off-arc flow counts as margin error."""
    flow = eq.flow
    margin = max(float(np.max(np.abs(flow.sum(axis=1) - np.array(bp.n)), initial=0.0)),
                 float(np.max(np.abs(flow.sum(axis=0) - np.array(bp.m)), initial=0.0)))
    mask = np.zeros(flow.shape, dtype=bool)
    rent = 0.0
    cs = 0.0
    for (i, j), g in bp.gtil.items():
        mask[i, j] = True
        gap = eq.p_x[i] - g(eq.p_y[j])
        rent = max(rent, -gap)
        cs = max(cs, flow[i, j] * abs(gap))
    if flow.size:
        margin = max(margin, float(np.max(np.abs(np.where(mask, 0.0, flow)))))
        margin = max(margin, float(-np.min(flow)))
    return margin, rent, cs


def build_penalty_completion(bp: BipartiteProblem, n: float) -> BipartiteProblem:
    if n <= 0:
        raise ValidationError("penalty must be positive", field="n")
    gtil = dict(bp.gtil)
    added = set(bp.penalty_arcs)
    for i in range(len(bp.sources)):
        for j in range(len(bp.targets)):
            if (i, j) not in gtil:
                gtil[(i, j)] = Penalty(n)
                added.add((i, j))
    return BipartiteProblem(bp.sources, bp.targets, bp.n, bp.m, gtil, frozenset(added))


def _ground_index(bp: BipartiteProblem, ground: str | None) -> tuple[str, int]:
    """Ground node as ('x', i) / ('y', j); default is the first source."""
    if ground is None:
        return "x", 0
    if ground in bp.sources:
        return "x", bp.sources.index(ground)
    if ground in bp.targets:
        return "y", bp.targets.index(ground)
    raise ValidationError(f"ground node {ground!r} is not a source or target", field="ground")


# ---------------------------------------------------------------------------
# transferable utility: transportation problem by successive shortest paths

def solve_bipartite_tu(bp: BipartiteProblem, ground: str | None = None,
                       ground_price: float = 0.0) -> BipartiteEquilibrium:
    costs = {}
    for arc, g in bp.gtil.items():
        c = _cost_of(g)
        if c is None:
            raise ValidationError("transferable-utility solver needs unit-slope arcs",
                                  field="gtil")
        costs[arc] = c
    a, b = len(bp.sources), len(bp.targets)
    s, t = a + b, a + b + 1
    total = sum(bp.m)
    eps = EPS_MASS * max(1.0, total) * 1e-3
    # residual graph edges: [tail, head, cap, cost]; pairs (e, e ^ 1)
    tails: list[int] = []
    heads: list[int] = []
    caps: list[float] = []
    cost: list[float] = []

    def add(u: int, v: int, cap: float, c: float) -> int:
        e = len(tails)
        tails.extend((u, v))
        heads.extend((v, u))
        caps.extend((cap, 0.0))
        cost.extend((c, -c))
        return e

    for i, v in enumerate(bp.n):
        add(s, i, v, 0.0)
    for j, v in enumerate(bp.m):
        add(a + j, t, v, 0.0)
    arc_edge = {arc: add(arc[0], a + arc[1], math.inf, c) for arc, c in sorted(costs.items())}
    n_nodes = a + b + 2
    shipped = 0.0
    for _ in range(4 * (a + b + len(costs)) + 10 + int(1e5)):
        if total - shipped <= eps:
            break
        dist = [math.inf] * n_nodes
        pred = [-1] * n_nodes
        dist[s] = 0.0
        for _ in range(n_nodes):
            changed = False
            for e in range(len(tails)):
                if caps[e] > eps and dist[tails[e]] + cost[e] < dist[heads[e]]:
                    dist[heads[e]] = dist[tails[e]] + cost[e]
                    pred[heads[e]] = e
                    changed = True
            if not changed:
                break
        if dist[t] == math.inf:
            hall = hall_check(bp)
            raise HallViolationError(
                "margins cannot be matched on the available arcs",
                witness={"violating_K": [bp.sources[i] for i in hall.violating_K or []]})
        path = []
        v = t
        while v != s:
            e = pred[v]
            path.append(e)
            v = tails[e]
        push = min(min(caps[e] for e in path), total - shipped)
        for e in path:
            caps[e] -= push
            caps[e ^ 1] += push
        shipped += push
    else:
        raise ConvergenceError("successive shortest paths did not finish")

    flow = np.zeros((a, b))
    for (i, j), e in arc_edge.items():
        flow[i, j] = caps[e ^ 1]
    # dual potentials: shortest distances from a virtual root on the residual X+Y graph
    pot = [0.0] * (a + b)
    inner = [e for e in range(len(tails)) if tails[e] < a + b and heads[e] < a + b]
    for _ in range(a + b + 1):
        changed = False
        for e in inner:
            if caps[e] > eps and pot[tails[e]] + cost[e] < pot[heads[e]]:
                pot[heads[e]] = pot[tails[e]] + cost[e]
                changed = True
        if not changed:
            break
    side, k = _ground_index(bp, ground)
    shift = ground_price - (pot[k] if side == "x" else pot[a + k])
    p = np.array(pot) + shift
    eq = BipartiteEquilibrium(flow, p[:a], p[a:], _ground_name(bp, side, k),
                              meta={"method": "transportation-ssp"})
    eq.residuals = equilibrium_residuals(bp, eq)
    return eq


def _ground_name(bp: BipartiteProblem, side: str, k: int) -> str:
    return bp.sources[k] if side == "x" else bp.targets[k]


# ---------------------------------------------------------------------------
# general monotone connections

@dataclass(frozen=True)
class _Edge:
    """Constraint p[u] >= f(p[v]); flow may be pushed from u to v along it."""

    u: int
    v: int
    f: Callable[[float], float]
    finv: Callable[[float], float]
    arc: tuple[int, int]
    backward: bool


def _negated(e: _Edge) -> _Edge:
    # q = -p turns p[u] >= f(p[v]) into q[v] >= -finv(-q[u])
    f, finv = e.f, e.finv
    return _Edge(e.v, e.u, lambda w: -finv(-w), lambda w: -f(-w), e.arc, e.backward)


def _slack_tol(x: float) -> float:
    return 1e-13 * max(1.0, abs(x))


def _tight_tol(x: float) -> float:
    return 1e-11 * max(1.0, abs(x))


class _Grower:
    """Raise a root price until it is tightly linked to a supplier node.

    Works on a set of constraint edges over prices ``p``. ``suppliers`` maps
    node -> preference rank (lower is preferred).
    """

    def __init__(self, p: list[float], edges: list[_Edge], root: int,
                 suppliers: dict[int, int]):
        self.p = p
        self.edges = edges
        self.root = root
        self.suppliers = suppliers
        self.n = len(p)

    def propagate(self, r: float, rounds: int | None = None):
        vals = list(self.p)
        vals[self.root] = max(vals[self.root], r)
        parent = [-1] * self.n
        rounds = rounds or self.n + 2
        for _ in range(rounds):
            changed = False
            for k, e in enumerate(self.edges):
                cand = e.f(vals[e.v])
                if cand > vals[e.u] + _slack_tol(vals[e.u]):
                    vals[e.u] = cand
                    parent[e.u] = k
                    changed = True
            if not changed:
                return vals, parent, True
        return vals, parent, False

    def classify(self, r: float) -> tuple[str, list[float], list[int]]:
        vals, parent, converged = self.propagate(r)
        if not converged or any(math.isinf(v) or math.isnan(v) for v in vals):
            return "cycle", vals, parent
        for s in self.suppliers:
            if s != self.root and vals[s] > self.p[s] + _slack_tol(self.p[s]):
                return "supplier", vals, parent
        return "low", vals, parent

    def tight_path(self, vals: list[float]) -> list[int] | None:
        """Edges of a tight path supplier -> root at prices ``vals``, preferred supplier first."""
        into: dict[int, list[int]] = {}
        for k, e in enumerate(self.edges):
            into.setdefault(e.v, []).append(k)
        via = {self.root: -1}
        order = [self.root]
        for v in order:
            for k in into.get(v, ()):
                e = self.edges[k]
                if e.u in via:
                    continue
                if e.f(vals[v]) >= vals[e.u] - _tight_tol(vals[e.u]):
                    via[e.u] = k
                    order.append(e.u)
        reached = [s for s in self.suppliers if s in via and s != self.root]
        if not reached:
            return None
        s = min(reached, key=lambda z: (self.suppliers[z], z))
        path = []
        u = s
        while u != self.root:
            k = via[u]
            path.append(k)
            u = self.edges[k].v
        return path

    def search(self) -> tuple[str, list[float], list[int]]:
        path = self.tight_path(self.p)
        if path is not None:
            return "path", list(self.p), path
        base = self.p[self.root]
        lo = base
        step = max(1.0, abs(base))
        for _ in range(2000):
            hi = lo + step
            state, _, _ = self.classify(hi)
            if state != "low":
                break
            lo = hi
            step *= 2.0
        else:
            raise ConvergenceError("price raise found no supplier")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if self.classify(mid)[0] == "low":
                lo = mid
            else:
                hi = mid
        state, vals, parent = self.classify(hi)
        if state == "supplier":
            raised = [s for s in self.suppliers
                      if s != self.root and vals[s] > self.p[s] + _slack_tol(self.p[s])]
            s = min(raised, key=lambda z: (self.suppliers[z], z))
            chain = []
            u = s
            seen = set()
            while u != self.root and u not in seen:
                seen.add(u)
                k = parent[u]
                chain.append(k)
                u = self.edges[k].v
            if u == self.root:
                # exact level: walk the chain down from the supplier's current price
                level = self.p[s]
                values = {s: level}
                for k in chain:
                    e = self.edges[k]
                    level = e.finv(level)
                    values[e.v] = level
                r_star = max(level, self.p[self.root])
                vals, _, ok = self.propagate(r_star)
                if ok:
                    for node, val in values.items():
                        if node != s:
                            vals[node] = max(val, self.p[node])
                    path = self.tight_path(vals)
                    if path is not None:
                        return "path", vals, path
            state, vals, parent = self.classify(hi)
            path = self.tight_path(vals)
            if path is not None:
                return "path", vals, path
            lo_vals = self.propagate(lo)[0]
            return "cycle", lo_vals, self._find_cycle(lo)
        lo_vals = self.propagate(lo)[0]
        return "cycle", lo_vals, self._find_cycle(lo)

    def _find_cycle(self, lo: float) -> list[int]:
        """A tight constraint cycle feeding the root at the last non-diverging level.

        Edges are returned in walking order (each edge's ``v`` is the next
        edge's ``u``). Among the candidates we take the one whose composition
        grows fastest just above the current level.
        """
        vals, _, _ = self.propagate(lo)
        graph = nx.DiGraph()
        for k, e in enumerate(self.edges):
            if e.f(vals[e.v]) >= vals[e.u] - _tight_tol(vals[e.u]):
                graph.add_edge(e.u, e.v, k=k)
        if self.root not in graph:
            raise ConvergenceError("blocked price raise without a witness cycle")
        feeding = nx.ancestors(graph, self.root) | {self.root}
        best, best_gain = None, -math.inf
        for count, cyc in enumerate(nx.simple_cycles(graph.subgraph(feeding))):
            ks = [graph[u][v]["k"] for u, v in zip(cyc, cyc[1:] + cyc[:1])]
            x0 = vals[self.edges[ks[0]].u]
            d = 1e-7 * max(1.0, abs(x0))
            w = x0 + d
            for k in reversed(ks):
                w = self.edges[k].f(w)
            gain = w - (x0 + d)
            if gain > best_gain:
                best, best_gain = ks, gain
            if count >= 200:
                break
        if best is None:
            raise ConvergenceError("blocked price raise without a witness cycle")
        return best


def _solve_itu(bp: BipartiteProblem, ground: str | None, ground_price: float,
               tol: float) -> BipartiteEquilibrium:
    side, gk = _ground_index(bp, ground)
    if side == "y":
        # mirror the problem so the ground is a source: q = -p, Y ships to X
        mirror_g = {}
        for (i, j), g in bp.gtil.items():
            pw = to_pwl(g)
            inv = pw.inverse()
            mirror_g[(j, i)] = _Mirrored(pw, inv)
        mirror = _RawProblem(len(bp.targets), len(bp.sources), bp.m, bp.n, mirror_g)
        flow_t, px, py, info = _itu_core(mirror, gk, -ground_price, tol)
        eq = BipartiteEquilibrium(flow_t.T.copy(), -py, -px, bp.targets[gk], meta=info)
    else:
        raw = _RawProblem(len(bp.sources), len(bp.targets), bp.n, bp.m, dict(bp.gtil))
        flow, px, py, info = _itu_core(raw, gk, ground_price, tol)
        eq = BipartiteEquilibrium(flow, px, py, bp.sources[gk], meta=info)
    eq.residuals = equilibrium_residuals(bp, eq)
    return eq


class _Mirrored:
    """w -> -G^{-1}(-w): the connection seen from the other side with negated prices."""

    def __init__(self, g, ginv):
        self.g, self.ginv = g, ginv

    def __call__(self, w: float) -> float:
        return -self.ginv(-w)

    def inverse(self) -> "_Mirrored":
        return _Mirrored(self.ginv, self.g)


@dataclass
class _RawProblem:
    a: int
    b: int
    n: Sequence[float]
    m: Sequence[float]
    gtil: dict


def _itu_core(bp: _RawProblem, g: int, ground_price: float, tol: float):
    a, b = bp.a, bp.b
    N = a + b
    if len(bp.gtil) != a * b:
        raise ValidationError("general solver needs a complete bipartite arc set", field="gtil")
    G = {arc: fn for arc, fn in bp.gtil.items()}
    Ginv = {arc: fn.inverse() for arc, fn in G.items()}
    total = float(sum(bp.m))
    feps = 1e-13 * max(1.0, total)
    flow = np.zeros((a, b))
    shipped = np.zeros(a)
    received = np.zeros(b)

    p = [0.0] * N
    p[g] = ground_price
    for j in range(b):
        p[a + j] = Ginv[(g, j)](ground_price)
    for i in range(a):
        if i != g:
            p[i] = max(G[(i, j)](p[a + j]) for j in range(b))

    def edges() -> list[_Edge]:
        out = []
        for i in range(a):
            for j in range(b):
                out.append(_Edge(i, a + j, G[(i, j)], Ginv[(i, j)], (i, j), False))
        for i in range(a):
            for j in range(b):
                if flow[i, j] > feps:
                    out.append(_Edge(a + j, i, Ginv[(i, j)], G[(i, j)], (i, j), True))
        return out

    def push(path_edges: list[_Edge], amount: float) -> None:
        for e in path_edges:
            i, j = e.arc
            if e.backward:
                flow[i, j] -= amount
                if flow[i, j] <= feps:
                    flow[i, j] = 0.0
            else:
                flow[i, j] += amount

    def bottleneck(path_edges: list[_Edge]) -> float:
        caps = [flow[e.arc] for e in path_edges if e.backward]
        return min(caps) if caps else math.inf

    iterations = 0
    cycles = 0
    limit = 200 * (N + 1) ** 2 + 1000

    # phase 1: fill every target; the ground is an unlimited supplier at a fixed price
    while True:
        short = [j for j in range(b) if bp.m[j] - received[j] > feps]
        if not short:
            break
        iterations += 1
        if iterations > limit:
            raise ConvergenceError("bipartite solver exceeded its iteration cap",
                                   {"phase": 1, "unfilled": short})
        j0 = short[0]
        es = edges()
        suppliers = {i: 0 for i in range(a) if i != g and bp.n[i] - shipped[i] > feps}
        suppliers[g] = 1
        kind, vals, ks = _Grower(p, es, a + j0, suppliers).search()
        p = vals
        p[g] = ground_price
        path = [es[k] for k in ks]
        if kind == "cycle":
            cycles += 1
            amount = bottleneck(path)
            push(path, amount)
            continue
        src = path[0].u
        amount = min(bottleneck(path), bp.m[j0] - received[j0],
                     math.inf if src == g else bp.n[src] - shipped[src])
        push(path, amount)
        received[j0] += amount
        shipped[src] += amount

    # phase 2: idle sources take over the ground's surplus, prices move down
    while True:
        idle = [i for i in range(a) if i != g and bp.n[i] - shipped[i] > feps]
        if not idle:
            break
        iterations += 1
        if iterations > limit:
            raise ConvergenceError("bipartite solver exceeded its iteration cap",
                                   {"phase": 2, "idle": idle})
        i0 = idle[0]
        es = edges()
        neg = [_negated(e) for e in es]
        kind, qvals, ks = _Grower([-v for v in p], neg, i0, {g: 0}).search()
        p = [-v for v in qvals]
        p[g] = ground_price
        path = [es[k] for k in reversed(ks)]
        if kind == "cycle":
            cycles += 1
            push(path, bottleneck(path))
            continue
        surplus = shipped[g] - bp.n[g]
        amount = min(bottleneck(path), bp.n[i0] - shipped[i0], surplus)
        push(path, amount)
        shipped[i0] += amount
        shipped[g] -= amount

    px = np.array(p[:a])
    py = np.array(p[a:])
    return flow, px, py, {"method": "primal-dual", "iterations": iterations,
                          "cycle_pushes": cycles}


def solve_complete_bipartite(bp: BipartiteProblem, ground: str | None = None,
                             tol: float = DEFAULT_TOL, ground_price: float = 0.0
                             ) -> BipartiteEquilibrium:
    """Equilibrium on a complete bipartite problem with the ground price pinned."""
    if not bp.is_complete:
        raise ValidationError("problem is not complete; use escalate_penalty", field="gtil")
    if bp.is_transferable:
        return solve_bipartite_tu(bp, ground, ground_price)
    return _solve_itu(bp, ground, ground_price, tol)


def _penalty_start(bp: BipartiteProblem) -> float:
    spread = max((abs(g(0.0)) for g in bp.gtil.values()), default=0.0)
    costs = [c for c in (_cost_of(g) for g in bp.gtil.values()) if c is not None]
    if costs:
        spread += max(costs) - min(costs)
    return 1.0 + spread


def escalate_penalty(bp: BipartiteProblem, ground: str | None = None,
                     tol: float = DEFAULT_TOL, ground_price: float = 0.0
                     ) -> BipartiteEquilibrium:
    """Solve penalty completions with doubling penalty until no penalty arc carries flow."""
    if bp.is_complete:
        eq = solve_complete_bipartite(bp, ground, tol, ground_price)
        eq.meta.update(penalty=None, doublings=0)
        return eq
    n_pen = _penalty_start(bp)
    for doubling in range(MAX_DOUBLINGS + 1):
        full = build_penalty_completion(bp, n_pen)
        eq = solve_complete_bipartite(full, ground, tol, ground_price)
        leak = max((eq.flow[i, j] for i, j in full.penalty_arcs - bp.penalty_arcs),
                   default=0.0)
        if leak <= EPS_MASS:
            for i, j in full.penalty_arcs - bp.penalty_arcs:
                eq.flow[i, j] = 0.0
            eq.meta.update(penalty=n_pen, doublings=doubling, penalty_leak=float(leak))
            eq.residuals = equilibrium_residuals(bp, eq)
            return eq
        n_pen *= 2.0
    raise ConvergenceError("penalty escalation did not clear; check Hall/connectivity or "
                           "tolerances", {"penalty": n_pen, "leak": float(leak)})


# ---------------------------------------------------------------------------
# block structure

def _feasible_flow(bp: BipartiteProblem) -> np.ndarray:
    a, b = len(bp.sources), len(bp.targets)
    exact = all(float(v).is_integer() for v in bp.n + bp.m)
    conv = int if exact else float
    s, t = a + b, a + b + 1
    mf = MaxFlow(a + b + 2, eps=0.0 if exact else 1e-15)
    for i, v in enumerate(bp.n):
        mf.add_edge(s, i, conv(v))
    for j, v in enumerate(bp.m):
        mf.add_edge(a + j, t, conv(v))
    ids = {arc: mf.add_edge(arc[0], a + arc[1], None) for arc in bp.arcs}
    value = mf.run(s, t)
    if value < sum(conv(v) for v in bp.m) - (0 if exact else EPS_MASS * max(1.0, sum(bp.m))):
        hall = hall_check(bp)
        raise HallViolationError(
            "Hall's condition fails",
            witness={"violating_K": [bp.sources[i] for i in hall.violating_K or []]})
    flow = np.zeros((a, b))
    for (i, j), e in ids.items():
        flow[i, j] = float(mf.flow_on(e))
    return flow


def block_decompose(bp: BipartiteProblem) -> list[tuple[list[int], list[int]]]:
    """Finest ordered partition into Hall blocks; arcs only run from X_k to Y_j with j <= k."""
    a, b = len(bp.sources), len(bp.targets)
    flow = _feasible_flow(bp)
    eps = EPS_MASS * max(1.0, sum(bp.m)) * 1e-3
    graph = nx.DiGraph()
    graph.add_nodes_from(range(a + b))
    for i, j in bp.arcs:
        graph.add_edge(i, a + j)
        if flow[i, j] > eps:
            graph.add_edge(a + j, i)
    cond = nx.condensation(graph)
    members = cond.graph["mapping"]
    comps: dict[int, list[int]] = {}
    for v, c in members.items():
        comps.setdefault(c, []).append(v)
    # arcs point from later blocks to earlier ones, so sinks come first
    order = nx.lexicographical_topological_sort(cond.reverse(copy=True),
                                                key=lambda c: min(comps[c]))
    blocks = []
    for c in order:
        nodes = sorted(comps[c])
        blocks.append(([v for v in nodes if v < a], [v - a for v in nodes if v >= a]))
    return blocks


def _cross_rent(bp: BipartiteProblem, xs: Sequence[int], px: np.ndarray,
                fixed_y: dict[int, float]) -> float:
    worst = -math.inf
    for k, i in enumerate(xs):
        for j, pyv in fixed_y.items():
            g = bp.gtil.get((i, j))
            if g is not None:
                worst = max(worst, g(pyv) - px[k])
    return worst


def _cross_rent_in(bp: BipartiteProblem, ys: Sequence[int], py: np.ndarray,
                   fixed_x: dict[int, float]) -> float:
    worst = -math.inf
    for k, j in enumerate(ys):
        for i, pxv in fixed_x.items():
            g = bp.gtil.get((i, j))
            if g is not None:
                worst = max(worst, g(py[k]) - pxv)
    return worst


def solve_bipartite(bp: BipartiteProblem, ground: str | None = None,
                    tol: float = DEFAULT_TOL) -> BipartiteEquilibrium:
    """Equilibrium of a Hall-feasible bipartite problem, block by block."""
    hall = hall_check(bp)
    if not hall.ok:
        raise HallViolationError(
            "Hall's condition fails",
            witness={"violating_K": [bp.sources[i] for i in hall.violating_K],
                     "shortfall": hall.shortfall})
    blocks = block_decompose(bp)
    if len(blocks) == 1:
        eq = escalate_penalty(bp, ground, tol)
        eq.meta["blocks"] = 1
        return eq

    a, b = len(bp.sources), len(bp.targets)
    home = 0
    if ground is not None:
        side, k = _ground_index(bp, ground)
        home = next(n for n, (xs, ys) in enumerate(blocks) if k in (xs if side == "x" else ys))
    flow = np.zeros((a, b))
    px_all = np.zeros(a)
    py_all = np.zeros(b)
    solved_x: dict[int, float] = {}
    solved_y: dict[int, float] = {}
    doublings = 0
    leak = 0.0
    penalties = []
    monotone: list[dict] = []

    def place(xs, ys, eq):
        nonlocal doublings, leak
        for r, i in enumerate(xs):
            px_all[i] = eq.p_x[r]
            solved_x[i] = eq.p_x[r]
            for c, j in enumerate(ys):
                flow[i, j] = eq.flow[r, c]
        for c, j in enumerate(ys):
            py_all[j] = eq.p_y[c]
            solved_y[j] = eq.p_y[c]
        doublings = max(doublings, eq.meta.get("doublings", 0))
        leak = max(leak, eq.meta.get("penalty_leak", 0.0))
        penalties.append(eq.meta.get("penalty"))

    xs, ys = blocks[home]
    sub = bp.restrict(xs, ys)
    g_home = ground if ground is not None else sub.sources[0]
    place(xs, ys, escalate_penalty(sub, g_home, tol, 0.0))

    def level_search(sub, gname, rent_at, direction):
        """Smallest move of the block ground (up or down) that kills all cross rents."""
        cache = {}

        def solve_at(t):
            if t not in cache:
                cache[t] = escalate_penalty(sub, gname, tol, t)
            return cache[t]

        def bad(t):
            return rent_at(solve_at(t)) > tol * 0.1

        t0 = 0.0
        if not bad(t0):
            return solve_at(t0), solve_at(t0)
        step = 1.0
        lo, hi = t0, t0 + direction * step
        for _ in range(200):
            if not bad(hi):
                break
            lo, step = hi, step * 2.0
            hi = t0 + direction * step
        else:
            raise ConvergenceError("no ground level clears the cross-block rents")
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if bad(mid):
                lo = mid
            else:
                hi = mid
        return solve_at(t0), solve_at(hi)

    for idx in list(range(home + 1, len(blocks))):
        xs, ys = blocks[idx]
        sub = bp.restrict(xs, ys)
        base, eq = level_search(sub, sub.sources[0],
                                lambda e: _cross_rent(bp, xs, e.p_x, solved_y), +1.0)
        monotone.append(_check_monotone(base, eq, direction=+1))
        place(xs, ys, eq)
    for idx in range(home - 1, -1, -1):
        xs, ys = blocks[idx]
        sub = bp.restrict(xs, ys)
        base, eq = level_search(sub, sub.sources[0],
                                lambda e: _cross_rent_in(bp, ys, e.p_y, solved_x), -1.0)
        monotone.append(_check_monotone(base, eq, direction=-1))
        place(xs, ys, eq)

    side, k = _ground_index(bp, g_home)
    out = BipartiteEquilibrium(flow, px_all, py_all, _ground_name(bp, side, k),
                               meta={"blocks": len(blocks), "doublings": doublings,
                                     "penalty_leak": leak,
                                     "penalty": max((p for p in penalties if p), default=None),
                                     "method": "blocks",
                                     "monotone_response": all(m["ok"] for m in monotone)})
    failures = [m for m in monotone if not m["ok"]]
    if failures:
        out.meta["monotone_failures"] = failures
    out.residuals = equilibrium_residuals(bp, out)
    if max(out.residuals) > 10 * tol * max(1.0, sum(bp.m)):
        raise ConvergenceError("merged block solution violates the equilibrium conditions",
                               {"residuals": out.residuals, "monotone": monotone})
    return out


def _check_monotone(base: BipartiteEquilibrium, moved: BipartiteEquilibrium,
                    direction: int) -> dict:
    """Did shifting a block's ground move all of its prices the same way?

    Blocks may have several equilibria, so a failure here is reported rather
    than raised; the merged solution is certified separately.
    """
    dx = (moved.p_x - base.p_x) * direction
    dy = (moved.p_y - base.p_y) * direction
    slack = 1e-9 * max(1.0, float(np.max(np.abs(np.concatenate([base.p_x, base.p_y])))))
    ok = not (np.min(dx, initial=0.0) < -slack or np.min(dy, initial=0.0) < -slack)
    return {"ok": bool(ok), "dx": dx.tolist(), "dy": dy.tolist()}
