"""End-to-end pipeline: reduce to a bipartite problem, solve it, extend prices
back to every node, rebuild the internal flow on zero-rent arcs and certify.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import networkx as nx

from .analysis import check_no_profitable_loops, reduced_connection_functions
from .bipartite import (DEFAULT_TOL, BipartiteEquilibrium, BipartiteProblem, equilibrium_residuals,
                        solve_bipartite)
from .connections import AnyConnection
from .errors import (AssumptionError, ConvergenceError, DeadNodeError, InfeasibleError,
                     ProfitableLoopError, ValidationError)
from .feasibility import (check_assumption2, check_balance, check_feasibility, hall_check,
                          prune_dead_nodes)
from .network import EPS_MASS, Network, incidence_apply, reachable_from

# arcs with |p_x - G(p_y)| below this (times the price scale) count as zero-rent
ZERO_RENT_START = 1e-11


@dataclass(frozen=True)
class FlowProblem:
    net: Network
    G: tuple
    q: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "G", tuple(self.G))
        object.__setattr__(self, "q", tuple(float(v) for v in self.q))
        if len(self.G) != self.net.n_arcs:
            raise ValidationError(f"{len(self.G)} connection functions for "
                                  f"{self.net.n_arcs} arcs", field="G")
        if len(self.q) != self.net.n_nodes:
            raise ValidationError(f"q has {len(self.q)} entries, network has "
                                  f"{self.net.n_nodes} nodes", field="q")
        for z, v in enumerate(self.q):
            if not math.isfinite(v):
                raise ValidationError("exit flow must be finite", field=f"q[{self.net.nodes[z]}]")
        check_balance(self.q)

    def with_q(self, q: Sequence[float]) -> "FlowProblem":
        return FlowProblem(self.net, self.G, tuple(q))


@dataclass
class Certificate:
    balance_residual: float
    max_positive_rent: float
    cs_residual: float
    tol: float
    passed: bool
    min_flow: float = 0.0

    def as_dict(self) -> dict[str, Any]:
        return {"balance_residual": self.balance_residual,
                "max_positive_rent": self.max_positive_rent,
                "cs_residual": self.cs_residual, "tol": self.tol, "pass": self.passed}


@dataclass
class EquilibriumOutcome:
    q: list[float]
    mu: list[float]
    p: list[float]
    certificate: Certificate | None = None
    meta: dict[str, Any] = field(default_factory=dict)


@dataclass
class PriceExtensionState:
    p: list[float]  # -inf = not yet priced
    t: int = 0
    updating_digraph: list[int] = field(default_factory=list)  # arc that last set each node
    history: list[list[float]] = field(default_factory=list)

    def forest_is_acyclic(self, net: Network) -> bool:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(net.n_nodes))
        graph.add_edges_from(net.arcs[k] for k in self.updating_digraph if k >= 0)
        return nx.is_directed_acyclic_graph(graph)


@dataclass
class Reduction:
    """A bipartite problem plus where its nodes live in the flow problem."""

    bp: BipartiteProblem
    x_nodes: list[int]
    y_nodes: list[int]


# ---------------------------------------------------------------------------
# reduction

def reduce_to_bipartite(fp: FlowProblem) -> Reduction:
    net, q = fp.net, fp.q
    tol = EPS_MASS * max(1.0, sum(abs(v) for v in q))
    xs = [z for z in range(net.n_nodes) if q[z] < -tol]
    ys = [z for z in range(net.n_nodes) if q[z] > tol]
    gtil = {}
    for c, y in enumerate(ys):
        funcs = reduced_connection_functions(net, fp.G, y)
        for r, x in enumerate(xs):
            if funcs[x] is not None:
                gtil[(r, c)] = funcs[x]
    bp = BipartiteProblem(tuple(net.nodes[z] for z in xs), tuple(net.nodes[z] for z in ys),
                          tuple(-q[z] for z in xs), tuple(q[z] for z in ys), gtil)
    return Reduction(bp, xs, ys)


# ---------------------------------------------------------------------------
# prices off the bipartite support

def _sweep(net: Network, G: Sequence[AnyConnection], p: list[float], thr: float
           ) -> tuple[list[float], list[tuple[int, int]]]:
    """One synchronous max-update; returns new prices and (node, arc) updates."""
    new = list(p)
    updates = []
    for z in range(net.n_nodes):
        best, via = p[z], -1
        for k in net.out_arcs(z):
            w = net.arcs[k][1]
            if p[w] == -math.inf:
                continue
            cand = G[k](p[w])
            bar = best + thr if best > -math.inf else -math.inf
            if cand > bar:
                best, via = cand, k
        if via >= 0:
            new[z] = best
            updates.append((z, via))
    return new, updates


def extend_prices(fp: FlowProblem, red: Reduction, be: BipartiteEquilibrium,
                  tol: float = DEFAULT_TOL, record: bool = False) -> PriceExtensionState:
    """Max-update iteration from the bipartite prices until nothing changes."""
    net = fp.net
    p = [-math.inf] * net.n_nodes
    for r, x in enumerate(red.x_nodes):
        p[x] = float(be.p_x[r])
    for c, y in enumerate(red.y_nodes):
        p[y] = float(be.p_y[c])
    state = PriceExtensionState(p, 0, [-1] * net.n_nodes)
    if record:
        state.history.append(list(p))
    thr = 0.1 * tol
    cap = net.n_nodes * net.n_arcs + net.n_nodes
    while True:
        if state.t >= max(cap, 1):
            raise ConvergenceError("price extension did not settle within the sweep cap",
                                   {"sweeps": state.t, "cap": cap})
        state.p, updates = _sweep(net, fp.G, state.p, thr)
        state.t += 1
        if record:
            state.history.append(list(state.p))
        for z, k in updates:
            state.updating_digraph[z] = k
        if not updates:
            break
    unpriced = [net.nodes[z] for z in range(net.n_nodes) if state.p[z] == -math.inf]
    if unpriced:
        raise DeadNodeError("some nodes reach no target and stay unpriced",
                            witness={"dead_nodes": unpriced})
    return state


def _price_dead_nodes(net: Network, G: Sequence[AnyConnection], p: list[float],
                      dead: Sequence[int], tol: float) -> list[float]:
    """Finite prices for pruned nodes: start far below the live prices and max-update.

    Dead nodes only reach other dead nodes, so anchoring them low keeps
    arcs from live nodes into them rent-free once the anchor is low enough.
    """
    if not dead:
        return p
    dead_set = set(dead)
    live = [v for z, v in enumerate(p) if z not in dead_set]
    top = max((abs(v) for v in live), default=0.0)
    gap = 1.0
    for _ in range(80):
        anchor = (min(live) if live else 0.0) - gap - top
        out = list(p)
        for z in dead:
            out[z] = anchor
        for _ in range(net.n_nodes * max(net.n_arcs, 1) + net.n_nodes):
            changed = False
            for z in dead:
                for k in net.out_arcs(z):
                    cand = G[k](out[net.arcs[k][1]])
                    if cand > out[z] + 0.1 * tol:
                        out[z] = cand
                        changed = True
            if not changed:
                break
        else:
            raise ConvergenceError("prices on pruned nodes did not settle")
        rent = max((G[k](out[b]) - out[a] for k, (a, b) in enumerate(net.arcs)
                    if a not in dead_set and b in dead_set), default=-math.inf)
        if rent <= 0.1 * tol:
            return out
        gap *= 2.0
    raise ConvergenceError("no price level for pruned nodes clears the incoming arcs")


# ---------------------------------------------------------------------------
# flows

def _rents(fp: FlowProblem, p: Sequence[float]) -> list[float]:
    """p_x - G_xy(p_y) per arc (nonnegative at an equilibrium)."""
    return [p[a] - g(p[b]) for g, (a, b) in zip(fp.G, fp.net.arcs)]


def reconstruct_flow(fp: FlowProblem, p: Sequence[float], tol: float = DEFAULT_TOL
                     ) -> tuple[list[float], float]:
    """A flow for q supported on zero-rent arcs. Returns (mu, zero-rent threshold used)."""
    net = fp.net
    if all(v == 0 for v in fp.q):
        return [0.0] * net.n_arcs, 0.0
    gaps = _rents(fp, p)
    scale = max(1.0, max(abs(v) for v in p))
    mass = max(1.0, sum(v for v in fp.q if v > 0))
    limit = max(tol / mass, ZERO_RENT_START * scale)
    thr = ZERO_RENT_START * scale
    while True:
        keep = [k for k, gap in enumerate(gaps) if abs(gap) <= thr]
        sub, _, arc_map = net.subnetwork(range(net.n_nodes), keep)
        report = check_feasibility(sub, fp.q)
        if report.feasible:
            mu = [0.0] * net.n_arcs
            for k_sub, k in enumerate(arc_map):
                mu[k] = float(report.witness_flow[k_sub])
            return mu, thr
        if thr >= limit:
            raise ConvergenceError("tolerance too tight or bipartite solution inconsistent: "
                                   "q cannot be carried on zero-rent arcs",
                                   {"threshold": thr,
                                    "violating_set": [net.nodes[z]
                                                      for z in report.violating_set or []]})
        thr = min(thr * 10.0, limit)


def verify_equilibrium(fp: FlowProblem, out: EquilibriumOutcome,
                       tol: float = DEFAULT_TOL) -> Certificate:
    """Check the three equilibrium conditions on an outcome; independent of the solver."""
    net = fp.net
    if len(out.mu) != net.n_arcs or len(out.p) != net.n_nodes or len(out.q) != net.n_nodes:
        raise ValidationError("outcome dimensions do not match the problem", field="outcome")
    bad_number = any(not math.isfinite(v) for v in list(out.mu) + list(out.p) + list(out.q))
    balance = incidence_apply(net, [float(v) for v in out.mu])
    bal = max((abs(b - v) for b, v in zip(balance, out.q)), default=0.0)
    bal = max(bal, max((abs(a - b) for a, b in zip(out.q, fp.q)), default=0.0))
    gaps = _rents(fp, out.p) if not bad_number else [math.nan] * net.n_arcs
    rent = max((max(0.0, -g) for g in gaps), default=0.0)
    cs = sum(m * abs(g) for m, g in zip(out.mu, gaps))
    min_flow = min(out.mu, default=0.0)
    ok = (not bad_number and bal <= tol and rent <= tol and cs <= tol and min_flow >= -tol)
    return Certificate(float(bal), float(rent), float(cs), tol, bool(ok), float(min_flow))


def scale_outcome(out: EquilibriumOutcome, lam: float) -> EquilibriumOutcome:
    """(lam q, lam mu, p): still an equilibrium for the scaled exit flow."""
    if not lam >= 0:
        raise ValidationError("scale factor must be nonnegative", field="lambda")
    return EquilibriumOutcome([lam * v for v in out.q], [lam * v for v in out.mu], list(out.p),
                              None, dict(out.meta, scaled_by=lam))


# ---------------------------------------------------------------------------
# assumption checks

@dataclass
class Diagnostic:
    assumption: str  # "2", "3" or "1"
    ok: bool
    error: AssumptionError | None = None

    def as_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"assumption": self.assumption, "ok": self.ok}
        if self.error is not None:
            out.update(self.error.to_dict())
        return out


def _diag_assumption2(fp: FlowProblem) -> Diagnostic:
    ok, dead = check_assumption2(fp.net, fp.q)
    if ok:
        return Diagnostic("2", True)
    names = [fp.net.nodes[z] for z in dead]
    try:
        prune_dead_nodes(fp.net, fp.q)
    except InfeasibleError as err:
        return Diagnostic("2", False, err)
    return Diagnostic("2", False, DeadNodeError("nodes with no path to any target",
                                                witness={"dead_nodes": names}))


def _diag_assumption3(fp: FlowProblem) -> Diagnostic:
    report = check_no_profitable_loops(fp.net, fp.G)
    if report.ok:
        return Diagnostic("3", True)
    p, gain = report.profit_at
    loop = [fp.net.nodes[v] for v in report.violating_loop]
    return Diagnostic("3", False, ProfitableLoopError(
        "profitable loop: " + " -> ".join(loop),
        witness={"loop": loop, "price": p, "gain": gain}))


def _diag_assumption1(fp: FlowProblem) -> Diagnostic:
    report = check_feasibility(fp.net, fp.q)
    if report.feasible:
        return Diagnostic("1", True)
    return Diagnostic("1", False, InfeasibleError(
        "exit flow cannot be transported: a retaining set has negative mass",
        witness={"violating_set": [fp.net.nodes[z] for z in report.violating_set],
                 "deficit": report.deficit}))


def diagnose(fp: FlowProblem) -> list[Diagnostic]:
    """All three assumption checks, in the order 2, 3, 1."""
    return [_diag_assumption2(fp), _diag_assumption3(fp), _diag_assumption1(fp)]


# ---------------------------------------------------------------------------
# top level

def solve(fp: FlowProblem, tol: float = DEFAULT_TOL, ground: str | None = None,
          all_diagnostics: bool = False, cross_check: bool = True) -> EquilibriumOutcome:
    """Equilibrium outcome for ``fp``; raises a typed AssumptionError when one fails.

    Dead nodes (q = 0, no path to a target) are pruned before solving and
    priced afterwards. With ``all_diagnostics`` every check runs before the
    first failure is raised, and the full list rides along in its witness.
    """
    net = fp.net
    if all_diagnostics:
        diags = diagnose(fp)
        failed = [d for d in diags if not d.ok and not _prunable(d)]
        if failed:
            err = failed[0].error
            err.witness["diagnostics"] = [d.as_dict() for d in diags]
            raise err

    # assumption 2, then 3, then 1
    sub, q_sub, kept, kept_arcs = prune_dead_nodes(net, fp.q)
    dead = sorted(set(range(net.n_nodes)) - set(kept))
    d3 = _diag_assumption3(fp)
    if not d3.ok:
        raise d3.error
    inner = FlowProblem(sub, tuple(fp.G[k] for k in kept_arcs), tuple(q_sub))
    d1 = _diag_assumption1(inner)
    if not d1.ok:
        raise d1.error

    red = reduce_to_bipartite(inner)
    meta: dict[str, Any] = {"pruned": [net.nodes[z] for z in dead],
                            "sources": len(red.x_nodes), "targets": len(red.y_nodes)}
    p_sub: list[float]
    if not red.x_nodes:
        # nothing ships: any price vector with no positive rent will do
        p_sub = [0.0] * inner.net.n_nodes
        meta.update(ground=None, penalty=None, blocks=0, iterations=0, sweeps=0)
    else:
        if cross_check:
            hall = hall_check(red.bp)
            if not hall.ok:
                raise ConvergenceError("Hall's condition fails on a transportable instance",
                                       {"violating_K": hall.violating_K})
        be = solve_bipartite(red.bp, ground, tol)
        state = extend_prices(inner, red, be, tol, record=True)
        p_sub = state.p
        meta.update(ground=be.ground, penalty=be.meta.get("penalty"),
                    doublings=be.meta.get("doublings", 0),
                    penalty_leak=be.meta.get("penalty_leak", 0.0),
                    reduction=red, bipartite=be, extension=state,
                    blocks=be.meta.get("blocks", 1), iterations=be.meta.get("iterations", 0),
                    sweeps=state.t, bipartite_residuals=list(equilibrium_residuals(red.bp, be)))
        if "monotone_response" in be.meta:
            meta["monotone_response"] = be.meta["monotone_response"]

    p = [0.0] * net.n_nodes
    for i, z in enumerate(kept):
        p[z] = p_sub[i]
    p = _price_dead_nodes(net, fp.G, p, dead, tol)
    mu, thr = reconstruct_flow(fp, p, tol)
    meta["zero_rent_threshold"] = thr
    out = EquilibriumOutcome(list(fp.q), mu, p, None, meta)
    out.certificate = verify_equilibrium(fp, out, tol)
    if not out.certificate.passed:
        raise ConvergenceError("solution failed its own certificate",
                               {"certificate": out.certificate.as_dict()})
    return out


def _prunable(d: Diagnostic) -> bool:
    return d.assumption == "2" and isinstance(d.error, DeadNodeError)

