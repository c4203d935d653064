"""Transportability of an exit-flow vector and the related structural checks.

A balanced exit flow ``q`` can be carried by nonnegative arc flows exactly
when every retaining node set (no arcs leaving it) has ``q(B) >= 0``. The
constructive check is a max-flow from a super source feeding the negative
nodes to a super sink draining the positive ones; the residual cut then
hands back a retaining set with negative mass when transport is impossible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import GuardError, InfeasibleError, ValidationError
from .maxflow import MaxFlow
from .network import EPS_MASS, Network, is_retaining, reachable_from

ORACLE_MAX_NODES = 20
HALL_BRUTE_FORCE_MAX = 12


@dataclass
class FeasibilityReport:
    feasible: bool
    witness_flow: list[float] | None = None
    violating_set: list[int] | None = None
    deficit: float = 0.0


@dataclass
class OracleResult:
    feasible: bool
    min_value: float
    argmin_set: list[int]


@dataclass
class HallReport:
    ok: bool
    violating_K: list[int] | None = None
    shortfall: float = 0.0


def _is_integral(values: Sequence[float]) -> bool:
    return all(float(v).is_integer() for v in values)


def _scalars(values: Sequence[float]) -> list:
    """Ints when every entry is integral (exact max-flow), floats otherwise."""
    if _is_integral(values):
        return [int(v) for v in values]
    return [float(v) for v in values]


def check_balance(q: Sequence[float], tol: float = EPS_MASS) -> None:
    total = sum(q)
    if abs(total) > tol * max(1.0, sum(abs(v) for v in q)):
        raise ValidationError(f"exit flows sum to {total!r}, expected 0", field="q")


def _mass_tol(values: Sequence[float]) -> float:
    return EPS_MASS * max(1.0, sum(abs(v) for v in values))


def check_feasibility(net: Network, q: Sequence[float]) -> FeasibilityReport:
    """Decide whether some nonnegative arc flow realizes ``q``."""
    if len(q) != net.n_nodes:
        raise ValidationError(f"q has {len(q)} entries, network has {net.n_nodes} nodes",
                              field="q")
    check_balance(q)
    qs = _scalars(q)
    exact = isinstance(qs[0], int) if qs else True
    n = net.n_nodes
    s, t = n, n + 1
    mf = MaxFlow(n + 2, eps=0.0 if exact else 1e-15)
    for z, v in enumerate(qs):
        if v < 0:
            mf.add_edge(s, z, -v)
        elif v > 0:
            mf.add_edge(z, t, v)
    arc_edges = [mf.add_edge(a, b, None) for a, b in net.arcs]
    value = mf.run(s, t)
    demand = sum(v for v in qs if v > 0)
    slack = 0 if exact else _mass_tol(qs)
    if value >= demand - slack:
        return FeasibilityReport(True, witness_flow=[mf.flow_on(e) for e in arc_edges])
    side = sorted(mf.source_side(s) - {s})
    return FeasibilityReport(False, violating_set=side, deficit=sum(qs[z] for z in side))


def retaining_oracle(net: Network, q: Sequence[float]) -> OracleResult:
    """Enumerate every node subset; minimum of q(B) over retaining B."""
    n = net.n_nodes
    if n > ORACLE_MAX_NODES:
        raise GuardError(f"retaining_oracle enumerates 2^n subsets; n={n} exceeds "
                         f"{ORACLE_MAX_NODES}")
    masks = np.arange(1 << n, dtype=np.int64)
    leaks = np.zeros(1 << n, dtype=bool)
    for a, b in net.arcs:
        leaks |= ((masks >> a) & 1).astype(bool) & ~((masks >> b) & 1).astype(bool)
    qs = _scalars(q)
    dtype = np.int64 if qs and isinstance(qs[0], int) else np.float64
    totals = np.zeros(1 << n, dtype=dtype)
    for z, v in enumerate(qs):
        totals += ((masks >> z) & 1).astype(dtype) * v
    totals = np.where(leaks, np.iinfo(np.int64).max if dtype == np.int64 else np.inf, totals)
    best = int(np.argmin(totals))
    value = totals[best]
    value = int(value) if dtype == np.int64 else float(value)
    tol = 0 if dtype == np.int64 else _mass_tol(qs)
    members = [z for z in range(n) if best >> z & 1]
    return OracleResult(value >= -tol, value, members)


@dataclass
class HoffmanResult:
    feasible: bool
    witness_flow: list[float] | None = None
    violating_set: list[int] | None = None
    excess: float = 0.0


def hoffman_feasible(net: Network, q: Sequence[float], lower: Sequence[float] | None = None,
                     upper: Sequence[float | None] | None = None) -> HoffmanResult:
    """Existence of a flow with given exit flows and per-arc bounds lower <= mu <= upper.

    ``upper`` entries of None (or inf) are unbounded. On failure the returned
    set B violates q(B) <= sum(upper over arcs into B) - sum(lower over arcs out of B).
    """
    m = net.n_arcs
    lower = [0] * m if lower is None else list(lower)
    upper = [None] * m if upper is None else [None if u is None or u == float("inf") else u
                                               for u in upper]
    if len(lower) != m or len(upper) != m:
        raise ValidationError("bounds must have one entry per arc", field="bounds")
    for k, (lo, hi) in enumerate(zip(lower, upper)):
        if lo < 0:
            raise ValidationError("lower bounds must be nonnegative", field=f"lower[{k}]")
        if hi is not None and hi < lo:
            raise ValidationError("lower bound exceeds upper bound", field=f"upper[{k}]")
    check_balance(q)
    nums = list(q) + list(lower) + [u for u in upper if u is not None]
    exact = _is_integral(nums)
    conv = int if exact else float
    qs = [conv(v) for v in q]
    lo = [conv(v) for v in lower]
    hi = [None if u is None else conv(u) for u in upper]
    # shift out the lower bounds: mu = lower + extra, extra in [0, upper - lower]
    shifted = list(qs)
    for (a, b), l in zip(net.arcs, lo):
        shifted[a] += l
        shifted[b] -= l
    n = net.n_nodes
    s, t = n, n + 1
    mf = MaxFlow(n + 2, eps=0.0 if exact else 1e-15)
    for z, v in enumerate(shifted):
        if v < 0:
            mf.add_edge(s, z, -v)
        elif v > 0:
            mf.add_edge(z, t, v)
    edges = [mf.add_edge(a, b, None if u is None else u - l)
             for (a, b), l, u in zip(net.arcs, lo, hi)]
    value = mf.run(s, t)
    demand = sum(v for v in shifted if v > 0)
    slack = 0 if exact else _mass_tol(shifted)
    if value >= demand - slack:
        return HoffmanResult(True, witness_flow=[l + mf.flow_on(e) for l, e in zip(lo, edges)])
    side = mf.source_side(s) - {s}
    members = sorted(set(range(n)) - side)
    inside = set(members)
    cap_in = 0
    for k, (a, b) in enumerate(net.arcs):
        if b in inside and a not in inside:
            cap_in = float("inf") if hi[k] is None or cap_in == float("inf") else cap_in + hi[k]
        elif a in inside and b not in inside:
            cap_in -= lo[k]
    return HoffmanResult(False, violating_set=members,
                         excess=sum(qs[z] for z in members) - cap_in)


def check_assumption2(net: Network, q: Sequence[float]) -> tuple[bool, list[int]]:
    """Nodes with q <= 0 that cannot reach any node with q > 0."""
    targets = [z for z, v in enumerate(q) if v > 0]
    live = reachable_from(net, targets, reverse=True)
    dead = [z for z in range(net.n_nodes) if z not in live and q[z] <= 0]
    return not dead, dead


def prune_dead_nodes(net: Network, q: Sequence[float]
                     ) -> tuple[Network, list[float], list[int], list[int]]:
    """Drop dead nodes (all must have q = 0).

    Returns (network, q, kept node indices, kept arc indices), indices
    referring to the input network.
    """
    ok, dead = check_assumption2(net, q)
    if ok:
        return net, list(q), list(range(net.n_nodes)), list(range(net.n_arcs))
    tol = _mass_tol(q)
    for z in dead:
        if q[z] < -tol:
            basin = sorted(reachable_from(net, [z]))
            assert is_retaining(net, basin)
            raise InfeasibleError(
                f"node {net.nodes[z]!r} must ship mass but reaches no target",
                witness={"dead_node": net.nodes[z],
                         "violating_set": [net.nodes[i] for i in basin],
                         "deficit": sum(q[i] for i in basin)})
    gone = set(dead)
    keep = [z for z in range(net.n_nodes) if z not in gone]
    sub, _, arc_map = net.subnetwork(keep)
    return sub, [q[z] for z in keep], keep, arc_map


def hall_check(bp) -> HallReport:
    """Hall's condition: n(K) >= m(targets whose every supplier lies in K), all K."""
    n, m = list(bp.n), list(bp.m)
    if any(v < 0 for v in n) or any(v < 0 for v in m):
        raise ValidationError("margins must be nonnegative", field="margins")
    if abs(sum(n) - sum(m)) > _mass_tol(n + m):
        raise ValidationError(f"margins differ: {sum(n)!r} vs {sum(m)!r}", field="margins")
    nx_, ny = len(n), len(m)
    exact = _is_integral(n + m)
    tol = 0 if exact else _mass_tol(n + m)
    preds = [0] * ny
    for i, j in bp.arcs:
        preds[j] |= 1 << i
    if nx_ <= HALL_BRUTE_FORCE_MAX:
        masks = np.arange(1 << nx_, dtype=np.int64)
        dtype = np.int64 if exact else np.float64
        supply = np.zeros(1 << nx_, dtype=dtype)
        for i, v in enumerate(n):
            supply += ((masks >> i) & 1).astype(dtype) * (int(v) if exact else v)
        captive = np.zeros(1 << nx_, dtype=dtype)
        for j, v in enumerate(m):
            captive += ((masks & preds[j]) == preds[j]).astype(dtype) * (int(v) if exact else v)
        gap = captive - supply
        worst = int(np.argmax(gap))
        if gap[worst] > tol:
            return HallReport(False, [i for i in range(nx_) if worst >> i & 1],
                              float(gap[worst]))
        return HallReport(True)
    # max-flow formulation for larger instances
    conv = int if exact else float
    s, t = nx_ + ny, nx_ + ny + 1
    mf = MaxFlow(nx_ + ny + 2, eps=0.0 if exact else 1e-15)
    for i, v in enumerate(n):
        mf.add_edge(s, i, conv(v))
    for j, v in enumerate(m):
        mf.add_edge(nx_ + j, t, conv(v))
    for i, j in bp.arcs:
        mf.add_edge(i, nx_ + j, None)
    value = mf.run(s, t)
    total = sum(conv(v) for v in m)
    if value >= total - tol:
        return HallReport(True)
    side = mf.source_side(s)
    K = [i for i in range(nx_) if i not in side]
    captive = sum(m[j] for j in range(ny) if preds[j] & ~sum(1 << i for i in K) == 0)
    return HallReport(False, K, float(captive - sum(n[i] for i in K)))
