"""Shared instance generators and independent oracles for the test suite."""

from __future__ import annotations

import itertools
import json
import random
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import linprog

from eqflow.assembly import FlowProblem
from eqflow.connections import Affine, PiecewiseLinear
from eqflow.network import Network

FIXTURES = Path(__file__).parent / "fixtures"

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (ok, detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'} - {detail}")


# ---------------------------------------------------------------------------
# generators

def random_network(rng: random.Random, n: int, density: float, acyclic: bool = False) -> Network:
    arcs = []
    for a in range(n):
        for b in range(n):
            if a == b or (acyclic and a >= b):
                continue
            if rng.random() < density:
                arcs.append((a, b))
    return Network(tuple(f"v{i}" for i in range(n)), tuple(arcs))


def random_integer_q(rng: random.Random, n: int, bound: int = 5) -> list[int]:
    while True:
        q = [rng.randint(-bound, bound) for _ in range(n - 1)]
        last = -sum(q)
        if -bound <= last <= bound:
            return q + [last]


def random_pwl(rng: random.Random) -> PiecewiseLinear:
    k = rng.randint(1, 3)
    xs = sorted(rng.sample(range(-6, 7), k))
    slopes = [rng.choice([0.5, 1.0, 2.0]) for _ in range(k + 1)]
    ys = [float(rng.randint(-5, 3))]
    for i in range(1, k):
        ys.append(ys[-1] + slopes[i] * (xs[i] - xs[i - 1]))
    return PiecewiseLinear(tuple(zip(map(float, xs), ys)), slopes[0], slopes[-1])


def tu_instance(rng: random.Random, n_min: int = 2, n_max: int = 8) -> FlowProblem:
    """Random TU instance satisfying all three assumptions by construction.

    Costs are positive, so every loop loses money. q is the divergence of a
    random nonnegative integer flow, so it is transportable. Every node
    with q <= 0 gets an arc towards some target if it cannot reach one.
    """
    while True:
        n = rng.randint(n_min, n_max)
        net = random_network(rng, n, rng.choice([0.3, 0.5, 0.8]))
        if net.n_arcs == 0:
            continue
        mu = [rng.choice([0, 0, 1, 2, 3]) for _ in range(net.n_arcs)]
        q = [0] * n
        for (a, b), m in zip(net.arcs, mu):
            q[a] -= m
            q[b] += m
        if not any(q):
            continue
        arcs = list(net.arcs)
        targets = [z for z in range(n) if q[z] > 0]
        reach = _reach_targets(n, arcs, targets)
        for z in range(n):
            if q[z] <= 0 and z not in reach:
                t = rng.choice(targets)
                if (z, t) not in arcs:
                    arcs.append((z, t))
                reach = _reach_targets(n, arcs, targets)
        net = Network(net.nodes, tuple(arcs))
        G = [Affine(1.0, -float(rng.randint(1, 9))) for _ in arcs]
        return FlowProblem(net, G, q)


def _reach_targets(n: int, arcs, targets) -> set[int]:
    live = set(targets)
    changed = True
    while changed:
        changed = False
        for a, b in arcs:
            if b in live and a not in live:
                live.add(a)
                changed = True
    return live


# ---------------------------------------------------------------------------
# oracles

def min_cost_flow_lp(fp: FlowProblem) -> tuple[float, np.ndarray]:
    """min sum c mu subject to inflow - outflow = q, mu >= 0 (HiGHS LP)."""
    net = fp.net
    cost = [-g.intercept for g in fp.G]
    A = np.zeros((net.n_nodes, net.n_arcs))
    for k, (a, b) in enumerate(net.arcs):
        A[a, k] -= 1.0
        A[b, k] += 1.0
    res = linprog(cost, A_eq=A, b_eq=list(fp.q), bounds=(0, None), method="highs")
    assert res.status == 0, res.message
    return float(res.fun), res.x


def simple_cycles_bruteforce(net: Network) -> list[list[int]]:
    """Every simple directed cycle, each listed once starting at its smallest node."""
    out = []
    n = net.n_nodes
    succ = [[b for (a, b) in net.arcs if a == u] for u in range(n)]

    def extend(path: list[int], on: set[int]) -> None:
        u = path[-1]
        for w in succ[u]:
            if w == path[0]:
                out.append(path + [w])
            elif w > path[0] and w not in on:
                on.add(w)
                extend(path + [w], on)
                on.remove(w)

    for s in range(n):
        extend([s], {s})
    return out


def affine_loop_profitable(net: Network, G, cycle: list[int]) -> bool:
    """Symbolic test of H(p) < p for all p, with H composed exactly in rationals."""
    slope, icpt = Fraction(1), Fraction(0)
    for a, b in zip(cycle[:-1], cycle[1:]):
        g = G[net.arc_id(a, b)]
        # H <- H o g  (g applied first along the loop, H composed outward)
        s, c = Fraction(g.slope), Fraction(g.intercept)
        slope, icpt = slope * s, slope * c + icpt
    if slope != 1:
        return True  # a fixed point exists, and on one side H(p) > p
    return icpt >= 0


def load_fixture(path: Path) -> dict:
    return json.loads(path.read_text())


@pytest.fixture(scope="session")
def itu_fixtures() -> list[dict]:
    return [load_fixture(p) for p in sorted((FIXTURES / "itu").glob("itu_*.json"))]
