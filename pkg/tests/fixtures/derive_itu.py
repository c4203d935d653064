"""Derive the piecewise-linear desk fixtures by brute-force price search.

Standalone on purpose: only numpy, no package imports, so the expected
values are independent of the solver.

For a candidate price vector P (ground source pinned at 0, interior nodes
filled in as the least prices with no positive rent) the merit is

    M(P) = max(max positive rent, min over feasible supports S of max |gap| on S)

which vanishes exactly at an equilibrium. A coarse grid over the free
source/target prices is refined around its minimizer down to a step of
5e-5.

As a cross-check, each minimal feasible support's equalities are solved
exactly from the ground. An instance is kept only when this yields exactly
one equilibrium, the grid search lands within 1e-3 of it, the best support
is a tree carrying q with flows bounded away from zero, and every other arc
is strictly slack.

Usage: python derive_itu.py [count]   (writes tests/fixtures/itu/*.json)
"""

from __future__ import annotations

import itertools
import json
import sys
from pathlib import Path

import numpy as np

OUT = Path(__file__).parent / "itu"
BOX = 16.0
STEPS = [0.5, 0.05, 0.005, 5e-4, 5e-5]
SLOPES = [0.5, 0.75, 1.0, 1.5, 2.0]

# name -> (nodes, arcs, sources, targets, loop arcs)
TEMPLATES = {
    "fork": (["s", "m", "t1", "t2"],
             [("s", "m"), ("m", "t1"), ("m", "t2"), ("s", "t2")], ["s"], ["t1", "t2"], []),
    "merge": (["s1", "s2", "m", "t"],
              [("s1", "m"), ("s2", "m"), ("m", "t"), ("s2", "t"), ("s1", "t")],
              ["s1", "s2"], ["t"], []),
    "diamond": (["s", "a", "b", "t1", "t2"],
                [("s", "a"), ("s", "b"), ("a", "t1"), ("b", "t1"), ("a", "t2"), ("b", "t2")],
                ["s"], ["t1", "t2"], []),
    "cross": (["s1", "s2", "m", "t1", "t2"],
              [("s1", "t1"), ("s1", "m"), ("s2", "m"), ("s2", "t2"), ("m", "t1"), ("m", "t2")],
              ["s1", "s2"], ["t1", "t2"], []),
    "bypass": (["s", "a", "b", "c", "t1", "t2"],
               [("s", "a"), ("a", "b"), ("b", "t1"), ("s", "c"), ("c", "t2"), ("a", "t2"),
                ("b", "t2")], ["s"], ["t1", "t2"], []),
    "three": (["s", "m", "t1", "t2", "t3"],
              [("s", "m"), ("m", "t1"), ("m", "t2"), ("m", "t3"), ("s", "t3"), ("s", "t1")],
              ["s"], ["t1", "t2", "t3"], []),
    "swirl": (["s", "a", "b", "t1", "t2"],
              [("s", "a"), ("s", "b"), ("a", "b"), ("b", "a"), ("a", "t1"), ("b", "t2")],
              ["s"], ["t1", "t2"], [("a", "b"), ("b", "a")]),
}


def random_pwl(rng: np.random.Generator, lossy: bool = False) -> dict:
    """Increasing piecewise-linear map; ``lossy`` keeps slopes <= 1 and G(p) <= p - 0.5."""
    k = int(rng.integers(1, 4))
    xs = np.sort(rng.choice(np.arange(-6, 7), size=k, replace=False)).astype(float)
    pool = [s for s in SLOPES if s <= 1.0] if lossy else SLOPES
    slopes = [float(rng.choice(pool)) for _ in range(k + 1)]
    if lossy:
        slopes[0] = 1.0
    y0 = float(xs[0] - rng.integers(1, 5)) if lossy else float(rng.integers(-6, 4))
    ys = [y0]
    for i in range(1, k):
        ys.append(ys[-1] + slopes[i] * (xs[i] - xs[i - 1]))
    return {"kind": "pwl", "points": [[float(x), float(y)] for x, y in zip(xs, ys)],
            "left_slope": slopes[0], "right_slope": slopes[-1]}


def invert(g: dict, y: float) -> float:
    """Exact inverse of an increasing piecewise-linear or affine map."""
    if g["kind"] == "affine":
        return (y - g["intercept"]) / g["slope"]
    pts = g["points"]
    if y <= pts[0][1]:
        return pts[0][0] + (y - pts[0][1]) / g["left_slope"]
    if y >= pts[-1][1]:
        return pts[-1][0] + (y - pts[-1][1]) / g["right_slope"]
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        if y0 <= y <= y1:
            return x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    raise AssertionError("unreachable")


def evaluate(g: dict, x: np.ndarray) -> np.ndarray:
    if g["kind"] == "affine":
        return g["slope"] * x + g["intercept"]
    pts = np.array(g["points"], dtype=float)
    xs, ys = pts[:, 0], pts[:, 1]
    with np.errstate(invalid="ignore"):
        y = np.interp(x, xs, ys)
        y = np.where(x < xs[0], ys[0] + g["left_slope"] * (x - xs[0]), y)
        y = np.where(x > xs[-1], ys[-1] + g["right_slope"] * (x - xs[-1]), y)
    return y


class Instance:
    def __init__(self, template: str, seed: int):
        rng = np.random.default_rng(seed)
        nodes, arcs, sources, targets, loop = TEMPLATES[template]
        self.template, self.seed = template, seed
        self.nodes = list(nodes)
        self.idx = {z: i for i, z in enumerate(nodes)}
        self.arcs = [(self.idx[a], self.idx[b]) for a, b in arcs]
        self.g = [random_pwl(rng, lossy=(a, b) in loop) for a, b in arcs]
        q = np.zeros(len(nodes))
        for t in targets:
            q[self.idx[t]] = int(rng.integers(1, 4))
        total = int(q.sum())
        split = np.sort(rng.choice(np.arange(1, total), size=len(sources) - 1, replace=False)) \
            if len(sources) > 1 else np.array([], dtype=int)
        parts = np.diff(np.concatenate([[0], split, [total]]))
        if len(sources) > 1 and np.min(parts) <= 0:
            raise ValueError("degenerate split")
        for s, v in zip(sources, parts):
            q[self.idx[s]] = -float(v)
        self.q = q
        self.sources = [self.idx[s] for s in sources]
        self.targets = [self.idx[t] for t in targets]
        self.ground = self.sources[0]
        self.free = [z for z in self.sources[1:] + self.targets]
        self.interior = [z for z in range(len(nodes)) if z not in self.sources + self.targets]
        self.supports = self._minimal_supports()

    # -- supports --------------------------------------------------------
    def _carries(self, arcs: tuple[int, ...]) -> bool:
        """q is transportable on these arcs iff every retaining node set has q(B) >= 0."""
        n = len(self.nodes)
        for mask in range(1, 1 << n):
            if any(mask >> self.arcs[k][0] & 1 and not mask >> self.arcs[k][1] & 1 for k in arcs):
                continue
            if sum(self.q[z] for z in range(n) if mask >> z & 1) < -1e-12:
                return False
        return True

    def _minimal_supports(self) -> list[tuple[int, ...]]:
        m = len(self.arcs)
        feasible = []
        for size in range(1, m + 1):
            for combo in itertools.combinations(range(m), size):
                if any(set(f) <= set(combo) for f in feasible):
                    continue
                if self._carries(combo):
                    feasible.append(combo)
        return feasible

    # -- merit -------------------------------------------------------------
    def prices(self, free_vals: np.ndarray) -> np.ndarray:
        k = free_vals.shape[0]
        P = np.full((k, len(self.nodes)), -np.inf)
        P[:, self.ground] = 0.0
        for c, z in enumerate(self.free):
            P[:, z] = free_vals[:, c]
        for _ in range(len(self.nodes) + 1):
            new = P.copy()
            for z in self.interior:
                best = np.full(k, -np.inf)
                for a_k, (a, b) in enumerate(self.arcs):
                    if a == z:
                        best = np.maximum(best, evaluate(self.g[a_k], P[:, b]))
                new[:, z] = best
            if np.array_equal(new, P):
                break
            P = new
        return P

    def gaps(self, P: np.ndarray) -> np.ndarray:
        return np.stack([P[:, a] - evaluate(g, P[:, b]) for (a, b), g in zip(self.arcs, self.g)],
                        axis=1)

    def merit(self, free_vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        P = self.prices(free_vals)
        gap = self.gaps(P)
        rent = np.maximum(0.0, -gap.min(axis=1))
        absgap = np.abs(gap)
        delta = np.min(np.stack([absgap[:, list(s)].max(axis=1) for s in self.supports], axis=1),
                       axis=1)
        M = np.maximum(rent, delta)
        return np.where(np.isfinite(M), M, np.inf), P

    # -- exact cross-check ----------------------------------------------------
    def support_prices(self, support: tuple[int, ...]) -> np.ndarray | None:
        """Prices forced by equality on every support arc, or None if inconsistent."""
        p: dict[int, float] = {self.ground: 0.0}
        pending = list(support)
        while pending:
            progressed = False
            for k in list(pending):
                a, b = self.arcs[k]
                g = self.g[k]
                if a in p and b in p:
                    if abs(p[a] - evaluate(g, np.array([p[b]]))[0]) > 1e-9:
                        return None
                elif a in p:
                    p[b] = invert(g, p[a])
                elif b in p:
                    p[a] = float(evaluate(g, np.array([p[b]]))[0])
                else:
                    continue
                pending.remove(k)
                progressed = True
            if not progressed:
                return None  # support does not reach the ground
        if any(z not in p for z in self.free):
            return None
        return np.array([[p[z] for z in self.free]])

    def exact_equilibria(self) -> list[np.ndarray]:
        """Every equilibrium's tight arcs contain a minimal feasible support, so
        solving each support's equalities finds all of them."""
        found: list[np.ndarray] = []
        for support in self.supports:
            cand = self.support_prices(support)
            if cand is None:
                continue
            M, _ = self.merit(cand)
            if M[0] <= 1e-9 and not any(np.max(np.abs(f - cand[0])) < 1e-7 for f in found):
                found.append(cand[0])
        return found

    # -- search ------------------------------------------------------------
    def search(self) -> dict | None:
        exact = self.exact_equilibria()
        if len(exact) != 1:
            return None
        d = len(self.free)
        axis = np.arange(-BOX, BOX + 1e-9, STEPS[0])
        grid = np.array(list(itertools.product(axis, repeat=d)))
        M, _ = self.merit(grid)
        center = grid[int(np.argmin(M))]
        for h in STEPS[1:]:
            offs = np.arange(-12, 13) * h
            local = center + np.array(list(itertools.product(offs, repeat=d)))
            Ml, _ = self.merit(local)
            center = local[int(np.argmin(Ml))]
        Mbest, P = self.merit(center[None, :])
        if Mbest[0] > 2e-3:
            return None
        if np.max(np.abs(center - exact[0])) > 1e-3:
            return None  # grid search settled elsewhere; keep only agreeing instances
        gap = self.gaps(P)[0]
        scores = [max(abs(gap[k]) for k in s) for s in self.supports]
        order = np.argsort(scores)
        support = self.supports[order[0]]
        if len(order) > 1 and scores[order[1]] < 0.02:
            return None  # another support is nearly tight: flows not pinned down
        slack = [k for k in range(len(self.arcs)) if k not in support]
        if any(gap[k] < 0.02 for k in slack):
            return None
        touched = {z for k in support for z in self.arcs[k]}
        if len(support) != len(touched) - 1:
            return None  # not a tree
        A = np.zeros((len(self.nodes), len(support)))
        for c, k in enumerate(support):
            a, b = self.arcs[k]
            A[a, c] -= 1.0
            A[b, c] += 1.0
        mu_s, *_ = np.linalg.lstsq(A, self.q, rcond=None)
        if np.max(np.abs(A @ mu_s - self.q)) > 1e-12 or np.min(mu_s) < 0.05:
            return None
        mu = np.zeros(len(self.arcs))
        mu[list(support)] = mu_s
        return {"p": P[0], "mu": mu, "merit": float(Mbest[0]), "support": support,
                "exact_gap": float(np.max(np.abs(center - exact[0])))}

    def document(self, found: dict, name: str) -> dict:
        nodes = self.nodes
        return {
            "name": name,
            "problem": {
                "nodes": nodes,
                "arcs": [{"from": nodes[a], "to": nodes[b], "g": g}
                         for (a, b), g in zip(self.arcs, self.g)],
                "q": {z: float(v) for z, v in zip(nodes, self.q)},
                "meta": {"name": name, "description": f"{self.template} template, seed {self.seed}"},
            },
            "ground": nodes[self.ground],
            "expected": {
                "p": {z: round(float(v), 6) for z, v in zip(nodes, found["p"])},
                "mu": [{"from": nodes[a], "to": nodes[b], "flow": round(float(v), 12)}
                       for (a, b), v in zip(self.arcs, found["mu"])],
                "support": [[nodes[self.arcs[k][0]], nodes[self.arcs[k][1]]]
                            for k in found["support"]],
            },
            "derivation": {"method": "coarse-to-fine grid search", "final_step": STEPS[-1],
                           "merit": found["merit"],
                           "distance_to_support_solution": found["exact_gap"]},
        }


def main(count: int = 50) -> None:
    OUT.mkdir(exist_ok=True)
    for old in OUT.glob("itu_*.json"):
        old.unlink()
    names = list(TEMPLATES)
    made = 0
    seed = 0
    while made < count:
        template = names[seed % len(names)]
        seed += 1
        try:
            inst = Instance(template, seed)
        except ValueError:
            continue
        found = inst.search()
        if found is None:
            continue
        name = f"itu_{made:02d}"
        (OUT / f"{name}.json").write_text(json.dumps(inst.document(found, name), indent=2) + "\n")
        print(f"{name}: {template} seed {seed} merit {found['merit']:.2e}", flush=True)
        made += 1


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 50)
