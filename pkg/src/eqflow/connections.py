"""Connection functions: continuous, strictly increasing maps of the real line onto itself.

A connection function gives, for a resale price at the head of an arc, the
break-even purchase price at its tail. Three closed-form families are
supported (affine, piecewise linear, penalty) together with exact inversion,
composition and pointwise maximum. Everything downstream relies on these
operations being exact up to float rounding, so there is no sampling here.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Any, Iterable, Sequence, Union

from .errors import ValidationError

EPS_FN = 1e-9


def _check_real(value: Any, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"expected a number, got {value!r}", field=field)
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"expected a finite number, got {value!r}", field=field)
    return value


@dataclass(frozen=True)
class Affine:
    slope: float
    intercept: float

    def __post_init__(self) -> None:
        slope = _check_real(self.slope, "slope")
        if slope <= 0:
            raise ValidationError(f"slope must be positive, got {slope!r}", field="slope")
        object.__setattr__(self, "slope", slope)
        object.__setattr__(self, "intercept", _check_real(self.intercept, "intercept"))

    def __call__(self, p: float) -> float:
        if math.isinf(p):
            return p
        return self.slope * p + self.intercept

    def inverse(self) -> "Affine":
        if self.slope == 1.0:
            return Affine(1.0, -self.intercept)
        return Affine(1.0 / self.slope, -self.intercept / self.slope)

    @property
    def is_transferable(self) -> bool:
        return self.slope == 1.0

    @property
    def cost(self) -> float:
        """Transport cost c in G(p) = p - c; meaningful for unit slope only."""
        return -self.intercept


@dataclass(frozen=True)
class Penalty:
    """G(p) = p - n, used to complete a bipartite arc set."""

    n: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "n", _check_real(self.n, "n"))

    def __call__(self, p: float) -> float:
        return p - self.n

    def inverse(self) -> Affine:
        return Affine(1.0, self.n)

    @property
    def slope(self) -> float:
        return 1.0

    @property
    def intercept(self) -> float:
        return -self.n

    @property
    def is_transferable(self) -> bool:
        return True

    @property
    def cost(self) -> float:
        return self.n


@dataclass(frozen=True)
class PiecewiseLinear:
    """Linear interpolation through ``points``, extrapolated with the end slopes."""

    points: tuple[tuple[float, float], ...]
    left_slope: float
    right_slope: float

    def __post_init__(self) -> None:
        pts = []
        for i, pair in enumerate(self.points):
            if len(pair) != 2:
                raise ValidationError("each point must be a [p, g] pair", field=f"points[{i}]")
            pts.append((_check_real(pair[0], f"points[{i}][0]"),
                        _check_real(pair[1], f"points[{i}][1]")))
        if not pts:
            raise ValidationError("at least one breakpoint is required", field="points")
        for i in range(1, len(pts)):
            if not pts[i][0] > pts[i - 1][0]:
                raise ValidationError("breakpoint prices must be strictly increasing",
                                      field=f"points[{i}]")
            if not pts[i][1] > pts[i - 1][1]:
                raise ValidationError("breakpoint values must be strictly increasing",
                                      field=f"points[{i}]")
        for name in ("left_slope", "right_slope"):
            s = _check_real(getattr(self, name), name)
            if s <= 0:
                raise ValidationError(f"end slope must be positive, got {s!r}", field=name)
            object.__setattr__(self, name, s)
        object.__setattr__(self, "points", tuple(pts))
        object.__setattr__(self, "_xs", tuple(p for p, _ in pts))
        object.__setattr__(self, "_ys", tuple(g for _, g in pts))

    def __call__(self, p: float) -> float:
        return _interp(self._xs, self._ys, self.left_slope, self.right_slope, p)

    def inverse(self) -> "PiecewiseLinear":
        return PiecewiseLinear(tuple((g, p) for p, g in self.points),
                               1.0 / self.left_slope, 1.0 / self.right_slope)

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return self._xs

    def slopes(self) -> list[float]:
        """Slopes of all pieces from left to right, end slopes included."""
        inner = [(self._ys[i + 1] - self._ys[i]) / (self._xs[i + 1] - self._xs[i])
                 for i in range(len(self._xs) - 1)]
        return [self.left_slope, *inner, self.right_slope]


ConnectionFunction = Union[Affine, Penalty, PiecewiseLinear]


def _interp(xs: Sequence[float], ys: Sequence[float], left: float, right: float,
            p: float) -> float:
    if math.isinf(p):
        return p
    if p <= xs[0]:
        return ys[0] + left * (p - xs[0])
    if p >= xs[-1]:
        return ys[-1] + right * (p - xs[-1])
    i = bisect.bisect_right(xs, p) - 1
    x0, x1 = xs[i], xs[i + 1]
    t = (p - x0) / (x1 - x0)
    return ys[i] + t * (ys[i + 1] - ys[i])


@dataclass(frozen=True)
class ComposedConnection:
    """outer(...(inner(p))): ``chain[0]`` is applied last."""

    chain: tuple[ConnectionFunction, ...]

    def __call__(self, p: float) -> float:
        for g in reversed(self.chain):
            p = g(p)
        return p

    def inverse(self) -> "ComposedConnection":
        return ComposedConnection(tuple(g.inverse() for g in reversed(self.chain)))


AnyConnection = Union[Affine, Penalty, PiecewiseLinear, ComposedConnection]


def evaluate(g: AnyConnection, p: float) -> float:
    return g(p)


def inverse(g: AnyConnection) -> AnyConnection:
    return g.inverse()


def identity() -> Affine:
    return Affine(1.0, 0.0)


def _affine_of(g: AnyConnection) -> Affine | None:
    if isinstance(g, Affine):
        return g
    if isinstance(g, Penalty):
        return Affine(1.0, -g.n)
    if isinstance(g, PiecewiseLinear) and len(g.points) == 1 and g.left_slope == g.right_slope:
        p, v = g.points[0]
        return Affine(g.left_slope, v - g.left_slope * p)
    return None


def compose(outer: AnyConnection, inner: AnyConnection) -> AnyConnection:
    """The map p -> outer(inner(p)); affine chains collapse to one Affine."""
    a, b = _affine_of(outer), _affine_of(inner)
    if a is not None and b is not None:
        return compose_affine(a, b)
    left = outer.chain if isinstance(outer, ComposedConnection) else (outer,)
    right = inner.chain if isinstance(inner, ComposedConnection) else (inner,)
    return ComposedConnection(left + right)


def compose_affine(outer: Affine, inner: Affine) -> Affine:
    return Affine(outer.slope * inner.slope, outer.slope * inner.intercept + outer.intercept)


# ---------------------------------------------------------------------------
# exact piecewise-linear arithmetic

def to_pwl(g: AnyConnection) -> PiecewiseLinear:
    if isinstance(g, PiecewiseLinear):
        return g
    if isinstance(g, ComposedConnection):
        out = to_pwl(g.chain[-1])
        for f in reversed(g.chain[:-1]):
            out = pwl_compose(to_pwl(f), out)
        return out
    a = _affine_of(g)
    return PiecewiseLinear(((0.0, a.intercept),), a.slope, a.slope)


def _close(a: float, b: float, rel: float = 1e-12) -> bool:
    return abs(a - b) <= rel * max(1.0, abs(a), abs(b))


def _build(xs: Iterable[float], f, left: float, right: float) -> PiecewiseLinear:
    """Sample ``f`` at the sorted candidate breakpoints and drop collinear ones."""
    cand = sorted(set(xs))
    merged: list[float] = []
    for x in cand:
        if merged and _close(x, merged[-1], 1e-13):
            continue
        merged.append(x)
    pts = [(x, f(x)) for x in merged]
    # enforce strict monotonicity against rounding
    clean = [pts[0]]
    for x, y in pts[1:]:
        if y > clean[-1][1]:
            clean.append((x, y))
    slopes = [left]
    for i in range(len(clean) - 1):
        (x0, y0), (x1, y1) = clean[i], clean[i + 1]
        slopes.append((y1 - y0) / (x1 - x0))
    slopes.append(right)
    keep = [clean[i] for i in range(len(clean)) if not _close(slopes[i], slopes[i + 1], 1e-10)]
    if not keep:
        keep = [clean[0]]
    return PiecewiseLinear(tuple(keep), left, right)


def normalize(g: AnyConnection) -> ConnectionFunction:
    """Collapse to an Affine whenever the function is a single line."""
    a = _affine_of(g)
    if a is not None:
        return a if not isinstance(g, Penalty) else g
    if isinstance(g, ComposedConnection):
        g = to_pwl(g)
        a = _affine_of(g)
        if a is not None:
            return a
    return g


def pwl_compose(outer: PiecewiseLinear, inner: PiecewiseLinear) -> PiecewiseLinear:
    inv = inner.inverse()
    xs = list(inner.breakpoints) + [inv(b) for b in outer.breakpoints]
    return _build(xs, lambda p: outer(inner(p)),
                  outer.left_slope * inner.left_slope, outer.right_slope * inner.right_slope)


def _crossings(f, g, fl, gl, fr, gr, xs: list[float]) -> list[float]:
    out = []
    d = [f(x) - g(x) for x in xs]
    for i in range(len(xs) - 1):
        if (d[i] < 0 < d[i + 1]) or (d[i] > 0 > d[i + 1]):
            out.append(xs[i] + (xs[i + 1] - xs[i]) * d[i] / (d[i] - d[i + 1]))
    if fl != gl:
        root = xs[0] - d[0] / (fl - gl)
        if root < xs[0]:
            out.append(root)
    if fr != gr:
        root = xs[-1] - d[-1] / (fr - gr)
        if root > xs[-1]:
            out.append(root)
    return out


def pwl_max(f: AnyConnection, g: AnyConnection) -> ConnectionFunction:
    """Pointwise maximum of two connection functions, exactly."""
    af, ag = _affine_of(f), _affine_of(g)
    if af is not None and ag is not None and af.slope == ag.slope:
        return af if af.intercept >= ag.intercept else ag
    f, g = to_pwl(f), to_pwl(g)
    xs = sorted(set(f.breakpoints) | set(g.breakpoints))
    xs += _crossings(f, g, f.left_slope, g.left_slope, f.right_slope, g.right_slope, xs)
    # far left the flatter function is on top, far right the steeper one
    left = min(f.left_slope, g.left_slope)
    right = max(f.right_slope, g.right_slope)
    return normalize(_build(xs, lambda p: max(f(p), g(p)), left, right))


def dominates(f: AnyConnection, g: AnyConnection, tol: float = EPS_FN) -> bool:
    """True when f(p) >= g(p) - tol * max(1, |g(p)|) for every real p."""
    af, ag = _affine_of(f), _affine_of(g)
    if af is not None and ag is not None and af.slope == ag.slope:
        return af.intercept >= ag.intercept - tol * max(1.0, abs(ag.intercept))
    f, g = to_pwl(f), to_pwl(g)
    xs = sorted(set(f.breakpoints) | set(g.breakpoints))
    for x in xs:
        gv = g(x)
        if f(x) < gv - tol * max(1.0, abs(gv)):
            return False
    if f.left_slope > g.left_slope * (1 + 1e-12):
        return False
    if f.right_slope < g.right_slope * (1 - 1e-12):
        return False
    return True


def slope_range(g: AnyConnection) -> tuple[float, float]:
    pw = to_pwl(g)
    s = pw.slopes()
    return min(s), max(s)


# ---------------------------------------------------------------------------
# JSON descriptors

def to_descriptor(g: AnyConnection) -> dict[str, Any]:
    if isinstance(g, Affine):
        return {"kind": "affine", "slope": g.slope, "intercept": g.intercept}
    if isinstance(g, Penalty):
        return {"kind": "penalty", "n": g.n}
    if isinstance(g, ComposedConnection):
        g = normalize(g)
        return to_descriptor(g)
    return {"kind": "pwl", "points": [[p, v] for p, v in g.points],
            "left_slope": g.left_slope, "right_slope": g.right_slope}


def from_descriptor(d: Any, field: str = "g") -> ConnectionFunction:
    if not isinstance(d, dict):
        raise ValidationError("connection descriptor must be an object", field=field)
    kind = d.get("kind")

    def need(key: str) -> Any:
        if key not in d:
            raise ValidationError(f"missing key {key!r}", field=key)
        return d[key]

    try:
        if kind == "affine":
            return Affine(need("slope"), need("intercept"))
        if kind == "penalty":
            return Penalty(need("n"))
        if kind == "pwl":
            pts = need("points")
            if not isinstance(pts, list):
                raise ValidationError("points must be a list", field="points")
            return PiecewiseLinear(tuple(tuple(pt) if isinstance(pt, (list, tuple)) else (pt,)
                                         for pt in pts),
                                   need("left_slope"), need("right_slope"))
    except ValidationError as exc:
        inner = exc.field
        raise ValidationError(str(exc).split(": ", 1)[-1],
                              field=f"{field}.{inner}" if inner else field) from None
    raise ValidationError(f"unknown connection kind {kind!r}", field=f"{field}.kind")
