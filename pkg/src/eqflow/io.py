"""JSON documents, DIMACS import and DOT export.

Floats go through ``json`` which writes the shortest repr that round-trips,
so documents are byte-stable for identical inputs.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

from .assembly import Certificate, EquilibriumOutcome, FlowProblem, Reduction
from .connections import from_descriptor, to_descriptor
from .errors import ValidationError
from .network import Network


def dumps(doc: Any) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def read_json(path: str | Path) -> Any:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}",
                              field=str(path)) from None


def _number(value: Any, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"expected a number, got {value!r}", field=field)
    if not math.isfinite(value):
        raise ValidationError("number must be finite", field=field)
    return float(value)


def _object(value: Any, field: str) -> dict:
    if not isinstance(value, dict):
        raise ValidationError("expected an object", field=field)
    return value


def _list(value: Any, field: str) -> list:
    if not isinstance(value, list):
        raise ValidationError("expected a list", field=field)
    return value


def _numbers_in(d: Any, field: str) -> None:
    """Reject non-numeric leaves in a connection descriptor before building it."""
    if isinstance(d, dict):
        for key, value in d.items():
            if key != "kind":
                _numbers_in(value, f"{field}.{key}")
    elif isinstance(d, list):
        for i, value in enumerate(d):
            _numbers_in(value, f"{field}[{i}]")
    else:
        _number(d, field)


# ---------------------------------------------------------------------------
# problems

def problem_from_dict(doc: Any) -> tuple[FlowProblem, dict[str, Any]]:
    doc = _object(doc, "problem")
    for key in ("nodes", "arcs", "q"):
        if key not in doc:
            raise ValidationError("missing key", field=key)
    nodes = _list(doc["nodes"], "nodes")
    for i, name in enumerate(nodes):
        if not isinstance(name, str) or not name:
            raise ValidationError("node names must be nonempty strings", field=f"nodes[{i}]")
    pairs = []
    G = []
    for k, arc in enumerate(_list(doc["arcs"], "arcs")):
        where = f"arcs[{k}]"
        arc = _object(arc, where)
        for key in ("from", "to", "g"):
            if key not in arc:
                raise ValidationError("missing key", field=f"{where}.{key}")
        g = _object(arc["g"], f"{where}.g")
        _numbers_in(g, f"{where}.g")
        G.append(from_descriptor(g, field=f"{where}.g"))
        pairs.append((arc["from"], arc["to"]))
    net = Network.from_names(nodes, pairs)
    qmap = _object(doc["q"], "q")
    for name in qmap:
        if name not in net.nodes:
            raise ValidationError(f"unknown node {name!r}", field=f"q.{name}")
    q = [_number(qmap.get(name, 0.0), f"q.{name}") for name in net.nodes]
    meta = doc.get("meta", {})
    meta = _object(meta, "meta")
    return FlowProblem(net, G, q), meta


def load_problem(path: str | Path) -> tuple[FlowProblem, dict[str, Any]]:
    return problem_from_dict(read_json(path))


def problem_to_dict(fp: FlowProblem, meta: dict[str, Any] | None = None) -> dict[str, Any]:
    net = fp.net
    doc: dict[str, Any] = {
        "nodes": list(net.nodes),
        "arcs": [{"from": net.nodes[a], "to": net.nodes[b], "g": to_descriptor(g)}
                 for (a, b), g in zip(net.arcs, fp.G)],
        "q": {name: v for name, v in zip(net.nodes, fp.q)},
    }
    if meta:
        doc["meta"] = meta
    return doc


# ---------------------------------------------------------------------------
# outcomes

def outcome_to_dict(fp: FlowProblem, out: EquilibriumOutcome) -> dict[str, Any]:
    net = fp.net
    doc: dict[str, Any] = {
        "q": {name: v for name, v in zip(net.nodes, out.q)},
        "mu": [{"from": net.nodes[a], "to": net.nodes[b], "flow": v}
               for (a, b), v in zip(net.arcs, out.mu)],
        "p": {name: v for name, v in zip(net.nodes, out.p)},
    }
    if out.certificate is not None:
        doc["certificate"] = out.certificate.as_dict()
    meta = out.meta
    doc["solver_meta"] = {
        "ground": meta.get("ground"),
        "penalty": meta.get("penalty"),
        "blocks": meta.get("blocks"),
        "iterations": meta.get("iterations"),
        "sweeps": meta.get("sweeps"),
        "pruned": meta.get("pruned", []),
    }
    return doc


def outcome_from_dict(fp: FlowProblem, doc: Any) -> EquilibriumOutcome:
    net = fp.net
    doc = _object(doc, "outcome")
    for key in ("q", "mu", "p"):
        if key not in doc:
            raise ValidationError("missing key", field=key)
    qmap = _object(doc["q"], "q")
    pmap = _object(doc["p"], "p")
    for name in list(qmap) + list(pmap):
        if name not in net.nodes:
            raise ValidationError(f"unknown node {name!r}", field="q/p")
    q = [_number(qmap.get(name, 0.0), f"q.{name}") for name in net.nodes]
    missing = [name for name in net.nodes if name not in pmap]
    if missing:
        raise ValidationError(f"no price for {missing[0]!r}", field=f"p.{missing[0]}")
    p = [_number(pmap[name], f"p.{name}") for name in net.nodes]
    index = {name: z for z, name in enumerate(net.nodes)}
    mu = [0.0] * net.n_arcs
    seen = set()
    for k, entry in enumerate(_list(doc["mu"], "mu")):
        where = f"mu[{k}]"
        entry = _object(entry, where)
        for key in ("from", "to", "flow"):
            if key not in entry:
                raise ValidationError("missing key", field=f"{where}.{key}")
        a, b = index.get(entry["from"]), index.get(entry["to"])
        arc = None if a is None or b is None else net.arc_id(a, b)
        if arc is None:
            raise ValidationError(f"no arc {entry['from']!r}->{entry['to']!r}", field=where)
        if arc in seen:
            raise ValidationError("arc listed twice", field=where)
        seen.add(arc)
        mu[arc] = _number(entry["flow"], f"{where}.flow")
    cert = None
    if isinstance(doc.get("certificate"), dict):
        c = doc["certificate"]
        try:
            cert = Certificate(float(c["balance_residual"]), float(c["max_positive_rent"]),
                               float(c["cs_residual"]), float(c["tol"]), bool(c["pass"]))
        except (KeyError, TypeError, ValueError):
            raise ValidationError("malformed certificate", field="certificate") from None
    meta = doc.get("solver_meta") if isinstance(doc.get("solver_meta"), dict) else {}
    return EquilibriumOutcome(q, mu, p, cert, dict(meta))


def load_outcome(fp: FlowProblem, path: str | Path) -> EquilibriumOutcome:
    return outcome_from_dict(fp, read_json(path))


def reduction_to_dict(red: Reduction) -> dict[str, Any]:
    bp = red.bp
    return {
        "X": list(bp.sources),
        "Y": list(bp.targets),
        "n": {name: v for name, v in zip(bp.sources, bp.n)},
        "m": {name: v for name, v in zip(bp.targets, bp.m)},
        "arcs": [{"from": bp.sources[i], "to": bp.targets[j], "g": to_descriptor(bp.gtil[(i, j)])}
                 for i, j in bp.arcs],
    }


# ---------------------------------------------------------------------------
# DIMACS min-cost flow

def read_dimacs(text: str) -> FlowProblem:
    """Min-cost-flow DIMACS text as a transferable-utility flow problem.

    Node supply s becomes exit flow q = -s and an arc of cost c becomes the
    connection p - c. Capacities are not modeled: arcs must have lower bound
    0 and their upper bound is ignored.
    """
    n_nodes = None
    supply: dict[int, float] = {}
    arcs: list[tuple[str, str]] = []
    G = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if not parts or parts[0] == "c":
            continue
        where = f"line {lineno}"
        try:
            if parts[0] == "p":
                if len(parts) != 4 or parts[1] != "min":
                    raise ValidationError("expected 'p min NODES ARCS'", field=where)
                n_nodes = int(parts[2])
            elif parts[0] == "n":
                supply[int(parts[1])] = float(parts[2])
            elif parts[0] == "a":
                u, v, low, _cap, cost = parts[1:6]
                if float(low) != 0:
                    raise ValidationError("nonzero lower bounds are not supported", field=where)
                arcs.append((u, v))
                G.append(from_descriptor({"kind": "affine", "slope": 1.0,
                                          "intercept": -float(cost)}, field=where))
            else:
                raise ValidationError(f"unknown line type {parts[0]!r}", field=where)
        except (ValueError, IndexError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"cannot parse {raw.strip()!r}", field=where) from None
    if n_nodes is None:
        raise ValidationError("missing problem line", field="p")
    nodes = [str(i) for i in range(1, n_nodes + 1)]
    net = Network.from_names(nodes, arcs)
    return FlowProblem(net, G, [-supply.get(i, 0.0) for i in range(1, n_nodes + 1)])


# ---------------------------------------------------------------------------
# DOT

def _label(d: dict[str, Any]) -> str:
    if d["kind"] == "affine":
        return f"{d['slope']!r}p{d['intercept']:+}"
    if d["kind"] == "penalty":
        return f"p-{d['n']!r}"
    return "pwl" + "".join(f" ({x!r},{y!r})" for x, y in d["points"])


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def to_dot(fp: FlowProblem, out: EquilibriumOutcome | None = None) -> str:
    net = fp.net
    lines = ["digraph eqflow {", "  rankdir=LR;"]
    for z, name in enumerate(net.nodes):
        label = f"{name}\nq={fp.q[z]!r}"
        if out is not None:
            label += f"\np={out.p[z]!r}"
        lines.append(f"  {_quote(name)} [label={_quote(label)}];")
    for k, ((a, b), g) in enumerate(zip(net.arcs, fp.G)):
        label = _label(to_descriptor(g))
        if out is not None:
            rent = g(out.p[b]) - out.p[a]
            label += f"\nflow={out.mu[k]!r} rent={rent!r}"
        lines.append(f"  {_quote(net.nodes[a])} -> {_quote(net.nodes[b])} "
                     f"[label={_quote(label)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
