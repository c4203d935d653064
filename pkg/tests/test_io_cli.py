import json
import subprocess
import sys

import pytest

from conftest import FIXTURES
from eqflow.assembly import solve
from eqflow.cli import main
from eqflow.errors import ValidationError
from eqflow.io import (dumps, load_problem, outcome_from_dict, outcome_to_dict, problem_from_dict,
                       problem_to_dict, read_dimacs, to_dot)

CORPUS = sorted((FIXTURES / "corpus").glob("*.json"))
MALFORMED = FIXTURES / "malformed"
EXPECTED_FIELDS = json.loads((MALFORMED / "expected_fields.json").read_text())


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize("path", CORPUS, ids=lambda p: p.stem)
def test_problem_roundtrip(path):
    fp, meta = load_problem(path)
    again, meta2 = problem_from_dict(json.loads(dumps(problem_to_dict(fp, meta))))
    assert again.net == fp.net and again.q == fp.q and meta2 == meta
    assert [g(1.5) for g in again.G] == [g(1.5) for g in fp.G]


@pytest.mark.parametrize("path", CORPUS, ids=lambda p: p.stem)
def test_outcome_roundtrip_is_lossless(path):
    fp, _ = load_problem(path)
    out = solve(fp)
    doc = json.loads(dumps(outcome_to_dict(fp, out)))
    back = outcome_from_dict(fp, doc)
    assert back.mu == out.mu and back.p == out.p and back.q == list(out.q)
    assert back.certificate.passed
    assert dumps(outcome_to_dict(fp, back)) == dumps(outcome_to_dict(fp, out))


@pytest.mark.parametrize("name", sorted(EXPECTED_FIELDS))
def test_malformed_inputs_exit_2(capsys, name):
    code, out, err = run(capsys, "solve", MALFORMED / f"{name}.json")
    assert code == 2
    assert json.loads(err)["field"] == EXPECTED_FIELDS[name]


def test_twenty_malformed_fixtures():
    assert len(EXPECTED_FIELDS) == 20
    assert len(list(MALFORMED.glob("*.json"))) == 21


def test_solve_chain_and_verify(capsys, tmp_path):
    target = tmp_path / "chain.outcome.json"
    code, _, _ = run(capsys, "solve", FIXTURES / "corpus/chain.json", "--out", target)
    assert code == 0
    doc = json.loads(target.read_text())
    assert doc["mu"] == [{"from": "a", "to": "b", "flow": 1.0}]
    assert doc["certificate"]["pass"] is True
    code, out, _ = run(capsys, "verify", FIXTURES / "corpus/chain.json", target)
    assert code == 0 and json.loads(out)["pass"] is True


def test_verify_rejects_raised_price(capsys, tmp_path):
    code, text, _ = run(capsys, "solve", FIXTURES / "corpus/chain.json")
    doc = json.loads(text)
    doc["p"]["b"] += 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    code, _, err = run(capsys, "verify", FIXTURES / "corpus/chain.json", bad)
    assert code == 1
    assert json.loads(err)["max_positive_rent"] == pytest.approx(1.0)


def test_check_reports(capsys):
    code, out, _ = run(capsys, "check", FIXTURES / "corpus/diamond.json")
    assert code == 0 and json.loads(out)["pass"]
    code, out, err = run(capsys, "check", FIXTURES / "failing/profitable_loop.json")
    assert code == 1
    failed = json.loads(err)["failed"]
    assert any(f["error"] == "profitable_loop" and f["loop"][0] == f["loop"][-1] for f in failed)


def test_solve_failures_exit_1(capsys):
    code, _, err = run(capsys, "solve", FIXTURES / "failing/infeasible.json")
    assert code == 1 and json.loads(err)["violating_set"] == ["b"]
    code, _, err = run(capsys, "solve", FIXTURES / "failing/profitable_loop.json")
    assert code == 1 and json.loads(err)["error"] == "profitable_loop"


def test_all_diagnostics_flag(capsys):
    code, _, err = run(capsys, "solve", FIXTURES / "failing/profitable_loop.json",
                       "--all-diagnostics")
    assert code == 1
    assert [d["assumption"] for d in json.loads(err)["diagnostics"]] == ["2", "3", "1"]


def test_reduce_decompose_and_dot(capsys, tmp_path):
    problem = FIXTURES / "corpus/diamond.json"
    code, out, _ = run(capsys, "reduce", problem)
    red = json.loads(out)
    assert code == 0 and red["X"] and red["Y"] and red["arcs"]
    target = tmp_path / "o.json"
    run(capsys, "solve", problem, "--out", target)
    code, out, _ = run(capsys, "decompose", problem, target)
    dec = json.loads(out)
    assert code == 0 and dec["loops"] == [] and dec["paths"]
    code, out, _ = run(capsys, "export-dot", problem, target)
    assert code == 0 and out.startswith("digraph") and "rent=" in out
    code, out, _ = run(capsys, "export-dot", problem)
    assert code == 0 and "rent=" not in out


def test_ground_and_tolerance_flags(capsys, monkeypatch):
    code, out, _ = run(capsys, "solve", FIXTURES / "corpus/chain.json", "--ground", "b")
    assert code == 0 and json.loads(out)["p"]["b"] == 0.0
    code, out, _ = run(capsys, "solve", FIXTURES / "corpus/chain.json", "--tol", "1e-6")
    assert json.loads(out)["certificate"]["tol"] == 1e-6
    monkeypatch.setenv("EQFLOW_TOL", "1e-7")
    code, out, _ = run(capsys, "solve", FIXTURES / "corpus/chain.json")
    assert json.loads(out)["certificate"]["tol"] == 1e-7
    monkeypatch.setenv("EQFLOW_TOL", "nope")
    code, _, err = run(capsys, "solve", FIXTURES / "corpus/chain.json")
    assert code == 2 and json.loads(err)["field"] == "EQFLOW_TOL"


def test_missing_file_is_input_error(capsys, tmp_path):
    code, _, _ = run(capsys, "solve", tmp_path / "absent.json")
    assert code == 2
    code, _, _ = run(capsys, "solve")
    assert code == 2


def test_batch_mode(capsys, tmp_path):
    for path in CORPUS[:3]:
        (tmp_path / path.name).write_text(path.read_text())
    code, out, _ = run(capsys, "solve", "--batch", tmp_path, "--workers", "2")
    assert code == 0
    written = sorted(p.name for p in (tmp_path / "outcomes").iterdir())
    assert written == sorted(p.stem + ".outcome.json" for p in CORPUS[:3])
    single = tmp_path / "single.json"
    run(capsys, "solve", CORPUS[0], "--out", single)
    assert (tmp_path / "outcomes" / f"{CORPUS[0].stem}.outcome.json").read_text() == \
        single.read_text()


DIMACS = """c tiny
p min 3 3
n 1 2
n 3 -2
a 1 2 0 10 1
a 2 3 0 10 1
a 1 3 0 10 3
"""


def test_dimacs_import(capsys, tmp_path):
    fp = read_dimacs(DIMACS)
    assert fp.q == (-2.0, 0.0, 2.0)
    assert [g(0.0) for g in fp.G] == [-1.0, -1.0, -3.0]
    path = tmp_path / "tiny.min"
    path.write_text(DIMACS)
    code, out, _ = run(capsys, "solve", path)
    doc = json.loads(out)
    assert code == 0 and [m["flow"] for m in doc["mu"]] == [2.0, 2.0, 0.0]
    with pytest.raises(ValidationError):
        read_dimacs("p min 2 1\na 1 2 1 5 1\n")
    with pytest.raises(ValidationError):
        read_dimacs("a 1 2 0 5 1\n")


def test_dot_quotes_names():
    fp, _ = problem_from_dict({"nodes": ['x"y', "z"], "q": {'x"y': -1, "z": 1},
                               "arcs": [{"from": 'x"y', "to": "z",
                                         "g": {"kind": "penalty", "n": 2}}]})
    assert '"x\\"y" -> "z"' in to_dot(fp)


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "eqflow.cli", "verify",
                           str(FIXTURES / "corpus/chain.json"),
                           str(FIXTURES / "corpus/chain.json")],
                          capture_output=True, text=True)
    assert proc.returncode == 2
