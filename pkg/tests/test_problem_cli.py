import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from selfsim.cli import main, run
from selfsim.problem import ValidationError, build_boundary, build_flux_map, parse_problem

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"
FAST = ["grid.n_points=401"]


def _report(out):
    return json.loads((Path(out) / "report.json").read_text())


def test_parse_matrix_and_network():
    prob = parse_problem(PROBLEMS / "linear_vector.ini")
    A, extra = build_flux_map(prob)
    np.testing.assert_allclose(extra["matrix"], [[1, -0.3], [0.3, 1]])
    prob = parse_problem(PROBLEMS / "three_species_figure.ini")
    A, extra = build_flux_map(prob)
    b = build_boundary(prob, extra["reduction"].Q)
    np.testing.assert_allclose(b.U_minus, [6.89, 1.89])
    assert A.name == "reduced[three_species]"


def test_validation_collects_every_error():
    with pytest.raises(ValidationError) as exc:
        parse_problem(PROBLEMS / "bad.ini")
    msgs = " | ".join(exc.value.errors)
    assert "colour: unknown key" in msgs
    assert "n_points: must be positive" in msgs


def test_overrides_and_even_grid(tmp_path):
    prob = parse_problem(PROBLEMS / "linear.ini", ["grid.n_points=101", "diffusivity.D=2"])
    assert prob.get("grid", "n_points") == 101 and prob.get("diffusivity", "D") == 2.0
    with pytest.raises(ValidationError, match="odd"):
        parse_problem(PROBLEMS / "linear.ini", ["grid.n_points=100"])
    with pytest.raises(ValidationError, match="expected section.key=value"):
        parse_problem(PROBLEMS / "linear.ini", ["n_points"])
    p = tmp_path / "x.ini"
    p.write_text("[nonsense]\na = 1\n")
    with pytest.raises(ValidationError, match="unknown section"):
        parse_problem(p)


def test_profile_scalar_and_verify_round_trip(tmp_path):
    out = tmp_path / "a"
    assert run("profile-scalar", PROBLEMS / "linear.ini", out, FAST) == 0
    rep = _report(out)
    assert rep["status"] == "ok" and rep["exit_code"] == 0
    rows = list(csv.reader(open(out / "profile.csv")))
    assert len(rows) == 402
    out2 = tmp_path / "b"
    assert run("verify", PROBLEMS / "linear.ini", out2, FAST, profile=str(out / "profile.csv")) == 0
    assert _report(out2)["checks"] == rep["checks"]


def test_profile_vector_reduce_lift(tmp_path):
    # the weak-residual bound needs the finer grid
    assert run("profile-vector", PROBLEMS / "linear_vector.ini", tmp_path / "v", ["grid.n_points=1001"]) == 0
    assert run("reduce", PROBLEMS / "three_species.ini", tmp_path / "r", check_monotonicity=True) == 0
    assert run("lift", PROBLEMS / "three_species_figure.ini", tmp_path / "l") == 0
    assert (tmp_path / "l" / "lifted.csv").exists()


def test_lemma_violation_is_check_failure(tmp_path):
    assert run("reduce", PROBLEMS / "lemma_violation.ini", tmp_path, check_monotonicity=True) == 4
    rep = _report(tmp_path)
    assert rep["status"] == "check_failure"
    assert not all(c["pass"] for c in rep["checks"])


def test_oracle_command(tmp_path):
    assert run("oracle", PROBLEMS / "oracle_degen_III.ini", tmp_path, FAST) == 0
    assert (tmp_path / "oracle.csv").exists()


def test_exit_codes_via_main(tmp_path):
    assert main(["profile-scalar", "--problem", str(PROBLEMS / "bad.ini"), "--out", str(tmp_path)]) == 2
    rep = _report(tmp_path)
    assert rep["error"]["category"] == "validation" and len(rep["error"]["messages"]) >= 2
    assert main(["nonsense", "--problem", "x"]) == 2
    # a non-monotone matrix violates the solver hypothesis
    p = tmp_path / "nm.ini"
    p.write_text("[fluxmap]\nkind = linear\nmatrix = 1, 3; 0, -1\n[boundary]\nU_minus = 0, 1\nU_plus = 1, 0\n")
    assert main(["profile-vector", "--problem", str(p), "--out", str(tmp_path / "nm")]) == 3


def test_sweep_writes_one_report_per_problem(tmp_path):
    probs = [tmp_path / "p1.ini", tmp_path / "p2.ini"]
    for p in probs:
        shutil.copy(PROBLEMS / "linear.ini", p)
    argv = ["profile-scalar", "--out", str(tmp_path / "out"), "--override", "grid.n_points=201"]
    for p in probs:
        argv += ["--problem", str(p)]
    assert main(argv) == 0
    for p in probs:
        assert _report(tmp_path / "out" / p.stem)["status"] == "ok"
