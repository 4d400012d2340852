import csv
import io
import json

import pytest

from duffy_lor import __version__
from duffy_lor.cli import config_hash, run
from duffy_lor.mesh import write_mesh, structured_tri_mesh


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def table(text):
    lines = text.strip().splitlines()
    assert lines[-1].startswith("# config_hash=") and lines[-1].endswith(f"version={__version__}")
    return list(csv.DictReader(lines[:-1]))


@pytest.mark.parametrize("argv", [
    ["--cmd", "nope"],
    ["--order", "3"],
    ["--cmd", "ref-cond", "--order", "0"],
    ["--cmd", "ref-cond", "--order", "2", "--order-range", "2:4"],
    ["--cmd", "ref-cond", "--order-range", "x:y"],
    ["--cmd", "mass-cond", "--lattice-x", "2,2"],
    ["--cmd", "mass-cond", "--mass-diag", "lumped"],
    ["--cmd", "solve", "--forcing", "cosh"],
    ["--cmd", "solve", "--gen", "a,b"],
    ["--cmd", "solve", "--rtol", "-1"],
    ["--cmd", "ref-cond", "--format", "xml"],
    ["--cmd", "ref-cond", "--space", "Q"],
    ["--cmd", "solve", "--mesh", "/nonexistent/mesh.txt"],
])
def test_config_errors(argv):
    code, out, err = call(*argv)
    assert code == 2 and out == ""
    payload = json.loads(err)
    assert payload["error"] == "config" and payload["message"]


def test_bad_mesh_file(tmp_path):
    p = tmp_path / "bad.mesh"
    p.write_text("not a mesh\n")
    code, _, err = call("--cmd", "solve", "--mesh", str(p), "--order", "2")
    assert code == 2 and "bad mesh file" in json.loads(err)["message"]


def test_numerical_failure_exit_code():
    code, _, err = call("--cmd", "solve", "--order", "6", "--maxit", "1", "--gen", "2,2")
    assert code == 3 and json.loads(err)["error"] == "numerical"


def test_ref_cond_lowest_order_and_determinism():
    code, out, _ = call("--cmd", "ref-cond", "--order-range", "1,2")
    assert code == 0
    rows = table(out)
    assert [r["space"] for r in rows] == ["V", "W", "Z"] * 2
    for r in rows[:3]:
        assert float(r["kappa"]) == pytest.approx(1.0, abs=1e-10)
    assert call("--cmd", "ref-cond", "--order-range", "1,2")[1] == out


def test_config_hash_changes_with_config():
    a = table_hash(call("--cmd", "bounds1d", "--order", "3")[1])
    b = table_hash(call("--cmd", "bounds1d", "--order", "4")[1])
    assert a != b and len(a) == 16
    assert config_hash({"x": 1}) == config_hash({"x": 1})


def table_hash(text):
    return text.strip().splitlines()[-1].split()[1].split("=")[1]


def test_bounds1d_rows():
    code, out, _ = call("--cmd", "bounds1d", "--order-range", "2:8")
    rows = table(out)
    assert sorted({int(r["N"]) for r in rows}) == [2, 4, 8]
    for r in rows:
        assert float(r["ratio"]) == pytest.approx(float(r["c_high"]) / float(r["c_low"]), rel=1e-12)
        assert float(r["c_low"]) > 0


def test_mass_cond_json():
    code, out, _ = call("--cmd", "mass-cond", "--lattice-x", "1,1", "--lattice-y", "1,1",
                        "--order-range", "4,8", "--format", "json")
    data = json.loads(out)
    assert data["columns"][0] == "lattice_x" and len(data["rows"]) == 2
    assert all(9 < r["kappa"] < 11 for r in data["rows"])
    assert len(data["config_hash"]) == 16


def test_solve_reports_lor_sparsity():
    code, out, _ = call("--cmd", "solve", "--gen", "16,16", "--order", "8")
    assert code == 0
    (row,) = table(out)
    assert row["triangles"] == "512"
    assert 8.5 <= float(row["nnz_lor_per_row"]) <= 9.2
    assert float(row["nnz_high_per_row"]) > float(row["nnz_lor_per_row"])
    assert int(row["iterations"]) < 60


def test_solve_from_mesh_file(tmp_path):
    p = tmp_path / "m.mesh"
    p.write_text(write_mesh(structured_tri_mesh(2, 2)))
    code, out, _ = call("--cmd", "solve", "--mesh", str(p), "--order", "3", "--forcing", "sinpi")
    assert code == 0 and table(out)[0]["triangles"] == "8"


def test_assemble_exports(tmp_path):
    prefix = tmp_path / "A"
    code, out, _ = call("--cmd", "assemble", "--gen", "1,1", "--order", "3", "--space", "V,Z",
                        "--out", str(prefix))
    assert code == 0
    rows = table(out)
    assert len(rows) == 4
    for r in rows:
        assert (tmp_path / r["path"].split("/")[-1]).exists()


def test_fictitious_and_jacobi_check(tmp_path):
    out_file = tmp_path / "f.csv"
    code, out, _ = call("--cmd", "fictitious", "--gen", "2,2", "--order-range", "2,5", "--out", str(out_file))
    assert code == 0 and out == ""
    rows = table(out_file.read_text())
    assert [r["block_size"] for r in rows] == ["0", "6"]
    code, out, _ = call("--cmd", "jacobi-check", "--order-range", "3..6")
    assert code == 0 and all(r["pass"] == "True" for r in table(out))
