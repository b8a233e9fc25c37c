import json
import subprocess
import sys

import numpy as np
import pytest

from twohop.cli import main
from twohop.code_model import TwoHopCode
from twohop.prob import TwoHopSource


@pytest.fixture
def src_file(tmp_path):
    path = tmp_path / "dsbs.json"
    path.write_text(json.dumps(TwoHopSource.dsbs(0.1, 0.1).to_json()))
    return path


@pytest.fixture
def product_file(tmp_path, product_source):
    path = tmp_path / "prod.json"
    path.write_text(json.dumps(product_source.to_json()))
    return path


def run(capsys, *argv):
    rc = main([str(a) for a in argv])
    out = capsys.readouterr()
    return rc, out.out, out.err


def test_region_single_weight(capsys, src_file):
    rc, out, _ = run(capsys, "region", src_file, "--weights", "1,1,1")
    assert rc == 0
    lines = out.strip().split("\n")
    assert lines[0] == "b,c,d,R_value,converged"
    assert float(lines[1].split(",")[3]) < 0


def test_region_product_source_is_zero(capsys, product_file):
    rc, out, _ = run(capsys, "region", product_file, "--grid", "0,1")
    assert rc == 0
    rows = out.strip().split("\n")[1:]
    assert len(rows) == 8
    assert all(abs(float(r.split(",")[3])) < 1e-9 for r in rows)


def test_output_is_byte_identical(tmp_path, src_file):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert main(["simulate", str(src_file), "--n-list", "2..4", "--out", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert b"\r\n" not in a.read_bytes()


def test_verify_code_file(capsys, tmp_path, src_file):
    code = TwoHopCode.trivial((2, 2, 2), 2)
    path = tmp_path / "code.json"
    path.write_text(code.dumps())
    rc, out, _ = run(capsys, "verify", src_file, "--code", path, "--eps1", 0.2, "--eps2", 0.2)
    assert rc == 0
    doc = json.loads(out)
    assert doc and all(e["status"] != "fail" for e in doc)


def test_verify_enumerate(capsys, src_file):
    rc, out, _ = run(capsys, "verify", src_file, "--enumerate", "--n", 1,
                     "--eps1", 0.2, "--eps2", 0.2)
    assert rc == 0
    doc = json.loads(out)
    assert doc["codes_checked"] == 16384 and doc["feasible"] == 1024 and doc["fails"] == 0


def test_oracle_and_code_out(capsys, tmp_path, src_file):
    code_out = tmp_path / "best.json"
    rc, out, _ = run(capsys, "oracle", src_file, "--eps1", 0.2, "--eps2", 0.2, "--n", 1,
                     "--code-out", code_out)
    assert rc == 0
    assert json.loads(out)["best_weighted_lhs"] == 0.0
    assert TwoHopCode.load(code_out).n == 1


@pytest.mark.parametrize("argv", [
    ["oracle", "{src}", "--eps1", "0.5", "--eps2", "0.5"],
    ["simulate", "{src}", "--scheme", "timeshare", "--n-list", "2", "--eps1", "0.5", "--eps2", "0.5"],
    ["region", "{src}", "--weights", "1,x,1"],
    ["region", "{missing}"],
    ["verify", "{src}"],
])
def test_input_errors_exit_2(capsys, tmp_path, src_file, argv):
    argv = [a.format(src=src_file, missing=tmp_path / "nope.json") for a in argv]
    assert main(argv) == 2


def test_budget_exit_4(capsys, src_file):
    rc, _, err = run(capsys, "simulate", src_file, "--n-list", "30")
    assert rc == 4
    assert "error" in err


def test_verify_failure_exit_3(monkeypatch, tmp_path, src_file):
    from twohop import cli
    from twohop import ledger as lg

    real = cli.audit

    def broken(*a, **k):
        res = real(*a, **k)
        res.ledger.add(lg.le("forced", 1.0, 0.0))
        return res

    monkeypatch.setattr(cli, "audit", broken)
    path = tmp_path / "c.json"
    path.write_text(TwoHopCode.trivial((2, 2, 2), 1).dumps())
    assert main(["verify", str(src_file), "--code", str(path), "--eps1", "0.2", "--eps2", "0.2"]) == 3


def test_console_entry_point(src_file):
    res = subprocess.run([sys.executable, "-m", "twohop.cli", "region", str(src_file),
                          "--weights", "0,0,0"], capture_output=True, text=True, check=False)
    assert res.returncode == 0
    # with zero weights the objective is -I(X;Y)
    assert np.isclose(float(res.stdout.split("\n")[1].split(",")[3]), -0.368064, atol=1e-6)
