import json

import numpy as np
import pytest

from spikefisher.cli import main
from spikefisher.csvio import read_matrix, write_matrix
from spikefisher.model import RatioProfile, SigmaSpec, generate_two_sample
from spikefisher.regress import generate_regression
from spikefisher.simharness import generate_model5


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def _two_files(tmp_path, sigma, seed):
    x, y = generate_two_sample(sigma, SigmaSpec.identity(), RatioProfile(50, 100, 250), seed=seed)
    write_matrix(tmp_path / "x.csv", x)
    write_matrix(tmp_path / "y.csv", y)
    return tmp_path / "x.csv", tmp_path / "y.csv"


def test_test_spikes_null_accepts_mostly(tmp_path, capsys):
    codes = []
    for seed in range(20):
        x, y = _two_files(tmp_path, SigmaSpec.identity(), seed)
        code, out = _run(["test-spikes", "--input", x, "--input2", y, "--M0", 0], capsys)
        codes.append(code)
        rep = json.loads(out.out)
        assert (rep["p_value"] >= 0.05) == (code == 0)
    assert codes.count(0) >= 17


def test_test_spikes_spiked_rejects(tmp_path, capsys):
    x, y = _two_files(tmp_path, SigmaSpec.conjugated([40, 30, 30, 20] + [1] * 46), 1)
    code, out = _run(["test-spikes", "--input", x, "--input2", y, "--M0", 1, "--f", "x"], capsys)
    assert code == 1
    assert json.loads(out.out)["decision"] == "reject"


def test_test_spikes_orientation_columns(tmp_path, capsys):
    x, y = _two_files(tmp_path, SigmaSpec.identity(), 2)
    a = _run(["test-spikes", "--input", x, "--input2", y], capsys)[1].out
    x2, y2 = tmp_path / "xc.csv", tmp_path / "yc.csv"
    write_matrix(x2, read_matrix(x), "columns")
    write_matrix(y2, read_matrix(y), "columns")
    b = _run(["test-spikes", "--input", x2, "--input2", y2, "--orientation", "columns"], capsys)[1].out
    assert json.loads(a)["z_score"] == pytest.approx(json.loads(b)["z_score"], rel=1e-12)


def test_test_spikes_from_eigenvalues(tmp_path, capsys):
    path = tmp_path / "ev.csv"
    path.write_text("\n".join(str(v) for v in np.linspace(4.5, 0.1, 100)))
    code, out = _run(["test-spikes", "--eigenvalues", path, "--n1", 200, "--n2", 500, "--f", "x"], capsys)
    assert code in (0, 1)
    assert json.loads(out.out)["p"] == 100
    code, out = _run(["test-spikes", "--eigenvalues", path], capsys)
    assert code == 2 and "--n1" in out.err


def test_missing_file_exits_2(tmp_path, capsys):
    code, out = _run(["test-spikes", "--input", tmp_path / "nope.csv", "--input2", tmp_path / "nope.csv"], capsys)
    assert code == 2 and "nope.csv" in out.err


def test_bad_arguments_exit_2(capsys):
    assert _run(["test-spikes", "--M0", "many"], capsys)[0] == 2
    assert _run(["frobnicate"], capsys)[0] == 2


def test_regress_counts(tmp_path, capsys):
    d = generate_regression(40, 300, 100, 80, seed=3)
    write_matrix(tmp_path / "z.csv", d.Z)
    write_matrix(tmp_path / "w.csv", d.W)
    code, out = _run(["regress", "--input", tmp_path / "z.csv", "--design", tmp_path / "w.csv", "--r1", 80, "--M-max", 8], capsys)
    assert code == 0 and json.loads(out.out)["count"] == 5
    d0 = generate_regression(40, 300, 100, 80, n_signal=0, seed=4)
    write_matrix(tmp_path / "z0.csv", d0.Z)
    write_matrix(tmp_path / "w0.csv", d0.W)
    code, out = _run(["regress", "--input", tmp_path / "z0.csv", "--design", tmp_path / "w0.csv", "--r1", 80], capsys)
    assert json.loads(out.out)["count"] == 0


def test_regress_too_few_observations(tmp_path, capsys):
    rng = np.random.default_rng(0)
    write_matrix(tmp_path / "z.csv", rng.standard_normal((10, 20)))
    write_matrix(tmp_path / "w.csv", rng.standard_normal((15, 20)))
    code, out = _run(["regress", "--input", tmp_path / "z.csv", "--design", tmp_path / "w.csv", "--r1", 5], capsys)
    assert code == 2 and "n >= p + r" in out.err


def test_changepoint_cli(tmp_path, capsys):
    write_matrix(tmp_path / "m5.csv", generate_model5(20, 600, 20, np.random.default_rng(5)))
    code, out = _run(["changepoint", "--input", tmp_path / "m5.csv"], capsys)
    assert code == 1 and abs(json.loads(out.out)["change_point"] - 400) <= 20
    write_matrix(tmp_path / "null.csv", np.random.default_rng(6).standard_normal((20, 600)))
    code, out = _run(["changepoint", "--input", tmp_path / "null.csv"], capsys)
    assert code == 0 and json.loads(out.out)["change_point"] is None
    code, out = _run(["changepoint", "--input", tmp_path / "null.csv", "--q11", 20], capsys)
    assert code == 2 and "q11 > p" in out.err


def test_simulate_profile_and_spec_file(tmp_path, capsys):
    out_dir = tmp_path / "run"
    code, out = _run(["simulate", "--profile", "table3-small", "--reps", 10, "--output", out_dir], capsys)
    assert code == 0
    assert (out_dir / "size_power.csv").exists() and (out_dir / "manifest.json").exists()
    spec = tmp_path / "spec.txt"
    spec.write_text("profile = table1-small\nreps = 5\np = 40\nM0_grid = 4\n")
    code, out = _run(["simulate", "--input", spec, "--output", tmp_path / "run2"], capsys)
    assert code == 0 and json.loads(out.out)["kind"] == "table"
    spec.write_text("model = 1\nreps = lots\n")
    assert _run(["simulate", "--input", spec, "--output", tmp_path / "run3"], capsys)[0] == 2
