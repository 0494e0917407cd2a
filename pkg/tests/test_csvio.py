import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from spikefisher.csvio import CsvFormatError, read_config, read_matrix, read_vector, write_matrix


@settings(max_examples=40, deadline=None)
@given(
    m=arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-1e6, 1e6, allow_nan=False)),
    orientation=st.sampled_from(["rows", "columns"]),
)
def test_round_trip_exact(tmp_path_factory, m, orientation):
    path = tmp_path_factory.mktemp("csv") / "m.csv"
    write_matrix(path, m, orientation)
    assert np.array_equal(read_matrix(path, orientation), m)


def test_orientation_flip(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("1,2,3\n4,5,6\n")
    rows = read_matrix(path, "rows")
    cols = read_matrix(path, "columns")
    assert rows.shape == (3, 2) and cols.shape == (2, 3)
    assert np.array_equal(rows, cols.T)


def test_header_and_blank_lines(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n\n3,4\n")
    assert np.array_equal(read_matrix(path, "columns", header=True), [[1, 2], [3, 4]])
    write_matrix(path, [[1.5], [2.5]], "rows", header=["u", "v"])
    assert path.read_text().splitlines()[0] == "u,v"


def test_diagnostics_name_position(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1,2\n3,x\n")
    with pytest.raises(CsvFormatError, match=r"bad.csv:2:2"):
        read_matrix(path)
    path.write_text("1,2\n3\n")
    with pytest.raises(CsvFormatError, match=r":2: expected 2 fields"):
        read_matrix(path)
    path.write_text("")
    with pytest.raises(CsvFormatError, match="no data"):
        read_matrix(path)
    path.write_text("1,nan\n")
    with pytest.raises(CsvFormatError, match="non-finite"):
        read_matrix(path)


def test_read_vector(tmp_path):
    path = tmp_path / "v.csv"
    path.write_text("3\n2\n1\n")
    assert np.array_equal(read_vector(path), [3, 2, 1])


def test_read_config(tmp_path):
    path = tmp_path / "spec.txt"
    path.write_text("# comment\nmodel = 1\nreps=50  # inline\n\n")
    assert read_config(path) == {"model": "1", "reps": "50"}
    path.write_text("model 1\n")
    with pytest.raises(CsvFormatError, match=":1:"):
        read_config(path)
