import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinnkit.data import (DataError, DegenerateRange, IoError, MissingColumn, RaggedRows,
                          SampleSet, UnknownColumn, boundary_ids, interior_ids, load_csv,
                          quadrature_grid, save_csv, save_grid_csv, uniform_grid)

# -- uniform grids ---------------------------------------------------------------


def test_curve_fit_grid_size():
    assert uniform_grid((-np.pi, np.pi), (-np.pi, np.pi), 51, 51).n == 2601


def test_two_by_two_corners_row_major():
    s = uniform_grid((0, 1), (0, 1), 2, 2)
    pts = list(zip(s["x"], s["y"]))
    assert pts == [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]


def test_fine_grid_contains_coarse_grid():
    fine = uniform_grid((-np.pi, np.pi), (-np.pi, np.pi), 101, 101)
    coarse = uniform_grid((-np.pi, np.pi), (-np.pi, np.pi), 51, 51)
    assert fine.n == 10201
    fx = fine["x"].reshape(101, 101)[::2, ::2].ravel()
    fy = fine["y"].reshape(101, 101)[::2, ::2].ravel()
    np.testing.assert_allclose(fx, coarse["x"], atol=1e-14)
    np.testing.assert_allclose(fy, coarse["y"], atol=1e-14)


@pytest.mark.parametrize("args", [((0, 1), (0, 1), 1, 5), ((1, 1), (0, 1), 3, 3),
                                  ((0, 1), (2, 0), 3, 3)])
def test_degenerate_grids(args):
    with pytest.raises(DegenerateRange):
        uniform_grid(*args)


def test_grid_determinism():
    a = quadrature_grid((-1, 1), (-1, 1), 17)
    b = quadrature_grid((-1, 1), (-1, 1), 17)
    for k in a.columns:
        assert np.array_equal(a[k], b[k])


# -- boundary identification -------------------------------------------------------


def test_three_by_three_boundary():
    s = uniform_grid((0, 1), (0, 1), 3, 3)
    b = boundary_ids(s, {"x": ["min", "max"], "y": ["min", "max"]})
    assert len(b) == 8
    assert list(interior_ids(s, b)) == [4]


def test_initial_slab_with_tolerance():
    s = SampleSet({"t": [0.0, 1e-7, 0.5, 1.0], "x": [0.0, 0.1, 0.2, 0.3]})
    assert list(boundary_ids(s, {"t": "min"}, tol=1e-6)) == [0, 1]


def test_boundary_empty_result_is_not_error():
    s = SampleSet({"x": [0.25, 0.5]})
    assert boundary_ids(s, {"x": [10.0]}).size == 0


def test_boundary_unknown_column():
    with pytest.raises(UnknownColumn):
        boundary_ids(SampleSet({"x": [0.0]}), {"z": "min"})


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12))
def test_boundary_and_interior_partition(nx, ny):
    s = uniform_grid((0, 2), (-1, 1), nx, ny)
    b = boundary_ids(s, {"x": ["min", "max"], "y": ["min", "max"]})
    i = interior_ids(s, b)
    assert not set(b) & set(i)
    assert sorted(set(b) | set(i)) == list(range(s.n))
    assert len(i) == max(nx - 2, 0) * max(ny - 2, 0)


# -- sample sets -------------------------------------------------------------------


def test_ragged_columns():
    with pytest.raises(RaggedRows):
        SampleSet({"x": [1.0, 2.0], "y": [1.0]})


def test_id_set_validation():
    with pytest.raises(DataError):
        SampleSet({"x": [1.0, 2.0]}, {"a": [2]})
    with pytest.raises(DataError):
        SampleSet({"x": [1.0, 2.0]}, {"a": [1, 1]})


def test_with_columns_keeps_ids():
    s = SampleSet({"x": [1.0, 2.0]}, {"b": [0]}).with_columns(y=[3.0, 4.0])
    assert list(s["y"]) == [3.0, 4.0] and list(s.id_sets["b"]) == [0]
    with pytest.raises(UnknownColumn):
        s["z"]


# -- quadrature --------------------------------------------------------------------


def test_seventy_grid_weights():
    q = quadrature_grid((-1, 1), (-1, 1), 70)
    w = q.weights[q.interior_ids]
    assert len(w) == 4900 and np.all(w == 4.0 / 4900)
    assert len(q.boundary_ids) == 280
    assert np.all(q.weights[q.boundary_ids] == 0.0)


def test_integral_of_one_is_area():
    q = quadrature_grid((-1, 1), (-1, 1), 70)
    assert abs(q.integrate(np.ones(q.n)) - 4.0) <= 1e-10 * 4.0


def test_odd_integrand_vanishes():
    q = quadrature_grid((-1, 1), (-1, 1), 70)
    assert abs(q.integrate(np.sin(2 * np.pi * q["x"]) * np.sin(2 * np.pi * q["y"]))) <= 1e-12


def test_interior_points_strictly_inside():
    q = quadrature_grid((-1, 1), (0, 3), 9)
    xi, yi = q["x"][q.interior_ids], q["y"][q.interior_ids]
    assert np.all((-1 < xi) & (xi < 1) & (0 < yi) & (yi < 3))
    xb, yb = q["x"][q.boundary_ids], q["y"][q.boundary_ids]
    on_edge = (np.isin(xb, [-1.0, 1.0])) | (np.isin(yb, [0.0, 3.0]))
    assert np.all(on_edge)


def test_midpoint_rule_is_second_order():
    def err(n):
        q = quadrature_grid((0, 1), (0, 1), n)
        # a harmonic integrand would cancel the h^2 term, so use one that is not
        exact = (np.e - 1) ** 2
        return abs(q.integrate(np.exp(q["x"] + q["y"])) - exact)

    ratio = err(20) / err(40)
    assert 4 * 0.8 <= ratio <= 4 * 1.2


def test_degenerate_quadrature():
    with pytest.raises(DegenerateRange):
        quadrature_grid((0, 1), (0, 1), 1)


# -- CSV ---------------------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=10, max_size=10))
def test_csv_round_trip_bit_equal(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("csv") / "s.csv"
    s = SampleSet({"x": values, "y": np.arange(10) / 3})
    save_csv(path, s)
    back = load_csv(path)
    assert np.array_equal(back["x"], s["x"]) and np.array_equal(back["y"], s["y"])


def test_csv_selects_columns(tmp_path):
    path = tmp_path / "s.csv"
    save_csv(path, {"a": [1.0], "b": [2.0], "c": [3.0]})
    s = load_csv(path, ["c", "a"])
    assert list(s.columns) == ["c", "a"]


def test_csv_missing_column(tmp_path):
    path = tmp_path / "s.csv"
    save_csv(path, {"a": [1.0]})
    with pytest.raises(MissingColumn, match="'b'"):
        load_csv(path, ["a", "b"])


def test_csv_ragged_row_reports_line(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("a,b\n1,2\n3\n")
    with pytest.raises(RaggedRows, match="line 3"):
        load_csv(path)


def test_csv_unreadable(tmp_path):
    with pytest.raises(IoError):
        load_csv(tmp_path / "missing.csv")
    with pytest.raises(IoError):
        save_csv(tmp_path / "no" / "dir.csv", {"a": [1.0]})


def test_grid_csv_has_error_columns(tmp_path):
    s = uniform_grid((0, 1), (0, 1), 2, 2)
    path = tmp_path / "p.csv"
    save_grid_csv(path, s, {"f": [1.0, 2.0, 3.0, 4.0]}, {"f": [1.0, 1.0, 1.0, 1.0]})
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["x", "y", "f", "abs_err_f"]
    assert [float(r[3]) for r in rows[1:]] == [0.0, 1.0, 2.0, 3.0]
