import numpy as np
import pytest
from hypothesis import given, strategies as st

from lifetime_ruin.curves import (Grid, PolicyCurve, ValueCurve, first_derivative, read_csv,
                                  second_derivative, write_csv)


def test_grid_spacing():
    g = Grid.with_spacing(0.0, 40.0, 0.01)
    assert g.n == 4001
    assert g.h == pytest.approx(0.01)
    assert g.points[-1] == 40.0
    with pytest.raises(ValueError):
        Grid(0.0, 1.0, 2)
    with pytest.raises(ValueError):
        Grid(1.0, 1.0, 10)


@given(c0=st.floats(-5, 5), c1=st.floats(-5, 5), c2=st.floats(-5, 5))
def test_differences_exact_on_quadratics(c0, c1, c2):
    g = Grid(0.0, 2.0, 41)
    x = g.points
    f = c0 + c1 * x + c2 * x ** 2
    assert np.allclose(first_derivative(f, g.h), c1 + 2 * c2 * x, atol=1e-9)
    assert np.allclose(second_derivative(f, g.h), 2 * c2, atol=1e-7)


def test_value_curve_is_read_only_and_checked():
    g = Grid(0.0, 1.0, 11)
    c = ValueCurve.from_values(g, 1.0 - g.points, "primal_M")
    with pytest.raises(ValueError):
        c.values[0] = 2.0
    with pytest.raises(ValueError, match="unknown curve kind"):
        ValueCurve.from_values(g, g.points, "other")
    with pytest.raises(ValueError, match="shape"):
        ValueCurve(g, np.zeros(3), np.zeros(11), np.zeros(11), "primal_M")


def test_interpolation_refuses_extrapolation():
    g = Grid(0.0, 1.0, 11)
    c = ValueCurve.from_values(g, np.exp(-g.points), "primal_M")
    assert c(0.5) == pytest.approx(np.exp(-0.5), abs=1e-4)
    assert c(1.0) == pytest.approx(np.exp(-1.0))
    with pytest.raises(ValueError, match="extrapolation refused"):
        c(1.5)
    p = PolicyCurve(g, g.points)
    assert p(0.25) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        p(-0.1)


def test_csv_round_trip_is_exact(tmp_path):
    x = np.linspace(0, 1, 7) / 3.0
    path = tmp_path / "a.csv"
    write_csv(path, ["x", "y"], [x, np.sqrt(x)])
    back = read_csv(path, ["x", "y"])
    assert np.array_equal(back["x"], x)
    assert np.array_equal(back["y"], np.sqrt(x))


@pytest.mark.parametrize("text, message", [
    ("", "empty file"),
    ("x,z\n1,2\n", "header"),
    ("x,y\n", "no data rows"),
    ("x,y\n1,2\n3\n", ":3: expected 2 fields"),
    ("x,y\n1,two\n", ":2:"),
])
def test_csv_diagnostics(tmp_path, text, message):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ValueError, match=message):
        read_csv(path, ["x", "y"])
