import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentedit import dtmetric as dt
from latentedit.directions import ControlFactors
from latentedit.errors import ConfigError, NoAttributePairs
from latentedit.synthworld import identity_logistic_world


def test_auc_examples():
    assert dt.auc(dt.curve_from_pq([(0, 1), (0.5, 1), (1, 1)])) == 1.0
    assert dt.auc(dt.curve_from_pq([(0, 1), (1, 0)])) == 0.5
    assert abs(dt.auc(dt.curve_from_pq([(0, 1), (0.4, 0.9), (0.3, 0.8), (1, 0.7)])) - 0.835) <= 1e-12


def test_auc_flat_extension():
    assert dt.auc(dt.curve_from_pq([(0.2, 0.6)])) == pytest.approx(0.6, abs=1e-15)
    assert dt.auc(dt.curve_from_pq([(0.5, 1.0), (0.5, 0.0)])) == pytest.approx(0.5, abs=1e-15)


pq = st.tuples(st.floats(0, 1), st.floats(0, 1))


@settings(max_examples=100, deadline=None)
@given(st.lists(pq, min_size=1, max_size=25))
def test_auc_in_unit_interval(points):
    a = dt.auc(dt.curve_from_pq(points))
    assert 0.0 <= a <= 1.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=25))
def test_auc_all_ones(ps):
    assert dt.auc(dt.curve_from_pq([(p, 1.0) for p in ps])) == 1.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=25))
def test_auc_monotone_in_q(rows):
    low = dt.curve_from_pq([(p, min(a, b)) for p, a, b in rows])
    high = dt.curve_from_pq([(p, max(a, b)) for p, a, b in rows])
    assert dt.auc(high) >= dt.auc(low) - 1e-12


def test_pick_best_tie_break():
    cells = {(0.5, 0.0): 0.9, (0.75, 0.0): 0.9, (0.75, 0.25): 0.9, (1.0, 0.0): 0.8}
    assert dt.pick_best(cells) == (0.75, 0.0)
    cells[(0.25, 0.0)] = 0.9 + 1e-13
    assert dt.pick_best(cells) == (0.75, 0.0)


def test_q_at_interpolates_and_extends():
    c = dt.curve_from_pq([(0.2, 1.0), (0.6, 0.8)])
    np.testing.assert_allclose(dt.q_at(c, [0.0, 0.4, 0.9]), [1.0, 0.9, 0.8])


def test_curve_starts_at_zero_and_one(biased_world):
    c = dt.evaluate_dt(biased_world, "age", "eyeglasses", sample_count=200)
    n0, p0, q0 = c.points[0]
    assert (n0, p0, q0) == (0, 0.0, 1.0)
    assert len(c.points) == 21
    assert all(0 <= p <= 1 and 0 <= q <= 1 for _, p, q in c.points)
    assert c.p[-1] > 0.5


def test_oracle_scorer(linear_world):
    c = dt.evaluate_dt(linear_world, "gender", "expression", ControlFactors(1, 1), sample_count=300, scorer="oracle")
    assert c.points[0][1] == 0.0 and c.p[-1] > 0.8


def test_unknown_scorer(linear_world):
    with pytest.raises(ConfigError):
        dt.evaluate_dt(linear_world, "age", "gender", sample_count=5, scorer="human")


def test_same_attribute_rejected(linear_world):
    with pytest.raises(ConfigError):
        dt.evaluate_dt(linear_world, "age", "age", sample_count=5)


def test_identity_world_perfect_disentanglement():
    w = identity_logistic_world({"a": np.array([1.0, 0.0, 0.0]), "b": np.array([0.0, 1.0, 0.0])})
    c = dt.evaluate_dt(w, "a", "b", ControlFactors(0, 0), sample_count=300)
    assert np.all(c.q == 1.0)
    assert dt.auc(c) == 1.0


def test_single_attribute_grid():
    w = identity_logistic_world({"a": np.array([1.0, 0.0])})
    with pytest.raises(NoAttributePairs):
        dt.grid_search(w, [0.0, 1.0], sample_count=10)


def test_grid_layout_and_thread_independence():
    w = identity_logistic_world(
        {"a": np.array([1.0, 0.2, 0.0]), "b": np.array([0.3, 1.0, 0.0]), "c": np.array([0.0, 0.5, 1.0])}
    )
    r1 = dt.grid_search(w, [0.0, 0.5, 1.0], sample_count=100, threads=1)
    r3 = dt.grid_search(w, [0.0, 0.5, 1.0], sample_count=100, threads=3)
    assert r1.pair_count == 6
    assert dt.grid_csv(r1) == dt.grid_csv(r3)
    lines = dt.grid_csv(r1).split("\n")
    assert lines[0] == "lambda1\\lambda2,0.0,0.5,1.0"
    assert [ln.split(",")[0] for ln in lines[1:4]] == ["0.0", "0.5", "1.0"]
    assert r1.matrix().shape == (3, 3)


def test_svg_shape():
    svg = dt.curves_svg({"x": dt.curve_from_pq([(0, 1), (1, 0.5)])})
    assert 'viewBox="0 0 640 480"' in svg and svg.count("<polyline") == 1
    assert "transformation accuracy" in svg and "disentanglement accuracy" in svg
