import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from latentedit import directions as dr
from latentedit.directions import ControlFactors, SemanticDirection
from latentedit.errors import (
    ConfigError,
    DegenerateCombination,
    DegenerateData,
    DegenerateProjection,
    EmptySampleSet,
    ZeroGradient,
)
from latentedit.synthworld import identity_logistic_world


def sd(v, attr="a", kind="attribute_level"):
    v = np.asarray(v, dtype=float)
    return SemanticDirection(v / np.linalg.norm(v), attr, kind)


@pytest.fixture(scope="module")
def w34():
    return identity_logistic_world({"a": np.array([3.0, 4.0]), "b": np.array([-4.0, 3.0])})


def test_instance_specific_closed_form(w34):
    for z in ([0.0, 0.0], [5.0, -2.0], [-1.0, 0.3]):
        np.testing.assert_allclose(dr.instance_specific(w34, "a", z, 1).vector, [0.6, 0.8], atol=1e-15)
        np.testing.assert_allclose(dr.instance_specific(w34, "a", z, 0).vector, [-0.6, -0.8], atol=1e-15)


def test_sign_antisymmetry_is_exact(nonlinear_world):
    rng = np.random.default_rng(0)
    for _ in range(20):
        z = rng.standard_normal(nonlinear_world.latent_dim)
        up = dr.instance_specific(nonlinear_world, "gender", z, 1).vector
        down = dr.instance_specific(nonlinear_world, "gender", z, 0).vector
        assert np.array_equal(up, -down)


def test_instance_specific_matches_finite_differences(nonlinear_world):
    w = nonlinear_world
    rng = np.random.default_rng(3)
    for _ in range(5):
        z = rng.standard_normal(w.latent_dim)
        fd = np.array([(w.score("age", z + 1e-6 * e) - w.score("age", z - 1e-6 * e)) / 2e-6 for e in np.eye(len(z))])
        d = dr.instance_specific(w, "age", z, 1).vector
        assert 1.0 - d @ (fd / np.linalg.norm(fd)) < 1e-4


def test_zero_gradient_raises():
    w = identity_logistic_world({"a": np.array([1e-14, 0.0])})
    with pytest.raises(ZeroGradient):
        dr.instance_specific(w, "a", [0.0, 0.0], 1)


def test_classifier_scale_invariance(nonlinear_world):
    from dataclasses import replace

    w = nonlinear_world
    clf = w.edit_classifiers["expression"]
    # rescale the pre-sigmoid output by 3
    last = clf.layers[-1]
    scaled = replace(clf, layers=clf.layers[:-1] + (replace(last, weight=3 * last.weight, bias=3 * last.bias),))
    w2 = replace(w, edit_classifiers=dict(w.edit_classifiers, expression=scaled))
    z = np.random.default_rng(8).standard_normal(w.latent_dim) * 0.3
    a = dr.instance_specific(w, "expression", z, 1).vector
    b = dr.instance_specific(w2, "expression", z, 1).vector
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_average_is_constant_summand(w34):
    for n in (1, 7, 300):
        np.testing.assert_allclose(dr.attribute_level_avg(w34, "a", n, seed=n).vector, [0.6, 0.8], atol=1e-12)


def test_average_resampling_stability(nonlinear_world):
    a = dr.attribute_level_avg(nonlinear_world, "age", 1000, seed=7).vector
    b = dr.attribute_level_avg(nonlinear_world, "age", 1000, seed=8).vector
    assert a @ b >= 0.99


def test_average_zero_samples(w34):
    with pytest.raises(EmptySampleSet):
        dr.attribute_level_avg(w34, "a", 0, seed=0)


def test_boundary_recovers_axis():
    rng = np.random.default_rng(2)
    Z = rng.standard_normal((1000, 5))
    Z = Z[np.abs(Z[:, 0]) > 0.2]
    d = dr.attribute_level_boundary(Z, (Z[:, 0] > 0).astype(int), "x")
    assert 1.0 - d.vector[0] < 0.02


def test_boundary_accepts_pairs():
    rng = np.random.default_rng(5)
    Z = rng.standard_normal((300, 3))
    d = dr.attribute_level_boundary([(z, int(z[1] > 0)) for z in Z])
    assert d.vector[1] > 0.95


def test_boundary_single_class():
    with pytest.raises(DegenerateData):
        dr.attribute_level_boundary(np.ones((10, 2)), np.ones(10, dtype=int))


def test_boundary_against_oracle(linear_world):
    w = linear_world
    Z = np.random.default_rng(4).standard_normal((2000, w.latent_dim))
    for name in w.attribute_names:
        g = w.spec(name).oracle_direction
        d = dr.attribute_level_boundary(Z, (Z @ g > 0).astype(int), name)
        assert d.vector @ g >= 0.98


def test_combine_endpoints_and_midpoint():
    a, b = sd([1.0, 0.0]), sd([0.0, 1.0], kind="instance_specific")
    assert np.array_equal(dr.combine(a, b, 1.0).vector, a.vector)
    assert np.array_equal(dr.combine(a, b, 0.0).vector, b.vector)
    np.testing.assert_allclose(dr.combine(a, b, 0.5).vector, [0.70710678, 0.70710678], atol=1e-8)
    assert dr.combine(a, b, 0.5).kind == "instance_aware"


def test_combine_antipodal():
    with pytest.raises(DegenerateCombination):
        dr.combine(sd([1.0, 0.0]), sd([-1.0, 0.0]), 0.5)


def test_combine_rejects_bad_lambda():
    with pytest.raises(ConfigError):
        dr.combine(sd([1.0, 0.0]), sd([0.0, 1.0]), 1.5)


def test_projection_examples():
    np.testing.assert_allclose(dr.condition_project(sd([1, 0]), [sd([0, 1], "b")]).vector, [1, 0], atol=1e-15)
    out = dr.condition_project(sd([1, 0]), [sd([0.70710678, 0.70710678], "b")]).vector
    np.testing.assert_allclose(out, [0.70710678, -0.70710678], atol=1e-8)
    with pytest.raises(DegenerateProjection):
        dr.condition_project(sd([1, 0]), [sd([1, 0], "b")])


def test_projection_drops_dependent_condition():
    c1, c2 = sd([0, 1, 0], "b"), sd([0, 1, 0], "c")
    out = dr.condition_project(sd([1, 1, 1]), [c1, c2]).vector
    np.testing.assert_allclose(out, np.array([1, 0, 1]) / np.sqrt(2), atol=1e-12)


unit = hnp.arrays(np.float64, 6, elements=st.floats(-1, 1)).filter(lambda v: np.linalg.norm(v) > 0.1)


@settings(max_examples=100, deadline=None)
@given(unit, st.lists(unit, min_size=1, max_size=4))
def test_projection_orthogonal_and_idempotent(p, cs):
    primal, conds = sd(p), [sd(c, f"c{i}") for i, c in enumerate(cs)]
    try:
        once = dr.condition_project(primal, conds)
    except DegenerateProjection:
        return
    for c in conds:
        assert abs(once.vector @ c.vector) <= 1e-10
    twice = dr.condition_project(once, conds)
    np.testing.assert_allclose(twice.vector, once.vector, atol=1e-10)
    assert abs(np.linalg.norm(once.vector) - 1) < 1e-10


@settings(max_examples=60, deadline=None)
@given(unit, unit, st.floats(0.0, 1.0))
def test_combine_exchange_symmetry(a, b, lam):
    da, db = sd(a), sd(b)
    try:
        x = dr.combine(da, db, lam).vector
        y = dr.combine(db, da, 1.0 - lam).vector
    except DegenerateCombination:
        return
    np.testing.assert_allclose(x, y, atol=1e-12)
    assert abs(np.linalg.norm(x) - 1) < 1e-10


def test_instance_aware_degenerates_to_attribute_level(biased_world):
    w = biased_world
    dirs = dr.attribute_directions(w)
    z = np.random.default_rng(0).standard_normal(w.latent_dim)
    got = dr.instance_aware_conditional(w, "age", ["eyeglasses"], z, 1, ControlFactors(1, 1), dirs).vector
    yb = int(w.score("eyeglasses", z) > 0.5)
    ref = dr.condition_project(
        SemanticDirection(dirs["age"], "age", "attribute_level"),
        [SemanticDirection(dirs["eyeglasses"] * (2 * yb - 1), "eyeglasses", "attribute_level")],
    ).vector
    np.testing.assert_allclose(got, ref, atol=1e-12)


def test_conditional_orthogonal_to_conditions(linear_world):
    w = linear_world
    rng = np.random.default_rng(1)
    for lam1, lam2 in ((0, 0), (0.75, 0), (0.3, 0.6), (1, 1)):
        z = 0.3 * rng.standard_normal(w.latent_dim)  # stay clear of saturated logits
        f = ControlFactors(lam1, lam2)
        d = dr.instance_aware_conditional(w, "age", ["gender", "expression"], z, 1, f).vector
        dirs = dr.attribute_directions(w)
        for b in ("gender", "expression"):
            yb = int(w.score(b, z) > 0.5)
            cb = dr.combine(
                SemanticDirection(dirs[b] * (2 * yb - 1), b, "attribute_level"), dr.instance_specific(w, b, z, yb), lam2
            ).vector
            assert abs(d @ cb) <= 1e-10


def test_instance_information_changes_direction(biased_world):
    w = biased_world
    z = np.random.default_rng(2).standard_normal(w.latent_dim)
    a = dr.instance_aware_conditional(w, "age", ["eyeglasses"], z, 1, ControlFactors(0.75, 0)).vector
    b = dr.instance_aware_conditional(w, "age", ["eyeglasses"], z, 1, ControlFactors(1, 1)).vector
    assert 1.0 - a @ b > 0.01


def test_direction_file_round_trip(tmp_path):
    d = sd([0.1, 0.2, -0.3], "age", "conditional")
    path = tmp_path / "age.dir.json"
    dr.save_direction(d, path)
    back = dr.load_direction(path)
    assert back.vector.tobytes() == d.vector.tobytes() and back.kind == "conditional"


def test_direction_must_be_unit():
    with pytest.raises(ValueError):
        SemanticDirection(np.array([1.0, 1.0]), "a", "attribute_level")
