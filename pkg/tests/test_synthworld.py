import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from latentedit import synthworld
from latentedit.errors import ConfigError, InfeasibleAngles, UnknownAttribute
from latentedit.synthworld import (
    AttributeSpec,
    SamplingBias,
    World,
    WorldConfig,
    build_generator,
    oracle_directions,
    oracle_label,
    sample_biased,
)


def bare_world(config):
    """Oracles and generator only; enough for sampling and labelling."""
    dirs = oracle_directions(config)
    attrs = tuple(AttributeSpec(n, dirs[i]) for i, n in enumerate(config.attributes))
    return World(config, attrs, build_generator(config), {}, {})


def test_orthogonal_oracles():
    cfg = WorldConfig(attributes=("a", "b"), generator_kind="linear", seed=1)
    g = oracle_directions(cfg)
    assert abs(g[0] @ g[1]) < 1e-10
    np.testing.assert_allclose(np.linalg.norm(g, axis=1), 1.0, atol=1e-12)


def test_45_degree_oracles():
    cfg = WorldConfig(attributes=("a", "b"), angles={"a|b": 45.0})
    g = oracle_directions(cfg)
    assert abs(g[0] @ g[1] - 0.70710678) < 1e-8
    assert abs(g[0] @ g[1] - np.sqrt(0.5)) < 1e-10


def test_infeasible_when_gram_indefinite():
    cfg = WorldConfig(attributes=("a", "b", "c"), angles={"a|b": 5.0, "a|c": 5.0})
    with pytest.raises(InfeasibleAngles):
        oracle_directions(cfg)


def test_infeasible_angles():
    cfg = WorldConfig(
        latent_dim=2, obs_dim=4, attributes=("a", "b", "c"), angles={"a|b": 30.0, "a|c": 30.0, "b|c": 30.0}
    )
    with pytest.raises(InfeasibleAngles):
        oracle_directions(cfg)


def test_angles_needing_too_many_dimensions():
    cfg = WorldConfig(latent_dim=2, obs_dim=4, attributes=("a", "b", "c"))
    with pytest.raises(InfeasibleAngles):
        oracle_directions(cfg)


@settings(max_examples=30, deadline=None)
@given(st.floats(5.0, 175.0), st.floats(5.0, 175.0), st.integers(0, 1000))
def test_realized_angles_match_request(ab, ac, seed):
    # with b orthogonal to c the Gram matrix is PSD iff cos^2(ab) + cos^2(ac) <= 1
    assume(np.cos(np.radians(ab)) ** 2 + np.cos(np.radians(ac)) ** 2 < 0.999)
    cfg = WorldConfig(attributes=("a", "b", "c"), angles={"a|b": ab, "a|c": ac}, seed=seed)
    g = oracle_directions(cfg)
    np.testing.assert_allclose(g[0] @ g[1], np.cos(np.radians(ab)), atol=1e-10)
    np.testing.assert_allclose(g[0] @ g[2], np.cos(np.radians(ac)), atol=1e-10)
    np.testing.assert_allclose(g[1] @ g[2], 0.0, atol=1e-10)


def test_unbiased_labels_independent():
    w = bare_world(WorldConfig(attributes=("a", "b"), seed=2))
    s = sample_biased(w, 10_000, seed=5)
    a, b = s.labels["a"], s.labels["b"]
    assert abs(b[a == 1].mean() - 0.5) < 0.02
    assert abs(b[a == 1].mean() - b.mean()) < 0.02


def test_configured_bias_is_realized():
    w = bare_world(synthworld.default_biased_config(seed=11))
    s = sample_biased(w, 10_000, seed=5)
    age, glasses = s.labels["age"], s.labels["eyeglasses"]
    assert abs(glasses[age == 1].mean() - 0.9) < 0.02


def test_bias_against_the_geometry():
    cfg = WorldConfig(
        attributes=("a", "b"), angles={"a|b": 45.0}, sampling_bias=(SamplingBias("a", "b", 0.3),), seed=3
    )
    s = sample_biased(bare_world(cfg), 10_000, seed=1)
    assert abs(s.labels["b"][s.labels["a"] == 1].mean() - 0.3) < 0.02


def test_zero_count_rejected():
    w = bare_world(WorldConfig(attributes=("a", "b")))
    with pytest.raises(ConfigError):
        sample_biased(w, 0, seed=0)


def test_sampling_is_deterministic():
    w = bare_world(synthworld.default_biased_config(seed=11))
    a, b = sample_biased(w, 500, seed=9), sample_biased(w, 500, seed=9)
    assert a.z.tobytes() == b.z.tobytes()
    assert a.x.tobytes() == b.x.tobytes()


def test_oracle_label_examples():
    w = synthworld.identity_logistic_world({"a": np.array([1.0, 0.0])})
    assert oracle_label(w, "a", [2.0, -5.0]) == 1
    assert oracle_label(w, "a", [-0.1, 9.0]) == 0
    assert oracle_label(w, "a", [0.0, 3.0]) == 0  # tie goes to the negative class
    with pytest.raises(UnknownAttribute):
        oracle_label(w, "b", [0.0, 0.0])


def test_unknown_config_field():
    with pytest.raises(ConfigError):
        WorldConfig.from_dict({"latent_dim": 4, "wobble": 1})


def test_default_classifier_choice():
    assert WorldConfig(generator_kind="linear").hidden == ()
    assert WorldConfig(generator_kind="nonlinear").hidden == (8,)
    assert WorldConfig(generator_kind="linear", classifier_hidden=(4,)).hidden == (4,)


def test_generator_linear_part_condition_number():
    cfg = WorldConfig(generator_kind="linear", seed=4)
    s = np.linalg.svd(build_generator(cfg).layers[0].weight, compute_uv=False)
    assert s.max() / s.min() <= 3.0


def test_classifiers_meet_floor(biased_world):
    for key, r in biased_world.report.items():
        assert r["holdout_accuracy"] >= 0.95, key


def test_build_is_deterministic_and_round_trips(linear_world):
    again = synthworld.build_world(linear_world.config)
    assert synthworld.dumps_world(again) == synthworld.dumps_world(linear_world)
    back = synthworld.loads_world(synthworld.dumps_world(linear_world))
    assert synthworld.dumps_world(back) == synthworld.dumps_world(linear_world)


def test_linear_score_monotone_along_oracle(linear_world):
    rng = np.random.default_rng(0)
    for name in linear_world.attribute_names:
        g = linear_world.spec(name).oracle_direction
        for _ in range(5):
            z0 = rng.standard_normal(linear_world.latent_dim)
            ts = np.linspace(-4, 4, 41)
            s = linear_world.score(name, z0 + ts[:, None] * g)
            assert np.all(np.diff(s) >= 0)


def test_score_grad_matches_finite_differences(nonlinear_world):
    z = np.random.default_rng(1).standard_normal(nonlinear_world.latent_dim)
    g = nonlinear_world.score_grad("age", z)
    fd = np.array(
        [
            (nonlinear_world.score("age", z + 1e-5 * e) - nonlinear_world.score("age", z - 1e-5 * e)) / 2e-5
            for e in np.eye(len(z))
        ]
    )
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-9)
