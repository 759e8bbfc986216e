import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from bark.space import (Box, Categorical, Continuous, DomainError, FeatureSpace, Integer, box_contains,
                        box_contains_array, empty_dataset, sample_uniform, sample_uniform_array, standardize)


def test_standardize_two_points():
    ds = standardize([[0.0], [1.0]], [2.0, 4.0])
    assert_allclose(ds.y, [-1.0, 1.0])
    assert ds.y_mean == 3.0 and ds.y_std == 1.0


def test_standardize_single_point_falls_back_to_unit_scale():
    ds = standardize([[0.0]], [5.0])
    assert_allclose(ds.y, [0.0])
    assert ds.y_std == 1.0


def test_standardize_moments(rng):
    y = rng.uniform(-3, 7, size=100)
    ds = standardize(rng.random((100, 1)), y)
    assert abs(ds.y.mean()) < 1e-10
    assert abs(ds.y.std() - 1.0) < 1e-10
    assert_allclose(ds.to_raw(ds.y), y)


def test_standardize_rejects_bad_input():
    with pytest.raises(ValueError):
        standardize([[0.0]], [math.nan])
    with pytest.raises(ValueError):
        standardize([[0.0], [1.0]], [1.0])


def test_empty_dataset(mixed_space):
    ds = empty_dataset(mixed_space)
    assert ds.n == 0 and ds.X.shape == (0, 3)


def test_box_contains_examples():
    space = FeatureSpace((Continuous(0.0, 1.0),))
    assert box_contains(space.full_box(), (0.3,))
    assert not box_contains(Box(((0.0, 0.5),)), (0.75,))
    assert not box_contains(Box((0b101,)), (1,))
    assert box_contains(Box((0b101,)), (2,))


def test_box_contains_array_matches_scalar(mixed_space, rng):
    box = Box(((0.2, 0.7), (-1, 2), 0b0110))
    X = sample_uniform_array(mixed_space, 500, rng)
    expected = [box_contains(box, x) for x in mixed_space.to_points(X)]
    assert box_contains_array(box, X).tolist() == expected


def test_sample_uniform_in_domain(rng):
    space = FeatureSpace((Continuous(0, 1), Continuous(0, 1)))
    pts = sample_uniform(space, 5, rng)
    assert len(pts) == 5
    assert all(0 <= v <= 1 for p in pts for v in p)


def test_sample_uniform_categorical_frequencies(rng):
    space = FeatureSpace((Categorical(5),))
    X = sample_uniform_array(space, 10_000, rng)
    freq = np.bincount(X[:, 0].astype(int), minlength=5) / 10_000
    se = math.sqrt(0.2 * 0.8 / 10_000)
    assert np.all(np.abs(freq - 0.2) < 4 * se)


def test_sample_uniform_integer_mean(rng):
    space = FeatureSpace((Integer(-1, 1),))
    X = sample_uniform_array(space, 10_000, rng)
    assert set(np.unique(X[:, 0])) == {-1.0, 0.0, 1.0}
    se = math.sqrt(2 / 3 / 10_000)
    assert abs(X[:, 0].mean()) < 4 * se


def test_feature_validation():
    with pytest.raises(ValueError):
        Continuous(1.0, 1.0)
    with pytest.raises(ValueError):
        Integer(0, 0)
    with pytest.raises(ValueError):
        Categorical(1)
    with pytest.raises(ValueError):
        Categorical(65)
    with pytest.raises(ValueError):
        Categorical(2, labels=("a",))


def test_validate_point(mixed_space):
    assert mixed_space.validate_point((0.5, 2, 3)) == (0.5, 2, 3)
    for bad in [(1.5, 0, 0), (0.5, 4, 0), (0.5, 0, 4), (0.5, 0.5, 0), (0.5, 0), (math.nan, 0, 0)]:
        with pytest.raises(DomainError):
            mixed_space.validate_point(bad)


def test_space_dict_round_trip(mixed_space):
    again = FeatureSpace.loads(mixed_space.dumps())
    assert again == mixed_space


def test_space_dict_rejects_unknown_keys():
    with pytest.raises(ValueError):
        FeatureSpace.from_dict({"features": [], "extra": 1})
    with pytest.raises(ValueError):
        FeatureSpace.from_dict({"features": [{"name": "a", "type": "continuous", "lo": 0, "hi": 1, "x": 2}]})
    with pytest.raises(ValueError):
        FeatureSpace.from_dict({"features": [{"name": "a", "type": "weird"}]})


def test_category_labels(mixed_space):
    f = mixed_space[2]
    assert f.index("b") == 2 and f.label(3) == "k"
    with pytest.raises(DomainError):
        f.index("zzz")


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(-2, 3), st.integers(0, 3)), min_size=1, max_size=20))
def test_to_array_to_points_round_trip(points):
    space = FeatureSpace((Continuous(0.0, 1.0), Integer(-2, 3), Categorical(4)))
    X = space.to_array(points)
    assert space.to_points(X) == [space.validate_point(p) for p in points]
    assert space.contains_array(X).all()
