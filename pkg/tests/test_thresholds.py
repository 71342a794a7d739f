import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kcx.thresholds import channel_thresholds, cumulative_histogram, empirical_threshold, logic_value


def brute_threshold(values, p):
    """Scan candidates in ascending order for the first with fraction below >= p."""
    vals = np.asarray(values, dtype=float)
    for v in np.unique(vals):
        if np.mean(vals < v) >= p:
            return float(v)
    return float(vals.max())


@pytest.mark.parametrize(
    "values,p,expected",
    [
        (range(100), 0.8, 80.0),
        (range(100), 0.0, 0.0),
        (range(100), 1.0, 99.0),
        ([5, 5, 5], 0.3, 5.0),
        ([1, 2, 2, 2, 3], 0.3, 3.0),
        ([1, 2, 2, 2, 3], 0.2, 2.0),
        (range(10), 0.7, 7.0),
    ],
)
def test_examples(values, p, expected):
    assert empirical_threshold(values, p) == expected


@given(
    st.lists(st.integers(-50, 50), min_size=1, max_size=60),
    st.floats(0.0, 1.0),
)
def test_matches_brute_force(values, p):
    assert empirical_threshold(values, p) == brute_threshold(values, p)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40), st.floats(0, 1), st.floats(0, 1))
def test_monotone_in_p(values, a, b):
    lo, hi = sorted((a, b))
    assert empirical_threshold(values, lo) <= empirical_threshold(values, hi)


def test_at_most_one_minus_p_above():
    x = np.random.default_rng(0).standard_normal(1000)
    for p in (0.7, 0.81, 0.98):
        t = empirical_threshold(x, p)
        assert np.mean(x > t) <= 1 - p + 1e-12


def test_errors():
    with pytest.raises(ValueError):
        empirical_threshold([], 0.5)
    with pytest.raises(ValueError):
        empirical_threshold([1, 2], 1.5)


def test_logic_value_strict():
    assert logic_value(3.0, 3.0) == 0
    assert logic_value(3.1, 3.0) == 1
    np.testing.assert_array_equal(logic_value([1, 2, 3], 2), [0, 0, 1])


def test_channel_thresholds_per_channel():
    feats = np.stack([np.arange(100.0)[:, None].repeat(2, 1), 10 * np.arange(100.0)[:, None].repeat(2, 1)])
    t = channel_thresholds(feats, [0.8, 0.5])
    np.testing.assert_array_equal(t, [[80, 50], [800, 500]])
    with pytest.raises(ValueError):
        channel_thresholds(feats, [0.5])


def test_cumulative_histogram():
    left, counts, cum = cumulative_histogram(np.arange(100.0), bins=10)
    assert counts.sum() == 100 and cum[-1] == 1.0
    assert np.all(np.diff(cum) >= 0) and left[0] == 0.0
