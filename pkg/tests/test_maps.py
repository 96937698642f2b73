import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gibbsdim.digits import Digit, DigitArray
from gibbsdim.errors import ExactDigitRequired, InvalidRange, InvalidSpec
from gibbsdim.maps import (
    GaussMap,
    PiecewiseLinear,
    continuant,
    cyl_log_length,
    cyl_log_lengths_gauss,
    distortion_bound,
    distortion_residual,
    neighbor_cylinders,
    union_log_length,
)
from gibbsdim.partition import GaussPartition, PowerLaw

PL = PiecewiseLinear(GaussPartition())
digit_lists = st.lists(st.integers(min_value=1, max_value=1000), min_size=1, max_size=50)


def cf_value(digits) -> Fraction:
    x = Fraction(0)
    for a in reversed(digits):
        x = 1 / (a + x)
    return x


def gauss_cylinder_length(digits) -> Fraction:
    """Exact length from the two endpoints [0; a1..an] and [0; a1..an + 1]."""
    return abs(cf_value(digits) - cf_value(digits[:-1] + [digits[-1] + 1]))


# -- examples -----------------------------------------------------------------

def test_fibonacci_continuants():
    assert cyl_log_length(GaussMap(), [1, 1, 1]) == pytest.approx(-math.log(15), abs=1e-12)
    st_ = continuant([1, 1, 1])
    assert math.exp(st_.log_q_curr) == pytest.approx(3.0)
    assert math.exp(st_.log_q_prev) == pytest.approx(2.0)


def test_piecewise_linear_product():
    assert cyl_log_length(PL, [2, 5]) == pytest.approx(math.log(1 / 6) + math.log(1 / 30), abs=1e-12)
    assert cyl_log_length(PL, [2, 5]) == pytest.approx(-5.19296, abs=1e-5)


def test_gauss_map_two_digits():
    # endpoints 5/11 and 6/13
    assert gauss_cylinder_length([2, 5]) == Fraction(1, 143)
    assert cyl_log_length(GaussMap(), [2, 5]) == pytest.approx(-math.log(143), abs=1e-12)


def test_gauss_map_rejects_log_only_digits():
    with pytest.raises(ExactDigitRequired):
        cyl_log_length(GaussMap(), [Digit.of(3), Digit.from_log(40.0)])
    # the asymptotic path is opt-in
    v = cyl_log_length(GaussMap(allow_log_digits=True), [Digit.of(3), Digit.from_log(40.0)])
    assert v == pytest.approx(-2 * (40.0 + math.log(3)), abs=1e-6)


@pytest.mark.parametrize(
    "prefix, a, b, expected",
    [
        ([], 1, None, 0.0),
        ([3], 2, None, math.log(1 / 12) + math.log(1 / 2)),
        ([], 10, 19, math.log(1 / 20)),
    ],
)
def test_union_examples(prefix, a, b, expected):
    assert union_log_length(PL, prefix, a, b) == pytest.approx(expected, abs=1e-12)


def test_union_errors():
    with pytest.raises(InvalidRange):
        union_log_length(PL, [], 5, 4)
    with pytest.raises(InvalidSpec):
        union_log_length(GaussMap(), [], 1, 2)


@pytest.mark.parametrize(
    "prefix, left, right",
    [([3, 7], [3, 8], [3, 6]), ([5, 1], [5, 2], None), ([4], [5], [3])],
)
def test_neighbors(prefix, left, right):
    lft, rgt = neighbor_cylinders(prefix)
    assert [d.exact for d in lft] == left
    assert (None if rgt is None else [d.exact for d in rgt]) == right


def test_distortion_examples():
    # PL length 1/8 against Gauss 1/15
    assert distortion_residual([1, 1, 1]) == pytest.approx(math.log(15 / 8), abs=1e-12)
    assert distortion_residual([1, 1, 1]) <= distortion_bound(3)
    assert distortion_residual([100]) == pytest.approx(0.0, abs=1e-12)


# -- properties ---------------------------------------------------------------

@settings(max_examples=200)
@given(digit_lists)
def test_gauss_length_matches_exact_endpoints(digits):
    exact = gauss_cylinder_length(digits)
    log_exact = math.log(exact.numerator) - math.log(exact.denominator)
    assert cyl_log_length(GaussMap(), digits) == pytest.approx(log_exact, rel=1e-12, abs=1e-12)


@given(digit_lists, st.integers(min_value=1, max_value=10**7))
def test_pl_additivity(prefix, d):
    part = GaussPartition()
    assert cyl_log_length(PL, prefix + [d]) == pytest.approx(cyl_log_length(PL, prefix) + part.log_r(d), abs=1e-9)


@given(digit_lists, st.integers(min_value=1, max_value=10**6))
def test_union_of_one_is_the_cylinder(prefix, a):
    assert union_log_length(PL, prefix, a, a) == pytest.approx(cyl_log_length(PL, prefix + [a]), abs=1e-12)


@given(digit_lists, st.integers(min_value=1, max_value=10**6))
def test_nesting(prefix, d):
    for model in (PL, GaussMap(), PiecewiseLinear(PowerLaw(3.0))):
        assert cyl_log_length(model, prefix + [d]) < cyl_log_length(model, prefix)


@given(st.lists(st.integers(min_value=1, max_value=1000), min_size=3, max_size=60))
def test_gauss_shrinks_by_log2_per_level_after_depth_two(digits):
    lengths = [cyl_log_length(GaussMap(), digits[:k]) for k in range(2, len(digits) + 1)]
    steps = -np.diff(lengths)
    assert np.all(steps >= math.log(2) - 1e-12)


@settings(max_examples=300)
@given(digit_lists)
def test_distortion_bound(digits):
    assert distortion_residual(digits) <= distortion_bound(len(digits)) + 1e-12


def test_distortion_depth_limit():
    with pytest.raises(InvalidSpec):
        distortion_residual([1] * 1001)


def test_cumulative_gauss_lengths_match_scalar():
    rng = np.random.default_rng(3)
    ds = [int(v) for v in rng.integers(1, 500, size=200)]
    arr = DigitArray.from_digits([Digit.of(v) for v in ds])
    curve = cyl_log_lengths_gauss(arr)
    for k in (1, 2, 50, 200):
        assert curve[k - 1] == pytest.approx(cyl_log_length(GaussMap(), ds[:k]), rel=1e-13)
