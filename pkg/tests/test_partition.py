import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gibbsdim.digits import Digit
from gibbsdim.errors import EstimationFailed, InvalidSpec, UnsupportedTailQuery
from gibbsdim.partition import (
    ExplicitTable,
    GaussPartition,
    PowerLaw,
    parse_partition,
    read_table_file,
)


# -- branch lengths -----------------------------------------------------------

@pytest.mark.parametrize(
    "d, expected",
    [(1, math.log(0.5)), (10, -math.log(110)), (Digit.from_log(50.0), -100.0)],
)
def test_gauss_log_r(gauss, d, expected):
    assert gauss.log_r(d) == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize(
    "d, expected",
    [(1, 0.0), (10, -math.log(10)), (Digit.from_log(100.0), -100.0)],
)
def test_gauss_log_tail(gauss, d, expected):
    assert gauss.log_tail_R(d) == pytest.approx(expected, abs=1e-12)


def test_gauss_log_r_near_asymptotic_boundary(gauss):
    # log r at exp(50) is -100 - log(1 + e^-50); the correction is below double precision
    assert abs(gauss.log_r(Digit.from_log(50.0)) + 100.0) < 1e-12


@given(st.integers(min_value=1, max_value=10**7 - 1))
def test_gauss_tail_term_consistency(n):
    g = GaussPartition()
    diff = math.exp(g.log_tail_R(n)) - math.exp(g.log_tail_R(n + 1))
    assert diff == pytest.approx(math.exp(g.log_r(n)), rel=1e-12 * max(1.0, n / 1e3))


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=1, max_value=10**6))
def test_gauss_tail_term_consistency_in_log_space(n):
    # the closed form avoids cancellation, so the log-space identity holds to 1e-12
    g = GaussPartition()
    lhs = g.log_range_sum(n, n)
    assert lhs == pytest.approx(g.log_r(n), abs=1e-12)


@given(st.integers(min_value=1, max_value=10**7), st.integers(min_value=1, max_value=1000))
def test_log_r_non_increasing(n, k):
    g = GaussPartition()
    assert g.log_r(n + k) <= g.log_r(n)


@pytest.mark.parametrize("part", [GaussPartition(), PowerLaw(3.0), PowerLaw(1.5)])
def test_crossover_continuity(part):
    assert part.check_crossover() <= 1e-6


@pytest.mark.parametrize("alpha", [1.5, 2.0, 3.0, 4.5])
@pytest.mark.parametrize("n", [1, 2, 17, 1000, 10**6, 10**7 + 5])
def test_powerlaw_tail_matches_hurwitz_oracle(alpha, n):
    mpmath.mp.dps = 30
    expected = float(mpmath.log(mpmath.zeta(alpha, n) / mpmath.zeta(alpha)))
    assert PowerLaw(alpha).log_tail_R(n) == pytest.approx(expected, rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("alpha, n", [(50.0, 10**7), (300.0, 20), (1500.0, 2)])
def test_powerlaw_tail_below_float_range(alpha, n):
    mpmath.mp.dps = 30
    expected = float(mpmath.log(mpmath.zeta(alpha, n)))
    from gibbsdim.partition import log_hurwitz

    assert float(log_hurwitz(alpha, np.array([float(n)]))[0]) == pytest.approx(expected, rel=1e-12)


def test_powerlaw_log_only_tail_matches_oracle():
    mpmath.mp.dps = 40
    ell = 40.0
    n = mpmath.exp(ell)
    expected = float(mpmath.log(mpmath.zeta(3, n) / mpmath.zeta(3)))
    assert PowerLaw(3.0).log_tail_R(Digit.from_log(ell)) == pytest.approx(expected, rel=1e-10)


def test_range_sum_direct_and_via_tails(gauss):
    # short ranges sum directly, long ranges difference tails; both must agree
    assert gauss.log_range_sum(10, 19) == pytest.approx(math.log(1 / 20), abs=1e-13)
    assert gauss.log_range_sum(5, 5 + 2**21) == pytest.approx(math.log(1 / 5 - 1 / (6 + 2**21)), abs=1e-12)
    p = PowerLaw(2.5)
    direct = math.log(math.fsum(math.exp(p.log_r(k)) for k in range(3, 3000)))
    assert p.log_range_sum(3, 2999) == pytest.approx(direct, abs=1e-12)


# -- convergence exponent -----------------------------------------------------

def test_convergence_exponent_examples():
    assert GaussPartition().convergence_exponent() == 0.5
    assert PowerLaw(4.0).convergence_exponent() == 0.25
    table = ExplicitTable([2.0**-n for n in range(1, 41)], tail="geometric:0.5")
    assert table.convergence_exponent() == 0.0


@given(st.floats(min_value=1.01, max_value=50.0))
def test_convergence_exponent_is_reciprocal_alpha(alpha):
    assert PowerLaw(alpha).convergence_exponent() == 1.0 / alpha


def test_fitted_convergence_exponent():
    assert GaussPartition().fit_convergence_exponent() == pytest.approx(0.5, abs=1e-2)
    assert PowerLaw(3.0).fit_convergence_exponent() == pytest.approx(1 / 3, abs=1e-2)
    bare = ExplicitTable([2.0**-n for n in range(1, 1001)])
    assert bare.fit_convergence_exponent() == pytest.approx(0.0, abs=0.02)


def test_fit_needs_enough_range():
    with pytest.raises(EstimationFailed) as exc:
        GaussPartition().fit_convergence_exponent(n_max=50)
    assert exc.value.diagnostic is not None


# -- tail asymptotics ---------------------------------------------------------

def test_tail_check_gauss_exact(gauss):
    chk = gauss.tail_asymptotic_check(10**2, 10**6)
    assert chk.residual <= 1e-6
    assert chk.constant == pytest.approx(0.0, abs=1e-6)
    assert chk.passed


def test_tail_check_powerlaw_slope():
    chk = PowerLaw(3.0).tail_asymptotic_check(10**3, 10**6)
    assert chk.slope == pytest.approx(-2.0, rel=1e-2)
    assert chk.passed


def test_tail_check_table_without_tail_rule():
    table = ExplicitTable([0.1] * 10)
    with pytest.raises(UnsupportedTailQuery):
        table.tail_asymptotic_check(10**2, 10**3)


# -- explicit tables ----------------------------------------------------------

def test_table_without_tail_refuses_beyond_n():
    t = ExplicitTable([0.5, 0.25, 0.125])
    assert t.log_r(2) == pytest.approx(math.log(0.25))
    with pytest.raises(UnsupportedTailQuery):
        t.log_r(4)


def test_table_with_zero_tail_mass():
    t = ExplicitTable([0.5, 0.25, 0.25])
    assert t.log_tail_R(3) == pytest.approx(math.log(0.25))
    assert t.log_r(7) == -math.inf


def test_table_powerlaw_tail_carries_missing_mass():
    z2 = math.pi**2 / 6
    vals = [n**-2.0 / z2 for n in range(1, 1001)]
    t = ExplicitTable(vals, tail="powerlaw:2")
    mpmath.mp.dps = 30
    assert t.log_tail_R(1001) == pytest.approx(float(mpmath.log(mpmath.zeta(2, 1001) / z2)), rel=1e-10)
    assert math.exp(t.log_tail_R(1)) == pytest.approx(1.0, abs=1e-9)
    assert t.log_r(5000) == pytest.approx(math.log(5000**-2.0 / z2), rel=1e-10)
    assert t.alpha == 2.0


def test_table_tail_seam_is_checked_at_construction():
    # 1/(n(n+1)) is not a pure power law at n = 1000: the seam gap is about 1/(2n)
    vals = [1 / (n * (n + 1)) for n in range(1, 1001)]
    with pytest.raises(InvalidSpec, match="crossover"):
        ExplicitTable(vals, tail="powerlaw:2")


def test_table_rejects_bad_values():
    with pytest.raises(InvalidSpec):
        ExplicitTable([0.7, 0.6])
    with pytest.raises(InvalidSpec):
        ExplicitTable([0.5, -0.1])


def test_read_table_file(tmp_path):
    f = tmp_path / "r.csv"
    f.write_text("# branch lengths\n1,0.5\n2,0.25\n3,0.125\ntail=geometric:0.5\n")
    vals, tail = read_table_file(f)
    assert vals.tolist() == [0.5, 0.25, 0.125]
    assert tail == "geometric:0.5"
    part = parse_partition(f"table:{f}")
    assert part.log_tail_R(4) == pytest.approx(math.log(0.125), abs=1e-12)


def test_read_table_file_errors(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("1,0.5\n3,0.25\n")
    with pytest.raises(InvalidSpec, match=":2:"):
        read_table_file(f)
    f.write_text("1;0.5\n")
    with pytest.raises(InvalidSpec, match=":1:"):
        read_table_file(f)


def test_parse_partition_strings():
    assert isinstance(parse_partition("gauss"), GaussPartition)
    assert parse_partition("powerlaw:3").alpha == 3.0
    with pytest.raises(InvalidSpec):
        parse_partition("cantor")
    with pytest.raises(InvalidSpec):
        parse_partition("powerlaw:x")


def test_vectorized_matches_scalar(gauss):
    from gibbsdim.digits import DigitArray

    ds = [Digit.of(1), Digit.of(7), Digit.of(70000), Digit.of(9_999_999), Digit.from_log(30.0)]
    arr = DigitArray.from_digits(ds)
    np.testing.assert_allclose(gauss.log_r_many(arr), [gauss.log_r(d) for d in ds], rtol=1e-14)
    np.testing.assert_allclose(gauss.log_R_many(arr), [gauss.log_tail_R(d) for d in ds], rtol=1e-14)
