import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gibbsdim.acceptance import brute_ball_measure
from gibbsdim.digits import Digit
from gibbsdim.errors import DigitOneSkipped, InvalidParameters, InvalidSpec, Marker, NoK0Found
from gibbsdim.estimators import (
    CoverKind,
    ball_measure_bracket,
    case_split_curve,
    case_split_upper,
    estimate_rows,
    ineqsums_check,
    ineqsums_rhs,
    ineqsums_scan,
    lower_cover_curve,
    lower_cover_ratio,
    neighbor_upper_last_valid,
    neighbor_upper_ratio,
    symbolic_curve,
    symbolic_dimension,
)
from gibbsdim.maps import PiecewiseLinear, cyl_log_length
from gibbsdim.measures import Geometric, LogSquare, TableMeasure, cylinder_log_measure, union_log_measure
from gibbsdim.orbits import generate_orbit, orbit_from_digits, plant_excursion
from gibbsdim.partition import GaussPartition

GAUSS = GaussPartition()
PL = PiecewiseLinear(GAUSS)
GEO = Geometric(0.5)
C_LOGSQUARE = 0.4739914265443749


@pytest.fixture(scope="module")
def ls_orbit(logsquare, gauss):
    return generate_orbit(logsquare, gauss, 10**4, seed=17)


# -- symbolic / lower cover ---------------------------------------------------------

def test_atom_symbolic_is_zero(gauss):
    o = orbit_from_digits(TableMeasure.atom(), gauss, [1] * 30)
    for n in (1, 10, 30):
        e = symbolic_dimension(o, n)
        assert e.ratio == 0.0 and e.flag is None
        assert e.kind is CoverKind.SYMBOLIC


def test_lower_cover_whole_space_flag(gauss):
    o = orbit_from_digits(GEO, gauss, [1, 3])
    e = lower_cover_ratio(o, 1)
    assert e.flag is Marker.DEGENERATE_WHOLE_SPACE
    assert math.isnan(e.ratio)
    assert not math.isnan(lower_cover_ratio(o, 2).ratio)


def test_planted_lower_cover(ls_orbit):
    p = plant_excursion(ls_orbit, 10**4, 1e9)
    assert lower_cover_ratio(p, 10**4).ratio <= 0.05


def test_planted_lower_cover_monotone(ls_orbit):
    n = 5000
    ratios = [lower_cover_ratio(plant_excursion(ls_orbit, n, ell), n).ratio for ell in 10.0 ** np.arange(1, 10)]
    assert np.all(np.diff(ratios) < 0)
    # large excursions: ratio ~ (-cum_log_p(n-1) + log ell - log c) / (ell - cum_log_r(n-1))
    ell = 1e9
    approx = (-ls_orbit.cum_log_p_at(n - 1) + math.log(ell) - math.log(C_LOGSQUARE)) / (
        ell - ls_orbit.cum_log_r_at(n - 1)
    )
    assert ratios[-1] == pytest.approx(approx, rel=1e-6)


def test_lower_cover_contains_cylinder(ls_orbit):
    lm_cyl = ls_orbit.cum_log_p
    ll_cyl = ls_orbit.cum_log_r
    for n in range(1, ls_orbit.length + 1, 97):
        e = lower_cover_ratio(ls_orbit, n)
        assert e.log_measure >= lm_cyl[n - 1]
        assert e.log_length >= ll_cyl[n - 1]


def test_running_min_non_increasing(ls_orbit):
    c = lower_cover_curve(ls_orbit)
    run = np.fmin.accumulate(c)
    assert np.all(np.diff(run[~np.isnan(run)]) <= 0)


def test_curves_match_scalar(ls_orbit):
    sym = symbolic_curve(ls_orbit)
    low = lower_cover_curve(ls_orbit)
    cs = case_split_curve(ls_orbit, 100)
    for n in (2, 3, 57, 999, 10**4):
        assert sym[n - 1] == pytest.approx(symbolic_dimension(ls_orbit, n).ratio, rel=1e-12)
        e = lower_cover_ratio(ls_orbit, n)
        if e.flag is None:
            assert low[n - 1] == pytest.approx(e.ratio, rel=1e-12)
        s = case_split_upper(ls_orbit, n, 100)
        assert cs.ratio[n - 2] == pytest.approx(s.ratio, rel=1e-12)
        assert cs.case[n - 2] == s.case


def test_gauss_map_symbolic(gauss):
    o = orbit_from_digits(GEO, gauss, [2, 5])
    e = symbolic_dimension(o, 2, gauss_map=True)
    assert e.log_length == pytest.approx(-math.log(143), abs=1e-12)
    assert symbolic_curve(o, gauss_map=True)[1] == pytest.approx(e.ratio, rel=1e-12)


def test_rows_schema(ls_orbit):
    rows = estimate_rows([symbolic_dimension(ls_orbit, 5), case_split_upper(ls_orbit, 5, 100)], orbit_id=3)
    assert list(rows[0]) == ["orbit_id", "n", "kind", "log_measure", "log_length", "ratio", "flag"]
    assert rows[1]["kind"] == "case_split(100)"
    assert rows[0]["orbit_id"] == 3


# -- neighbour estimator ---------------------------------------------------------------

def test_neighbor_skips_digit_one(gauss):
    o = orbit_from_digits(GEO, gauss, [3, 1])
    with pytest.raises(DigitOneSkipped):
        neighbor_upper_ratio(o, 2)


def test_neighbor_constants(gauss):
    o = orbit_from_digits(GEO, gauss, [1, 3, 2])
    e = neighbor_upper_ratio(o, 3)
    # C1 = (p1 + p2 + p3)/p2, C2 = r3/r2
    assert math.exp(e.extra["log_C1"]) == pytest.approx(7 / 4 / 0.5, rel=1e-12)
    assert math.exp(e.extra["log_C2"]) == pytest.approx((1 / 12) / (1 / 6), rel=1e-12)
    sym = symbolic_dimension(o, 3).ratio
    assert 0 < e.ratio <= 1.5 * sym


def test_neighbor_last_valid_from_checkpoints(logsquare, gauss):
    full = generate_orbit(logsquare, gauss, 3000, seed=5, store=True)
    lean = generate_orbit(logsquare, gauss, 3000, seed=5, store=False)
    a = neighbor_upper_last_valid(full)
    b = neighbor_upper_last_valid(lean)
    assert a.n == b.n
    assert a.ratio == pytest.approx(b.ratio, rel=1e-12)


# -- case split --------------------------------------------------------------------------

def test_case_split_degenerate_k0(ls_orbit):
    for n in (2, 10, 500, 9000):
        a = ls_orbit.digit_at(n)
        if a.exact is None:
            continue
        e = case_split_upper(ls_orbit, n, a.exact)
        assert e.case == 1
        assert e.ratio == pytest.approx(ls_orbit.cum_log_p_at(n) / ls_orbit.cum_log_r_at(n - 1), rel=1e-12)


def test_case_split_planted_is_case_two(ls_orbit):
    p = plant_excursion(ls_orbit, 4000, 1e6)
    assert case_split_upper(p, 4000, 100).case == 2


def _pl_child(b: int) -> tuple[Fraction, Fraction]:
    return Fraction(1, b + 1), Fraction(1, b)


def _r(b: int) -> Fraction:
    return Fraction(1, b * (b + 1)) if b >= 1 else Fraction(0)


@pytest.mark.parametrize("a", [1, 2, 3, 7, 20])
def test_case_one_iff_cylinder_inside_every_ball(a, gauss):
    """Case 1 exactly when the hull of I(a) and I(k0) fits in the neighbour radius."""
    o = orbit_from_digits(GEO, gauss, [4, a])
    rho = _r(a - 1) + _r(a) + _r(a + 1)
    for k0 in range(1, 3 * a + 10):
        lo = min(_pl_child(a)[0], _pl_child(k0)[0])
        hi = max(_pl_child(a)[1], _pl_child(k0)[1])
        expect = 1 if hi - lo <= rho else 2
        assert case_split_upper(o, 2, k0).case == expect, (a, k0)


# -- finite-union inequality ------------------------------------------------------------

def test_rhs_and_preconditions():
    assert ineqsums_rhs(2.0, 0.1, 0.05) == pytest.approx(1.1 / 1.9 + 0.05, abs=1e-15)
    assert ineqsums_rhs(2.0, 0.1, 0.05) == pytest.approx(0.62895, abs=5e-6)
    with pytest.raises(InvalidParameters):
        ineqsums_rhs(2.0, 0.4, 0.05)
    with pytest.raises(InvalidParameters):
        ineqsums_rhs(1.5, 0.25, 0.05)  # (alpha-1)/(alpha+1) = 0.2
    with pytest.raises(InvalidParameters):
        ineqsums_rhs(2.0, 0.1, 0.5)


def _lhs_oracle(k: int, n: int) -> float:
    p = lambda m: C_LOGSQUARE / ((m + 1) * math.log(m + 1) ** 2)  # noqa: E731
    r = lambda m: 1.0 / (m * (m + 1))  # noqa: E731
    num = math.fsum(p(m) for m in range(k, n + k + 1))
    den = math.fsum(r(m) for m in range(k - 1, n + k + 2))
    return math.log(num) / math.log(den)


def test_scan_matches_double_loop(logsquare, gauss):
    ks = [2, 3, 10, 57, 400]
    best, arg = ineqsums_scan(logsquare, gauss, ks, 1, 60)
    for k, b, a in zip(ks, best, arg):
        vals = [_lhs_oracle(k, n) for n in range(1, 61)]
        assert b == pytest.approx(max(vals), rel=1e-10)
        assert a == 1 + int(np.argmax(vals))


def test_check_reports_failure(logsquare, gauss):
    with pytest.raises(NoK0Found) as info:
        ineqsums_check(2.0, 0.1, 0.05, (2, 300), (1, 200), logsquare, gauss)
    rep = info.value.profile
    assert rep.k0 is None
    assert rep.last_violation == 300
    assert rep.overall_max > rep.rhs


def test_check_finds_threshold(logsquare):
    # cubic branch lengths: LHS tends to 1/3 < RHS
    from gibbsdim.partition import PowerLaw

    k0, rep = ineqsums_check(2.0, 0.1, 0.05, (2, 500), (1, 200), logsquare, PowerLaw(3.0))
    assert 2 <= k0 <= 500
    assert np.all(rep.max_lhs[rep.k_values >= k0] <= rep.rhs)
    if k0 > 2:
        assert rep.max_lhs[rep.k_values == k0 - 1][0] > rep.rhs


# -- ball bracket ---------------------------------------------------------------------

def test_bracket_whole_space():
    b = ball_measure_bracket(GEO, GAUSS, [3, 2], 0.0)
    assert (b.log_lo, b.log_hi) == (0.0, 0.0)
    b = ball_measure_bracket(GEO, GAUSS, [3, 2], 2.0)
    assert (b.log_lo, b.log_hi) == (0.0, 0.0)


def test_bracket_rejects_bad_input():
    with pytest.raises(InvalidSpec):
        ball_measure_bracket(GEO, GAUSS, [2], -1.0, depth_cap=41)
    with pytest.raises(InvalidSpec):
        ball_measure_bracket(GEO, GAUSS, [2], -1.0, tail_digit=1)
    with pytest.raises(Exception):
        ball_measure_bracket(GEO, GAUSS, [Digit.from_log(50.0)], -1.0)


def test_bracket_reference_case():
    prefix = [2, 1, 1, 1, 1]
    log_r = cyl_log_length(PL, [2, 1, 1])
    for cap in (6, 8, 12):
        b = ball_measure_bracket(GEO, GAUSS, prefix, log_r, depth_cap=cap)
        assert b.width <= 2 * 0.5**cap
    b = ball_measure_bracket(GEO, GAUSS, prefix, log_r, depth_cap=8)
    ins, up = brute_ball_measure(prefix, Fraction(1, 24), Fraction(1, 2), depth=8)
    # both contain the true mass
    assert b.log_lo <= math.log(up) + 1e-12
    assert b.log_hi >= math.log(ins) - 1e-12


@pytest.mark.parametrize("a1", [1, 2, 5])
def test_bracket_tail_union(a1):
    """A ball of radius |union_{m >= a1} I(m)| around a point of I(a1) swallows the union."""
    union = union_log_measure(GEO, [], a1)
    b = ball_measure_bracket(GEO, GAUSS, [a1], GAUSS.log_tail_R(a1), depth_cap=12)
    assert b.log_lo >= union - 1e-12
    assert b.log_hi >= b.log_lo


prefixes = st.lists(st.integers(min_value=1, max_value=12), min_size=0, max_size=6)


@settings(max_examples=60, deadline=None)
@given(prefixes, st.floats(min_value=-12.0, max_value=-0.01))
def test_bracket_valid_and_tightening(prefix, log_r):
    prev = None
    for cap in (3, 5, 8):
        b = ball_measure_bracket(GEO, GAUSS, prefix, log_r, depth_cap=cap)
        assert b.log_lo <= b.log_hi
        if prev is not None:
            assert b.log_lo >= prev.log_lo - 1e-9
            assert b.log_hi <= prev.log_hi + 1e-9
        prev = b


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=1, max_value=20), min_size=2, max_size=8))
def test_sandwich(prefix):
    """With radius |I_{n-1}(x)| the ball holds I_n(x), so its ratio sits below the sandwich value."""
    n = len(prefix)
    log_r = cyl_log_length(PL, prefix[:-1])
    b = ball_measure_bracket(GEO, GAUSS, prefix, log_r, depth_cap=max(n + 1, 8))
    lm = cylinder_log_measure(GEO, prefix)
    assert b.log_lo >= lm - 1e-9
    assert b.log_hi / log_r <= lm / log_r + 1e-9
