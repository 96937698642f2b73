import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chisquare

from gibbsdim.digits import Digit, DigitArray
from gibbsdim.errors import InvalidRange, InvalidSpec, Marker
from gibbsdim.measures import (
    Geometric,
    LogSquare,
    MarkovClassMeasure,
    TableMeasure,
    Zeta,
    cylinder_log_measure,
    decay_ratio_curve,
    entropy_curve,
    entropy_partial,
    lyapunov_partial,
    parse_measure,
    polynomial_lower_bound_check,
    trimmed_criterion_partial,
    union_log_measure,
    volume_lemma_dim,
)
from gibbsdim.partition import GaussPartition


def _logsquare_oracle(M: int = 20000):
    """Normalizer and a tail of 1/(m log^2 m): exact head plus Euler-Maclaurin remainder."""
    mp.mp.dps = 30
    f = lambda m: 1 / (m * mp.log(m) ** 2)  # noqa: E731
    rem = 1 / mp.log(M) + f(M) / 2 - mp.diff(f, M) / 12 + mp.diff(f, M, 3) / 720
    head = mp.fsum(f(m) for m in range(2, M))
    c = 1 / (head + rem)
    tail_1000 = c * (rem + mp.fsum(f(m) for m in range(1001, M)))
    return float(c), float(tail_1000)


C_ORACLE, P1000_ORACLE = 0.4739914265443749, 0.06861232138848697


def test_oracle_is_frozen():
    c, P = _logsquare_oracle()
    assert c == pytest.approx(C_ORACLE, rel=1e-14)
    assert P == pytest.approx(P1000_ORACLE, rel=1e-14)


# -- point values ---------------------------------------------------------------

def test_logsquare_normalizer(logsquare):
    assert logsquare.c == pytest.approx(C_ORACLE, rel=1e-12)
    lo, hi = logsquare.c_bracket
    assert lo <= C_ORACLE <= hi


def test_logsquare_first_digit(logsquare):
    assert logsquare.log_p(1) == pytest.approx(math.log(C_ORACLE / (2 * math.log(2) ** 2)), abs=1e-12)
    assert logsquare.log_p(1) == pytest.approx(-0.7064, abs=5e-4)


def test_geometric_seventh_digit():
    assert Geometric(0.5).log_p(7) == pytest.approx(-7 * math.log(2), abs=1e-12)


def test_logsquare_far_tail(logsquare):
    v = logsquare.log_tail_P(Digit.from_log(1e6))
    assert v == pytest.approx(math.log(C_ORACLE) - math.log(1e6), abs=1e-5)
    assert v == pytest.approx(-14.562, abs=1e-3)


def test_logsquare_tail_at_1000(logsquare):
    assert math.exp(logsquare.log_tail_P(1000)) == pytest.approx(P1000_ORACLE, rel=1e-9)


def test_zeta_normalized():
    z = Zeta(2.5)
    assert math.exp(z.log_p(1)) == pytest.approx(1 / float(mp.zeta(2.5)), rel=1e-12)
    assert math.exp(z.log_tail_P(10)) == pytest.approx(float(mp.zeta(2.5, 10) / mp.zeta(2.5)), rel=1e-10)


def test_measure_parsing():
    assert isinstance(parse_measure("geometric:0.25"), Geometric)
    assert isinstance(parse_measure("logsquare"), LogSquare)
    assert isinstance(parse_measure("zeta:3"), Zeta)
    for bad in ("geometric:2", "zeta:1", "cauchy", "geometric:x"):
        with pytest.raises(InvalidSpec):
            parse_measure(bad)


def test_table_measure_with_tail(tmp_path):
    q = 0.5
    path = tmp_path / "t.txt"
    lines = [f"{n},{(1 - q) * q ** (n - 1)!r}" for n in range(1, 21)]
    path.write_text("\n".join(lines) + "\ntail=geometric:0.5\n")
    m = parse_measure(f"table:{path}")
    g = Geometric(q)
    for d in (1, 20, 21, 60):
        assert m.log_p(d) == pytest.approx(g.log_p(d), abs=1e-9)
        assert m.log_tail_P(d) == pytest.approx(g.log_tail_P(d), abs=1e-9)


def test_atom():
    a = TableMeasure.atom()
    assert a.log_p(1) == 0.0
    assert a.log_p(2) == -math.inf


# -- sampling -------------------------------------------------------------------

def test_inverse_cdf_examples(logsquare):
    g = Geometric(0.5)
    assert g.digit_from_uniform(0.74).exact == 2
    assert g.digit_from_uniform(0.2).exact == 1
    assert logsquare.digit_from_uniform(0.3).exact == 1  # p_1 = 0.4934


def test_logsquare_far_inversion(logsquare):
    u = 1 - 1e-6
    d = logsquare.digit_from_uniform(u)
    assert d.exact is None
    assert d.log_value == pytest.approx(C_ORACLE * 1e6, rel=0.01)
    # P(A > a) = P_{a+1}
    assert math.exp(logsquare.log_tail_P(Digit.from_log(d.log_value))) == pytest.approx(1 - u, rel=0.01)


def test_sampler_law(logsquare):
    rng = np.random.default_rng(12345)
    n_draw = 10**6
    d = logsquare.sample(rng, n_draw)
    exact = np.asarray(d.exact)
    counts = np.array([np.sum(exact == k) for k in range(1, 51)] + [0])
    counts[-1] = n_draw - counts[:-1].sum()
    p = np.exp([logsquare.log_p(k) for k in range(1, 51)])
    expected = np.append(p, 1 - p.sum()) * n_draw
    assert chisquare(counts, expected).pvalue > 1e-3
    beyond = np.sum((exact == 0) | (exact > logsquare.n_table))
    pt = math.exp(logsquare.log_tail_P(logsquare.n_table + 1))
    se = math.sqrt(n_draw * pt * (1 - pt))
    assert abs(beyond - n_draw * pt) <= 3 * se


# -- cylinders ------------------------------------------------------------------

def test_cylinder_examples(logsquare):
    g = Geometric(0.5)
    assert cylinder_log_measure(g, [1, 2, 3]) == pytest.approx(-6 * math.log(2), abs=1e-12)
    assert cylinder_log_measure(logsquare, []) == 0.0
    assert cylinder_log_measure(logsquare, [2, 2]) == pytest.approx(-4.066547977622546, abs=1e-10)


def test_union_examples(logsquare):
    g = Geometric(0.5)
    assert union_log_measure(logsquare, [], 1) == pytest.approx(0.0, abs=1e-12)
    assert union_log_measure(g, [], 4) == pytest.approx(-3 * math.log(2), abs=1e-12)
    assert union_log_measure(logsquare, [1], 1000) == pytest.approx(-3.385970532607928, abs=1e-9)
    with pytest.raises(InvalidRange):
        union_log_measure(g, [], 5, 3)


@given(
    st.lists(st.integers(min_value=1, max_value=10**9), min_size=0, max_size=30),
    st.integers(min_value=1, max_value=10**9),
)
def test_cylinder_additivity(prefix, d):
    m = LogSquare()
    full = cylinder_log_measure(m, prefix + [d])
    assert full == pytest.approx(cylinder_log_measure(m, prefix) + m.log_p(d), abs=1e-9)
    assert union_log_measure(m, prefix, d, d) == pytest.approx(full, abs=1e-12)


@given(st.floats(min_value=20.0, max_value=1e7))
def test_log_only_union_of_one(ell):
    m = LogSquare()
    d = Digit.from_log(ell)
    assert union_log_measure(m, [3], d, d) == pytest.approx(cylinder_log_measure(m, [3, d]), abs=1e-12)


@pytest.mark.parametrize("K", [2, 10, 1000, 10**5])
def test_normalization(logsquare, K):
    head = math.fsum(np.exp(logsquare.log_p_range(1, K - 1)))
    assert head + math.exp(logsquare.log_tail_P(K)) == pytest.approx(1.0, abs=1e-9)


def test_crossover(logsquare):
    assert logsquare.check_crossover() <= 1e-4
    assert Zeta(1.5).check_crossover() <= 1e-4


# -- series -----------------------------------------------------------------------

def test_decay_pointwise(logsquare, gauss):
    c = decay_ratio_curve(logsquare, gauss, [10**6])
    assert c.pointwise[0] == pytest.approx(0.717, abs=1e-3)
    g = decay_ratio_curve(Geometric(0.5), gauss, [100])
    assert g.pointwise[0] == pytest.approx(100 * math.log(2) / math.log(100 * 101), rel=1e-12)
    assert g.pointwise[0] == pytest.approx(7.52, abs=5e-3)


def test_tail_ratio_curve(logsquare, gauss):
    cps = [10**3, 10**4, 10**5, 10**6]
    t = decay_ratio_curve(logsquare, gauss, cps).tail_ratio
    assert np.all(t > 0)
    assert np.all(np.diff(t) < 0)
    assert t[-1] < 0.25


def test_geometric_entropy():
    assert entropy_partial(Geometric(0.5), 64) == pytest.approx(2 * math.log(2), abs=1e-15)


def test_geometric_lyapunov(gauss):
    mp.mp.dps = 30
    oracle = mp.fsum(mp.mpf(2) ** -n * mp.log(n * (n + 1)) for n in range(1, 1001))
    assert lyapunov_partial(Geometric(0.5), gauss, 1000) == pytest.approx(float(oracle), rel=1e-13)


def test_logsquare_entropy_diverges(logsquare):
    curve = entropy_curve(logsquare, 10**6, [10**3])
    lookup = dict(zip(curve.checkpoints.tolist(), curve.values))
    n = np.arange(1001, 10**6 + 1, dtype=float)
    p = C_ORACLE / ((n + 1) * np.log1p(n) ** 2)
    gain = math.fsum(-p * np.log(p))
    assert lookup[10**6] - lookup[10**3] == pytest.approx(gain, rel=1e-9)
    assert gain == pytest.approx(0.508, abs=1e-3)
    assert curve.divergent


def test_trimmed_criterion(logsquare, gauss):
    total = trimmed_criterion_partial(logsquare, gauss, 10**6)
    inc = total - trimmed_criterion_partial(logsquare, gauss, 10**5)
    assert 0 < inc < 1e-3 * total
    atom = TableMeasure.atom()
    for N in (1, 5, 100):
        assert trimmed_criterion_partial(atom, gauss, N) == pytest.approx(math.log(2) ** 2, abs=1e-15)


def test_volume_lemma(logsquare, gauss):
    assert volume_lemma_dim(Geometric(0.5), gauss) == pytest.approx(0.909, abs=1e-3)
    assert volume_lemma_dim(TableMeasure.atom(), gauss) == 0.0
    assert volume_lemma_dim(logsquare, gauss) is Marker.DIVERGENT


def test_polynomial_lower_bound(logsquare):
    c = polynomial_lower_bound_check(logsquare, 0.1, 10**3, 10**6)
    assert c is not Marker.FAIL and c > 0
    assert polynomial_lower_bound_check(Geometric(0.5), 0.1, 10, 10**3) is Marker.FAIL
    assert polynomial_lower_bound_check(logsquare, 0.0, 10, 10**3) is Marker.FAIL


# -- Markov -----------------------------------------------------------------------

def test_markov_gibbs_sandwich():
    W = np.array([[1.0, 2.0, 0.5], [0.7, 1.0, 3.0], [2.0, 0.4, 1.0]])
    m = MarkovClassMeasure(Geometric(0.4), W)
    assert m.gibbs_lo < 1.0 < m.gibbs_hi
    rng = np.random.default_rng(7)
    lo, hi = math.log(m.gibbs_lo), math.log(m.gibbs_hi)
    checked = 0
    for _ in range(10):
        d = m.sample(rng, 1001)
        ds = d.to_list()
        log_pi = np.array([m.log_p(x) for x in ds])
        log_T = np.array([m.log_transition(a, b) for a, b in zip(ds[:-1], ds[1:])])
        log_phi = log_pi[:-1] + log_T - log_pi[1:]
        cyl = log_pi[0] + np.concatenate(([0.0], np.cumsum(log_T)))
        S = np.cumsum(log_phi)
        for n in range(1, 1001):
            gap = cyl[n - 1] - S[n - 1]
            assert lo - 1e-9 <= gap <= hi + 1e-9
            checked += 1
        assert cylinder_log_measure(m, d[:1000]) == pytest.approx(cyl[999], abs=1e-8)
        assert m.log_gibbs_ratio(d[:1000], ds[1000]) == pytest.approx(cyl[999] - S[999], abs=1e-8)
    assert checked == 10**4


def test_markov_stationary_mass():
    m = MarkovClassMeasure(LogSquare(), np.array([[1.0, 3.0], [0.5, 1.0]]))
    head = math.fsum(np.exp(m.log_p_range(1, 999)))
    assert head + math.exp(m.log_tail_P(1000)) == pytest.approx(1.0, abs=1e-9)
    assert math.exp(m.log_tail_P(1)) == pytest.approx(1.0, abs=1e-9)


def test_markov_rejects_bad_weights():
    with pytest.raises(InvalidSpec):
        MarkovClassMeasure(Geometric(0.5), np.array([[1.0, -1.0], [1.0, 1.0]]))


@given(st.integers(min_value=10**6, max_value=10**13), st.integers(min_value=0, max_value=50))
def test_narrow_log_range_matches_exact(a, k):
    m = LogSquare()
    exact = m.log_range_sum(a, a + k)
    approx = m.log_range_sum(Digit.from_log(math.log(a)), Digit.from_log(math.log(a + k)))
    # log a resolves widths only to a * ulp(log a)
    resolution = a * math.ulp(math.log(a)) / (k + 1)
    assert approx == pytest.approx(exact, abs=1e-9 + 4 * resolution)
