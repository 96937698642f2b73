"""Local-dimension estimators built from cylinder covers.

Every estimator returns ``log(measure) / log(length)`` for some union of
cylinders around the orbit point, in the piecewise-linear model:

* :func:`symbolic_dimension` uses the cylinder ``I_n(x)`` itself;
* :func:`lower_cover_ratio` uses the union of ``I_n(x)`` and every cylinder
  to its left in the parent, which drives the Hausdorff side to zero;
* :func:`neighbor_upper_ratio` inflates the measure by the two neighbours
  and shrinks the length to the left neighbour (packing side, lower bound);
* :func:`case_split_upper` bounds the ball ratio from above with a threshold
  digit ``k0``.

:func:`ineqsums_check` scans the finite-union inequality that makes
``k0`` work, and :func:`ball_measure_bracket` brackets ``mu(B(x, r))``
rigorously for cross-validation at shallow depth.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from ._logmath import first_true, last_true, log1mexp, logdiffexp
from .digits import Digit, DigitArray, DigitLike, as_digit
from .errors import (
    DigitOneSkipped,
    ExactDigitRequired,
    InvalidParameters,
    InvalidSpec,
    Marker,
    NoK0Found,
)
from .maps import GaussMap, cyl_log_length, cyl_log_lengths_gauss
from .measures import DigitMeasure
from .orbits import Orbit
from .partition import ExplicitTable, PartitionSpec

DEGENERATE_TOL = 1e-9


class CoverKind(enum.Enum):
    SYMBOLIC = "symbolic"
    LOWER_COVER = "lower_cover"
    NEIGHBOR_UPPER = "neighbor_upper"
    CASE_SPLIT = "case_split"


@dataclass(frozen=True)
class CoverEstimate:
    """One evaluation of ``log_measure / log_length`` at depth ``n``.

    ``flag`` is ``Marker.DEGENERATE_WHOLE_SPACE`` (with ``ratio`` NaN) when
    both logs vanish.  ``case`` and ``k0`` are set for case-split estimates.
    """

    n: int
    kind: CoverKind
    log_measure: float
    log_length: float
    ratio: float
    flag: Marker | None = None
    case: int | None = None
    k0: int | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def row(self, orbit_id: int = 0) -> dict:
        kind = self.kind.value if self.k0 is None else f"{self.kind.value}({self.k0})"
        return dict(
            orbit_id=orbit_id,
            n=self.n,
            kind=kind,
            log_measure=self.log_measure,
            log_length=self.log_length,
            ratio=self.ratio,
            flag="" if self.flag is None else str(self.flag),
        )


def _estimate(n, kind, lm, ll, **kw) -> CoverEstimate:
    if lm > -DEGENERATE_TOL and ll > -DEGENERATE_TOL:
        return CoverEstimate(n, kind, lm, ll, math.nan, Marker.DEGENERATE_WHOLE_SPACE, **kw)
    return CoverEstimate(n, kind, lm, ll, lm / ll + 0.0, **kw)


def _check_depth(orbit: Orbit, n: int, lo: int = 1) -> None:
    if not lo <= n <= orbit.length:
        raise IndexError(f"depth {n} outside {lo}..{orbit.length}")


# ---------------------------------------------------------------------------
# symbolic and lower cover


def symbolic_dimension(
    orbit: Orbit, n: int, gauss_map: bool = False, allow_log_digits: bool = False
) -> CoverEstimate:
    """``cum_log_p(n) / cum_log_r(n)``; ``gauss_map`` swaps in the continuant length."""
    _check_depth(orbit, n)
    lm = orbit.cum_log_p_at(n)
    if gauss_map:
        orbit._require_stored("Gauss-map symbolic dimension")
        ll = cyl_log_length(GaussMap(allow_log_digits), orbit.digits[:n])
    else:
        ll = orbit.cum_log_r_at(n)
    return _estimate(n, CoverKind.SYMBOLIC, lm, ll)


def symbolic_curve(orbit: Orbit, gauss_map: bool = False, allow_log_digits: bool = False) -> np.ndarray:
    """Symbolic ratios for ``n = 1..N`` of a stored orbit."""
    ll = cyl_log_lengths_gauss(orbit.digits, allow_log_digits) if gauss_map else orbit.cum_log_r
    with np.errstate(invalid="ignore", divide="ignore"):
        return orbit.cum_log_p / ll


def lower_cover_ratio(orbit: Orbit, n: int) -> CoverEstimate:
    """Ratio for ``union_{m >= 0} I(a_1 .. a_{n-1}, a_n + m)``."""
    _check_depth(orbit, n)
    d = orbit.digit_at(n)
    lm = orbit.cum_log_p_at(n - 1) + orbit.measure.log_tail_P(d)
    ll = orbit.cum_log_r_at(n - 1) + orbit.partition.log_tail_R(d)
    return _estimate(n, CoverKind.LOWER_COVER, lm, ll)


def lower_cover_curve(orbit: Orbit) -> np.ndarray:
    """Lower-cover ratios for ``n = 1..N`` (NaN where degenerate)."""
    prev_p = np.concatenate(([0.0], orbit.cum_log_p[:-1]))
    prev_r = np.concatenate(([0.0], orbit.cum_log_r[:-1]))
    lm = prev_p + orbit.measure.log_P_many(orbit.digits)
    ll = prev_r + orbit.partition.log_R_many(orbit.digits)
    deg = (lm > -DEGENERATE_TOL) & (ll > -DEGENERATE_TOL)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(deg, np.nan, lm / ll)


# ---------------------------------------------------------------------------
# packing side


def _neighbor_logs(measure: DigitMeasure, partition: PartitionSpec, d: Digit) -> tuple[float, float]:
    """``log(p_{a-1} + p_a + p_{a+1})`` and ``log r_{a+1}``."""
    lm = float(logsumexp([measure.log_p(d.shift(-1)), measure.log_p(d), measure.log_p(d.shift(1))]))
    return lm, partition.log_r(d.shift(1))


def neighbor_upper_ratio(orbit: Orbit, n: int) -> CoverEstimate:
    """``log(C1 mu(I_n)) / log(C2 |I_n|)`` with exact neighbour constants.

    ``C1 mu(I_n)`` is the measure of the three-cylinder block
    ``I_n^l u I_n u I_n^r`` and ``C2 |I_n| = |I_n^l|`` (the left neighbour).
    """
    _check_depth(orbit, n)
    d = orbit.digit_at(n)
    if d.exact == 1:
        raise DigitOneSkipped(f"digit 1 at depth {n} has no right neighbour")
    lm_local, ll_local = _neighbor_logs(orbit.measure, orbit.partition, d)
    lm = orbit.cum_log_p_at(n - 1) + lm_local
    ll = orbit.cum_log_r_at(n - 1) + ll_local
    c1 = lm_local - orbit.measure.log_p(d)
    c2 = ll_local - orbit.partition.log_r(d)
    return _estimate(n, CoverKind.NEIGHBOR_UPPER, lm, ll, extra={"log_C1": c1, "log_C2": c2})


def neighbor_upper_last_valid(orbit: Orbit, n: int | None = None) -> CoverEstimate:
    """Neighbour ratio at the last ``k <= n`` with ``a_k != 1`` (checkpoint data suffices)."""
    n = orbit.length if n is None else n
    if orbit.stored:
        k = int(np.flatnonzero(orbit.digits.exact[:n] != 1)[-1]) + 1
        return neighbor_upper_ratio(orbit, k)
    c = orbit.checkpoints[n]
    if c.last_big == 0:
        raise DigitOneSkipped("no digit other than 1 up to this depth")
    lm_local, ll_local = _neighbor_logs(orbit.measure, orbit.partition, c.last_big_digit)
    return _estimate(
        c.last_big,
        CoverKind.NEIGHBOR_UPPER,
        c.last_big_prev_cum_log_p + lm_local,
        c.last_big_prev_cum_log_r + ll_local,
    )


def _search_limit(partition: PartitionSpec) -> int:
    if isinstance(partition, ExplicitTable) and partition.tail_rule is None:
        return partition.n_table
    return 1 << 50


def _vec_first_true(pred, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Elementwise smallest ``k`` in ``[lo, hi]`` with ``pred(k)``; ``pred(hi)`` must hold."""
    lo = lo.astype(np.int64).copy()
    hi = hi.astype(np.int64).copy()
    while True:
        act = lo < hi
        if not act.any():
            return lo
        mid = (lo + hi) // 2
        ok = pred(mid)
        hi = np.where(act & ok, mid, hi)
        lo = np.where(act & ~ok, mid + 1, lo)


def _neighbor_runs(partition: PartitionSpec, a: np.ndarray, log_rho: np.ndarray):
    """For exact digits ``a`` and normalized radius ``rho`` return the run ``[m_R, m_L]``.

    The run holds every sibling ``m`` whose union with ``I(a)`` has length at
    most ``rho``; these cylinders lie in a ball of radius ``rho`` around any
    point of ``I(a)``.  ``m_L = -1`` encodes an infinite left run.
    """
    af = a.astype(float)
    lR = partition._log_R_int
    # right run: smallest m in [1, a] with R_m <= R_{a+1} + rho
    target_r = np.logaddexp(lR(af + 1.0), log_rho)
    m_r = _vec_first_true(lambda m: lR(m.astype(float)) <= target_r, np.ones_like(a), a)
    # left run: largest m >= a with R_a - R_{m+1} <= rho
    lRa = lR(af)
    infinite = lRa <= log_rho
    with np.errstate(invalid="ignore"):
        target_l = np.where(infinite, -np.inf, logdiffexp(lRa, np.minimum(log_rho, lRa)))
    cap = _search_limit(partition)
    hi = a + 2
    fin = ~infinite
    # grow hi until R_{hi+1} < R_a - rho
    for _ in range(64):
        bad = fin & (lR(np.minimum(hi, cap).astype(float) + 1.0) >= target_l)
        if not bad.any():
            break
        hi = np.where(bad, np.minimum(hi * 2, cap), hi)
        if np.all(hi[bad] >= cap):
            break
    # first m with R_{m+1} < target, minus one
    first_out = _vec_first_true(
        lambda m: ~(lR(m.astype(float) + 1.0) >= target_l) | ~fin,
        a,
        np.maximum(hi, a),
    )
    m_l = np.where(infinite, -1, first_out - 1)
    return m_r, m_l


def _run_log_mass(measure: DigitMeasure, m_r: np.ndarray, m_l: np.ndarray) -> np.ndarray:
    out = np.empty(len(m_r))
    inf = m_l < 0
    if inf.any():
        out[inf] = measure._log_P_int(m_r[inf].astype(float))
    fin = ~inf
    if fin.any():
        lo = m_r[fin]
        hi = m_l[fin]
        short = (hi - lo) <= 32
        res = np.empty(len(lo))
        if short.any():
            acc = np.full(int(short.sum()), -np.inf)
            l0, h0 = lo[short], hi[short]
            for j in range(33):
                m = l0 + j
                ok = m <= h0
                if not ok.any():
                    break
                vals = measure._log_p_int(np.where(ok, m, l0).astype(float))
                acc = np.where(ok, np.logaddexp(acc, vals), acc)
            res[short] = acc
        if (~short).any():
            res[~short] = logdiffexp(
                measure._log_P_int(lo[~short].astype(float)),
                measure._log_P_int(hi[~short].astype(float) + 1.0),
            )
        out[fin] = res
    return out


def _neighbor_radius(partition: PartitionSpec, digits: DigitArray) -> np.ndarray:
    """Normalized ``|I^l u I u I^r|`` (no right neighbour for digit 1)."""
    lr = partition.log_r_many(digits)
    exact = np.asarray(digits.exact)
    logv = np.asarray(digits.logv)
    big = np.where(exact > 0, 50.0, logv)
    up = DigitArray(np.where(exact > 0, exact + 1, 0), np.where(exact > 0, np.log1p(exact), big + np.log1p(np.exp(-big))))
    dn_e = np.where(exact > 1, exact - 1, np.where(exact == 1, 1, 0))
    dn = DigitArray(dn_e, np.where(exact > 0, np.log(np.maximum(dn_e, 1)), big + np.log1p(-np.exp(-big))))
    lr_up = partition.log_r_many(up)
    lr_dn = np.where(exact == 1, -np.inf, partition.log_r_many(dn))
    return np.logaddexp(np.logaddexp(lr, lr_up), lr_dn)


@dataclass(frozen=True)
class CaseSplitCurve:
    """Case-split bounds for ``n = 2..N`` of a stored orbit."""

    n: np.ndarray
    ratio: np.ndarray
    case: np.ndarray
    log_measure: np.ndarray
    log_length: np.ndarray
    k0: int


def _case_split_arrays(measure, partition, digits: DigitArray, prev_p, prev_r, k0: int):
    exact = np.asarray(digits.exact)
    logv = np.asarray(digits.logv)
    n = len(exact)
    log_rho = _neighbor_radius(partition, digits)
    run_mass = np.empty(n)
    case1 = np.zeros(n, dtype=bool)
    ex = exact > 0
    if ex.any():
        uniq, inv = np.unique(exact[ex], return_inverse=True)
        # radius depends only on the digit
        first = np.zeros(len(uniq), dtype=np.int64)
        first[inv[::-1]] = np.arange(len(inv))[::-1]
        rho_u = log_rho[ex][first]
        m_r, m_l = _neighbor_runs(partition, uniq, rho_u)
        mass_u = _run_log_mass(measure, m_r, m_l)
        inside_u = (m_r <= k0) & ((m_l < 0) | (k0 <= m_l))
        run_mass[ex] = mass_u[inv]
        case1[ex] = inside_u[inv]
    lg = ~ex
    if lg.any():
        # huge digits: the run is {a-1, a, a+1, a+2} (neighbouring lengths nearly equal)
        lv = logv[lg]
        e = np.exp(-lv)
        shifts = [lv + np.log1p(k * e) for k in (-1.0, 0.0, 1.0, 2.0)]
        run_mass[lg] = logsumexp(np.vstack([measure._log_p_log(s) for s in shifts]), axis=0)
        lk0 = math.log(k0)
        case1[lg] = (shifts[0] <= lk0) & (lk0 <= shifts[3])
    lp_k0 = measure.log_p(k0)
    lm1 = prev_p + lp_k0
    ll1 = prev_r
    lm2 = prev_p + run_mass
    ll2 = prev_r + log_rho
    lm = np.where(case1, lm1, lm2)
    ll = np.where(case1, ll1, ll2)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = lm / ll
    return ratio, np.where(case1, 1, 2), lm, ll


def case_split_upper(orbit: Orbit, n: int, k0: int) -> CoverEstimate:
    """Upper bound on the ball ratio at the neighbour radius ``r = |I^l u I_n u I^r|``.

    Case 1 fires when the cylinder ``I(a_1 .. a_{n-1}, k0)`` lies inside the
    ball around every point of ``I_n(x)``; the bound is then
    ``(cum_log_p(n-1) + log p_{k0}) / cum_log_r(n-1)``.  Otherwise (Case 2) the
    bound uses the run of sibling cylinders guaranteed inside the ball and the
    exact log radius.  Containment is decided from exact union lengths.
    """
    _check_depth(orbit, n, 2)
    d = DigitArray.from_digits([orbit.digit_at(n)])
    ratio, case, lm, ll = _case_split_arrays(
        orbit.measure,
        orbit.partition,
        d,
        np.array([orbit.cum_log_p_at(n - 1)]),
        np.array([orbit.cum_log_r_at(n - 1)]),
        int(k0),
    )
    return CoverEstimate(n, CoverKind.CASE_SPLIT, float(lm[0]), float(ll[0]), float(ratio[0]), case=int(case[0]), k0=int(k0))


def case_split_curve(orbit: Orbit, k0: int, n_from: int = 2) -> CaseSplitCurve:
    """Vectorized :func:`case_split_upper` for ``n = n_from..N`` of a stored orbit."""
    n_from = max(2, int(n_from))
    sl = slice(n_from - 1, orbit.length)
    prev_p = orbit.cum_log_p[n_from - 2 : orbit.length - 1]
    prev_r = orbit.cum_log_r[n_from - 2 : orbit.length - 1]
    ratio, case, lm, ll = _case_split_arrays(orbit.measure, orbit.partition, orbit.digits[sl], prev_p, prev_r, int(k0))
    return CaseSplitCurve(np.arange(n_from, orbit.length + 1), ratio, case, lm, ll, int(k0))


# ---------------------------------------------------------------------------
# finite-union inequality


def ineqsums_rhs(alpha: float, delta: float, eta: float) -> float:
    """``(1 + delta) / (alpha - delta) + eta`` after checking the admissible region."""
    if not (0 < delta < min(1.0 / 3.0, (alpha - 1.0) / (alpha + 1.0))):
        raise InvalidParameters(
            f"delta={delta} must lie in (0, min(1/3, (alpha-1)/(alpha+1))) for alpha={alpha}"
        )
    if not 0 < eta < 0.5:
        raise InvalidParameters(f"eta={eta} must lie in (0, 1/2)")
    return (1.0 + delta) / (alpha - delta) + eta


def ineqsums_scan(
    measure: DigitMeasure, partition: PartitionSpec, ks: Sequence[int], n_lo: int, n_hi: int
) -> tuple[np.ndarray, np.ndarray]:
    """``max_n LHS(k, n)`` and its argmax for each ``k`` in ``ks``.

    ``LHS(k, n) = log sum_{m=k}^{n+k} p_m / log sum_{m=k-1}^{n+k+1} r_m``.
    """
    ks = np.asarray(ks, dtype=np.int64)
    if ks.min() < 2:
        raise InvalidParameters("k must be at least 2 (the sums start at k - 1)")
    width = n_hi + 3
    js = np.arange(width, dtype=float)
    best = np.empty(len(ks))
    arg = np.empty(len(ks), dtype=np.int64)
    for i, k in enumerate(ks):
        base = float(k)
        lp = measure._log_p_int(base + js[: n_hi + 1])
        lr = partition._log_r_int(base - 1.0 + js)
        # scale out the leading term so cumulative sums stay well conditioned
        sp = np.cumsum(np.exp(lp - lp[0]))
        sr = np.cumsum(np.exp(lr - lr[0]))
        ns = np.arange(n_lo, n_hi + 1)
        num = lp[0] + np.log(sp[ns])
        den = lr[0] + np.log(sr[ns + 2])
        vals = num / den
        j = int(np.argmax(vals))
        best[i] = vals[j]
        arg[i] = ns[j]
    return best, arg


@dataclass
class IneqReport:
    """Outcome of :func:`ineqsums_check`."""

    rhs: float
    k_values: np.ndarray
    max_lhs: np.ndarray
    argmax_n: np.ndarray
    k0: int | None
    last_violation: int | None

    @property
    def overall_max(self) -> float:
        return float(self.max_lhs.max())


def ineqsums_check(
    alpha: float,
    delta: float,
    eta: float,
    k_range: tuple[int, int],
    n_range: tuple[int, int],
    measure: DigitMeasure,
    partition: PartitionSpec,
) -> tuple[int, IneqReport]:
    """Least ``k0`` in ``k_range`` with ``LHS(k, n) <= RHS`` for all ``k >= k0`` and all ``n``.

    The scan is exhaustive over both ranges.  Raises :class:`NoK0Found` (with
    the report attached) when the largest ``k`` still violates the bound.
    """
    rhs = ineqsums_rhs(alpha, delta, eta)
    k_lo, k_hi = int(k_range[0]), int(k_range[1])
    ks = np.arange(max(k_lo, 2), k_hi + 1)
    best, arg = ineqsums_scan(measure, partition, ks, int(n_range[0]), int(n_range[1]))
    viol = np.flatnonzero(best > rhs)
    last = int(ks[viol[-1]]) if viol.size else None
    k0 = int(ks[0]) if last is None else (last + 1 if last < k_hi else None)
    rep = IneqReport(rhs, ks, best, arg, k0, last)
    if k0 is None:
        raise NoK0Found(
            f"bound {rhs:.6g} still violated at k={k_hi} (max LHS {best[-1]:.6g})", rep
        )
    return k0, rep


def ineqsums_threshold_search(
    alpha: float,
    delta: float,
    eta: float,
    measure: DigitMeasure,
    partition: PartitionSpec,
    n_hi: int = 10**3,
    k_start: int = 10**4,
    k_stop: int = 2**50,
    points_per_decade: int = 8,
) -> tuple[int | None, IneqReport]:
    """Locate the threshold on a log-spaced grid of ``k`` beyond an exhaustive range.

    This is a grid search, not an exhaustive certificate: it returns the first
    grid point after which every grid point satisfies the bound.
    """
    rhs = ineqsums_rhs(alpha, delta, eta)
    decades = math.log10(k_stop / k_start)
    ks = np.unique(np.geomspace(k_start, k_stop, int(decades * points_per_decade) + 1).astype(np.int64))
    best, arg = ineqsums_scan(measure, partition, ks, 1, n_hi)
    viol = np.flatnonzero(best > rhs)
    if viol.size == 0:
        k0 = int(ks[0])
        last = None
    elif viol[-1] + 1 < len(ks):
        k0 = int(ks[viol[-1] + 1])
        last = int(ks[viol[-1]])
    else:
        k0, last = None, int(ks[viol[-1]])
    return k0, IneqReport(rhs, ks, best, arg, k0, last)


# ---------------------------------------------------------------------------
# rigorous ball bracket


@dataclass(frozen=True)
class BallBracket:
    """``log_lo <= log mu(B(x, r)) <= log_hi``; ``widened`` when the depth cap cut recursion."""

    log_lo: float
    log_hi: float
    widened: bool
    depth_cap: int

    @property
    def width(self) -> float:
        lo = math.exp(self.log_lo) if self.log_lo > -math.inf else 0.0
        return math.exp(self.log_hi) - lo


def point_log_position(partition: PartitionSpec, digits: Sequence[DigitLike], tail_digit: int = 2) -> tuple[float, float]:
    """``(log x, log(1 - x))`` for ``x = pi(digits, tail_digit, tail_digit, ...)``."""
    us, ws = _positions(partition, [as_digit(d) for d in digits], tail_digit, len(digits))
    return us[0], ws[0]


def _positions(partition, ds: list[Digit], t: int, depth: int):
    """Relative offsets of ``x`` from the left/right edge of ``I_j(x)`` for ``j = 0..depth``."""
    lr_t = partition.log_r(t)
    one_minus_rt = float(log1mexp(lr_t))
    lu_star = partition.log_tail_R(t + 1) - one_minus_rt
    lw_star = float(log1mexp(partition.log_tail_R(t))) - one_minus_rt
    n_levels = max(depth, len(ds)) + 1
    us = [lu_star] * n_levels
    ws = [lw_star] * n_levels
    for j in range(len(ds) - 1, -1, -1):
        a = ds[j]
        lr = partition.log_r(a)
        us[j] = float(np.logaddexp(partition.log_tail_R(a.shift(1)), lr + us[j + 1]))
        head = -math.inf if a.exact == 1 else float(log1mexp(partition.log_tail_R(a)))
        ws[j] = float(np.logaddexp(head, lr + ws[j + 1]))
    return us, ws


class _Bracketer:
    def __init__(self, measure, partition, depth_cap, rel):
        self.mu = measure
        self.part = partition
        self.cap = depth_cap
        self.eps = rel
        self.inside: list[float] = []
        self.unres: list[float] = []
        self.widened = False
        self.limit = _search_limit(partition)

    # log of head sums sum_{m <= b} r_m and p_m
    def lhead_r(self, b: int) -> float:
        return -math.inf if b <= 0 else float(log1mexp(self.part.log_tail_R(b + 1)))

    def lhead_p(self, b: int) -> float:
        return -math.inf if b <= 0 else float(log1mexp(self.mu.log_tail_P(b + 1)))

    def rsum(self, a: int, b: int) -> float:
        return -math.inf if b < a else self.part.log_range_sum(a, b)

    def psum(self, a: int, b: int | None) -> float:
        if b is not None and b < a:
            return -math.inf
        return self.mu.log_range_sum(a, b)

    def shrink(self, log_t: float, log_off: float, log_scale: float, lower: bool) -> float:
        """Interval end of ``(t - off) / scale`` with directed rounding."""
        e = self.eps
        if lower:
            if log_t == -math.inf or log_off + e >= log_t:
                return -math.inf
            return float(logdiffexp(log_t, log_off + e)) - log_scale - e
        if log_t == -math.inf or log_off - e >= log_t:
            return -math.inf
        return float(logdiffexp(log_t, log_off - e)) - log_scale + e

    def one_sided(self, depth: int, M: float, side: str, t_lo: float, t_hi: float) -> None:
        """Mass of the cylinder (log-measure ``M``) within normalized reach ``t`` of one edge."""
        e = self.eps
        if t_hi == -math.inf:
            return
        if t_lo >= e:
            self.inside.append(M)
            return
        if depth >= self.cap:
            self.unres.append(M)
            self.widened = True
            return
        if side == "right":
            b_in = last_true(lambda b: self.lhead_r(b) + e <= t_lo, 1, self.limit) if t_lo > -math.inf else 0
            if b_in >= 1:
                self.inside.append(M + self.lhead_p(b_in))
            if t_hi >= -e:
                self.unres.append(M + self.mu.log_tail_P(b_in + 1))
                return
            b_out = first_true(lambda b: self.lhead_r(b - 1) - e >= t_hi, max(b_in + 1, 2), self.limit)
            partial = range(b_in + 1, b_out)
            if len(partial) > 3:
                self.unres.append(M + self.psum(b_in + 1, b_out - 1))
                return
            for b in partial:
                off = self.lhead_r(b - 1)
                lr = self.part.log_r(b)
                self.one_sided(
                    depth + 1, M + self.mu.log_p(b), "right",
                    self.shrink(t_lo, off, lr, True), self.shrink(t_hi, off, lr, False),
                )
        else:
            if t_lo > -math.inf:
                b_in = first_true(lambda b: self.part.log_tail_R(b) + e <= t_lo, 1, self.limit)
            else:
                b_in = self.limit + 1
            b_out = last_true(lambda b: self.part.log_tail_R(b + 1) - e >= t_hi, 1, self.limit)
            b_out = max(b_out, 0)
            if b_in <= self.limit:
                self.inside.append(M + self.mu.log_tail_P(b_in))
            else:
                self.unres.append(M + self.mu.log_tail_P(b_out + 1))
                return
            partial = range(b_out + 1, b_in)
            if len(partial) > 3:
                self.unres.append(M + self.psum(b_out + 1, b_in - 1))
                return
            for b in partial:
                off = self.part.log_tail_R(b + 1)
                lr = self.part.log_r(b)
                self.one_sided(
                    depth + 1, M + self.mu.log_p(b), "left",
                    self.shrink(t_lo, off, lr, True), self.shrink(t_hi, off, lr, False),
                )


def ball_measure_bracket(
    measure: DigitMeasure,
    partition: PartitionSpec,
    prefix: Sequence[DigitLike],
    log_radius: float,
    depth_cap: int = 12,
    tail_digit: int = 2,
    rel_err: float = 1e-12,
) -> BallBracket:
    """Bracket ``log mu(B(x, r))`` for ``x = pi(prefix, tail_digit, tail_digit, ...)``.

    At each level the ball covers a contiguous run of sibling cylinders on
    each side of ``x`` plus partially covered siblings, which are decomposed
    recursively from the edge the ball enters.  Cylinders whose status cannot
    be decided (depth cap or rounding margin ``rel_err``) count only toward
    the upper end.
    """
    if not measure.is_bernoulli:
        raise InvalidSpec("ball brackets are implemented for Bernoulli measures")
    if not 1 <= depth_cap <= 40:
        raise InvalidSpec("depth_cap must lie in 1..40")
    if tail_digit < 2:
        raise InvalidSpec("tail digit must be at least 2 (digit 1 puts x on a boundary)")
    ds = [as_digit(d) for d in prefix]
    for d in ds:
        if d.exact is None or d.exact > partition.n_table:
            raise ExactDigitRequired(f"ball bracket needs exact tabulated digits (got {d})")
    if log_radius >= 0.0:
        return BallBracket(0.0, 0.0, False, depth_cap)
    e = rel_err
    rho = float(log_radius)
    us, ws = _positions(partition, ds, tail_digit, depth_cap)
    level = ds + [Digit.of(tail_digit)] * (depth_cap + 1)
    bk = _Bracketer(measure, partition, depth_cap, e)
    L = 0.0
    M = 0.0
    if rho >= max(us[0], ws[0]) + e:
        return BallBracket(0.0, 0.0, False, depth_cap)
    covered = False
    for j in range(depth_cap):
        a = level[j].require_exact()
        lr_a = partition.log_r(a)
        lp_a = measure.log_p(a)
        L1, M1 = L + lr_a, M + lp_a
        dl1, dr1 = L1 + us[j + 1], L1 + ws[j + 1]
        # left siblings b > a, entered at their right edge
        s_lo = bk.shrink(rho, dl1, L, True)
        s_hi = bk.shrink(rho, dl1, L, False)
        if s_hi > -math.inf:
            if s_lo > -math.inf and partition.log_tail_R(a + 1) + e <= s_lo:
                bk.inside.append(M + measure.log_tail_P(a + 1))
            else:
                b_in = last_true(lambda b: bk.rsum(a + 1, b) + e <= s_lo, a + 1, bk.limit) if s_lo > -math.inf else a
                b_in = max(b_in, a)
                if b_in > a:
                    bk.inside.append(M + bk.psum(a + 1, b_in))
                if partition.log_tail_R(a + 1) - e < s_hi:
                    # the ball may reach the accumulation edge of the parent
                    bk.unres.append(M + measure.log_tail_P(b_in + 1))
                else:
                    b_out = first_true(lambda b: bk.rsum(a + 1, b - 1) - e >= s_hi, b_in + 1, bk.limit)
                    partial = range(b_in + 1, b_out)
                    if len(partial) > 3:
                        bk.unres.append(M + bk.psum(b_in + 1, b_out - 1))
                    else:
                        for b in partial:
                            off = bk.rsum(a + 1, b - 1)
                            lrb = partition.log_r(b)
                            bk.one_sided(
                                j + 1, M + measure.log_p(b), "right",
                                bk.shrink(s_lo, off, lrb, True), bk.shrink(s_hi, off, lrb, False),
                            )
        # right siblings b < a, entered at their left edge
        if a > 1:
            s_lo = bk.shrink(rho, dr1, L, True)
            s_hi = bk.shrink(rho, dr1, L, False)
            if s_hi > -math.inf:
                b_in = first_true(lambda b: bk.rsum(b, a - 1) + e <= s_lo, 1, a - 1) if s_lo > -math.inf else a
                if b_in <= a - 1:
                    bk.inside.append(M + bk.psum(b_in, a - 1))
                b_out = last_true(lambda b: bk.rsum(b + 1, a - 1) - e >= s_hi, 1, a - 1)
                b_out = max(b_out, 0)
                partial = range(b_out + 1, min(b_in, a))
                if len(partial) > 3:
                    bk.unres.append(M + bk.psum(b_out + 1, min(b_in, a) - 1))
                else:
                    for b in partial:
                        off = bk.rsum(b + 1, a - 1)
                        lrb = partition.log_r(b)
                        bk.one_sided(
                            j + 1, M + measure.log_p(b), "left",
                            bk.shrink(s_lo, off, lrb, True), bk.shrink(s_hi, off, lrb, False),
                        )
        L, M = L1, M1
        if rho >= max(dl1, dr1) + e:
            bk.inside.append(M)
            covered = True
            break
    if not covered:
        bk.unres.append(M)
        bk.widened = True
    lo = float(logsumexp(bk.inside)) if bk.inside else -math.inf
    hi = float(logsumexp(bk.inside + bk.unres)) if (bk.inside or bk.unres) else -math.inf
    return BallBracket(lo, max(hi, lo), bk.widened, depth_cap)


def estimate_rows(estimates: Sequence[CoverEstimate], orbit_id: int = 0) -> list[dict]:
    return [e.row(orbit_id) for e in estimates]
