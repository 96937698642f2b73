"""Acceptance checks shared by the test suite, the ``report`` subcommand and calibration.

Each ``criterion_*`` function runs one experiment at the stated size and
tolerance and returns a :class:`CriterionResult`.  Thresholds marked
*calibrated* were fixed from a separate batch (different seed) run by
``scripts/calibrate.py`` and are frozen here.
"""

from __future__ import annotations

import functools
import inspect
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy import stats

from . import estimators as est
from .errors import NoK0Found
from .maps import distortion_bound, distortion_residual
from .measures import (
    Geometric,
    LogSquare,
    decay_ratio_curve,
    lyapunov_partial,
    trimmed_criterion_curve,
    volume_lemma_dim,
)
from .orbits import generate_orbit, map_orbits, max_blowup, plant_excursion
from .partition import GaussPartition

ACCEPTANCE_SEED = 20240611

# calibrated constants (see scripts/calibrate.py)
DIM_BAND = (0.5, 0.70)
BLOWUP_MIN = 3.0
NEIGHBOR_BAND = (0.35, 0.65)
CASE_SPLIT_BOUND = 1.1 / 1.9 + 0.05 + 0.05
CASE_SPLIT_WINDOW = 10  # max taken over the last decade n in [N / 10, N]


@dataclass
class CriterionResult:
    number: str
    title: str
    passed: bool
    summary: str
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"criterion {self.number:>3} {'PASS' if self.passed else 'FAIL'}  {self.title}: {self.summary}"


def _timed(fn: Callable[..., CriterionResult]):
    @functools.wraps(fn)
    def run(*args, **kw) -> CriterionResult:
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        res.seconds = time.perf_counter() - t0
        res.metrics["seconds"] = res.seconds
        return res

    return run


def _symbolic_at(n: int):
    def f(o):
        return o.cum_log_p_at(n) / o.cum_log_r_at(n)

    return f


# ---------------------------------------------------------------------------


@_timed
def criterion_1(seed: int = ACCEPTANCE_SEED, n_orbits: int = 100, length: int = 10**5, tol: float = 0.02) -> CriterionResult:
    """Finite entropy: median symbolic dimension matches ``h / lambda``."""
    t0 = time.perf_counter()
    mu, part = Geometric(0.5), GaussPartition()
    oracle = volume_lemma_dim(mu, part)
    vals = np.array(map_orbits(_symbolic_at(length), mu, part, length, n_orbits, seed, workers=1))
    med = float(np.median(vals))
    rel = abs(med - oracle) / oracle
    runtime = time.perf_counter() - t0
    ok = rel <= tol and runtime < 10.0
    return CriterionResult(
        "1", "finite-entropy oracle", ok,
        f"median {med:.5f} vs h/lambda {oracle:.5f} (rel {rel:.4f} <= {tol}); {runtime:.1f}s < 10s",
        dict(median=med, oracle=oracle, rel=rel, lyapunov=lyapunov_partial(mu, part, 10**6)),
    )


def _logsquare_symbolic(seed: int, n_orbits: int, length: int, checkpoints):
    mu, part = LogSquare(), GaussPartition()

    def f(o):
        return [o.cum_log_p_at(n) / o.cum_log_r_at(n) for n in checkpoints]

    return np.array(map_orbits(f, mu, part, length, n_orbits, seed, workers=1))


@_timed
def criterion_2(seed: int = ACCEPTANCE_SEED, n_orbits: int = 100, length: int = 10**6) -> CriterionResult:
    """Infinite entropy: medians decrease toward 1/2 with matching excess."""
    t0 = time.perf_counter()
    cps = [10**3, 10**4, 10**5, 10**6]
    cps = [c for c in cps if c <= length]
    vals = _logsquare_symbolic(seed, n_orbits, length, cps)
    med = np.median(vals, axis=0)
    runtime = time.perf_counter() - t0
    decreasing = bool(np.all(np.diff(med) < 0))
    in_band = DIM_BAND[0] <= med[-1] <= DIM_BAND[1]
    excess = (med - 0.5) * np.log(np.array(cps, dtype=float))
    agree = abs(excess[-1] - excess[-2]) / abs(excess[-2]) if len(cps) >= 2 else math.nan
    ok = decreasing and in_band and agree <= 0.5 and runtime < 120.0
    return CriterionResult(
        "2", "infinite-entropy symbolic ratio", ok,
        "medians " + ", ".join(f"{m:.4f}" for m in med)
        + f"; band {DIM_BAND}; excess rel diff {agree:.3f} <= 0.5; {runtime:.0f}s",
        dict(checkpoints=cps, medians=med.tolist(), excess=excess.tolist(), excess_rel_diff=agree),
    )


@_timed
def criterion_3(tol: float = 1e-2) -> CriterionResult:
    """Convergence exponent 1/2 and a decay ratio drifting down to it."""
    part = GaussPartition()
    s_inf = part.convergence_exponent()
    s_fit = part.fit_convergence_exponent()
    dc = decay_ratio_curve(LogSquare(), part, [10**3, 10**4, 10**5, 10**6])
    ex = dc.pointwise - 0.5
    trend = bool(np.all(ex > 0) and np.all(np.diff(ex) < 0) and np.all(np.diff(dc.cesaro) < 0))
    ok = abs(s_inf - 0.5) <= tol and abs(s_fit - 0.5) <= tol and trend
    return CriterionResult(
        "3", "convergence exponent", ok,
        f"exponent {s_inf:.4f}, fitted {s_fit:.4f}; decay ratio "
        + ", ".join(f"{v:.4f}" for v in dc.pointwise) + " decreasing to 0.5",
        dict(exponent=s_inf, fitted=s_fit, pointwise=dc.pointwise.tolist(), cesaro=dc.cesaro.tolist()),
    )


@_timed
def criterion_4() -> CriterionResult:
    """Tail decay ratio decreases for n >= 10^3 and is below 1/4 at 10^6."""
    cps = np.unique(np.geomspace(10**3, 10**6, 31).astype(np.int64))
    dc = decay_ratio_curve(LogSquare(), GaussPartition(), cps)
    dec = bool(np.all(np.diff(dc.tail_ratio) < 0))
    last = float(dc.tail_ratio[-1])
    ok = dec and last < 0.25
    return CriterionResult(
        "4", "tail decay ratio", ok,
        f"decreasing on {len(cps)} points: {dec}; value at 1e6 {last:.5f} < 0.25",
        dict(tail_ratio_1e6=last, tail_ratio_1e3=float(dc.tail_ratio[0])),
    )


@_timed
def criterion_5() -> CriterionResult:
    """Trimmed-convergence series: last decade adds < 1e-3 of the total."""
    cur = trimmed_criterion_curve(LogSquare(), GaussPartition(), 10**6, [10**5])
    look = dict(zip(cur.checkpoints.tolist(), cur.values))
    inc = look[10**6] - look[10**5]
    frac = inc / look[10**6]
    ok = frac < 1e-3
    return CriterionResult(
        "5", "trimmed-convergence series", ok,
        f"sum {look[10**6]:.8f}, last-decade increment {inc:.3e} ({frac:.2e} of total) < 1e-3",
        dict(total=look[10**6], increment=inc, fraction=frac),
    )


@_timed
def criterion_6(seed: int = ACCEPTANCE_SEED, n_orbits: int = 100, length: int = 10**5) -> CriterionResult:
    """Blow-up ratios keep growing along LogSquare orbits."""
    early = 10**3

    def f(o):
        return max_blowup(o, early), max_blowup(o, length)

    vals = np.array(map_orbits(f, LogSquare(), GaussPartition(), length, n_orbits, seed, workers=1))
    m_early, m_late = (float(v) for v in np.median(vals, axis=0))
    ok = m_late >= BLOWUP_MIN and m_late > m_early
    return CriterionResult(
        "6", "blow-up statistic", ok,
        f"median max blow-up {m_early:.3f} at 1e3, {m_late:.3f} at 1e5 (>= {BLOWUP_MIN})",
        dict(median_early=m_early, median_late=m_late),
    )


@_timed
def criterion_7(seed: int = ACCEPTANCE_SEED) -> CriterionResult:
    """Planted huge digits drive the lower-cover ratio to zero."""
    pos = 10**4
    base = generate_orbit(LogSquare(), GaussPartition(), pos, seed, store=True)
    ratios = {}
    for ell in (1e9, 1e12):
        planted = plant_excursion(base, pos, ell)
        ratios[ell] = est.lower_cover_ratio(planted, pos).ratio
    ok = ratios[1e9] < 0.05 and ratios[1e12] < 1e-4 and ratios[1e12] < ratios[1e9]
    return CriterionResult(
        "7", "Hausdorff mechanism", ok,
        f"lower-cover ratio {ratios[1e9]:.3e} (l*=1e9, < 0.05), {ratios[1e12]:.3e} (l*=1e12, < 1e-4)",
        dict(ratio_1e9=ratios[1e9], ratio_1e12=ratios[1e12]),
    )


def threshold_k0(alpha: float = 2.0, delta: float = 0.1, eta: float = 0.05, k_hi: int = 10**4, n_hi: int = 10**4):
    """``k0`` for the case split: exhaustive scan, or the grid search beyond it when that fails."""
    mu, part = LogSquare(), GaussPartition()
    try:
        k0, _ = est.ineqsums_check(alpha, delta, eta, (2, k_hi), (1, n_hi), mu, part)
        return k0, "exhaustive"
    except NoK0Found:
        k0, _ = est.ineqsums_threshold_search(alpha, delta, eta, mu, part, n_hi=n_hi, k_start=k_hi, k_stop=2**52)
        return k0, "grid"


@_timed
def criterion_8(seed: int = ACCEPTANCE_SEED, n_orbits: int = 100, length: int = 10**5) -> CriterionResult:
    """Packing side: neighbour ratio near 1/2 and the case-split bound."""
    k0, how = threshold_k0()
    lo = max(2, length // CASE_SPLIT_WINDOW)

    def f(o):
        nb = est.neighbor_upper_last_valid(o).ratio
        cs = est.case_split_curve(o, k0, n_from=lo)
        return nb, float(np.max(cs.ratio)), float(np.mean(cs.case == 1))

    vals = np.array(
        map_orbits(f, LogSquare(), GaussPartition(), length, n_orbits, seed, workers=1, store=True)
    )
    nb_med = float(np.median(vals[:, 0]))
    cs_med = float(np.median(vals[:, 1]))
    ok_a = NEIGHBOR_BAND[0] <= nb_med <= NEIGHBOR_BAND[1]
    ok_b = cs_med <= CASE_SPLIT_BOUND
    return CriterionResult(
        "8", "packing mechanism", ok_a and ok_b,
        f"(a) median neighbour ratio {nb_med:.4f} in {NEIGHBOR_BAND}: {ok_a}; "
        f"(b) median max case-split {cs_med:.4f} <= {CASE_SPLIT_BOUND:.4f} with k0={k0} ({how}): {ok_b}",
        dict(neighbor_median=nb_med, case_split_median=cs_med, k0=k0, k0_method=how,
             case1_fraction=float(np.mean(vals[:, 2])), part_a=ok_a, part_b=ok_b),
    )


@_timed
def criterion_9(k_hi: int = 10**4, n_hi: int = 10**4) -> CriterionResult:
    """Exhaustive scan for an explicit ``k0 <= 10^4``."""
    rhs = est.ineqsums_rhs(2.0, 0.1, 0.05)
    try:
        k0, rep = est.ineqsums_check(2.0, 0.1, 0.05, (2, k_hi), (1, n_hi), LogSquare(), GaussPartition())
        ok = True
        msg = f"RHS {rhs:.5f}; k0 = {k0}"
    except NoK0Found as exc:
        rep, k0, ok = exc.profile, None, False
        msg = f"RHS {rhs:.5f}; no k0 <= {k_hi}: max LHS at k={k_hi} is {rep.max_lhs[-1]:.5f}"
    return CriterionResult(
        "9", "finite-union inequality scan", ok, msg,
        dict(rhs=rhs, k0=k0, lhs_at_khi=float(rep.max_lhs[-1]), last_violation=rep.last_violation),
    )


@_timed
def criterion_10(seed: int = ACCEPTANCE_SEED, n_seq: int = 10**3) -> CriterionResult:
    """Gauss-map distortion stays within ``n log 2 + log 2``."""
    rng = np.random.default_rng(seed)
    worst = -math.inf
    violations = 0
    for _ in range(n_seq):
        depth = int(rng.integers(1, 51))
        digits = [int(d) for d in rng.integers(1, 10**3 + 1, size=depth)]
        res = distortion_residual(digits)
        slack = res - distortion_bound(depth)
        worst = max(worst, slack)
        violations += slack > 0
    return CriterionResult(
        "10", "distortion bound", violations == 0,
        f"{violations} violations in {n_seq} sequences; worst residual - bound {worst:.3f}",
        dict(violations=violations, worst_slack=worst),
    )


@_timed
def criterion_11(seed: int = ACCEPTANCE_SEED, n_draws: int = 10**6, alpha: float = 1e-3) -> CriterionResult:
    """Sampler law: chi-square on digits 1..50 and the tail bucket."""
    mu = LogSquare()
    d = mu.sample(np.random.default_rng(seed), n_draws)
    exact = np.asarray(d.exact)
    ks = np.arange(1, 51)
    counts = np.bincount(exact[(exact >= 1) & (exact <= 50)], minlength=51)[1:]
    probs = np.exp(mu.log_p_range(1, 50))
    rest = n_draws - counts.sum()
    obs = np.append(counts, rest)
    exp_ = n_draws * np.append(probs, 1.0 - probs.sum())
    chi2, pval = stats.chisquare(obs, exp_)
    N = mu.n_table
    p_tail = math.exp(mu.log_tail_P(N))
    tail_obs = int(np.sum((exact == 0) | (exact >= N)))
    se = math.sqrt(n_draws * p_tail * (1 - p_tail))
    z = (tail_obs - n_draws * p_tail) / se
    ok = pval > alpha and abs(z) <= 3
    return CriterionResult(
        "11", "sampler law", ok,
        f"chi2 p-value {pval:.3g} > {alpha}; tail bucket {tail_obs} vs {n_draws * p_tail:.0f} (z {z:+.2f})",
        dict(chi2=float(chi2), pvalue=float(pval), tail_observed=tail_obs, tail_expected=n_draws * p_tail, z=z, digits=len(ks)),
    )


# ---------------------------------------------------------------------------
# exact brute-force ball measure (rational geometry, geometric measure)


def _gauss_child(lo: Fraction, ln: Fraction, b: int) -> tuple[Fraction, Fraction]:
    """Child ``b`` of ``[lo, lo + ln]`` in the piecewise-linear Gauss model."""
    return lo + ln / (b + 1), lo + ln / b


def exact_point(prefix, tail_digit: int = 2) -> Fraction:
    """``pi(prefix, t, t, ...)`` in the piecewise-linear Gauss model, exactly."""
    t = tail_digit
    fixed = Fraction(1, t + 1) / (1 - Fraction(1, t * (t + 1)))
    lo, ln = Fraction(0), Fraction(1)
    for a in prefix:
        lo, hi = _gauss_child(lo, ln, a)
        ln = hi - lo
    return lo + ln * fixed


def brute_ball_measure(prefix, radius: Fraction, q: Fraction, depth: int = 8, tail_digit: int = 2):
    """Exact ``(inside, inside + partial)`` masses of ``B(x, radius)`` at cylinder depth ``depth``.

    The measure is geometric with ``p_k = (1 - q) q^(k-1)``.  Runs of children
    fully inside the ball are summed in closed form, so only the (at most two)
    boundary children per node are refined.
    """
    x = exact_point(prefix, tail_digit)
    b_lo, b_hi = x - radius, x + radius
    inside = Fraction(0)
    partial = Fraction(0)

    def run_mass(b1, b2):  # sum_{b1}^{b2} p_b, b2 may be None (infinite)
        return q ** (b1 - 1) - (0 if b2 is None else q**b2)

    stack = [(Fraction(0), Fraction(1), Fraction(1), 0)]
    while stack:
        lo, ln, m, d = stack.pop()
        hi = lo + ln
        if b_lo <= lo and hi <= b_hi:
            inside += m
            continue
        if hi <= b_lo or lo >= b_hi:
            continue
        if d == depth:
            partial += m
            continue
        # children b with lo + ln/(b+1) <= b_hi intersect from the right side
        if b_hi >= hi:
            first = 1
        else:
            first = max(1, math.ceil(ln / (b_hi - lo)) - 1)
        # fully inside: right end <= b_hi and left end >= b_lo
        in_first = 1 if b_hi >= hi else max(1, math.ceil(ln / (b_hi - lo)))
        if b_lo <= lo:
            in_last = None
            last = None
        else:
            in_last = math.floor(ln / (b_lo - lo)) - 1
            last = math.floor(ln / (b_lo - lo))
        if in_last is None or in_first <= in_last:
            inside += m * run_mass(in_first, in_last)
            boundary = set(range(first, in_first))
            if last is not None:
                boundary |= set(range(in_last + 1, last + 1))
        else:
            boundary = set(range(first, (last or first) + 1))
        for b in sorted(boundary):
            clo, chi = _gauss_child(lo, ln, b)
            if chi < b_lo or clo > b_hi:
                continue
            stack.append((clo, chi - clo, m * (1 - q) * q ** (b - 1), d + 1))
    return inside, inside + partial


def random_ball_case(rng: np.random.Generator, q: float = 0.5):
    depth = int(rng.integers(0, 9))
    prefix = [int(v) for v in rng.geometric(1 - q, size=depth)]
    from .maps import PiecewiseLinear, cyl_log_length

    part = GaussPartition()
    j = int(rng.integers(0, depth + 1))
    base = cyl_log_length(PiecewiseLinear(part), prefix[:j]) if j else 0.0
    log_r = base + float(rng.uniform(-4.0, 0.5))
    return prefix, min(log_r, -1e-3)


@_timed
def criterion_12(seed: int = ACCEPTANCE_SEED, n_cases: int = 10**3, depth: int = 8, tol: float = 1e-9) -> CriterionResult:
    """Ball brackets agree with exact enumeration to depth 8."""
    rng = np.random.default_rng(seed)
    part = GaussPartition()
    bad = 0
    widest = 0.0
    for _ in range(n_cases):
        qf = float(rng.choice([0.5, 0.25]))
        mu = Geometric(qf)
        prefix, log_r = random_ball_case(rng, qf)
        br = est.ball_measure_bracket(mu, part, prefix, log_r, depth_cap=depth)
        ins, upper = brute_ball_measure(prefix, Fraction(math.exp(log_r)), Fraction(qf), depth)
        t_lo = math.log(ins) if ins > 0 else -math.inf
        t_hi = math.log(upper) if upper > 0 else -math.inf
        # the truth lies in [ins, upper]; the bracket must overlap it consistently
        if br.log_lo > t_hi + tol or br.log_hi < t_lo - tol:
            bad += 1
        widest = max(widest, br.width)
    return CriterionResult(
        "12", "ball-measure bracket", bad == 0,
        f"{bad} inconsistent brackets in {n_cases} cases; widest bracket {widest:.3e}",
        dict(inconsistent=bad, widest=widest),
    )


CRITERIA = {
    "1": criterion_1, "2": criterion_2, "3": criterion_3, "4": criterion_4,
    "5": criterion_5, "6": criterion_6, "7": criterion_7, "8": criterion_8,
    "9": criterion_9, "10": criterion_10, "11": criterion_11, "12": criterion_12,
}


def run_criteria(numbers=None, seed: int = ACCEPTANCE_SEED) -> list[CriterionResult]:
    out = []
    for key in numbers or CRITERIA:
        fn = CRITERIA[str(key)]
        kw = {"seed": seed} if "seed" in inspect.signature(fn).parameters else {}
        out.append(fn(**kw))
    return out
