"""Symbolic orbits: digit streams with Birkhoff sums and trimmed-sum statistics.

An orbit of length ``N`` is generated in chunks.  Running statistics are
kept exactly at every step but only recorded at checkpoints, so long orbits
use constant memory.  Short orbits (or callers that ask for it) also keep
the full per-step arrays.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .digits import Digit, DigitArray
from .errors import InvalidSpec, NotRecorded
from .measures import DigitMeasure
from .partition import PartitionSpec

GENERATOR_NAME = "numpy.random.PCG64 seeded by SeedSequence(master_seed, spawn_key=(orbit_id,))"
DEFAULT_CHECKPOINTS = (10**2, 10**3, 10**4, 10**5, 10**6)
DEFAULT_STORE_LIMIT = 10**4
CHUNK = 1 << 16


def orbit_rng(seed: int, orbit_id: int = 0) -> np.random.Generator:
    """Independent stream for orbit ``orbit_id`` of a batch seeded with ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(orbit_id),))
    return np.random.Generator(np.random.PCG64(ss))


def checkpoint_schedule(N: int, extra: Iterable[int] = ()) -> list[int]:
    """Default recording indices (powers of ten up to 10**6) plus ``N`` and ``extra``."""
    pts = {c for c in DEFAULT_CHECKPOINTS if c <= N} | {int(N)}
    pts |= {int(e) for e in extra if 1 <= int(e) <= N}
    return sorted(pts)


@dataclass(frozen=True)
class Checkpoint:
    """Running statistics at step ``n``.

    ``prev_*`` hold the sums at ``n - 1``.  ``last_big`` is the largest
    ``k <= n`` with ``a_k != 1`` (0 if none) and ``last_big_*`` describe it.
    ``max_blowup`` is ``max_{2 <= k <= n} cum_log_r(k) / cum_log_r(k-1)``.
    """

    n: int
    digit: Digit
    cum_log_p: float
    cum_log_r: float
    prev_cum_log_p: float
    prev_cum_log_r: float
    max_X: float
    argmax: int
    max_blowup: float
    last_big: int
    last_big_digit: Digit | None
    last_big_prev_cum_log_p: float
    last_big_prev_cum_log_r: float

    @property
    def S(self) -> float:
        return -self.cum_log_r

    @property
    def S_trimmed(self) -> float:
        return -self.cum_log_r - self.max_X


@dataclass
class Orbit:
    """A generated orbit with checkpoint records and optional full storage."""

    measure: DigitMeasure
    partition: PartitionSpec
    length: int
    seed: int
    orbit_id: int
    checkpoints: dict[int, Checkpoint]
    digits: DigitArray | None = None
    log_p: np.ndarray | None = None
    log_r: np.ndarray | None = None
    generator: str = GENERATOR_NAME
    meta: dict = field(default_factory=dict)

    # derived full arrays (computed on demand)
    _cum_p: np.ndarray | None = field(default=None, repr=False)
    _cum_r: np.ndarray | None = field(default=None, repr=False)

    @property
    def stored(self) -> bool:
        return self.digits is not None

    def _require_stored(self, what: str):
        if not self.stored:
            raise NotRecorded(f"{what} needs full per-step storage (generate with store=True)")

    @property
    def cum_log_p(self) -> np.ndarray:
        self._require_stored("cum_log_p")
        if self._cum_p is None:
            self._cum_p = np.cumsum(self.log_p)
        return self._cum_p

    @property
    def cum_log_r(self) -> np.ndarray:
        self._require_stored("cum_log_r")
        if self._cum_r is None:
            self._cum_r = np.cumsum(self.log_r)
        return self._cum_r

    def _check_n(self, n: int) -> None:
        if not 0 <= n <= self.length:
            raise IndexError(f"index {n} outside 0..{self.length}")

    def cum_log_p_at(self, n: int) -> float:
        self._check_n(n)
        if n == 0:
            return 0.0
        if self.stored:
            return float(self.cum_log_p[n - 1])
        if n in self.checkpoints:
            return self.checkpoints[n].cum_log_p
        if n + 1 in self.checkpoints:
            return self.checkpoints[n + 1].prev_cum_log_p
        raise NotRecorded(f"cum_log_p at {n} not recorded")

    def cum_log_r_at(self, n: int) -> float:
        self._check_n(n)
        if n == 0:
            return 0.0
        if self.stored:
            return float(self.cum_log_r[n - 1])
        if n in self.checkpoints:
            return self.checkpoints[n].cum_log_r
        if n + 1 in self.checkpoints:
            return self.checkpoints[n + 1].prev_cum_log_r
        raise NotRecorded(f"cum_log_r at {n} not recorded")

    def digit_at(self, n: int) -> Digit:
        if not 1 <= n <= self.length:
            raise IndexError(f"digit index {n} outside 1..{self.length}")
        if self.stored:
            return self.digits[n - 1]
        if n in self.checkpoints:
            return self.checkpoints[n].digit
        raise NotRecorded(f"digit at {n} not recorded")

    def max_X_at(self, n: int) -> tuple[float, int]:
        """Running maximum of ``X_k = -log r(a_k)`` over ``k <= n`` and its first index."""
        self._check_n(n)
        if n in self.checkpoints:
            c = self.checkpoints[n]
            return c.max_X, c.argmax
        self._require_stored("max_X")
        x = -self.log_r[:n]
        k = int(np.argmax(x))
        return float(x[k]), k + 1

    def checkpoint(self, n: int) -> Checkpoint:
        if n in self.checkpoints:
            return self.checkpoints[n]
        self._require_stored(f"statistics at {n}")
        return _checkpoints_from_arrays(self.digits, self.log_p, self.log_r, [n])[n]


class _Accumulator:
    """Carries running statistics across chunks and records checkpoints."""

    def __init__(self, checkpoints: Sequence[int]):
        self.cps = sorted(set(checkpoints))
        self.records: dict[int, Checkpoint] = {}
        self.pos = 0
        self.cum_p = 0.0
        self.cum_r = 0.0
        self.max_x = -math.inf
        self.argmax = 0
        self.max_blow = -math.inf
        self.last_big = 0
        self.last_big_digit: Digit | None = None
        self.last_big_prev = (0.0, 0.0)

    def feed(self, digits: DigitArray, lp: np.ndarray, lr: np.ndarray) -> None:
        m = len(lp)
        start = self.pos
        idx = np.arange(start + 1, start + m + 1)
        cp = self.cum_p + np.cumsum(lp)
        cr = self.cum_r + np.cumsum(lr)
        prev_p = np.concatenate(([self.cum_p], cp[:-1]))
        prev_r = np.concatenate(([self.cum_r], cr[:-1]))
        x = -lr
        run_max = np.maximum.accumulate(np.concatenate(([self.max_x], x)))
        is_rec = x > run_max[:-1]
        run_max = run_max[1:]
        run_arg = np.maximum.accumulate(np.concatenate(([self.argmax], np.where(is_rec, idx, 0))))[1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            blow = np.where(idx >= 2, cr / prev_r, -np.inf)
        run_blow = np.maximum.accumulate(np.concatenate(([self.max_blow], blow)))[1:]
        big = np.asarray(digits.exact) != 1
        run_big = np.maximum.accumulate(np.concatenate(([self.last_big], np.where(big, idx, 0))))[1:]

        for n in self.cps:
            if start < n <= start + m:
                j = n - start - 1
                lb = int(run_big[j])
                if lb > start:
                    jb = lb - start - 1
                    lbd, lbp = digits[jb], (float(prev_p[jb]), float(prev_r[jb]))
                else:
                    lbd, lbp = self.last_big_digit, self.last_big_prev
                self.records[n] = Checkpoint(
                    n=n,
                    digit=digits[j],
                    cum_log_p=float(cp[j]),
                    cum_log_r=float(cr[j]),
                    prev_cum_log_p=float(prev_p[j]),
                    prev_cum_log_r=float(prev_r[j]),
                    max_X=float(run_max[j]),
                    argmax=int(run_arg[j]),
                    max_blowup=float(run_blow[j]) if n >= 2 else math.nan,
                    last_big=lb,
                    last_big_digit=lbd,
                    last_big_prev_cum_log_p=lbp[0],
                    last_big_prev_cum_log_r=lbp[1],
                )
        lb = int(run_big[-1])
        if lb > start:
            jb = lb - start - 1
            self.last_big_digit = digits[jb]
            self.last_big_prev = (float(prev_p[jb]), float(prev_r[jb]))
        self.last_big = lb
        self.pos += m
        self.cum_p = float(cp[-1])
        self.cum_r = float(cr[-1])
        self.max_x = float(run_max[-1])
        self.argmax = int(run_arg[-1])
        self.max_blow = float(run_blow[-1])


def _checkpoints_from_arrays(digits, lp, lr, checkpoints) -> dict[int, Checkpoint]:
    acc = _Accumulator(checkpoints)
    for s in range(0, len(lp), CHUNK):
        acc.feed(digits[s : s + CHUNK], lp[s : s + CHUNK], lr[s : s + CHUNK])
    return acc.records


def generate_orbit(
    measure: DigitMeasure,
    partition: PartitionSpec,
    length: int,
    seed: int,
    orbit_id: int = 0,
    checkpoints: Iterable[int] = (),
    store: bool | None = None,
    store_limit: int = DEFAULT_STORE_LIMIT,
) -> Orbit:
    """Draw ``length`` digits and accumulate Birkhoff sums of ``log p`` and ``log r``.

    Parameters
    ----------
    checkpoints : iterable of int
        Extra recording indices on top of :func:`checkpoint_schedule`.
    store : bool, optional
        Keep per-step arrays.  Defaults to ``length <= store_limit``.
    """
    N = int(length)
    if N < 1:
        raise InvalidSpec("orbit length must be at least 1")
    store = N <= store_limit if store is None else bool(store)
    rng = orbit_rng(seed, orbit_id)
    stream = measure.stream(rng)
    acc = _Accumulator(checkpoint_schedule(N, checkpoints))
    keep_e, keep_l, keep_p, keep_r = [], [], [], []
    done = 0
    while done < N:
        m = min(CHUNK, N - done)
        d, lp = stream.draw(m)
        lr = partition.log_r_many(d)
        acc.feed(d, lp, lr)
        if store:
            keep_e.append(d.exact)
            keep_l.append(d.logv)
            keep_p.append(lp)
            keep_r.append(lr)
        done += m
    orbit = Orbit(measure, partition, N, int(seed), int(orbit_id), acc.records)
    if store:
        orbit.digits = DigitArray(np.concatenate(keep_e), np.concatenate(keep_l))
        orbit.log_p = np.concatenate(keep_p)
        orbit.log_r = np.concatenate(keep_r)
    return orbit


def orbit_from_digits(
    measure: DigitMeasure,
    partition: PartitionSpec,
    digits,
    checkpoints: Iterable[int] = (),
    seed: int = -1,
) -> Orbit:
    """Wrap a given digit sequence as a fully stored orbit."""
    d = digits if isinstance(digits, DigitArray) else DigitArray.from_digits(list(digits))
    lp = measure.path_log_increments(d)
    lr = partition.log_r_many(d)
    N = len(d)
    recs = _checkpoints_from_arrays(d, lp, lr, checkpoint_schedule(N, checkpoints))
    return Orbit(measure, partition, N, seed, 0, recs, d, lp, lr)


def trimmed_sum(orbit: Orbit, n: int) -> tuple[float, float, int]:
    """``(S_n, S'_n, argmax)`` with ``S_n = -cum_log_r(n)`` and ``S'_n = S_n - max_X(n)``."""
    if not 1 <= n <= orbit.length:
        raise IndexError(f"index {n} outside 1..{orbit.length}")
    S = -orbit.cum_log_r_at(n)
    mx, am = orbit.max_X_at(n)
    return S, max(S - mx, 0.0), am


def blowup_ratio(orbit: Orbit, n: int) -> float:
    """``cum_log_r(n) / cum_log_r(n-1) = 1 + X_n / S_{n-1}``."""
    if not 2 <= n <= orbit.length:
        raise IndexError("blow-up ratio needs 2 <= n <= N")
    return orbit.cum_log_r_at(n) / orbit.cum_log_r_at(n - 1)


def blowup_curve(orbit: Orbit) -> np.ndarray:
    """Blow-up ratios for ``n = 2..N`` (stored orbits)."""
    cr = orbit.cum_log_r
    return cr[1:] / cr[:-1]


def max_blowup(orbit: Orbit, n: int | None = None) -> float:
    n = orbit.length if n is None else n
    if n in orbit.checkpoints:
        return orbit.checkpoints[n].max_blowup
    return float(np.max(blowup_curve(orbit)[: n - 1]))


def plant_excursion(orbit: Orbit, position: int, log_digit: float) -> Orbit:
    """Copy of a stored orbit with digit ``position`` replaced by a log-only digit ``exp(log_digit)``."""
    orbit._require_stored("plant_excursion")
    if not 1 <= position <= orbit.length:
        raise IndexError(f"position {position} outside 1..{orbit.length}")
    Digit.from_log(log_digit)  # validates
    exact = orbit.digits.exact.copy()
    logv = orbit.digits.logv.copy()
    j = position - 1
    exact[j] = 0
    logv[j] = float(log_digit)
    d = DigitArray(exact, logv)
    m = orbit.measure
    lp = orbit.log_p.copy()
    lr = orbit.log_r.copy()
    lo, hi = j, min(j + 2, orbit.length)
    if m.is_bernoulli:
        lp[j] = m.log_p_many(d[j : j + 1])[0]
    else:
        full = m.path_log_increments(d)
        lp[lo:hi] = full[lo:hi]
    lr[j] = orbit.partition.log_r_many(d[j : j + 1])[0]
    recs = _checkpoints_from_arrays(d, lp, lr, list(orbit.checkpoints))
    meta = dict(orbit.meta, planted=(position, float(log_digit)))
    return replace(orbit, checkpoints=recs, digits=d, log_p=lp, log_r=lr, meta=meta, _cum_p=None, _cum_r=None)


@dataclass(frozen=True)
class FrequencyTable:
    """Counts of digits ``1..k_cap`` among the first ``n`` digits, plus overflow."""

    n: int
    k_cap: int
    counts: np.ndarray
    overflow: int

    def count(self, k: int) -> int:
        return int(self.counts[k - 1])

    def frequency(self, k: int) -> float:
        return self.count(k) / self.n


def digit_frequencies(orbit: Orbit, n: int, k_cap: int) -> FrequencyTable:
    orbit._require_stored("digit_frequencies")
    if not 1 <= n <= orbit.length:
        raise IndexError(f"index {n} outside 1..{orbit.length}")
    e = orbit.digits.exact[:n]
    inside = (e >= 1) & (e <= k_cap)
    counts = np.bincount(e[inside], minlength=k_cap + 1)[1:].astype(np.int64)
    return FrequencyTable(n, int(k_cap), counts, int(n - counts.sum()))


# ---------------------------------------------------------------------------
# batches


def worker_count() -> int:
    env = os.environ.get("GIBBSDIM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise InvalidSpec(f"GIBBSDIM_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


def _run_one(args):
    fn, measure, partition, length, seed, i, kwargs = args
    return fn(generate_orbit(measure, partition, length, seed, orbit_id=i, **kwargs))


def map_orbits(
    fn: Callable[[Orbit], object],
    measure: DigitMeasure,
    partition: PartitionSpec,
    length: int,
    n_orbits: int,
    seed: int,
    workers: int | None = None,
    **orbit_kwargs,
) -> list:
    """Apply ``fn`` to orbits ``0..n_orbits-1``; results are ordered by orbit index.

    Each orbit's stream depends only on ``(seed, index)``, so the result does
    not depend on the worker count.  With several workers ``fn`` must be
    picklable.
    """
    workers = worker_count() if workers is None else max(1, int(workers))
    jobs = [(fn, measure, partition, length, seed, i, orbit_kwargs) for i in range(n_orbits)]
    if workers == 1 or n_orbits <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_one, jobs, chunksize=max(1, n_orbits // (4 * workers))))


def checkpoint_rows(orbit: Orbit) -> list[dict]:
    """Rows for the checkpoint CSV dump."""
    rows = []
    for n in sorted(orbit.checkpoints):
        c = orbit.checkpoints[n]
        rows.append(
            dict(
                orbit_id=orbit.orbit_id,
                n=n,
                cum_log_p=c.cum_log_p,
                cum_log_r=c.cum_log_r,
                max_X=c.max_X,
                argmax=c.argmax,
                S_trimmed=c.S_trimmed,
            )
        )
    return rows


@dataclass(frozen=True)
class DichotomySpread:
    """Cross-orbit spread (max/min) of ``S_N / b_N`` and ``S'_N / b_N``."""

    N: int
    b_N: float
    full: np.ndarray
    trimmed: np.ndarray

    @property
    def full_spread(self) -> float:
        return float(self.full.max() / self.full.min())

    @property
    def trimmed_spread(self) -> float:
        return float(self.trimmed.max() / self.trimmed.min())


def dichotomy_spread(orbits_or_sums, N: int) -> DichotomySpread:
    """Normalize full and trimmed sums at ``N`` by ``b_N = N log N``."""
    b = N * math.log(N)
    pairs = []
    for o in orbits_or_sums:
        if isinstance(o, Orbit):
            S, St, _ = trimmed_sum(o, N)
        else:
            S, St = o[0], o[1]
        pairs.append((S, St))
    arr = np.array(pairs, dtype=float)
    return DichotomySpread(N, b, arr[:, 0] / b, arr[:, 1] / b)
