"""Branch-length sequences of a countable Markov partition of [0, 1].

Every partition stores ``r_n`` (the length of the n-th branch interval) and
``R_n = sum_{m >= n} r_m`` in log space.  Three kinds are provided:

* :class:`GaussPartition` with ``r_n = 1/(n(n+1))`` and ``R_n = 1/n``;
* :class:`PowerLaw` with ``r_n = n^{-alpha} / zeta(alpha)``;
* :class:`ExplicitTable` read from a file, optionally continued by a
  power-law or geometric tail.
"""

from __future__ import annotations

import math
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, zeta

from ._logmath import log1mexp, logdiffexp
from .digits import EXACT_FLOAT_LIMIT, Digit, DigitArray, DigitLike, as_digit
from .errors import EstimationFailed, InvalidRange, InvalidSpec, UnsupportedTailQuery

DEFAULT_N_TABLE = 10**7
LUT_SIZE = 1 << 16
# Above this log index the Hurwitz tail switches to its asymptotic expansion.
HURWITZ_SWITCH = 20.0
_DIRECT_SUM_LIMIT = 1 << 20


def log_hurwitz(s: float, n: np.ndarray, log_n: np.ndarray | None = None) -> np.ndarray:
    """``log zeta(s, n)`` for ``s > 1`` and real ``n >= 1``.

    Uses scipy's Hurwitz zeta for moderate ``n`` and an Euler-Maclaurin
    expansion in ``log n`` for huge ``n`` where ``n**(1-s)`` would underflow.
    """
    n = np.asarray(n, dtype=float)
    ell = np.log(n) if log_n is None else np.asarray(log_n, dtype=float)
    out = np.empty(np.broadcast(n, ell).shape)
    small = ell <= HURWITZ_SWITCH
    if np.any(small):
        nn = np.broadcast_to(n, out.shape)[small]
        z = zeta(s, nn)
        with np.errstate(divide="ignore"):
            vals = np.log(z)
        under = z < 1e-280
        if np.any(under):
            vals[under] = [_log_hurwitz_direct(s, float(v)) for v in nn[under]]
        out[small] = vals
    big = ~small
    if np.any(big):
        e = ell[big] if ell.ndim else ell
        x = np.exp(-e)
        corr = (s - 1) * x / 2 + s * (s - 1) * x * x / 12
        out[big] = (1 - s) * e - math.log(s - 1) + np.log1p(corr)
    return out


def _log_hurwitz_direct(s: float, n: float, terms: int = 64) -> float:
    """Log-space partial sum plus integral tail, for ``zeta(s, n)`` below the float range."""
    k = np.arange(terms, dtype=float)
    head = -s * np.log(n + k)
    m = n + terms
    tail = (1 - s) * math.log(m) - math.log(s - 1) + math.log1p((s - 1) / (2 * m))
    return float(logsumexp(np.append(head, tail)))


@dataclass(frozen=True)
class TailCheck:
    """Outcome of :meth:`PartitionSpec.tail_asymptotic_check`."""

    n_lo: int
    n_hi: int
    residual: float
    constant: float
    slope: float
    expected_slope: float
    tolerance: float
    passed: bool


class PartitionSpec(ABC):
    """Common interface; subclasses supply the four log-space primitives.

    ``_log_r_int`` / ``_log_R_int`` receive float arrays holding exact
    integers; ``_log_r_log`` / ``_log_R_log`` receive ``log a`` for digits
    known only through their logarithm.
    """

    kind: str = "abstract"
    crossover_tol: float = 1e-6

    def __init__(self, n_table: int = DEFAULT_N_TABLE):
        if n_table < 1:
            raise InvalidSpec("n_table must be positive")
        self.n_table = int(n_table)
        self._lock = threading.Lock()

    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop("_lock", None)
        state.pop("_lut", None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    # -- primitives ---------------------------------------------------------
    @property
    @abstractmethod
    def alpha(self) -> float:
        """Polynomial decay exponent (``inf`` for geometric decay)."""

    @abstractmethod
    def _log_r_int(self, n: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _log_R_int(self, n: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _log_r_log(self, ell: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _log_R_log(self, ell: np.ndarray) -> np.ndarray: ...

    def describe(self) -> str:
        return self.kind

    # -- scalar API ---------------------------------------------------------
    @staticmethod
    def _int_path(d: Digit) -> bool:
        return d.exact is not None and d.exact <= EXACT_FLOAT_LIMIT

    def log_r(self, d: DigitLike) -> float:
        """``log r_a``."""
        d = as_digit(d)
        if self._int_path(d):
            return float(self._log_r_int(np.array([float(d.exact)]))[0])
        return float(self._log_r_log(np.array([d.log_value]))[0])

    def log_tail_R(self, d: DigitLike) -> float:
        """``log R_a = log sum_{m >= a} r_m``."""
        d = as_digit(d)
        if self._int_path(d):
            return float(self._log_R_int(np.array([float(d.exact)]))[0])
        return float(self._log_R_log(np.array([d.log_value]))[0])

    def log_range_sum(self, a: DigitLike, b: DigitLike | None = None) -> float:
        """``log sum_{m=a}^{b} r_m``; ``b=None`` means the infinite tail."""
        a = as_digit(a)
        if b is None:
            return self.log_tail_R(a)
        b = as_digit(b)
        if b.log_value < a.log_value - 1e-15:
            raise InvalidRange(f"range end {b} precedes start {a}")
        if self._int_path(a) and self._int_path(b):
            ia, ib = a.exact, b.exact
            if ib < ia:
                raise InvalidRange(f"range end {ib} precedes start {ia}")
            return self._log_range_int(ia, ib)
        # log-only endpoints: difference of tails
        lo = self.log_tail_R(a)
        hi = self.log_tail_R(b.shift(1))
        if hi >= lo:
            return self.log_r(a) if b == a else lo
        return float(logdiffexp(lo, hi))

    def _log_range_int(self, a: int, b: int) -> float:
        if b - a < _DIRECT_SUM_LIMIT:
            n = np.arange(a, b + 1, dtype=float)
            return float(logsumexp(self._log_r_int(n)))
        lo = float(self._log_R_int(np.array([float(a)]))[0])
        hi = float(self._log_R_int(np.array([float(b + 1)]))[0])
        return float(logdiffexp(lo, hi))

    # -- vectorized API -----------------------------------------------------
    @cached_property
    def _lut(self) -> tuple[np.ndarray, np.ndarray]:
        n = np.arange(1, LUT_SIZE + 1, dtype=float)
        lr = np.concatenate(([-np.inf], self._log_r_int(n)))
        lR = np.concatenate(([0.0], self._log_R_int(n)))
        return lr, lR

    def _many(self, digits: DigitArray, which: int) -> np.ndarray:
        exact, logv = digits
        exact = np.asarray(exact)
        logv = np.asarray(logv, dtype=float)
        out = np.empty(exact.shape, dtype=float)
        lut = self._lut[which]
        small = (exact > 0) & (exact <= LUT_SIZE)
        out[small] = lut[exact[small]]
        mid = exact > LUT_SIZE
        if np.any(mid):
            f = self._log_r_int if which == 0 else self._log_R_int
            out[mid] = f(exact[mid].astype(float))
        lg = exact <= 0
        if np.any(lg):
            f = self._log_r_log if which == 0 else self._log_R_log
            out[lg] = f(logv[lg])
        return out

    def log_r_many(self, digits: DigitArray) -> np.ndarray:
        return self._many(digits, 0)

    def log_R_many(self, digits: DigitArray) -> np.ndarray:
        return self._many(digits, 1)

    def log_r_range(self, n_lo: int, n_hi: int) -> np.ndarray:
        """``log r_n`` for the integer block ``n_lo..n_hi``."""
        return self._log_r_int(np.arange(n_lo, n_hi + 1, dtype=float))

    def log_R_range(self, n_lo: int, n_hi: int) -> np.ndarray:
        return self._log_R_int(np.arange(n_lo, n_hi + 1, dtype=float))

    # -- geometric constants ------------------------------------------------
    def _ratio_scan_limit(self) -> int:
        return min(self.n_table, 10**6)

    @cached_property
    def ratio_bounds(self) -> tuple[float, float]:
        """Fitted ``(K, K')`` with ``K <= r_{n+1}/r_n <= K'`` over the scanned table."""
        lr = self.log_r_range(1, self._ratio_scan_limit() + 1)
        d = np.diff(lr)
        return float(np.exp(d.min())), float(np.exp(d.max()))

    @property
    def ratio_lo(self) -> float:
        return self.ratio_bounds[0]

    @property
    def ratio_hi(self) -> float:
        return self.ratio_bounds[1]

    # -- diagnostics --------------------------------------------------------
    def convergence_exponent(self) -> float:
        """Infimum of ``s`` with ``sum r_n^s < inf``.

        Polynomial decay gives ``1/alpha`` and geometric decay gives 0 with no
        fitting.  Otherwise the exponent is fitted from the table.
        """
        a = self.alpha
        if math.isinf(a):
            return 0.0
        if not math.isnan(a):
            return 1.0 / a
        return self.fit_convergence_exponent()

    def fit_convergence_exponent(self, n_max: int | None = None, tol: float = 1e-6) -> float:
        """Bisection on ``s`` using a block divergence test.

        The series ``sum r_n^s`` is judged divergent when the block sum over the
        top decade ``(N/10, N]`` is at least the block sum over ``(N/100, N/10]``.
        """
        n_max = min(self.n_table, 10**6) if n_max is None else int(n_max)
        if n_max < 100:
            raise EstimationFailed(
                "table too short to fit a convergence exponent", {"n_max": n_max}
            )
        lr = self.log_r_range(1, n_max)
        b1 = lr[n_max // 100 : n_max // 10]
        b2 = lr[n_max // 10 :]

        def divergent(s: float) -> bool:
            return logsumexp(s * b2) >= logsumexp(s * b1)

        lo, hi = 0.0, 1.0
        if not divergent(lo) or divergent(hi):
            raise EstimationFailed(
                "block test not bracketing on [0, 1]",
                {"divergent_at_0": divergent(lo), "divergent_at_1": divergent(hi)},
            )
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if divergent(mid):
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def fit_alpha(self, n_max: int | None = None) -> float:
        """Least-squares slope of ``-log r_n`` against ``log n`` over the top decade."""
        n_max = min(self.n_table, 10**6) if n_max is None else int(n_max)
        if n_max < 20:
            raise EstimationFailed("table too short to fit alpha", {"n_max": n_max})
        n = np.arange(n_max // 10, n_max + 1, dtype=float)
        slope = np.polyfit(np.log(n), self._log_r_int(n), 1)[0]
        return float(-slope)

    def tail_asymptotic_check(
        self, n_lo: int, n_hi: int, tol: float = 1e-2, points: int = 2000
    ) -> TailCheck:
        """Test ``log R_n + (alpha - 1) log n -> C`` on ``[n_lo, n_hi]``.

        The residual is the max deviation from the best constant (the midrange).
        Passes when it is at most ``tol`` per unit of ``log n`` spanned.
        """
        self._require_range(n_hi)
        n = np.unique(np.geomspace(n_lo, n_hi, points).round())
        log_n = np.log(n)
        lR = self._log_R_int(n)
        alpha = self.alpha
        if math.isnan(alpha):
            alpha = self.fit_alpha()
        y = lR + (alpha - 1.0) * log_n
        const = 0.5 * (y.max() + y.min())
        resid = 0.5 * (y.max() - y.min())
        slope = float(np.polyfit(log_n, lR, 1)[0])
        span = math.log(n_hi) - math.log(n_lo)
        allowed = tol * max(span, 1.0)
        return TailCheck(
            n_lo=int(n_lo),
            n_hi=int(n_hi),
            residual=float(resid),
            constant=float(const),
            slope=slope,
            expected_slope=-(alpha - 1.0),
            tolerance=allowed,
            passed=bool(resid <= allowed),
        )

    def _require_range(self, n: int) -> None:
        """Raise if ``n`` is beyond what the partition can evaluate."""

    def check_crossover(self) -> float:
        """Gap between table and asymptotic evaluation at ``n_table``."""
        n = float(self.n_table)
        ell = math.log(n)
        gap_r = abs(self._log_r_int(np.array([n]))[0] - self._log_r_log(np.array([ell]))[0])
        gap_R = abs(self._log_R_int(np.array([n]))[0] - self._log_R_log(np.array([ell]))[0])
        return float(max(gap_r, gap_R))

    def _assert_crossover(self) -> None:
        gap = self.check_crossover()
        if not gap <= self.crossover_tol:
            raise InvalidSpec(f"{self.describe()}: crossover gap {gap:.3g} at n_table")

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.describe()} n_table={self.n_table}>"


class GaussPartition(PartitionSpec):
    """Branches ``I(n) = [1/(n+1), 1/n]`` of the Gauss map."""

    kind = "gauss"

    def __init__(self, n_table: int = DEFAULT_N_TABLE):
        super().__init__(n_table)
        self._assert_crossover()

    @property
    def alpha(self) -> float:
        return 2.0

    def _log_r_int(self, n):
        return -np.log(n) - np.log1p(n)

    def _log_R_int(self, n):
        return -np.log(n)

    def _log_r_log(self, ell):
        ell = np.asarray(ell, dtype=float)
        return -2.0 * ell - np.log1p(np.exp(-ell))

    def _log_R_log(self, ell):
        return -np.asarray(ell, dtype=float)

    def _log_range_int(self, a: int, b: int) -> float:
        # 1/a - 1/(b+1) = (b+1-a) / (a (b+1))
        return math.log(b + 1 - a) - math.log(a) - math.log(b + 1)

    def log_range_sum(self, a, b=None):
        a = as_digit(a)
        if b is not None:
            b = as_digit(b)
            if not self._int_path(a) or not self._int_path(b):
                # R_a - R_{b+1} with R_n = 1/n in log space
                la, lb1 = a.log_value, b.shift(1).log_value
                if lb1 < la:
                    raise InvalidRange(f"range end {b} precedes start {a}")
                return float(-la + log1mexp(la - lb1))
        return super().log_range_sum(a, b)

    @cached_property
    def ratio_bounds(self) -> tuple[float, float]:
        # r_{n+1}/r_n = n/(n+2): minimum 1/3 at n=1, supremum 1
        return 1.0 / 3.0, 1.0


class PowerLaw(PartitionSpec):
    """``r_n = n^{-alpha} / zeta(alpha)``."""

    kind = "powerlaw"

    def __init__(self, alpha: float, n_table: int = DEFAULT_N_TABLE):
        if not alpha > 1.0:
            raise InvalidSpec(f"power-law exponent must exceed 1, got {alpha}")
        super().__init__(n_table)
        self._alpha = float(alpha)
        self.log_norm = math.log(zeta(self._alpha))
        self._assert_crossover()

    @property
    def alpha(self) -> float:
        return self._alpha

    def describe(self) -> str:
        return f"powerlaw:{self._alpha:g}"

    def _log_r_int(self, n):
        return -self._alpha * np.log(n) - self.log_norm

    def _log_r_log(self, ell):
        return -self._alpha * np.asarray(ell, dtype=float) - self.log_norm

    def _log_R_int(self, n):
        return log_hurwitz(self._alpha, n) - self.log_norm

    def _log_R_log(self, ell):
        ell = np.asarray(ell, dtype=float)
        with np.errstate(over="ignore"):
            n = np.exp(np.minimum(ell, 700.0))
        return log_hurwitz(self._alpha, n, ell) - self.log_norm

    @cached_property
    def ratio_bounds(self) -> tuple[float, float]:
        # ((n+1)/n)^{-alpha}: minimum at n=1, supremum 1
        return 2.0 ** (-self._alpha), 1.0


def read_table_file(path: str | Path) -> tuple[np.ndarray, str | None]:
    """Parse ``n,value`` lines plus an optional ``tail=<family>:<params>`` footer.

    Returns the values for ``n = 1..N`` and the raw tail rule (or ``None``).
    """
    values: list[float] = []
    tail: str | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("tail="):
                tail = line[5:].strip()
                continue
            try:
                n_s, v_s = (t.strip() for t in line.split(","))
                n, v = int(n_s), float(v_s)
            except ValueError as exc:
                raise InvalidSpec(f"{path}:{lineno}: expected 'n,value', got {raw.strip()!r}") from exc
            if n != len(values) + 1:
                raise InvalidSpec(f"{path}:{lineno}: indices must run 1,2,3,... (got {n})")
            if not v >= 0.0:
                raise InvalidSpec(f"{path}:{lineno}: negative value")
            values.append(v)
    if not values:
        raise InvalidSpec(f"{path}: empty table")
    if tail is not None and tail.lower() == "none":
        tail = None
    return np.asarray(values, dtype=float), tail


class ExplicitTable(PartitionSpec):
    """Tabulated branch lengths with an optional analytic continuation.

    Parameters
    ----------
    values : array_like
        ``r_1 .. r_N``.
    tail : str, optional
        ``"powerlaw:<alpha>"`` or ``"geometric:<q>"``.  The tail shape is
        scaled to carry the missing mass ``1 - sum(values)``.  Without a tail
        rule the table must sum to one when it is to be queried beyond ``N``.
    """

    kind = "table"
    mass_tol = 1e-9

    def __init__(self, values, tail: str | None = None, source: str | None = None):
        vals = np.asarray(values, dtype=float)
        if vals.ndim != 1 or len(vals) == 0 or np.any(vals <= 0):
            raise InvalidSpec("table values must be a non-empty positive sequence")
        super().__init__(len(vals))
        self.source = source
        self._log_vals = np.log(vals)
        total = math.fsum(vals)
        self.tail_mass = 1.0 - total
        if self.tail_mass < -self.mass_tol:
            raise InvalidSpec(f"table mass {total!r} exceeds 1")
        self.tail_rule = tail
        self._tail_family: str | None = None
        self._tail_param = math.nan
        self._log_kappa = -math.inf
        # log R_n for n = 1..N+1
        rev = np.cumsum(vals[::-1])[::-1]
        tm = max(self.tail_mass, 0.0)
        with np.errstate(divide="ignore"):
            self._log_tail = np.log(np.concatenate((rev + tm, [tm])))
        if tail is not None:
            fam, _, param = tail.partition(":")
            fam = fam.strip().lower()
            try:
                p = float(param)
            except ValueError as exc:
                raise InvalidSpec(f"bad tail rule {tail!r}") from exc
            if self.tail_mass <= 0:
                raise InvalidSpec("tail rule given but the table already carries all the mass")
            n1 = float(self.n_table + 1)
            if fam == "powerlaw":
                if not p > 1:
                    raise InvalidSpec("power-law tail exponent must exceed 1")
                self._log_kappa = math.log(self.tail_mass) - float(log_hurwitz(p, np.array([n1]))[0])
            elif fam == "geometric":
                if not 0 < p < 1:
                    raise InvalidSpec("geometric tail ratio must lie in (0, 1)")
                self._log_kappa = math.log(self.tail_mass) + math.log1p(-p) - n1 * math.log(p)
            else:
                raise InvalidSpec(f"unknown tail family {fam!r}")
            self._tail_family, self._tail_param = fam, p
            self._assert_crossover()

    @classmethod
    def from_file(cls, path: str | Path) -> "ExplicitTable":
        vals, tail = read_table_file(path)
        return cls(vals, tail, source=str(path))

    def describe(self) -> str:
        return f"table:{self.source or 'inline'}[{self.n_table}]" + (
            f"+{self.tail_rule}" if self.tail_rule else ""
        )

    @property
    def alpha(self) -> float:
        if self._tail_family == "powerlaw":
            return self._tail_param
        if self._tail_family == "geometric":
            return math.inf
        return math.nan

    def _zero_tail(self) -> bool:
        return self._tail_family is None and self.tail_mass <= self.mass_tol

    def _require_range(self, n: int) -> None:
        if n > self.n_table and self._tail_family is None:
            raise UnsupportedTailQuery(
                f"index {n} beyond table of length {self.n_table} and no tail rule"
            )

    def _beyond(self, n_or_ell, from_log: bool):
        if self._zero_tail():
            return np.full(np.shape(n_or_ell), -np.inf)
        raise UnsupportedTailQuery(f"digit beyond table of length {self.n_table} and no tail rule")

    def _tail_r(self, n, ell):
        if self._tail_family == "powerlaw":
            return self._log_kappa - self._tail_param * ell
        with np.errstate(over="ignore"):
            return self._log_kappa + n * math.log(self._tail_param)

    def _tail_R(self, n, ell):
        if self._tail_family == "powerlaw":
            return self._log_kappa + log_hurwitz(self._tail_param, n, ell)
        q = self._tail_param
        with np.errstate(over="ignore"):
            return self._log_kappa + n * math.log(q) - math.log1p(-q)

    def _split(self, n, f_table, f_tail, ell=None):
        n = np.asarray(n, dtype=float)
        out = np.empty(n.shape)
        inside = n <= self.n_table
        out[inside] = f_table(n[inside].astype(np.int64))
        if np.any(~inside):
            nn = n[~inside]
            if self._tail_family is None:
                out[~inside] = self._beyond(nn, False)
            else:
                e = np.log(nn) if ell is None else np.asarray(ell)[~inside]
                out[~inside] = f_tail(nn, e)
        return out

    def _log_r_int(self, n):
        return self._split(n, lambda k: self._log_vals[k - 1], self._tail_r)

    def _log_R_int(self, n):
        def tab(k):
            return self._log_tail[k - 1]

        n = np.asarray(n, dtype=float)
        out = np.empty(n.shape)
        inside = n <= self.n_table + 1
        out[inside] = tab(n[inside].astype(np.int64))
        if np.any(~inside):
            nn = n[~inside]
            out[~inside] = self._beyond(nn, False) if self._tail_family is None else self._tail_R(nn, np.log(nn))
        return out

    def _log_r_log(self, ell):
        ell = np.asarray(ell, dtype=float)
        with np.errstate(over="ignore"):
            n = np.exp(np.minimum(ell, 700.0))
        small = n <= self.n_table
        out = np.empty(ell.shape)
        out[small] = self._log_r_int(np.round(n[small]))
        if np.any(~small):
            out[~small] = (
                self._beyond(ell[~small], True)
                if self._tail_family is None
                else self._tail_r(n[~small], ell[~small])
            )
        return out

    def _log_R_log(self, ell):
        ell = np.asarray(ell, dtype=float)
        with np.errstate(over="ignore"):
            n = np.exp(np.minimum(ell, 700.0))
        small = n <= self.n_table + 1
        out = np.empty(ell.shape)
        out[small] = self._log_R_int(np.round(n[small]))
        if np.any(~small):
            out[~small] = (
                self._beyond(ell[~small], True)
                if self._tail_family is None
                else self._tail_R(n[~small], ell[~small])
            )
        return out

    def check_crossover(self) -> float:
        if self._tail_family is None:
            return 0.0
        n = float(self.n_table)
        table_val = self._log_vals[-1]
        tail_val = float(self._tail_r(np.array([n]), np.array([math.log(n)]))[0])
        return abs(table_val - tail_val)

    def _ratio_scan_limit(self) -> int:
        return self.n_table - 1

    @cached_property
    def ratio_bounds(self) -> tuple[float, float]:
        if self.n_table < 2:
            return 1.0, 1.0
        d = np.diff(self._log_vals)
        return float(np.exp(d.min())), float(np.exp(d.max()))


def parse_partition(text: str, n_table: int = DEFAULT_N_TABLE) -> PartitionSpec:
    """Build a partition from a config value: ``gauss``, ``powerlaw:<a>``, ``table:<path>``."""
    kind, _, arg = text.strip().partition(":")
    kind = kind.strip().lower()
    if kind == "gauss" and not arg:
        return GaussPartition(n_table)
    if kind == "powerlaw":
        try:
            return PowerLaw(float(arg), n_table)
        except ValueError as exc:
            raise InvalidSpec(f"bad power-law exponent {arg!r}") from exc
    if kind == "table" and arg:
        return ExplicitTable.from_file(arg.strip())
    raise InvalidSpec(f"unknown partition {text!r}")
