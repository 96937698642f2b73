"""Digit distributions with heavy analytic tails and their scalar functionals.

A measure gives the probability ``p_n`` of digit ``n`` and the tail mass
``P_n = sum_{m >= n} p_m``, both in log space.  Built-in families:

* :class:`Geometric` ``p_n = (1-q) q^{n-1}`` (finite entropy);
* :class:`LogSquare` ``p_n = c / ((n+1) log^2(n+1))`` (infinite entropy);
* :class:`Zeta` ``p_n = n^{-beta} / zeta(beta)``;
* :class:`TableMeasure` from a file, with an optional family tail;
* :class:`MarkovClassMeasure`, a memory-one chain built on a base family.

The functions at the bottom compute entropy and Lyapunov partial sums,
decay-ratio curves, the trimmed-sum criterion series and the finite-entropy
dimension ``h / lambda``.
"""

from __future__ import annotations

import bisect
import math
import threading
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, zeta

from ._logmath import logdiffexp
from .digits import EXACT_FLOAT_LIMIT, Digit, DigitArray, DigitLike, as_digit
from .errors import InvalidRange, InvalidSpec, Marker, UnsupportedTailQuery
from .partition import DEFAULT_N_TABLE, PartitionSpec, log_hurwitz, read_table_file

LUT_SIZE = 1 << 16
_SAMPLER_PREFIX = 1 << 16
_CHUNK = 1 << 20


class DigitMeasure(ABC):
    """Common interface for digit distributions.

    Subclasses provide log ``p`` and log ``P`` on exact integers (float arrays)
    and on log-only digits, plus the inverse of the tail beyond ``n_table``.
    """

    kind: str = "abstract"
    is_bernoulli: bool = True
    crossover_tol: float = 1e-4

    def __init__(self, n_table: int = DEFAULT_N_TABLE):
        if n_table < 1:
            raise InvalidSpec("n_table must be positive")
        self.n_table = int(n_table)
        self._lock = threading.Lock()
        self._sampler: tuple[np.ndarray, np.ndarray] | None = None

    def __getstate__(self):
        # drop the lock and the large lazy tables; workers rebuild them
        state = self.__dict__.copy()
        state.pop("_lock", None)
        state.pop("_lut", None)
        state["_sampler"] = None
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    # Gibbs constants A, B: both 1 for Bernoulli measures
    gibbs_lo: float = 1.0
    gibbs_hi: float = 1.0

    @abstractmethod
    def _log_p_int(self, n: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _log_P_int(self, n: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _log_p_log(self, ell: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _log_P_log(self, ell: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _tail_inverse(self, log_v: np.ndarray) -> np.ndarray:
        """``log a`` of the smallest ``a > n_table`` with ``P_{a+1} <= v``."""

    def describe(self) -> str:
        return self.kind

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.describe()}>"

    # -- scalar evaluation --------------------------------------------------
    @staticmethod
    def _int_path(d: Digit) -> bool:
        return d.exact is not None and d.exact <= EXACT_FLOAT_LIMIT

    def log_p(self, d: DigitLike) -> float:
        """``log p_a``."""
        d = as_digit(d)
        if self._int_path(d):
            return float(self._log_p_int(np.array([float(d.exact)]))[0])
        return float(self._log_p_log(np.array([d.log_value]))[0])

    def log_tail_P(self, d: DigitLike) -> float:
        """``log P_a = log sum_{m >= a} p_m``."""
        d = as_digit(d)
        if self._int_path(d):
            return float(self._log_P_int(np.array([float(d.exact)]))[0])
        return float(self._log_P_log(np.array([d.log_value]))[0])

    def log_range_sum(self, a: DigitLike, b: DigitLike | None = None) -> float:
        """``log sum_{m=a}^{b} p_m`` (``b=None`` is the full tail)."""
        a = as_digit(a)
        if b is None:
            return self.log_tail_P(a)
        b = as_digit(b)
        if self._int_path(a) and self._int_path(b):
            if b.exact < a.exact:
                raise InvalidRange(f"range end {b} precedes start {a}")
            if b.exact - a.exact < _CHUNK:
                return float(logsumexp(self._log_p_int(np.arange(a.exact, b.exact + 1, dtype=float))))
        elif b.log_value < a.log_value:
            raise InvalidRange(f"range end {b} precedes start {a}")
        else:
            # narrow run of huge digits: tail differences cancel, use count * midpoint mass
            la, lb = a.log_value, b.log_value
            if lb == la:
                return self.log_p(a)
            gap = math.expm1(lb - la)
            if gap < 1e-4:
                # log((b - a + 1) / a)
                log_rel = float(np.logaddexp(math.log(gap), -la))
                mid = Digit.from_log(la + math.log1p(0.5 * gap))
                return la + log_rel + self.log_p(mid)
        lo = self.log_tail_P(a)
        hi = self.log_tail_P(b.shift(1))
        if hi >= lo:
            return self.log_p(a)
        return float(logdiffexp(lo, hi))

    # -- vectorized evaluation ----------------------------------------------
    @cached_property
    def _lut(self) -> tuple[np.ndarray, np.ndarray]:
        m = min(LUT_SIZE, self._lut_limit())
        n = np.arange(1, m + 1, dtype=float)
        return (
            np.concatenate(([-np.inf], self._log_p_int(n))),
            np.concatenate(([0.0], self._log_P_int(n))),
        )

    def _lut_limit(self) -> int:
        return LUT_SIZE

    def _many(self, digits: DigitArray, which: int) -> np.ndarray:
        exact, logv = digits
        exact = np.asarray(exact)
        out = np.empty(exact.shape, dtype=float)
        lut = self._lut[which]
        m = len(lut) - 1
        small = (exact > 0) & (exact <= m)
        out[small] = lut[exact[small]]
        mid = exact > m
        if np.any(mid):
            f = self._log_p_int if which == 0 else self._log_P_int
            out[mid] = f(exact[mid].astype(float))
        lg = exact <= 0
        if np.any(lg):
            f = self._log_p_log if which == 0 else self._log_P_log
            out[lg] = f(np.asarray(logv, dtype=float)[lg])
        return out

    def log_p_many(self, digits: DigitArray) -> np.ndarray:
        return self._many(digits, 0)

    def log_P_many(self, digits: DigitArray) -> np.ndarray:
        return self._many(digits, 1)

    def log_p_range(self, n_lo: int, n_hi: int) -> np.ndarray:
        return self._log_p_int(np.arange(n_lo, n_hi + 1, dtype=float))

    def log_P_range(self, n_lo: int, n_hi: int) -> np.ndarray:
        return self._log_P_int(np.arange(n_lo, n_hi + 1, dtype=float))

    def path_log_increments(self, digits: DigitArray) -> np.ndarray:
        """Per-step log-probabilities; their cumulative sum is the cylinder log-measure."""
        return self.log_p_many(digits)

    # -- sampling -----------------------------------------------------------
    def _sampler_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """``-P_{a+1}`` for ``a = 1..n_table`` (ascending) and its short prefix."""
        if self._sampler is None:
            with self._lock:
                if self._sampler is None:
                    n = self.n_table
                    p = np.exp(self._log_p_int(np.arange(2, n + 1, dtype=float)))
                    tail_end = math.exp(float(self._log_P_int(np.array([n + 1.0]))[0]))
                    neg = np.cumsum(p[::-1])[::-1]
                    neg = np.concatenate((neg, [0.0]))
                    neg += tail_end
                    np.negative(neg, out=neg)
                    self._sampler = (neg, neg[:_SAMPLER_PREFIX].copy())
        return self._sampler

    def digits_from_uniform(self, u: np.ndarray) -> DigitArray:
        """Inverse-CDF map: digit ``a`` is the smallest with ``F(a) >= u``."""
        u = np.asarray(u, dtype=float)
        v = 1.0 - u
        neg, head = self._sampler_tables()
        idx = np.searchsorted(head, -v, side="left")
        far = idx == len(head)
        if np.any(far) and len(neg) > len(head):
            idx[far] = np.searchsorted(neg, -v[far], side="left")
        exact = (idx + 1).astype(np.int64)
        logv = np.empty(u.shape, dtype=float)
        beyond = idx >= len(neg)
        inside = ~beyond
        logv[inside] = np.log(exact[inside].astype(float))
        if np.any(beyond):
            exact[beyond] = 0
            with np.errstate(divide="ignore"):
                lv = np.log(v[beyond])
            logv[beyond] = np.maximum(self._tail_inverse(lv), math.log(self.n_table + 1))
        return DigitArray(exact, logv)

    def digit_from_uniform(self, u: float) -> Digit:
        return self.digits_from_uniform(np.array([u]))[0]

    def sample_digit(self, rng: np.random.Generator) -> Digit:
        return self.digit_from_uniform(float(rng.random()))

    def sample(self, rng: np.random.Generator, size: int) -> DigitArray:
        return self.digits_from_uniform(rng.random(size))

    def stream(self, rng: np.random.Generator) -> "DigitStream":
        return BernoulliStream(self, rng)

    # -- consistency --------------------------------------------------------
    def check_crossover(self) -> float:
        """Relative gap between table and log-path evaluation at ``n_table``."""
        n = float(self.n_table)
        ell = np.array([math.log(n)])
        gp = abs(self._log_p_int(np.array([n]))[0] - self._log_p_log(ell)[0])
        gP = abs(self._log_P_int(np.array([n]))[0] - self._log_P_log(ell)[0])
        return float(max(gp, gP))

    def _assert_crossover(self) -> None:
        gap = self.check_crossover()
        if not gap <= self.crossover_tol:
            raise InvalidSpec(f"{self.describe()}: crossover gap {gap:.3g} at n_table")

    @cached_property
    def ratio_bounds(self) -> tuple[float, float]:
        """Fitted ``(K, K')`` bounding ``p_{n+1}/p_n`` over the scanned table."""
        m = min(self.n_table, 10**6)
        if m < 2:
            return 1.0, 1.0
        d = np.diff(self.log_p_range(1, m))
        d = d[np.isfinite(d)]
        if d.size == 0:
            return 0.0, 0.0
        return float(np.exp(d.min())), float(np.exp(d.max()))


class Geometric(DigitMeasure):
    """``p_n = (1-q) q^{n-1}``, ``P_n = q^{n-1}``."""

    kind = "geometric"

    def __init__(self, q: float, n_table: int = DEFAULT_N_TABLE):
        if not 0.0 < q < 1.0:
            raise InvalidSpec(f"geometric ratio must lie in (0, 1), got {q}")
        super().__init__(n_table)
        self.q = float(q)
        self._lq = math.log(q)
        self._l1q = math.log1p(-q)

    def describe(self) -> str:
        return f"geometric:{self.q:g}"

    def _log_p_int(self, n):
        return self._l1q + (n - 1.0) * self._lq

    def _log_P_int(self, n):
        return (n - 1.0) * self._lq

    def _log_p_log(self, ell):
        with np.errstate(over="ignore"):
            return self._l1q + np.expm1(ell) * self._lq

    def _log_P_log(self, ell):
        with np.errstate(over="ignore"):
            return np.expm1(ell) * self._lq

    def _tail_inverse(self, log_v):
        return np.log(np.ceil(log_v / self._lq))

    def digits_from_uniform(self, u):
        v = 1.0 - np.asarray(u, dtype=float)
        # smallest a with q^a <= v
        with np.errstate(divide="ignore"):
            a = np.maximum(np.ceil(np.log(v) / self._lq - 1e-12), 1.0)
        a = np.minimum(a, float(2**62))
        exact = a.astype(np.int64)
        return DigitArray(exact, np.log(a))

    @cached_property
    def ratio_bounds(self):
        return self.q, self.q


def _logsquare_tail_factor(L: np.ndarray, inv_K: np.ndarray) -> np.ndarray:
    """``log(L * T(K))`` for ``T(K) = sum_{m >= K} 1/(m log^2 m)``, ``L = log K``."""
    return np.log1p(inv_K / (2.0 * L) + (L + 2.0) * inv_K * inv_K / (12.0 * L * L))


class _LogSquareConstants:
    """Normalizer and small-index tails of ``f(m) = 1/(m log^2 m)``.

    The series is summed exactly (compensated) up to ``switch`` and closed with
    an Euler-Maclaurin tail.  The rigorous bracket for the remainder is
    ``[1/log M, 1/log M + f(M)]``.
    """

    switch = 1 << 20
    _inst = None
    _inst_lock = threading.Lock()

    def __init__(self):
        M = self.switch
        m = np.arange(2, M, dtype=float)
        f = 1.0 / (m * np.log(m) ** 2)
        LM = math.log(M)
        tail_M = math.exp(-math.log(LM) + float(_logsquare_tail_factor(np.array(LM), np.array(1.0 / M))))
        head = math.fsum(f)
        self.total = head + tail_M
        self.log_c = -math.log(self.total)
        self.c = 1.0 / self.total
        lo = head + 1.0 / LM
        hi = head + 1.0 / LM + 1.0 / (M * LM * LM)
        self.c_bracket = (1.0 / hi, 1.0 / lo)
        # T(K) for K = 2..M, indexed by K
        rev = np.cumsum(f[::-1])[::-1] + tail_M
        self.log_T = np.log(np.concatenate(([np.nan, np.nan], rev, [tail_M])))

    @classmethod
    def get(cls) -> "_LogSquareConstants":
        if cls._inst is None:
            with cls._inst_lock:
                if cls._inst is None:
                    cls._inst = cls()
        return cls._inst


class LogSquare(DigitMeasure):
    """``p_n = c / ((n+1) log^2(n+1))`` with ``c = 1 / sum_{m>=2} 1/(m log^2 m)``.

    Entropy and Lyapunov exponent are both infinite, while the decay ratio on
    the Gauss partition is 1/2.
    """

    kind = "logsquare"

    def __init__(self, n_table: int = DEFAULT_N_TABLE):
        super().__init__(n_table)
        k = _LogSquareConstants.get()
        self._k = k
        self.log_c = k.log_c
        self.c = k.c
        self.c_bracket = k.c_bracket
        self._assert_crossover()

    def _log_p_int(self, n):
        L = np.log1p(n)
        return self.log_c - L - 2.0 * np.log(L)

    def _log_p_log(self, ell):
        ell = np.asarray(ell, dtype=float)
        L = ell + np.log1p(np.exp(-ell))
        return self.log_c - L - 2.0 * np.log(L)

    def _log_T(self, K: np.ndarray, L: np.ndarray) -> np.ndarray:
        out = np.empty(np.shape(K))
        small = K <= self._k.switch
        if np.any(small):
            out[small] = self._k.log_T[K[small].astype(np.int64)]
        big = ~small
        if np.any(big):
            Lb = L[big]
            out[big] = -np.log(Lb) + _logsquare_tail_factor(Lb, np.exp(-Lb))
        return out

    def _log_P_int(self, n):
        K = np.asarray(n, dtype=float) + 1.0
        return self.log_c + self._log_T(K, np.log(K))

    def _log_P_log(self, ell):
        ell = np.asarray(ell, dtype=float)
        L = ell + np.log1p(np.exp(-ell))
        with np.errstate(over="ignore"):
            K = np.exp(np.minimum(L, 700.0))
        K = np.where(ell < 30.0, np.round(K), np.inf)
        return self.log_c + self._log_T(K, L)

    def _tail_inverse(self, log_v):
        # T(a+2) ~ 1/log(a+2) <= v / c
        L = np.exp(self.log_c - np.asarray(log_v, dtype=float))
        return L + np.log1p(-2.0 * np.exp(-L))

    def _lut_limit(self) -> int:
        return LUT_SIZE


class Zeta(DigitMeasure):
    """``p_n = n^{-beta} / zeta(beta)`` for ``beta > 1``."""

    kind = "zeta"

    def __init__(self, beta: float, n_table: int = DEFAULT_N_TABLE):
        if not beta > 1.0:
            raise InvalidSpec(f"zeta exponent must exceed 1, got {beta}")
        super().__init__(n_table)
        self.beta = float(beta)
        self.log_norm = math.log(zeta(self.beta))
        self._assert_crossover()

    def describe(self) -> str:
        return f"zeta:{self.beta:g}"

    def _log_p_int(self, n):
        return -self.beta * np.log(n) - self.log_norm

    def _log_p_log(self, ell):
        return -self.beta * np.asarray(ell, dtype=float) - self.log_norm

    def _log_P_int(self, n):
        return log_hurwitz(self.beta, n) - self.log_norm

    def _log_P_log(self, ell):
        ell = np.asarray(ell, dtype=float)
        with np.errstate(over="ignore"):
            n = np.exp(np.minimum(ell, 700.0))
        return log_hurwitz(self.beta, n, ell) - self.log_norm

    def _tail_inverse(self, log_v):
        b = self.beta
        L = (np.asarray(log_v) + math.log(b - 1.0) + self.log_norm) / (1.0 - b)
        return L + np.log1p(-np.exp(-L))


def _family(text: str, n_table: int) -> DigitMeasure:
    kind, _, arg = text.strip().partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "geometric":
            return Geometric(float(arg), n_table)
        if kind == "zeta":
            return Zeta(float(arg), n_table)
    except ValueError as exc:
        raise InvalidSpec(f"bad parameter in {text!r}") from exc
    if kind == "logsquare" and not arg:
        return LogSquare(n_table)
    raise InvalidSpec(f"unknown measure family {text!r}")


class TableMeasure(DigitMeasure):
    """Tabulated ``p_1..p_N`` with an optional family tail.

    Without a tail family the table is renormalized to total mass one (with a
    warning when it was off by more than 1e-6), and digits beyond ``N`` carry
    zero mass.  With a tail family ``geometric:<q>``, ``zeta:<beta>`` or
    ``logsquare`` the family's tail is rescaled to carry ``1 - sum(table)``.
    """

    kind = "table"

    def __init__(self, values, tail: str | None = None, source: str | None = None):
        vals = np.asarray(values, dtype=float)
        if vals.ndim != 1 or len(vals) == 0 or np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise InvalidSpec("table probabilities must be a non-empty non-negative sequence")
        super().__init__(len(vals))
        self.source = source
        total = math.fsum(vals)
        self.tail_rule = None if tail is None or tail.strip().lower() == "none" else tail.strip()
        self._family: DigitMeasure | None = None
        self._log_kappa = -math.inf
        if self.tail_rule is None:
            if abs(total - 1.0) > 1e-6:
                warnings.warn(f"table mass {total:.9g} renormalized to 1", stacklevel=2)
            vals = vals / total
            self.tail_mass = 0.0
        else:
            self.tail_mass = 1.0 - total
            if not self.tail_mass > 0:
                raise InvalidSpec("tail family given but the table already carries all the mass")
            fam = _family(self.tail_rule, max(len(vals) + 1, 2))
            self._family = fam
            self._log_kappa = math.log(self.tail_mass) - fam.log_tail_P(len(vals) + 1)
        with np.errstate(divide="ignore"):
            self._log_vals = np.log(vals)
            rev = np.cumsum(vals[::-1])[::-1] + self.tail_mass
            self._log_tail = np.log(np.concatenate((rev, [self.tail_mass])))
        if self.tail_rule is not None:
            self._assert_crossover()

    @classmethod
    def from_file(cls, path: str | Path) -> "TableMeasure":
        vals, tail = read_table_file(path)
        return cls(vals, tail, source=str(path))

    @classmethod
    def atom(cls) -> "TableMeasure":
        """The point mass on digit 1."""
        return cls([1.0])

    def describe(self) -> str:
        return f"table:{self.source or 'inline'}[{self.n_table}]" + (
            f"+{self.tail_rule}" if self.tail_rule else ""
        )

    def _beyond(self, shape):
        if self._family is None:
            return np.full(shape, -np.inf)
        raise AssertionError("unreachable")

    def _log_p_int(self, n):
        n = np.asarray(n, dtype=float)
        out = np.empty(n.shape)
        inside = n <= self.n_table
        out[inside] = self._log_vals[n[inside].astype(np.int64) - 1]
        if np.any(~inside):
            out[~inside] = (
                self._beyond(int(np.sum(~inside)))
                if self._family is None
                else self._log_kappa + self._family._log_p_int(n[~inside])
            )
        return out

    def _log_P_int(self, n):
        n = np.asarray(n, dtype=float)
        out = np.empty(n.shape)
        inside = n <= self.n_table + 1
        out[inside] = self._log_tail[n[inside].astype(np.int64) - 1]
        if np.any(~inside):
            out[~inside] = (
                self._beyond(int(np.sum(~inside)))
                if self._family is None
                else self._log_kappa + self._family._log_P_int(n[~inside])
            )
        return out

    def _via_log(self, ell, f_int, f_fam):
        ell = np.asarray(ell, dtype=float)
        with np.errstate(over="ignore"):
            n = np.exp(np.minimum(ell, 700.0))
        small = n <= self.n_table + 0.5
        out = np.empty(ell.shape)
        out[small] = f_int(np.round(n[small]))
        if np.any(~small):
            out[~small] = (
                self._beyond(int(np.sum(~small)))
                if self._family is None
                else self._log_kappa + f_fam(ell[~small])
            )
        return out

    def _log_p_log(self, ell):
        return self._via_log(ell, self._log_p_int, lambda e: self._family._log_p_log(e))

    def _log_P_log(self, ell):
        return self._via_log(ell, self._log_P_int, lambda e: self._family._log_P_log(e))

    def _tail_inverse(self, log_v):
        if self._family is None:
            raise UnsupportedTailQuery("no tail family: the table carries all the mass")
        return self._family._tail_inverse(np.asarray(log_v) - self._log_kappa)

    def _lut_limit(self) -> int:
        return self.n_table + 1 if self._family is None else LUT_SIZE

    def check_crossover(self) -> float:
        if self._family is None:
            return 0.0
        n = np.array([float(self.n_table)])
        fam = self._log_kappa + self._family._log_p_int(n)[0]
        return float(abs(self._log_vals[-1] - fam))


class DigitStream:
    """Stateful digit generator owned by one orbit."""

    def draw(self, size: int) -> tuple[DigitArray, np.ndarray]:
        """Next ``size`` digits and their log-probability increments."""
        raise NotImplementedError


class BernoulliStream(DigitStream):
    def __init__(self, measure: DigitMeasure, rng: np.random.Generator):
        self.measure = measure
        self.rng = rng

    def draw(self, size):
        d = self.measure.sample(self.rng, size)
        return d, self.measure.log_p_many(d)


class MarkovClassMeasure(DigitMeasure):
    """Memory-one chain modulating a base family through digit classes.

    Digits are grouped into classes ``{1}, {2}, ..., {K-1}, {>= K}`` with
    ``K = weights.shape[0]``.  The transition probability is
    ``T(a, b) = p_b * W[c(a), c(b)] / Z_{c(a)}``, where ``p`` is the base
    family and ``Z`` normalizes rows.  Stationary law: ``pi(b) = p_b h(c(b))``.

    The chain is a Gibbs measure for the two-coordinate potential
    ``phi(a, b) = pi(a) T(a, b) / pi(b)``.  The cylinder measure divided by
    ``exp(S_n log phi)`` equals ``h(j) Z_i / W_ij`` for the last transition,
    so the extrema of that table are the Gibbs constants.
    """

    kind = "markov"
    is_bernoulli = False

    def __init__(self, base: DigitMeasure, weights):
        W = np.asarray(weights, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] < 2 or np.any(W <= 0):
            raise InvalidSpec("weights must be a positive square matrix of size >= 2")
        if not base.is_bernoulli:
            raise InvalidSpec("base family must be Bernoulli")
        super().__init__(base.n_table)
        self.base = base
        self.W = W
        K = W.shape[0]
        self.n_classes = K
        s = np.array([math.exp(base.log_p(j)) for j in range(1, K)] + [math.exp(base.log_tail_P(K))])
        self.class_mass = s
        Z = W @ s
        Q = W * s[None, :] / Z[:, None]
        evals, evecs = np.linalg.eig(Q.T)
        m = np.real(evecs[:, np.argmin(np.abs(evals - 1.0))])
        m = m / m.sum()
        self.class_stationary = m
        self.class_transition = Q
        self._log_h = np.log(m / s)
        self._log_Z = np.log(Z)
        self._log_W = np.log(W)
        gibbs = np.exp(self._log_h[None, :] + self._log_Z[:, None] - self._log_W)
        self.gibbs_lo = float(gibbs.min())
        self.gibbs_hi = float(gibbs.max())
        self._cumQ = [list(np.cumsum(row)) for row in Q]
        self._cum_m = list(np.cumsum(m))

    def describe(self) -> str:
        return f"markov[{self.base.describe()},K={self.n_classes}]"

    def classes(self, digits: DigitArray) -> np.ndarray:
        exact = np.asarray(digits.exact)
        K = self.n_classes
        return np.where((exact > 0) & (exact < K), exact - 1, K - 1)

    def _class_of_int(self, n):
        return np.minimum(np.asarray(n, dtype=np.int64), self.n_classes) - 1

    # stationary one-digit marginal
    def _log_p_int(self, n):
        return self.base._log_p_int(n) + self._log_h[self._class_of_int(n)]

    def _log_p_log(self, ell):
        return self.base._log_p_log(ell) + self._log_h[-1]

    def _log_P_int(self, n):
        n = np.asarray(n, dtype=float)
        out = self.base._log_P_int(np.maximum(n, self.n_classes)) + self._log_h[-1]
        for i, nn in enumerate(n):
            if nn < self.n_classes:
                heads = [self.log_p(k) for k in range(int(nn), self.n_classes)]
                out[i] = float(logsumexp(heads + [out[i]]))
        return out

    def _log_P_log(self, ell):
        return self.base._log_P_log(ell) + self._log_h[-1]

    def _tail_inverse(self, log_v):
        return self.base._tail_inverse(np.asarray(log_v) - self._log_h[-1])

    def log_transition(self, a: DigitLike, b: DigitLike) -> float:
        ca = self.classes(DigitArray.from_digits([a]))[0]
        cb = self.classes(DigitArray.from_digits([b]))[0]
        return self.base.log_p(b) + self._log_W[ca, cb] - self._log_Z[ca]

    def path_log_increments(self, digits: DigitArray) -> np.ndarray:
        lp = self.base.log_p_many(digits)
        if len(lp) == 0:
            return lp
        c = self.classes(digits)
        out = lp.copy()
        out[0] += self._log_h[c[0]]
        out[1:] += self._log_W[c[:-1], c[1:]] - self._log_Z[c[:-1]]
        return out

    def log_gibbs_ratio(self, digits: DigitArray, next_digit: DigitLike) -> float:
        """``log mu(C) - S_n log phi`` for the cylinder ``C`` of ``digits``."""
        c = self.classes(digits)
        cn = self.classes(DigitArray.from_digits([next_digit]))[0]
        return float(self._log_h[cn] + self._log_Z[c[-1]] - self._log_W[c[-1], cn])

    def union_tail(self, prev: DigitLike | None, a: DigitLike, b: DigitLike | None) -> float:
        """``log sum_{m=a}^{b} T(prev, m)`` (stationary law when ``prev`` is None)."""
        a = as_digit(a)
        K = self.n_classes
        if prev is None:
            row = self._log_h
        else:
            cp = self.classes(DigitArray.from_digits([prev]))[0]
            row = self._log_W[cp] - self._log_Z[cp]
        parts = []
        lo_v = a.log_value
        hi_v = math.inf if b is None else as_digit(b).log_value
        for j in range(1, K):
            lj = math.log(j)
            if lo_v - 1e-12 <= lj <= hi_v + 1e-12:
                parts.append(self.base.log_p(j) + row[j - 1])
        start = a if a.log_value >= math.log(K) - 1e-12 else Digit.of(K)
        if b is None or as_digit(b).log_value >= start.log_value - 1e-12:
            parts.append(self.base.log_range_sum(start, b) + row[K - 1])
        return float(logsumexp(parts)) if parts else -math.inf

    def stream(self, rng):
        return MarkovStream(self, rng)

    def sample(self, rng, size):
        return self.stream(rng).draw(size)[0]


class MarkovStream(DigitStream):
    def __init__(self, measure: MarkovClassMeasure, rng: np.random.Generator):
        self.m = measure
        self.rng = rng
        self.prev_class: int | None = None

    def draw(self, size):
        m = self.m
        K = m.n_classes
        uc = self.rng.random(size)
        ud = self.rng.random(size)
        cls = np.empty(size, dtype=np.int64)
        prev = self.prev_class
        for i in range(size):
            row = m._cum_m if prev is None else m._cumQ[prev]
            prev = min(bisect.bisect_left(row, uc[i]), K - 1)
            cls[i] = prev
        top = cls == K - 1
        exact = cls + 1
        logv = np.log(exact.astype(float))
        if np.any(top):
            # base digit conditioned on >= K: scale the tail uniform by P_K
            vk = math.exp(m.base.log_tail_P(K))
            d = m.base.digits_from_uniform(1.0 - vk * (1.0 - ud[top]))
            e = np.where((d.exact > 0) & (d.exact < K), K, d.exact)
            lv = np.where(d.exact > 0, np.log(np.maximum(e, 1).astype(float)), d.logv)
            exact[top] = e
            logv[top] = lv
        digits = DigitArray(exact, logv)
        inc = m.base.log_p_many(digits)
        first = self.prev_class is None
        c_prev = np.concatenate(([self.prev_class if not first else 0], cls[:-1]))
        inc = inc + m._log_W[c_prev, cls] - m._log_Z[c_prev]
        if first:
            inc[0] = m.base.log_p_many(digits[:1])[0] + m._log_h[cls[0]]
        self.prev_class = int(cls[-1])
        return digits, inc


def parse_measure(text: str, n_table: int = DEFAULT_N_TABLE) -> DigitMeasure:
    """Build a measure from ``geometric:<q>``, ``logsquare``, ``zeta:<b>`` or ``table:<path>``."""
    t = text.strip()
    if t.lower().startswith("table:"):
        return TableMeasure.from_file(t[6:].strip())
    return _family(t, n_table)


# ---------------------------------------------------------------------------
# cylinder measures


def cylinder_log_measure(measure: DigitMeasure, digits: Sequence[DigitLike] | DigitArray) -> float:
    """``log mu(I(a_1 .. a_n))``; 0 for the empty word."""
    d = digits if isinstance(digits, DigitArray) else DigitArray.from_digits(list(digits))
    if len(d) == 0:
        return 0.0
    return math.fsum(measure.path_log_increments(d))


def union_log_measure(
    measure: DigitMeasure,
    prefix: Sequence[DigitLike],
    a_start: DigitLike,
    a_end: DigitLike | None = None,
) -> float:
    """``log mu(union_{m=a_start}^{a_end} I(prefix, m))``; open end means the tail."""
    prefix = list(prefix)
    if a_end is not None and as_digit(a_end).log_value < as_digit(a_start).log_value:
        raise InvalidRange(f"range end {a_end} precedes start {a_start}")
    head = cylinder_log_measure(measure, prefix)
    if isinstance(measure, MarkovClassMeasure):
        return head + measure.union_tail(prefix[-1] if prefix else None, a_start, a_end)
    return head + measure.log_range_sum(a_start, a_end)


# ---------------------------------------------------------------------------
# series functionals


def _blocks(lo: int, hi: int, chunk: int = _CHUNK):
    for a in range(lo, hi + 1, chunk):
        yield np.arange(a, min(hi, a + chunk - 1) + 1, dtype=float)


def _running_sums(term, checkpoints: Sequence[int]) -> np.ndarray:
    """Partial sums ``sum_{n <= N} term(n)`` at each checkpoint ``N``."""
    cps = sorted(set(int(c) for c in checkpoints))
    parts: list[float] = []
    vals = {}
    start = 1
    for cp in cps:
        for n in _blocks(start, cp):
            parts.append(float(np.sum(term(n))))
        vals[cp] = math.fsum(parts)
        start = cp + 1
    return np.array([vals[int(c)] for c in checkpoints])


def _plogp(lp: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return np.where(np.isneginf(lp), 0.0, np.exp(lp) * lp)


def entropy_terms(measure: DigitMeasure, n: np.ndarray) -> np.ndarray:
    return -_plogp(measure._log_p_int(n))


def lyapunov_terms(measure: DigitMeasure, partition: PartitionSpec, n: np.ndarray) -> np.ndarray:
    lp = measure._log_p_int(n)
    p = np.exp(lp)
    return np.where(p > 0, -p * partition._log_r_int(n), 0.0)


def trimmed_terms(measure: DigitMeasure, partition: PartitionSpec, n: np.ndarray) -> np.ndarray:
    p = np.exp(measure._log_p_int(n))
    p1 = np.exp(measure._log_p_int(n + 1.0))
    return partition._log_r_int(n) ** 2 * (p * p + 2.0 * p * p1)


def entropy_partial(measure: DigitMeasure, N: int) -> float:
    """``H_N = -sum_{n <= N} p_n log p_n``."""
    return float(_running_sums(lambda n: entropy_terms(measure, n), [N])[0])


def lyapunov_partial(measure: DigitMeasure, partition: PartitionSpec, N: int) -> float:
    """``Lambda_N = -sum_{n <= N} p_n log r_n`` (piecewise-linear model, no distortion term)."""
    return float(_running_sums(lambda n: lyapunov_terms(measure, partition, n), [N])[0])


def trimmed_criterion_partial(measure: DigitMeasure, partition: PartitionSpec, N: int) -> float:
    """``sum_{n <= N} (log r_n)^2 (p_n^2 + 2 p_n p_{n+1})``."""
    return float(_running_sums(lambda n: trimmed_terms(measure, partition, n), [N])[0])


@dataclass(frozen=True)
class SeriesCurve:
    """Partial sums at checkpoints with a divergence verdict."""

    checkpoints: np.ndarray
    values: np.ndarray
    divergent: bool


def series_divergent(s_100: float, s_10: float, s_1: float, tol: float = 1e-9) -> bool:
    """Judge a positive series from partial sums at ``N/100``, ``N/10`` and ``N``.

    Divergent when the last decade still adds more than ``tol`` and at least
    half of what the previous decade added (a convergent tail shrinks faster).
    """
    last = s_1 - s_10
    prev = s_10 - s_100
    return bool(last > tol and last > 0.5 * prev)


def _series_curve(term, N: int, checkpoints=None, tol: float = 1e-9) -> SeriesCurve:
    extra = [] if checkpoints is None else [int(c) for c in checkpoints]
    cps = sorted(set([max(N // 100, 1), max(N // 10, 1), N] + extra))
    vals = _running_sums(term, cps)
    lookup = dict(zip(cps, vals))
    div = series_divergent(lookup[max(N // 100, 1)], lookup[max(N // 10, 1)], lookup[N], tol)
    return SeriesCurve(np.array(cps), vals, div)


def entropy_curve(measure, N: int, checkpoints=None, tol: float = 1e-9) -> SeriesCurve:
    return _series_curve(lambda n: entropy_terms(measure, n), N, checkpoints, tol)


def lyapunov_curve(measure, partition, N: int, checkpoints=None, tol: float = 1e-9) -> SeriesCurve:
    return _series_curve(lambda n: lyapunov_terms(measure, partition, n), N, checkpoints, tol)


def trimmed_criterion_curve(measure, partition, N: int, checkpoints=None, tol: float = 1e-9) -> SeriesCurve:
    return _series_curve(lambda n: trimmed_terms(measure, partition, n), N, checkpoints, tol)


def _default_horizon(measure: DigitMeasure) -> int:
    if isinstance(measure, TableMeasure) and measure._family is None:
        return max(measure.n_table, 100)
    return 10**6


def volume_lemma_dim(measure: DigitMeasure, partition: PartitionSpec, N: int | None = None):
    """``h / lambda`` from partial sums, or ``Marker.DIVERGENT`` if the entropy diverges.

    A finite entropy with divergent Lyapunov sum gives 0.
    """
    N = _default_horizon(measure) if N is None else int(N)
    h = entropy_curve(measure, N)
    if h.divergent:
        return Marker.DIVERGENT
    lam = lyapunov_curve(measure, partition, N)
    if lam.divergent:
        return 0.0
    return float(h.values[-1] / lam.values[-1])


@dataclass(frozen=True)
class DecayCurve:
    """Decay-ratio diagnostics at checkpoints ``N``.

    ``pointwise`` is ``log p_N / log r_N``, ``cesaro`` is
    ``sum p log p / sum p log r`` over ``n <= N`` and ``tail_ratio`` is
    ``log P_N / log R_N``.
    """

    checkpoints: np.ndarray
    pointwise: np.ndarray
    cesaro: np.ndarray
    tail_ratio: np.ndarray

    def excess(self, target: float = 0.5) -> np.ndarray:
        """``(pointwise - target) * log N``."""
        return (self.pointwise - target) * np.log(self.checkpoints.astype(float))


def decay_ratio_curve(measure: DigitMeasure, partition: PartitionSpec, checkpoints: Sequence[int]) -> DecayCurve:
    cps = np.array(sorted(set(int(c) for c in checkpoints)), dtype=np.int64)
    n = cps.astype(float)
    pointwise = measure._log_p_int(n) / partition._log_r_int(n)
    num = _running_sums(lambda k: _plogp(measure._log_p_int(k)), cps)
    den = _running_sums(lambda k: -lyapunov_terms(measure, partition, k), cps)
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = measure._log_P_int(n) / partition._log_R_int(n)
        cesaro = num / den
    return DecayCurve(cps, pointwise, cesaro, tail)


def polynomial_lower_bound_check(measure: DigitMeasure, delta: float, n_lo: int, n_hi: int, c_min: float = 1e-6):
    """Largest ``C`` with ``p_n >= C n^{-(1+delta)}`` on ``[n_lo, n_hi]``, or ``Marker.FAIL``.

    The bound needs ``delta > 0``; a constant below ``c_min`` counts as failure.
    """
    if not delta > 0:
        return Marker.FAIL
    best = math.inf
    for n in _blocks(int(n_lo), int(n_hi)):
        best = min(best, float(np.min(measure._log_p_int(n) + (1.0 + delta) * np.log(n))))
    if best < math.log(c_min):
        return Marker.FAIL
    return math.exp(best)


@dataclass
class MeasureStats:
    """All series diagnostics of a measure on a partition at shared checkpoints."""

    checkpoints: np.ndarray
    entropy_partials: np.ndarray
    lyapunov_partials: np.ndarray
    decay_pointwise: np.ndarray
    decay_cesaro: np.ndarray
    tail_ratio: np.ndarray
    criterion_partials: np.ndarray
    entropy_divergent: bool = False
    lyapunov_divergent: bool = False
    criterion_divergent: bool = False
    extra: dict = field(default_factory=dict)


def measure_stats(measure: DigitMeasure, partition: PartitionSpec, checkpoints: Sequence[int]) -> MeasureStats:
    cps = np.array(sorted(set(int(c) for c in checkpoints)), dtype=np.int64)
    N = int(cps[-1])
    h = entropy_curve(measure, N, cps)
    lam = lyapunov_curve(measure, partition, N, cps)
    tc = trimmed_criterion_curve(measure, partition, N, cps)
    dc = decay_ratio_curve(measure, partition, cps)

    def pick(curve: SeriesCurve):
        lookup = dict(zip(curve.checkpoints.tolist(), curve.values))
        return np.array([lookup[int(c)] for c in cps])

    return MeasureStats(
        checkpoints=cps,
        entropy_partials=pick(h),
        lyapunov_partials=pick(lam),
        decay_pointwise=dc.pointwise,
        decay_cesaro=dc.cesaro,
        tail_ratio=dc.tail_ratio,
        criterion_partials=pick(tc),
        entropy_divergent=h.divergent,
        lyapunov_divergent=lam.divergent,
        criterion_divergent=tc.divergent,
    )
