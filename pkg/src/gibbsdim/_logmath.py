"""Small log-space helpers."""

from __future__ import annotations

import math

import numpy as np

LN2 = math.log(2.0)


def log1mexp(x):
    """Return log(1 - exp(x)) for x <= 0, accurate across the whole range."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x > -LN2, np.log(-np.expm1(x)), np.log1p(-np.exp(x)))
    return out if out.ndim else float(out)


def logdiffexp(a, b):
    """Return log(exp(a) - exp(b)) for a >= b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(invalid="ignore"):
        out = np.where(np.isneginf(b), a, a + log1mexp(np.minimum(b - a, 0.0)))
    out = np.where(b > a, np.nan, out)
    return out if out.ndim else float(out)


def logaddexp(a, b):
    out = np.logaddexp(a, b)
    return out if np.ndim(out) else float(out)


def log_int(n):
    """Natural log of positive integers, exact enough for Python ints of any size."""
    if isinstance(n, (int, np.integer)):
        return math.log(int(n))
    return np.log(np.asarray(n, dtype=float))


def last_true(pred, lo: int, hi: int) -> int:
    """Largest k in [lo, hi] with pred(k) true, assuming pred is monotone true-then-false.

    Returns lo - 1 when pred(lo) is false.
    """
    if not pred(lo):
        return lo - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if pred(mid):
            lo = mid
        else:
            hi = mid - 1
    return lo


def first_true(pred, lo: int, hi: int) -> int:
    """Smallest k in [lo, hi] with pred(k) true, assuming false-then-true.

    Returns hi + 1 when pred(hi) is false.
    """
    if not pred(hi):
        return hi + 1
    while lo < hi:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo
