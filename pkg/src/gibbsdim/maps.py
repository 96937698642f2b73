"""Cylinder geometry under the piecewise-linear model and the true Gauss map.

In the piecewise-linear model every branch is affine, so the cylinder
``I(a_1 .. a_n)`` has length ``prod r_{a_k}`` exactly.  For the Gauss map the
length is ``1 / (q_n (q_n + q_{n-1}))`` with continuants ``q_n``, computed in
log space because ``q_n`` overflows quickly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._logmath import LN2
from .digits import Digit, DigitArray, DigitLike, as_digit
from .errors import ExactDigitRequired, InvalidRange, InvalidSpec
from .partition import GaussPartition, PartitionSpec

MAX_CONTINUANT_DEPTH = 10**6


@dataclass(frozen=True)
class PiecewiseLinear:
    """Affine branches with lengths given by ``partition``."""

    partition: PartitionSpec


@dataclass(frozen=True)
class GaussMap:
    """The Gauss map ``x -> 1/x mod 1``.

    ``allow_log_digits`` switches log-only digits to the asymptotic path
    ``log q_n ~ log a_n + log q_{n-1}``.
    """

    allow_log_digits: bool = False


MapModel = PiecewiseLinear | GaussMap


@dataclass(frozen=True)
class ContinuantState:
    """``(log q_{n-1}, log q_n)`` after ``depth`` digits; ``q_{-1} = 0``, ``q_0 = 1``."""

    log_q_prev: float = -math.inf
    log_q_curr: float = 0.0
    depth: int = 0

    def advance(self, d: DigitLike, allow_log: bool = False) -> "ContinuantState":
        """Apply ``q_{n+1} = a q_n + q_{n-1}``."""
        d = as_digit(d)
        if d.exact is None and not allow_log:
            raise ExactDigitRequired(f"Gauss-map geometry needs exact digits (got {d})")
        if self.depth >= MAX_CONTINUANT_DEPTH:
            raise InvalidSpec(f"continuant depth capped at {MAX_CONTINUANT_DEPTH}")
        la = d.log_value
        base = la + self.log_q_curr
        nxt = base + math.log1p(math.exp(self.log_q_prev - base))
        return ContinuantState(self.log_q_curr, nxt, self.depth + 1)

    def log_length(self) -> float:
        """``log |I| = -log q_n - log(q_n + q_{n-1})``."""
        lq, lp = self.log_q_curr, self.log_q_prev
        return -lq - (lq + math.log1p(math.exp(lp - lq)))


def continuant(digits: Sequence[DigitLike], allow_log: bool = False) -> ContinuantState:
    st = ContinuantState()
    for d in digits:
        st = st.advance(d, allow_log)
    return st


def _digits(digits) -> list[Digit]:
    if isinstance(digits, DigitArray):
        return digits.to_list()
    return [as_digit(d) for d in digits]


def cyl_log_length(model: MapModel, digits) -> float:
    """``log |I(a_1 .. a_n)|`` under ``model``."""
    ds = _digits(digits)
    if not ds:
        raise InvalidSpec("cylinder needs at least one digit")
    if isinstance(model, PiecewiseLinear):
        return math.fsum(model.partition.log_r(d) for d in ds)
    if isinstance(model, GaussMap):
        return continuant(ds, model.allow_log_digits).log_length()
    raise TypeError(f"unknown map model {model!r}")


def union_log_length(
    model: MapModel,
    prefix: Sequence[DigitLike],
    a_start: DigitLike,
    a_end: DigitLike | None = None,
) -> float:
    """``log |union_{m=a_start}^{a_end} I(prefix, m)|``; open end means the whole tail.

    Only the piecewise-linear model has exact unions.
    """
    if not isinstance(model, PiecewiseLinear):
        raise InvalidSpec("cylinder unions are exact only in the piecewise-linear model")
    a = as_digit(a_start)
    if a_end is not None:
        b = as_digit(a_end)
        if (a.exact is not None and b.exact is not None and b.exact < a.exact) or (
            b.log_value < a.log_value - 1e-15
        ):
            raise InvalidRange(f"range end {b} precedes start {a}")
    ds = _digits(prefix)
    head = math.fsum(model.partition.log_r(d) for d in ds) if ds else 0.0
    return head + model.partition.log_range_sum(a, a_end)


def neighbor_cylinders(prefix: Sequence[DigitLike]) -> tuple[list[Digit], list[Digit] | None]:
    """Left neighbour (last digit + 1) and right neighbour (last digit - 1, absent for 1).

    Branches accumulate at 0, so larger digits sit to the left.
    """
    ds = _digits(prefix)
    if not ds:
        raise InvalidSpec("neighbours need a non-empty prefix")
    last = ds[-1]
    left = ds[:-1] + [last.shift(1)]
    if last.exact == 1:
        return left, None
    return left, ds[:-1] + [last.shift(-1)]


DISTORTION_D1 = LN2
DISTORTION_D2 = LN2


def distortion_residual(digits) -> float:
    """``|log|I|_Gauss - log|I|_linear|`` for exact digits and the Gauss partition."""
    ds = _digits(digits)
    for d in ds:
        d.require_exact()
    if len(ds) > 1000:
        raise InvalidSpec("distortion residual is checked up to depth 1000")
    lin = cyl_log_length(PiecewiseLinear(_GAUSS), ds)
    gm = cyl_log_length(GaussMap(), ds)
    return abs(gm - lin)


def distortion_bound(n: int) -> float:
    """``n D_1 + D_2`` with ``D_1 = D_2 = log 2``."""
    return n * DISTORTION_D1 + DISTORTION_D2


_GAUSS = GaussPartition(n_table=1 << 16)


def cyl_log_lengths_linear(partition: PartitionSpec, digits: DigitArray) -> np.ndarray:
    """Cumulative ``log |I_n|`` for ``n = 1..len(digits)`` in the piecewise-linear model."""
    return np.cumsum(partition.log_r_many(digits))


def cyl_log_lengths_gauss(digits: DigitArray, allow_log: bool = False) -> np.ndarray:
    """Cumulative Gauss-map ``log |I_n|`` for ``n = 1..len(digits)``."""
    exact = np.asarray(digits.exact)
    if not allow_log and np.any(exact == 0):
        raise ExactDigitRequired("Gauss-map geometry needs exact digits")
    la = np.asarray(digits.logv, dtype=float).tolist()
    out = np.empty(len(la))
    lq_prev, lq = -math.inf, 0.0
    exp, log1p = math.exp, math.log1p
    for i, a in enumerate(la):
        base = a + lq
        lq_prev, lq = lq, base + log1p(exp(lq_prev - base))
        out[i] = -lq - (lq + log1p(exp(lq_prev - lq)))
    return out
