"""Hybrid branch indices.

A digit is carried as its natural logarithm, together with the exact integer
whenever the integer fits in the tabulated range.  Digits drawn from heavy
tails routinely exceed any machine integer, so everything downstream works
from ``log_value`` and only uses ``exact`` where exactness matters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import ExactDigitRequired, InvalidSpec

#: Largest integer whose float64 image is exact.
EXACT_FLOAT_LIMIT = 2**53


@dataclass(frozen=True, slots=True)
class Digit:
    """A branch index ``a >= 1``.

    Parameters
    ----------
    log_value : float
        ``log(a)``; always present and ``>= 0``.
    exact : int or None
        The integer itself, or ``None`` for a log-only digit.
    """

    log_value: float
    exact: int | None = None

    def __post_init__(self):
        if self.exact is not None:
            if self.exact < 1:
                raise InvalidSpec(f"digit must be >= 1, got {self.exact}")
            if abs(self.log_value - math.log(self.exact)) > 1e-12:
                raise InvalidSpec("log_value inconsistent with exact value")
        elif not (self.log_value >= 0.0) or math.isinf(self.log_value):
            raise InvalidSpec(f"log_value must be finite and >= 0, got {self.log_value}")

    @classmethod
    def of(cls, n: int) -> "Digit":
        n = int(n)
        return cls(math.log(n) if n >= 1 else -1.0, n)

    @classmethod
    def from_log(cls, log_value: float) -> "Digit":
        return cls(float(log_value), None)

    @property
    def is_exact(self) -> bool:
        return self.exact is not None

    def require_exact(self) -> int:
        if self.exact is None:
            raise ExactDigitRequired(f"log-only digit (log a = {self.log_value:.6g})")
        return self.exact

    def shift(self, k: int) -> "Digit":
        """Digit ``a + k``; log-only digits shift in log space."""
        if self.exact is not None:
            return Digit.of(self.exact + k)
        ell = self.log_value
        return Digit.from_log(ell + math.log1p(k * math.exp(-ell)))

    def __int__(self) -> int:
        return self.require_exact()

    def __str__(self) -> str:
        if self.exact is not None:
            return str(self.exact)
        return f"exp({self.log_value:.17g})"


DigitLike = Union[int, Digit]


def as_digit(d: DigitLike) -> Digit:
    if isinstance(d, Digit):
        return d
    if isinstance(d, (int, np.integer)):
        return Digit.of(int(d))
    raise TypeError(f"cannot interpret {d!r} as a digit")


class DigitArray(NamedTuple):
    """Column form of a digit sequence.

    ``exact[i] == 0`` marks a log-only entry whose value lives in ``logv[i]``.
    """

    exact: np.ndarray
    logv: np.ndarray

    def __len__(self) -> int:
        return len(self.exact)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return DigitArray(self.exact[i], self.logv[i])
        e = int(self.exact[i])
        return Digit(float(self.logv[i]), e) if e > 0 else Digit.from_log(float(self.logv[i]))

    @classmethod
    def from_digits(cls, digits: Sequence[DigitLike]) -> "DigitArray":
        ds = [as_digit(d) for d in digits]
        exact = np.array(
            [d.exact if d.exact is not None and d.exact < 2**62 else 0 for d in ds], dtype=np.int64
        )
        logv = np.array([d.log_value for d in ds], dtype=float)
        return cls(exact, logv)

    def to_list(self) -> list[Digit]:
        return [self[i] for i in range(len(self))]
