"""Exception types and sentinel markers shared across the package."""

from __future__ import annotations

import enum


class GibbsDimError(Exception):
    """Base class for all package errors."""


class InvalidSpec(GibbsDimError, ValueError):
    """A partition, measure or config entry is malformed."""


class UnsupportedTailQuery(GibbsDimError, ValueError):
    """A digit beyond a finite table was queried and no tail rule is known."""


class EstimationFailed(GibbsDimError, RuntimeError):
    """A numerical fit or search did not converge."""

    def __init__(self, message: str, diagnostic: dict | None = None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


class ExactDigitRequired(GibbsDimError, ValueError):
    """A computation needs the integer value of a digit that is log-only."""


class InvalidRange(GibbsDimError, ValueError):
    """A digit range has its end before its start."""


class DigitOneSkipped(GibbsDimError, ValueError):
    """Digit 1 has no right neighbour, so the neighbour estimator is undefined."""


class InvalidParameters(GibbsDimError, ValueError):
    """Parameters fall outside the admissible region of a check."""


class NoK0Found(GibbsDimError, RuntimeError):
    """No threshold digit makes the inequality hold on the scanned range."""

    def __init__(self, message: str, profile=None):
        super().__init__(message)
        self.profile = profile


class NotRecorded(GibbsDimError, KeyError):
    """An orbit quantity was requested at an index that was not stored."""


class Marker(enum.Enum):
    """Non-numeric outcomes of scalar diagnostics."""

    DIVERGENT = "divergent"
    FAIL = "fail"
    DEGENERATE_WHOLE_SPACE = "degenerate-whole-space"

    def __str__(self) -> str:
        return self.value
