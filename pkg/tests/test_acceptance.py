"""The twelve acceptance criteria at their stated tolerances.

Each test prints a one-line PASS/FAIL summary; the lines are collected into
an "acceptance criteria" section at the end of the pytest run.
"""

import pytest

from gibbsdim import acceptance


@pytest.mark.acceptance
@pytest.mark.parametrize("number", [str(i) for i in range(1, 13)])
def test_criterion(number, criterion_log):
    res = acceptance.CRITERIA[number]()
    line = res.line()
    print(line)
    criterion_log.append(line)
    assert res.passed, line
