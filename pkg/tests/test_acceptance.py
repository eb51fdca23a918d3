"""Acceptance criteria at full settings; one pass/fail line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines live. The
whole file takes about eight minutes on one core.
"""
import pytest

from aaptlink.acceptance import CRITERIA


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    result = CRITERIA[number]()
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.line()
