"""Acceptance criteria at their stated tolerances and sizes.

Each test prints one ``criterion N PASS|FAIL`` line; the lines are repeated
in the terminal summary. ``BOUNDARYWALK_ACCEPTANCE_SCALE=quick`` shrinks the
sample sizes for a smoke run (tolerances are unchanged).
"""

import os

import pytest

from boundarywalk import acceptance

pytestmark = pytest.mark.acceptance

SCALE = os.environ.get("BOUNDARYWALK_ACCEPTANCE_SCALE", "full")


@pytest.fixture(scope="module")
def suite():
    return acceptance.Suite(SCALE, acceptance.DEFAULT_SEED)


@pytest.mark.parametrize("number", range(1, 10), ids=[f"criterion_{k}" for k in range(1, 10)])
def test_criterion(suite, number, acceptance_lines):
    r = suite.run(number)
    line = r.line()
    print(line)
    acceptance_lines.append(line)
    assert r.passed, line
