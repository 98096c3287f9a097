"""The ten acceptance criteria, each reported as one PASS/FAIL line.

The battery runs once per session (criteria run in parallel when
``BFLOW_THREADS`` > 1); the summary lines appear at the end of the pytest
output. Run this file directly to print them without pytest.
"""
import sys

import pytest

from bflow.acceptance import CRITERIA, run_criteria

SEED = 0
SUMMARY: list = []


@pytest.fixture(scope="module")
def battery():
    results = {r.number: r for r in run_criteria(CRITERIA, SEED)}
    SUMMARY[:] = [results[k].summary() for k in sorted(results)]
    return results


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA), ids=[f"criterion_{k:02d}" for k in sorted(CRITERIA)])
def test_criterion(battery, number):
    result = battery[number]
    assert result.error is None, result.error
    failing = [c.to_json() for c in result.checks if not c.passed]
    assert result.passed, failing


if __name__ == "__main__":
    outcomes = run_criteria(CRITERIA, SEED, progress=lambda r: print(r.summary(), flush=True))
    sys.exit(0 if all(r.passed for r in outcomes) else 1)
