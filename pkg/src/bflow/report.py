"""Pass/fail checks and the versioned report envelope shared by the CLI and the acceptance suite."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

SCHEMA = "bflow.report/v1"


@dataclass(frozen=True)
class Check:
    """One numeric claim and the tolerance it was tested against.

    ``comparison`` is ``"<="`` (value at most tolerance), ``">="`` (value at
    least tolerance) or ``"=="`` (exact match; tolerance holds the expected value).
    """

    name: str
    value: Any
    tolerance: Any
    comparison: str
    passed: bool

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "value": to_jsonable(self.value),
            "tolerance": to_jsonable(self.tolerance),
            "comparison": self.comparison,
            "passed": self.passed,
        }


def at_most(name: str, value: float, tolerance: float) -> Check:
    value = float(value)
    return Check(name, value, tolerance, "<=", bool(math.isfinite(value) and value <= tolerance))


def at_least(name: str, value: float, bound: float) -> Check:
    value = float(value)
    return Check(name, value, bound, ">=", bool(math.isfinite(value) and value >= bound))


def equals(name: str, value, expected) -> Check:
    return Check(name, value, expected, "==", bool(value == expected))


def to_jsonable(obj):
    """Plain JSON types from numpy scalars, arrays, tuples and nested containers."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def envelope(
    subcommand: str,
    config: dict,
    seed: Optional[int],
    checks: list,
    results: dict,
    runtime_ms: float,
    error: Optional[dict] = None,
) -> dict:
    return {
        "schema": SCHEMA,
        "subcommand": subcommand,
        "config": to_jsonable(config),
        "seed": seed,
        "checks": [c.to_json() for c in checks],
        "results": to_jsonable(results),
        "passed": error is None and all(c.passed for c in checks),
        "runtime_ms": runtime_ms,
        "error": error,
    }
