"""Python front end for the hodgemc C++ core."""

import json

from ._hodgemc import (
    KatoError,
    Model,
    ModelError,
    NumericalError,
    ValidationError,
    conformal,
    derive_seed,
    model,
)

__all__ = [
    "KatoError",
    "Model",
    "ModelError",
    "NumericalError",
    "ValidationError",
    "conformal",
    "derive_seed",
    "model",
    "run_scenario",
    "selftest",
]


def run_scenario(text, seed_override=None, workers=None):
    """Run a YAML scenario given as text. Returns (exit_code, report dict, {table name: csv text})."""
    from ._hodgemc import run_scenario_json

    code, report, tables = run_scenario_json(text, seed_override, workers)
    return code, json.loads(report), dict(tables)


def selftest(level="quick", n_divisor=1.0, tampered=False):
    """Run the built-in checks. Returns (number failed, report dict)."""
    from ._hodgemc import selftest_json

    failed, report = selftest_json(level, n_divisor, tampered)
    return failed, json.loads(report)
