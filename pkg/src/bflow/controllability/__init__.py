"""Controllability experiments: condition II, the Heisenberg ball, factorization and the counterexample harness."""
from bflow.controllability.condition import ConditionIIReport, check_condition_II
from bflow.controllability.counterexample import (
    CounterexampleReport,
    counterexample_run,
    random_recipes,
)
from bflow.controllability.factorize import (
    FactorizationResult,
    SolverSettings,
    factorize_boundary,
    factorize_boundary_fixing,
    factorize_interior,
    random_target,
    variant_grid,
)
from bflow.controllability.heisenberg import (
    DistributionSpec,
    RankMap,
    bracket_generation_check,
    bracket_spans,
    heisenberg_model,
    misses_direction,
    rank_map,
    tangent_rank,
)

__all__ = [
    "ConditionIIReport",
    "CounterexampleReport",
    "DistributionSpec",
    "FactorizationResult",
    "RankMap",
    "SolverSettings",
    "bracket_generation_check",
    "bracket_spans",
    "check_condition_II",
    "counterexample_run",
    "factorize_boundary",
    "factorize_boundary_fixing",
    "factorize_interior",
    "heisenberg_model",
    "misses_direction",
    "random_recipes",
    "random_target",
    "rank_map",
    "tangent_rank",
    "variant_grid",
]
