"""Homogenization of regime-switching diffusions."""

from ._homog import (
    BudgetError,
    PreconditionError,
    Problem,
    SolverError,
    SpecError,
    __version__,
    effective,
    load_problem,
    problem_from_dict,
    run,
    set_threads,
    sha256_file,
    solve_elliptic,
    terminal_values,
    validate,
)

__all__ = [
    "BudgetError",
    "PreconditionError",
    "Problem",
    "SolverError",
    "SpecError",
    "__version__",
    "effective",
    "load_problem",
    "problem_from_dict",
    "run",
    "set_threads",
    "sha256_file",
    "solve_elliptic",
    "terminal_values",
    "validate",
]
