"""Mean field games with vanishing noise.

Thin wrapper over the compiled core. Points are numpy arrays with one row per
particle.
"""

from ._mfglab import (
    NumericalError,
    Scenario,
    Solution,
    ValidationError,
    audit_bounds,
    cli,
    bound_constants,
    run_convergence_study,
    second_moment,
    set_threads,
    solve_minimax,
    solve_stochastic,
    threads,
    verify,
    wasserstein2,
)

__all__ = [
    "NumericalError",
    "Scenario",
    "Solution",
    "ValidationError",
    "audit_bounds",
    "cli",
    "bound_constants",
    "run_convergence_study",
    "second_moment",
    "set_threads",
    "solve_minimax",
    "solve_stochastic",
    "threads",
    "verify",
    "wasserstein2",
]
