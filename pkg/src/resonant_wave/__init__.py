"""Lindstedt series, counterterm renormalization and a Newton oracle for
periodic solutions of the completely resonant nonlinear wave equation
u_tt - u_xx = Phi(u) with Dirichlet boundary conditions on [0, pi]."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BudgetError,
    DomainError,
    MelnikovViolationError,
    NonConvergenceError,
    NumericError,
    ResonantWaveError,
    SmallDivisorError,
)

__all__ = [
    "__version__",
    "BudgetError",
    "DomainError",
    "MelnikovViolationError",
    "NonConvergenceError",
    "NumericError",
    "ResonantWaveError",
    "SmallDivisorError",
]
