"""Exception types shared across the package.

Invalid arguments (bad shapes, empty sample sets, malformed grids) raise the
builtin ValueError; the classes here cover failures that carry diagnostic
payloads or mark domain-specific contract violations.
"""

from __future__ import annotations


class EllipticityError(ValueError):
    """A diffusion coefficient (or assembled operator input) is not strictly positive."""


class SolverFailureError(RuntimeError):
    """A linear solve did not reach its residual contract.

    Carries the achieved relative residual so callers can report how close
    the solve got.
    """

    def __init__(self, message: str, residual: float | None = None):
        if residual is not None:
            message = f"{message} (achieved relative residual {residual:.3e})"
        super().__init__(message)
        self.residual = residual


class DivergenceError(RuntimeError):
    """An iterative method produced a non-finite iterate. Carries the iteration index."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


class StalledMinimizerError(RuntimeError):
    """Line search failed to make progress before the gradient tolerance was met.

    The last accepted iterate is attached so callers can inspect or resume.
    """

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state


class RankDeficiencyError(RuntimeError):
    """A normal system was numerically singular (non-unique minimizer)."""
