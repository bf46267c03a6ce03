"""Error types shared across the package.

Every failure mode that callers are expected to handle has its own class so
tests and the CLI can match on type rather than message text. All of them
derive from :class:`DqadmitError`.
"""

from __future__ import annotations


class DqadmitError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameters(DqadmitError):
    """A parameter failed validation. Carries the offending field name."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class EmptyBaselineWindow(DqadmitError):
    """The requested baseline sample range selects no samples."""


class NonCoherentWindow(DqadmitError):
    """A phasor window does not span an integer number of periods."""


class AboveNyquist(DqadmitError):
    """A requested frequency is at or above the Nyquist frequency."""


class DegenerateReference(DqadmitError):
    """The reference series is constant, so a relative error is undefined."""


class SimulationDiverged(DqadmitError):
    """The state norm exceeded the divergence bound. Carries the time."""

    def __init__(self, t: float):
        self.t = t
        super().__init__(f"state norm exceeded divergence bound at t={t:.6g} s")


class EquilibriumNotFound(DqadmitError):
    """Newton polishing failed to converge. Carries the final residual."""

    def __init__(self, residual: float):
        self.residual = residual
        super().__init__(f"equilibrium residual stalled at {residual:.3e} (per-unit)")


class NotAtEquilibrium(DqadmitError):
    """Pre-step outputs drift more than the steady-state tolerance allows."""


class NotEnoughData(DqadmitError):
    """A record is too short for the requested operation."""


class OrderExceedsRank(DqadmitError):
    """Requested realization order exceeds the numerical Hankel rank."""


class LogBranchAmbiguity(DqadmitError):
    """A discrete eigenvalue sits on the closed negative real axis, where
    the principal matrix logarithm is not defined or not unique."""


class IllConditionedFit(DqadmitError):
    """The least-squares system of a rational fit is numerically singular."""


class InputNotExciting(DqadmitError):
    """Too many frequency points had negligible input content."""


class EvaluationAtPole(DqadmitError):
    """A transfer function was evaluated at (numerically) a pole."""


class ImproperTransferFunction(DqadmitError):
    """Numerator order exceeds denominator order where propriety is required."""


class BandOutOfRange(DqadmitError):
    """A requested frequency band leaves a method's valid range."""
