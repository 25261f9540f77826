"""Exception types raised across the toolkit.

Every domain error derives from :class:`FinrayError`; the command line
reports the class name on stderr and exits with status 1.
"""


class FinrayError(Exception):
    """Base class for all domain errors."""


# kinematics
class OutOfTravel(FinrayError, ValueError):
    pass


class SingularLinkage(FinrayError, ValueError):
    pass


class InsufficientSamples(FinrayError, ValueError):
    pass


class InvalidGeometry(FinrayError, ValueError):
    pass


# compliance
class NonConvergence(FinrayError, RuntimeError):
    pass


class InvalidPlacement(FinrayError, ValueError):
    pass


# workspace
class DegenerateTriangle(FinrayError, ValueError):
    pass


class EmptyInput(FinrayError, ValueError):
    pass


class EmptyBand(FinrayError, ValueError):
    pass


# tactile
class NoGraspDetected(FinrayError, ValueError):
    pass


class NoOscillationDetected(FinrayError, ValueError):
    pass


# slipnet
class BadLayout(FinrayError, ValueError):
    pass


class DimensionMismatch(FinrayError, ValueError):
    pass


class Divergence(FinrayError, FloatingPointError):
    pass


# control
class WorkspaceNotComputed(FinrayError, RuntimeError):
    pass


class BudgetExceeded(FinrayError, RuntimeError):
    pass


# io
class ConfigError(FinrayError, ValueError):
    pass


class IoFailure(FinrayError, OSError):
    pass
