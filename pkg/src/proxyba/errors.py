"""Exception types raised across the package."""


class ProxyBAError(Exception):
    """Base class for all package errors."""


class DegenerateDepth(ProxyBAError, ValueError):
    """A point lies at (or behind) the camera plane and cannot be projected."""


class InvalidDepth(ProxyBAError, ValueError):
    """An inverse depth became non-positive."""


class OutOfBounds(ProxyBAError, IndexError):
    """A sample location falls outside the valid interpolation footprint."""


class EmptyProblem(ProxyBAError):
    """No residual is inside the image bounds."""


class SingularHessian(ProxyBAError):
    """The damped normal equations could not be factorized."""


class Diverged(ProxyBAError):
    """The solver kept increasing the energy despite damping."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SpecInfeasible(ProxyBAError):
    """A scene description cannot be rendered with the requested visibility."""
