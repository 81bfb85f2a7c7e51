"""Exception hierarchy shared across the package."""


class WarpcoreError(Exception):
    """Base class for all errors raised by warpcore."""


class DegeneratePoint(WarpcoreError):
    """A point mapped through a homography with vanishing homogeneous w."""


class DegenerateTransform(WarpcoreError):
    """A transform matrix lost invertibility."""


class InvalidScale(WarpcoreError):
    """Non-positive scale factor."""


class InvalidParams(WarpcoreError):
    """Non-finite or otherwise unusable transform parameters."""


class OutOfDomain(WarpcoreError):
    """A functional backward map is undefined at a requested point."""


class SingularJacobian(WarpcoreError):
    """Local Jacobian determinant below the singularity threshold."""


class ResampleRejected(WarpcoreError):
    """Random transform sampling kept producing degenerate matrices."""


class ShapeMismatch(WarpcoreError):
    """Tensor/plane shapes incompatible with the requested operation."""


class EmptyMask(WarpcoreError):
    """An operation that needs at least one valid pixel got none."""


class NoValidSquare(WarpcoreError):
    """The valid region admits no square crop of the minimum size."""


class UnsupportedFormat(WarpcoreError):
    """Image file could not be decoded as 8/16-bit PNG."""


class IoError(WarpcoreError):
    """File system level failure wrapped for CLI exit-code mapping."""


class GraphCycle(WarpcoreError):
    """Autodiff graph contained a cycle (should be impossible)."""
