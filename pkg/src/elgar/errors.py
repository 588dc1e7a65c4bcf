"""Exception types shared across the package.

Every error raised on purpose derives from ElgarError so callers (and the
CLI exit-code mapping) can distinguish expected failures from bugs.
"""


class ElgarError(Exception):
    """Base class for all package-specific errors."""


class DegenerateRotation(ElgarError):
    """6D rotation features cannot be orthonormalized (corrupt motion data)."""


class NotARotation(ElgarError):
    """Input matrix is not orthonormal with determinant +1."""


class MissingAnchorJoints(ElgarError):
    """Skeleton lacks a named anchor joint required by an operation."""


class DegenerateConfiguration(ElgarError):
    """Point sets are collinear or coincident; rigid fit is ill-posed."""


class ZeroLengthSegment(ElgarError):
    """A segment with (near) zero length was passed to a distance routine."""


class NoPlayablePosition(ElgarError):
    """No string admits the requested fundamental frequency."""


class UnreachableTarget(ElgarError):
    """A synthetic-performer limb target lies outside the arm's reach."""


class ShapeMismatch(ElgarError):
    """Array arguments disagree in shape or length."""


class MissingAnnotation(ElgarError):
    """A voiced frame lacks the contact annotation a loss requires."""


class ModelFailure(ElgarError):
    """The denoising model raised or returned unusable output."""


class NonFiniteActivation(ElgarError):
    """A forward or backward pass produced NaN or inf (training divergence)."""


class FpsMismatch(ElgarError):
    """Sequences to be combined disagree on frames per second."""


class BadOverlap(ElgarError):
    """Stitch segments do not share the required overlap."""


class NoVoicedFrames(ElgarError):
    """A metric over voiced frames was asked for on an unvoiced track."""


class ZeroVector(ElgarError):
    """Cosine similarity is undefined for an identically zero series."""
