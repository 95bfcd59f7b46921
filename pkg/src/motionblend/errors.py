"""Exception types shared across the package."""


class MotionBlendError(Exception):
    """Base class for all package errors."""


class DegenerateTransformError(MotionBlendError):
    """A rotation or dual quaternion collapsed below the representable norm."""


class DegenerateBlendError(MotionBlendError):
    """A weighted dual-quaternion sum vanished; no rigid transform exists."""


class DegenerateFrameError(MotionBlendError):
    """Cannot build an orthonormal frame (forward parallel to up)."""


class DegenerateLinkError(MotionBlendError):
    """A graph link has coincident endpoints."""


class TopologyError(MotionBlendError):
    """Graph topology violates its structural invariants."""


class ValidationError(MotionBlendError):
    """Input data violates a documented contract."""


class PlyParseError(MotionBlendError):
    """A PLY file could not be parsed; message carries file and line."""


class OptimizationError(MotionBlendError):
    """An optimization run diverged or failed a strict gradient check."""


class ProtocolError(MotionBlendError):
    """Malformed or out-of-contract editing protocol message."""
