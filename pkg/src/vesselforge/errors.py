"""Exception types shared across the package."""


class VesselForgeError(Exception):
    """Base class for all package errors."""


class VolumeIOError(VesselForgeError):
    """Unreadable, unwritable, or malformed volume file."""


class UnknownLabelError(VesselForgeError):
    """Volume contains label ids absent from the label map."""

    def __init__(self, ids):
        self.ids = sorted(int(i) for i in ids)
        super().__init__(f"unknown label ids: {self.ids}")


class DegenerateCenterlineError(VesselForgeError):
    """Raw points yield no usable connected structure."""


class NotTubularError(VesselForgeError):
    """Mask has no tube-like ridge to follow."""


class EmptySpanError(VesselForgeError):
    """Percentile interval selects no centerline nodes."""


class SpanMissesMaskError(VesselForgeError):
    """Cylinder span does not intersect the segment mask."""


class CommandError(VesselForgeError):
    """A refinement command cannot be applied."""


class ReplayDivergenceError(VesselForgeError):
    """Replayed history produced a hash mismatch at some step."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"divergent replay at step {step}")


class MetricError(VesselForgeError):
    """Metric undefined for the given inputs (e.g. empty surface)."""
