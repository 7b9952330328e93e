"""Exception hierarchy shared by every ``spectraseg`` module.

Input-validation errors also derive from the builtin they specialise so callers may catch either.
"""


class SpectrasegError(Exception):
    """Base class for all errors raised by ``spectraseg``."""


# Cube and label file I/O
class CubeFormatError(SpectrasegError, ValueError):
    """Base class for cube/label file format errors."""


class MalformedHeaderError(CubeFormatError):
    """The JSON header line is missing, unparsable or lacks a required field."""


class DimensionMismatchError(CubeFormatError):
    """Header fields disagree with each other or with the declared modality."""


class TruncatedPayloadError(CubeFormatError):
    """The payload holds fewer (or more) bytes than the header announces."""


class InvalidDataError(SpectrasegError, ValueError):
    """Values violate a data-model invariant (negative, non finite, out of range)."""


class EmptySelectionError(SpectrasegError, ValueError):
    """An operation received an empty subject, image or class selection."""


# Network core
class ShapeMismatchError(SpectrasegError, ValueError):
    """A layer received an input it cannot consume.

    Args:
        layer (str): Name of the offending layer.
        message (str): Description of the mismatch.
    """
    def __init__(self, layer, message):
        self.layer = layer
        super().__init__(f"{layer}: {message}")


class BackwardBeforeForwardError(SpectrasegError, RuntimeError):
    """``backward`` was called on a module without a cached training forward pass."""


class CheckpointError(SpectrasegError, ValueError):
    """A network checkpoint could not be parsed."""


class SwaError(SpectrasegError, RuntimeError):
    """Stochastic weight averaging was finalized without any snapshot."""


# Training and loading
class EmptyLoaderError(SpectrasegError, RuntimeError):
    """The loader produced no sample for a training epoch."""


class LoaderWorkerError(SpectrasegError, RuntimeError):
    """A loader worker thread failed; the original exception is chained."""


class TrainingDivergedError(SpectrasegError, FloatingPointError):
    """The training loss became NaN or infinite."""


# Metrics
class ClassNotInReferenceError(SpectrasegError, ValueError):
    """A per-class metric was requested for a class absent from the reference."""


class EmptyMaskError(SpectrasegError, ValueError):
    """A boundary was requested for an empty mask."""


class MissingThresholdError(SpectrasegError, KeyError):
    """No NSD tolerance is available for the requested class."""


# Experiments
class InfeasibleSplitError(SpectrasegError, ValueError):
    """No subject split satisfies the class coverage constraints.

    Args:
        class_id (int): Class that cannot be covered.
        message (str): Description of the violated constraint.
    """
    def __init__(self, class_id, message):
        self.class_id = class_id
        super().__init__(f"class {class_id}: {message}")


class LeakageError(SpectrasegError, AssertionError):
    """An image appears both in fold training data and in a held-out set."""
