"""Exception hierarchy shared by all ocl modules."""


class OclError(Exception):
    """Root of every error raised deliberately by ocl."""


class RejectedInputError(OclError, ValueError):
    """Input with the wrong shape, or an empty batch."""


class EmptySampleSetError(RejectedInputError):
    """Importance estimation was asked to average over zero samples."""


class ConfigurationError(OclError, ValueError):
    """Invalid hyperparameter, schedule, covariance or run configuration."""


class StreamFaultError(OclError, RuntimeError):
    """A non-finite loss showed up while learning from the stream."""


class RecordingFormatError(OclError, ValueError):
    """A recorded stream file is truncated or not in the expected format."""
