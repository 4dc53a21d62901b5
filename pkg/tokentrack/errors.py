class TokenTrackError(Exception):
    """Base class for every error raised by tokentrack."""


class DimensionError(TokenTrackError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(TokenTrackError, ValueError):
    """A configuration value is invalid or inconsistent."""


class UnsupportedKernelError(ConfigurationError):
    """Convolution kernel size outside what the op supports."""


class ContractError(TokenTrackError, RuntimeError):
    """A precondition promised by the caller does not hold."""


class InvalidBoxError(TokenTrackError, ValueError):
    """Bounding box with non-positive or non-finite extent."""


class SequenceTooShortError(TokenTrackError):
    """Sequence cannot provide a clip; the sampler skips it."""


class NonFiniteLossError(TokenTrackError, RuntimeError):
    """Training produced a NaN or infinite loss."""


class WeightsFormatError(TokenTrackError, ValueError):
    """Weights file is malformed."""


class MagicMismatchError(WeightsFormatError):
    pass


class UnsupportedVersionError(WeightsFormatError):
    pass


class TruncatedWeightsError(WeightsFormatError):
    pass


class WeightsShapeError(WeightsFormatError):
    """Stored tensor does not match the model it is loaded into."""


class SequenceFormatError(TokenTrackError, ValueError):
    """Sequence directory, groundtruth or results file is malformed or inconsistent."""
