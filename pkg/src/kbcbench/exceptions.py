"""Exception types raised across the package."""


class KbcError(Exception):
    """Base class for all package errors."""


class TripleFormatError(KbcError):
    """A triple file line does not have exactly three tab-separated fields."""


class VocabularyError(KbcError):
    """An entity or relation name is unknown under a frozen vocabulary."""


class ConstraintFileError(KbcError):
    """A type-constraint file references an unknown entity or relation."""


class ConfigurationError(KbcError):
    """A model or training configuration is internally inconsistent."""


class SamplerExhaustedError(KbcError):
    """Negative sampling could not find an admissible sample within the
    attempt budget (typically a near-complete relation)."""


class TrainingDivergedError(KbcError):
    """Training produced a non-finite loss."""
