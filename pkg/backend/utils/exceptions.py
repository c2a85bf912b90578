# Exception hierarchy

# backend/utils/exceptions.py


class DmoeError(Exception):
    """Base class for every failure the toolkit reports to its callers"""


class ConfigurationError(DmoeError, ValueError):
    """Invalid configuration value or combination of values"""


class InvalidValueError(DmoeError, ValueError):
    """A value violates its domain (probability outside [0, 1], non-binary mask, ...)"""


class ShapeMismatchError(DmoeError, ValueError):
    """Arrays that must line up do not"""


class SignalTooShortError(DmoeError, ValueError):
    """Input holds fewer samples or frames than the operation needs"""


class NonFiniteError(DmoeError, ArithmeticError):
    """NaN or Inf found where finite numbers are required"""


class ExpertIndexError(DmoeError, IndexError):
    """Expert index outside 0..m-1"""


class WavFormatError(DmoeError):
    """WAV file is unreadable or not 16-bit PCM mono at the expected rate"""


class MixingError(DmoeError, ValueError):
    """Clean/noise pair cannot be mixed at the requested SNR"""


class CorpusFormatError(DmoeError):
    """Corpus feature file or its manifest is missing, corrupt or of another schema"""


class ModelFormatError(DmoeError):
    """Model checkpoint is truncated or corrupt"""


class ModelVersionError(ModelFormatError):
    """Model checkpoint was written by an incompatible format version"""


class FeatureConfigMismatchError(DmoeError):
    """Model and pipeline disagree on a feature configuration field"""

    def __init__(self, field_name, model_value, pipeline_value):
        self.field_name = field_name
        self.model_value = model_value
        self.pipeline_value = pipeline_value
        super().__init__(
            f"feature config mismatch on '{field_name}': "
            f"model has {model_value!r}, pipeline has {pipeline_value!r}"
        )


class TrainingDivergedError(DmoeError):
    """Training produced a non-finite value; carries the last good parameters"""

    def __init__(self, message, last_good=None, report=None):
        super().__init__(message)
        self.last_good = last_good
        self.report = report


class MissingRegimeTagsError(DmoeError):
    """Analysis needs per-frame regime tags and the corpus has none"""


class MetricError(DmoeError, ValueError):
    """Metric is undefined for the given inputs"""
