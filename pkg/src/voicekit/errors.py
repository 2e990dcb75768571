"""Exception types raised across the toolkit.

Everything derives from VoicekitError so callers (and the CLI) can catch one
base class. Exceptions carry plain-text messages; machine-readable context
(line numbers, field names) goes in attributes where a consumer needs it.
"""


class VoicekitError(Exception):
    """Base class for all toolkit errors."""


# -- audio i/o ---------------------------------------------------------------

class MalformedHeader(VoicekitError):
    """WAV container is damaged: bad RIFF/WAVE tags, truncated chunks."""


class UnsupportedEncoding(VoicekitError):
    """WAV sample format outside 16-bit PCM / 32-bit float, or >2 channels."""


class EmptyAudio(VoicekitError):
    """Zero audio frames where at least one is required."""


class UnsupportedRate(VoicekitError):
    """Sample rate outside the supported set."""


class IoFailure(VoicekitError):
    """Underlying OS read/write failed."""


# -- acoustic measurement ----------------------------------------------------

class InvalidRange(VoicekitError):
    """Search or parameter range is empty or out of bounds."""


class Unvoiced(VoicekitError):
    """A voiced signal was required but no stable voicing was found."""


class LengthMismatch(VoicekitError):
    """Paired sequences differ in length or sample rate."""


# -- corpus ------------------------------------------------------------------

class SchemaViolation(VoicekitError):
    """Manifest row fails schema validation."""

    def __init__(self, message, line=None, field=None):
        super().__init__(message)
        self.line = line
        self.field = field


class DuplicateClipId(VoicekitError):
    """Same clip_id appears on more than one manifest row."""

    def __init__(self, message, line=None, first_line=None):
        super().__init__(message)
        self.line = line
        self.first_line = first_line


class ConflictingSpeakerLabel(VoicekitError):
    """One speaker_id carries both healthy and pathological labels."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


# -- synthesis ---------------------------------------------------------------

class AllUnvoiced(VoicekitError):
    """No reference clip yielded a usable voicing estimate."""


class InvalidDuration(VoicekitError):
    """Requested duration outside the synthesizable range."""


class InvalidSyllableCount(VoicekitError):
    """Requested syllable count outside the synthesizable range."""


# -- augmentation ------------------------------------------------------------

class OutOfRange(VoicekitError):
    """Operation parameter outside its documented range."""


class MissingNoiseFile(VoicekitError):
    """Ambient noise requested but no noise file available."""


# -- features ----------------------------------------------------------------

class ClipTooShort(VoicekitError):
    """Clip shorter than one analysis window."""


class InvalidConfig(VoicekitError):
    """Configuration object fails validation."""


class NegativeFrequency(VoicekitError):
    """Frequency argument below zero."""


class TooFewFrames(VoicekitError):
    """Not enough frames to compute the requested statistic."""


# -- experts -----------------------------------------------------------------

class DegenerateLabels(VoicekitError):
    """Training labels have fewer than two classes or too few examples."""


class NonFiniteFeatures(VoicekitError):
    """Feature matrix contains NaN or infinity."""


class DimensionMismatch(VoicekitError):
    """Feature vector length does not match the model input dimension."""


class IncompatibleFeatureConfig(VoicekitError):
    """Model was trained under a different feature configuration."""


class InconsistentClassNames(VoicekitError):
    """Prediction rows disagree on the class name list (order-sensitive)."""


class UnnormalizedBeyondTolerance(VoicekitError):
    """External probability row sums outside [0.999, 1.001]."""


class TrainingDiverged(VoicekitError):
    """Training loss became non-finite or failed to improve."""


# -- expert selection --------------------------------------------------------

class NotNormalized(VoicekitError):
    """Probability vector has negative mass or does not sum to one."""


class EmptyGroup(VoicekitError):
    """Session group holds no predictions."""


class UnknownClipId(VoicekitError):
    """Prediction references a clip_id absent from the manifest."""


# -- evaluation --------------------------------------------------------------

class TooFewSpeakers(VoicekitError):
    """Fewer speakers than folds in some label stratum."""


class SingleClassOnly(VoicekitError):
    """Binary metric needs both classes present."""


class EmptyClassSet(VoicekitError):
    """Macro-averaged metric needs a non-empty class set."""


class LeakageDetectedError(VoicekitError):
    """A training item is tied to a test-fold speaker.

    This is an internal invariant violation: by construction the pipeline
    should never assemble a leaking split, so seeing this means a bug.
    """


# Canonical short name used throughout the package.
LeakageDetected = LeakageDetectedError


class MissingExternalPredictions(VoicekitError):
    """External prediction files do not cover every test clip."""


class InfeasibleLevel(VoicekitError):
    """Requested ablation level cannot be built from the given inputs."""


class EmptyPartition(VoicekitError):
    """Train or test partition is empty after origin filtering."""


class EmptyReport(VoicekitError):
    """Report has no rows to emit."""
