"""Exception hierarchy for the toolkit.

Every error raised by planemeta code derives from PlanemetaError so callers
(and the CLI) can distinguish toolkit failures from programming errors.
"""


class PlanemetaError(Exception):
    """Base class for all toolkit errors."""


# --- ingest ---------------------------------------------------------------

class MalformedHeader(PlanemetaError):
    """NIfTI-1 header is structurally invalid (bad magic, impossible dims)."""


class UnsupportedDatatype(PlanemetaError):
    """NIfTI datatype outside the supported integer/float set."""


class CorruptAffine(PlanemetaError):
    """Orientation affine is singular or non-finite and no override given."""


class UnreadableImage(PlanemetaError):
    """2D raster image could not be decoded."""


class MissingLabel(PlanemetaError):
    """A labeled record was required but no label was supplied."""


class ShapeTooSmall(PlanemetaError):
    """Requested phantom shape is below the minimum extent."""


# --- context --------------------------------------------------------------

class EmptySiblingSet(PlanemetaError):
    """A 3D-native record has no kept sibling slices to draw context from."""


class MissingClass(PlanemetaError):
    """A required class has zero records in the manifest."""


# --- models ---------------------------------------------------------------

class WeightsUnavailable(PlanemetaError):
    """Pretrained weights were requested but cannot be fetched or found."""


class DivergedLoss(PlanemetaError):
    """Training loss became non-finite; partial history is preserved."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class EmptyTestSet(PlanemetaError):
    """Evaluation was requested on an empty manifest."""


class UnsupportedLayer(PlanemetaError):
    """Model contains an operation outside the interchange format coverage."""


class BundleCorrupt(PlanemetaError):
    """Exported bundle failed checksum or structural validation."""


class MetadataMismatch(PlanemetaError):
    """Bundle metadata disagrees with the requested inference configuration."""


# --- fusion ---------------------------------------------------------------

class InvalidDistribution(PlanemetaError):
    """Probability vector is not a valid distribution."""


class DimensionMismatch(PlanemetaError):
    """Feature/metadata vector widths do not line up."""


class ClassMismatch(PlanemetaError):
    """Paired predictions do not share the same class space."""


class EmptyValidation(PlanemetaError):
    """Threshold sweep was requested on an empty validation set."""


# --- explain --------------------------------------------------------------

class LayerNotFound(PlanemetaError):
    """Requested attribution layer does not exist in the model."""


class NonConvolutionalLayer(PlanemetaError):
    """Requested attribution layer is not a convolutional layer."""


# --- cli ------------------------------------------------------------------

class ConfigParseError(PlanemetaError):
    """Config file is malformed; message carries line/key diagnostics."""
