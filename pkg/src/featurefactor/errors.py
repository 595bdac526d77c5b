"""Exception hierarchy shared across the toolkit."""


class FeatureFactorError(Exception):
    """Base class for all toolkit errors."""


class NonNegativityViolated(FeatureFactorError):
    """Data contains negative entries where non-negative values are required."""


class ChannelMismatch(FeatureFactorError):
    """Feature matrices in a batch disagree on channel count."""


class EmptyBatch(FeatureFactorError):
    """A batch operation received no inputs."""


class ShapeMismatch(FeatureFactorError):
    """Matrix shapes are incompatible for the requested operation."""


class RankTooLarge(FeatureFactorError):
    """Requested factorization rank exceeds min(rows, cols)."""


class DegenerateInput(FeatureFactorError):
    """Input matrix is all zeros; a factorization would be meaningless."""


class LayoutMismatch(FeatureFactorError):
    """Batch layout row count disagrees with the matrix it describes."""


class SizeMismatch(FeatureFactorError):
    """Rasters or grids disagree on spatial dimensions."""


class EmptySet(FeatureFactorError):
    """An operation over a set of maps received an empty set."""


class EmptyPart(FeatureFactorError):
    """A ground-truth part has zero pixels across the whole image set."""


class EmptyUnion(FeatureFactorError):
    """Dataset-wide union of masks is empty; IoU is undefined."""


class NoForeground(FeatureFactorError):
    """A binary mask has no foreground pixels."""


class MissingGroundTruth(FeatureFactorError):
    """A predicted image has no ground-truth boxes."""


class NoParts(FeatureFactorError):
    """No non-background parts are available for evaluation."""


class LayerNotFound(FeatureFactorError):
    """The requested tap name does not exist in the model."""


class ModelLoadError(FeatureFactorError):
    """The model file could not be loaded."""


class BadMagic(FeatureFactorError):
    """A container file does not start with the expected magic bytes."""


class VersionUnsupported(FeatureFactorError):
    """A container file declares an unsupported format version."""


class DimMismatch(FeatureFactorError):
    """Container header dimensions disagree with the payload length."""
