"""Exception types raised at the package's validated boundaries."""


class EmbGraphError(Exception):
    """Base class for all errors raised by embgraph."""


class MissingFileError(EmbGraphError):
    """A referenced file or directory does not exist."""


class SchemaError(EmbGraphError):
    """A manifest or tensor header is malformed; the message names the offending field."""


class LayerMismatchError(EmbGraphError):
    """Layer structure is internally inconsistent (channel counts, weight-file pairing)."""


class LengthMismatchError(EmbGraphError):
    """A payload or sequence has the wrong number of elements."""


class NonFiniteValueError(EmbGraphError):
    """Decoded values contain NaN or infinity."""


class ShapeMismatchError(EmbGraphError):
    """A weight tensor's shape disagrees with its layer descriptors or payload."""


class MissingLayerError(EmbGraphError):
    """An image lacks a pooled vector for one of the manifest layers."""

    def __init__(self, image_id: str, layer_id: str):
        super().__init__(f"image {image_id!r} has no embedding for layer {layer_id!r}")
        self.image_id = image_id
        self.layer_id = layer_id


class TooFewImagesError(EmbGraphError):
    """Standardization needs at least two images."""


class DegenerateLayerError(EmbGraphError):
    """Per-row weight statistics need at least two input channels."""


class EmptyGraphError(EmbGraphError):
    """No edges at all; there is no graph to build."""


class TooManyCommunitiesError(EmbGraphError):
    """More communities requested than image vertices available for seeding."""


class UnknownImageError(EmbGraphError):
    """Predicted and ground-truth labelings do not cover the same images."""


class PipelineError(EmbGraphError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r}: {cause}")
        self.stage = stage
        self.cause = cause
