"""Exception types shared across the pipeline."""


class Ov4dError(Exception):
    """Base class for all errors raised by this package."""


class LoadError(Ov4dError):
    """A referenced file is missing or unreadable."""


class SceneValidationError(Ov4dError):
    """Scene data violates a structural invariant (shapes, ranges, camera validity)."""


class BehindCameraError(Ov4dError):
    """A point was projected with a non-positive camera-space depth."""


class OracleUnavailableError(Ov4dError):
    """The synthetic oracle was asked to run on an asset without fixture annotations."""


class TrackFormatError(Ov4dError):
    """A track file is malformed (bad RLE sums, out-of-range cells, resolution mismatch)."""


class MissingEmbeddingError(Ov4dError):
    """An embedding file does not contain the requested (track, frame, view) record."""


class UnknownPromptError(Ov4dError):
    """A vocabulary file does not contain the requested prompt string."""


class AssetFormatError(Ov4dError):
    """A fused-asset, embedding, vocabulary or label file is corrupt or mismatched."""


class BuildError(Ov4dError):
    """A pipeline build stage failed; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"build stage '{stage}' failed: {message}")
        self.stage = stage
