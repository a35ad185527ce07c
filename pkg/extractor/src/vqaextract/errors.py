"""Error taxonomy for the extractor command line.

ExtractError
  DecodeError    input videos/frames that cannot be decoded (data problem)
  BackboneError  backbone or pretrained weights unavailable (environment problem)
"""


class ExtractError(Exception):
    """Base class for extractor failures."""


class DecodeError(ExtractError):
    """An input video or frame could not be decoded."""


class BackboneError(ExtractError):
    """The requested backbone or its pretrained weights are unavailable."""
