"""Frozen-CNN frame feature extraction writing .vqaf files.

Each frame of a video (or each image in a frame directory) is pushed
through a frozen pretrained backbone; the top convolutional feature maps
are pooled to their per-channel spatial mean and standard deviation, and
the concatenated vectors for all frames are written as one .vqaf file
that the scoring pipeline consumes directly.
"""

from .backbone import load_backbone, preprocess
from .errors import BackboneError, DecodeError, ExtractError
from .extract import extract_video_features, video_id_for
from .pooling import mean_std_pool
from .vqafio import write_features

__all__ = [
    "BackboneError",
    "DecodeError",
    "ExtractError",
    "extract_video_features",
    "load_backbone",
    "mean_std_pool",
    "preprocess",
    "video_id_for",
    "write_features",
]
