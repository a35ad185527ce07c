"""Whole-video feature extraction into .vqaf files."""

import os

import numpy as np
import torch

from .backbone import load_backbone, preprocess
from .errors import DecodeError
from .frames import iter_frames
from .pooling import mean_std_pool
from .vqafio import write_features


def video_id_for(path, stride=1):
    """Video id from the input's base name; a stride > 1 is recorded in it."""
    base = os.path.basename(os.path.normpath(path))
    stem = os.path.splitext(base)[0] if not os.path.isdir(path) else base
    return stem if stride == 1 else f"{stem}#stride{stride}"


def extract_video_features(path, out_path, encoder=None, stride=1):
    """Extract pooled per-frame features from one video and write them.

    Returns (video id, [T, 2C] float32 array). Frames are processed at
    native resolution in source order; the encoder is loaded fresh (frozen,
    pretrained) when none is passed in.
    """
    if encoder is None:
        encoder = load_backbone()
    minimum = getattr(encoder, "min_input_size", 1)
    rows = []
    with torch.inference_mode():
        for index, rgb in iter_frames(path, stride):
            h, w = rgb.shape[:2]
            if min(h, w) < minimum:
                raise DecodeError(
                    f"{path}: frame {index}: {h}x{w} is below the "
                    f"backbone's {minimum}-pixel minimum"
                )
            maps = encoder(preprocess(rgb).unsqueeze(0))[0]
            rows.append(mean_std_pool(maps).cpu().numpy())
    features = np.stack(rows).astype("<f4")
    video_id = video_id_for(path, stride)
    write_features(video_id, features, out_path)
    return video_id, features
