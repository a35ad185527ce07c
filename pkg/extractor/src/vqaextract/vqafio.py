"""Writer for the .vqaf frame-feature container.

Layout (little-endian throughout):

    bytes 0..3    magic "VQAF"
    byte  4       format version, u8, currently 1
    bytes 5..8    frame count T, u32
    bytes 9..12   feature dim F, u32
    then          T*F float32, row-major
    then          id length L, u16
    then          L bytes UTF-8 video id
"""

import struct

import numpy as np

MAGIC = b"VQAF"
FORMAT_VERSION = 1


def write_features(video_id: str, features, path):
    """Write one video's [T, F] feature matrix as a .vqaf file."""
    features = np.asarray(features)
    if features.ndim != 2:
        raise ValueError(f"features must be [frames, dim], got shape {features.shape}")
    id_bytes = video_id.encode("utf-8")
    if len(id_bytes) > 0xFFFF:
        raise ValueError(f"video_id too long to encode ({len(id_bytes)} bytes > 65535)")
    t, f = features.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", FORMAT_VERSION))
        fh.write(struct.pack("<II", t, f))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())
        fh.write(struct.pack("<H", len(id_bytes)))
        fh.write(id_bytes)
