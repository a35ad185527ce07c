"""Frame iteration over video files and directories of frame images."""

import os

import cv2

from .errors import DecodeError

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp"}


def _iter_image_dir(path, stride):
    names = sorted(
        n for n in os.listdir(path)
        if os.path.splitext(n)[1].lower() in IMAGE_EXTENSIONS
    )
    if not names:
        raise DecodeError(f"{path}: no frame images found ({', '.join(sorted(IMAGE_EXTENSIONS))})")
    for index, name in enumerate(names):
        if index % stride:
            continue
        bgr = cv2.imread(os.path.join(path, name), cv2.IMREAD_COLOR)
        if bgr is None:
            raise DecodeError(f"{path}: frame {index} ({name}): undecodable")
        yield index, cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def _iter_video(path, stride):
    capture = cv2.VideoCapture(path)
    try:
        if not capture.isOpened():
            raise DecodeError(f"{path}: cannot open video")
        declared = int(capture.get(cv2.CAP_PROP_FRAME_COUNT))
        index = 0
        while True:
            ok, bgr = capture.read()
            if not ok:
                break
            if index % stride == 0:
                yield index, cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
            index += 1
        if index == 0:
            raise DecodeError(f"{path}: no decodable frames")
        # a positive declared count with an early stop marks a damaged frame
        if 0 < index < declared:
            raise DecodeError(
                f"{path}: frame {index}: undecodable "
                f"(container declares {declared} frames)"
            )
    finally:
        capture.release()


def iter_frames(path, stride=1):
    """Yield (source frame index, uint8 RGB array) for every stride-th frame."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if not os.path.exists(path):
        raise FileNotFoundError(f"input not found: {path}")
    if os.path.isdir(path):
        yield from _iter_image_dir(path, stride)
    else:
        yield from _iter_video(path, stride)
