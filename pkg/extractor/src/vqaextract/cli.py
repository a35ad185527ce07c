"""Command-line entry point: videos (or frame directories) in, .vqaf out.

Exit codes: 0 success, 1 usage error, 2 input data error (missing or
undecodable video), 3 environment error (backbone weights unavailable).
"""

import argparse
import os
import sys

from .errors import BackboneError, DecodeError
from .extract import extract_video_features, video_id_for
from .backbone import load_backbone

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ENV = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser():
    parser = _Parser(
        prog="vqaextract",
        description=(
            "Extract frozen-CNN mean+std frame features from videos or "
            "frame-image directories into .vqaf files."
        ),
    )
    parser.add_argument("inputs", nargs="+", help="video files or frame-image directories")
    parser.add_argument("--out", required=True, help="output directory for .vqaf files")
    parser.add_argument("--backbone", default="resnet50", help="backbone id (default resnet50)")
    parser.add_argument(
        "--stride", type=int, default=1,
        help="keep every stride-th frame; recorded in the video id when > 1",
    )
    parser.add_argument(
        "--untrained", action="store_true",
        help="randomly initialised backbone for offline smoke runs; features are meaningless",
    )
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    if args.stride < 1:
        print(f"error: stride must be >= 1, got {args.stride}", file=sys.stderr)
        return EXIT_USAGE
    try:
        encoder = load_backbone(args.backbone, pretrained=not args.untrained)
    except BackboneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV
    os.makedirs(args.out, exist_ok=True)
    try:
        for path in args.inputs:
            out_path = os.path.join(args.out, f"{video_id_for(path, args.stride)}.vqaf")
            extract_video_features(path, out_path, encoder=encoder, stride=args.stride)
            print(out_path)
    except (DecodeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
