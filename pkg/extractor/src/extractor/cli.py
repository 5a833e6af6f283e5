"""Command line entry points for the offline feature extractors."""
from __future__ import annotations

import argparse
import sys

from . import images, words
from .semb import ExtractorError


def cmd_words(args) -> None:
    n, dim = words.extract_words(args.corpus, args.dim, args.out)
    print(f"tokens={n} dim={dim} out={args.out}")


def cmd_images(args) -> None:
    encoder = images.load_encoder(args.model)
    written, skipped = images.extract_images(args.images, encoder, args.out,
                                             report_path=args.report)
    print(f"rows={written} skipped={skipped} width={encoder.width} out={args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semb-extract",
        description="Produce .semb embedding files for the popularity model.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-words",
                       help="corpus-trained word embeddings (positive PMI + SVD)")
    p.add_argument("--corpus", required=True, help="events JSONL file")
    p.add_argument("--dim", type=int, default=128,
                   help="embedding width (default 128)")
    p.add_argument("--out", required=True, help="output .semb path")
    p.set_defaults(func=cmd_words)

    p = sub.add_parser("extract-images",
                       help="frozen-encoder image embeddings, one row per event id")
    p.add_argument("--images", required=True,
                   help="directory of <event-id>.<ext> image files")
    p.add_argument("--model", default="vit-b-32", choices=sorted(images.ENCODERS))
    p.add_argument("--out", required=True, help="output .semb path")
    p.add_argument("--report", default=None,
                   help="skip-report JSON (default <out>.report.json)")
    p.set_defaults(func=cmd_images)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ExtractorError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
