"""`extract` command: manifest CSV -> embedding file.

    extract --manifest data.csv --out data.mmeb --batch 16

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

import argparse
import json
import logging
import sys

from .encoders import DEFAULT_IMAGE_MODEL, DEFAULT_TEXT_MODEL, make_encoders
from .errors import ExtractError
from .pipeline import extract_manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extract",
        description="Run frozen text/image encoders over a manifest CSV "
                    "(columns id,text,image_path,label) and write the binary "
                    "embedding container.")
    parser.add_argument("--manifest", required=True, help="input CSV")
    parser.add_argument("--out", required=True, help="output embedding file (.mmeb)")
    parser.add_argument("--batch", type=int, default=16, help="encoder batch size")
    parser.add_argument("--text-encoder", default=DEFAULT_TEXT_MODEL,
                        help=f"pretrained text model name (default {DEFAULT_TEXT_MODEL})")
    parser.add_argument("--image-encoder", default=DEFAULT_IMAGE_MODEL,
                        help=f"pretrained image model name (default {DEFAULT_IMAGE_MODEL})")
    parser.add_argument("--random-encoders", action="store_true",
                        help="architecture-faithful random-weight encoders "
                             "(offline smoke/testing; embeddings carry no meaning)")
    parser.add_argument("--seed", type=int, default=0,
                        help="weight seed for --random-encoders")
    parser.add_argument("--quiet", action="store_true", help="suppress progress logs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    if args.batch < 1:
        build_parser().error(f"--batch must be >= 1, got {args.batch}")
    try:
        text_encoder, image_encoder = make_encoders(
            args.text_encoder, args.image_encoder, args.random_encoders, args.seed)
        result = extract_manifest(args.manifest, args.out, text_encoder,
                                  image_encoder, args.batch)
    except ExtractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"records": result.written, "skipped": result.skipped,
                      "out": result.out_path}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
