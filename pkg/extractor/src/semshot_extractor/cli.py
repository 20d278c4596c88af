"""Extraction CLI: ``semshot-extract visual|text --manifest manifest.json``.

Exit codes: 0 clean, 1 usage error, 2 runtime error, 3 completed with
skipped images (partial extraction).
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from semshot.semantic_evolution import load_corpus

from .manifest import ExtractionManifest, ManifestError
from .text import MissingSourceError, extract_text
from .visual import extract_visual


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="semshot-extract", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_vis = sub.add_parser("visual", help="encode images into a feature cache")
    p_vis.add_argument("--manifest", required=True)
    p_txt = sub.add_parser("text", help="encode class texts into embeddings")
    p_txt.add_argument("--manifest", required=True)
    p_txt.add_argument("--corpus", required=True,
                       help="corpus JSON produced by `semshot semevo`")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        manifest = ExtractionManifest.load(args.manifest)
        if args.command == "visual":
            written, skipped = extract_visual(manifest)
            print(f"wrote {written} records to {manifest.cache_out}"
                  + (f"; skipped {skipped} unreadable images" if skipped else ""))
            return 3 if skipped else 0
        corpus = load_corpus(args.corpus)
        embeddings = extract_text(manifest, corpus)
        print(f"wrote {len(embeddings)} embeddings to {manifest.embeddings_out}")
        return 0
    except UsageError as exc:
        print(f"semshot-extract: usage error: {exc}", file=sys.stderr)
        return 1
    except (ManifestError, MissingSourceError, OSError, ValueError) as exc:
        print(f"semshot-extract: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
