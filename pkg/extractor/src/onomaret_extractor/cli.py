"""The `onomaret-extract` command: dataset in, embedding packs out."""

from __future__ import annotations

import argparse
import sys

from .dataset import DatasetError, resolve_dataset, scan_dataset
from .encoders import (
    DEFAULT_CLAP_ID,
    DEFAULT_CLIP_ID,
    ClapAudioEncoder,
    ClipImageEncoder,
)
from .extract import run_extraction


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="onomaret-extract",
        description="Embed an image-audio dataset with frozen CLIP/CLAP encoders.",
    )
    parser.add_argument("--dataset", required=True,
                        help="dataset directory or hub dataset id")
    parser.add_argument("--out", required=True, help="output stem for the packs")
    parser.add_argument("--modality", default="both", choices=["image", "audio", "both"])
    parser.add_argument("--image-encoder", default=DEFAULT_CLIP_ID,
                        help="transformers model id for the image tower")
    parser.add_argument("--audio-encoder", default=DEFAULT_CLAP_ID,
                        help="transformers model id for the audio tower")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--cache-dir", help="download cache for hub datasets")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        root = resolve_dataset(args.dataset, args.cache_dir)
        items = scan_dataset(root)
        image_encoder = audio_encoder = None
        if args.modality in ("image", "both"):
            image_encoder = ClipImageEncoder.from_pretrained(args.image_encoder)
        if args.modality in ("audio", "both"):
            audio_encoder = ClapAudioEncoder.from_pretrained(args.audio_encoder)
        manifest = run_extraction(
            items, args.dataset, args.out, args.modality,
            image_encoder=image_encoder, audio_encoder=audio_encoder,
            batch_size=args.batch_size,
        )
    except (DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for modality, info in manifest.outputs.items():
        print(f"{modality}: {info['records']} records -> {info['stem']}")
    print(f"manifest -> {args.out}.extraction.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
