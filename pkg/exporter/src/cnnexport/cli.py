"""Command line for exporting CNN layer activations to GDSC files."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .export import export_dataset
from .extract import LAYERS, MODELS, ExportSpec
from .preprocess import CROPS, IMAGENET_MEAN


def read_input_list(path: Path) -> list[tuple[str, Path]]:
    pairs = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            pairs.append((line, Path(line)))
    return pairs


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cnn-export",
        description="Export pool5/fc6/fc7/fc8 activations as GDSC descriptor files",
    )
    parser.add_argument("--model", required=True, choices=sorted(MODELS))
    parser.add_argument("--layer", required=True, choices=LAYERS)
    parser.add_argument("--crop", default="center", choices=CROPS)
    parser.add_argument("--input-list", required=True, type=Path,
                        help="text file with one image path per line (ids = lines)")
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--weights", type=Path, default=None,
                        help="state-dict file; without it the net is randomly "
                             "initialized from --seed (contract testing only)")
    parser.add_argument("--mean", default=None,
                        help="comma-separated RGB mean in [0,1], default ImageNet")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    mean = IMAGENET_MEAN
    if args.mean:
        parts = tuple(float(v) for v in args.mean.split(","))
        if len(parts) != 3:
            print("error: --mean needs three comma-separated values", file=sys.stderr)
            return 2
        mean = parts

    pairs = read_input_list(args.input_list)
    if not pairs:
        print("error: no inputs in the image list", file=sys.stderr)
        return 2
    if args.weights is None:
        print(
            "warning: no --weights given; using a seeded random initialization "
            "(layer contracts hold, retrieval quality will not)",
            file=sys.stderr,
        )
    spec = ExportSpec(model=args.model, layer=args.layer, crop=args.crop, mean=mean)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    failures = export_dataset(pairs, spec, args.out, args.weights, args.seed)
    print(f"wrote {len(pairs) - failures}/{len(pairs)} records to {args.out}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
