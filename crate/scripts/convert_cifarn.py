#!/usr/bin/env python3
"""Convert the official CIFAR-N label file (CIFAR-10_human.pt or
CIFAR-100_noisy.pt) to JSON or to one-label-per-line sidecars.

The .pt file is a pickled dict of label arrays in training-set order, e.g.
aggre_label, worse_label, random_label1..3 and clean_label for CIFAR-10N,
noisy_label and clean_label for CIFAR-100N.

    python scripts/convert_cifarn.py CIFAR-10_human.pt --json cifar10n.json
    python scripts/convert_cifarn.py CIFAR-10_human.pt --sidecar-dir data/cifar10n

The JSON output can also be turned into a sidecar with
`bilearn convert-sidecar --input cifar10n.json --column aggre_label ...`.
"""

import argparse
import json
import pathlib
import sys


def load_labels(path):
    try:
        import torch
    except ImportError:
        sys.exit("reading .pt files needs PyTorch (pip install torch)")
    raw = torch.load(path, weights_only=False)
    if not isinstance(raw, dict):
        sys.exit(f"{path}: expected a dict of label arrays, got {type(raw).__name__}")
    return {key: [int(y) for y in values] for key, values in raw.items()}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("pt_file", type=pathlib.Path)
    parser.add_argument("--json", type=pathlib.Path, help="write all label arrays to this JSON file")
    parser.add_argument("--sidecar-dir", type=pathlib.Path, help="write <key>.txt per label array")
    args = parser.parse_args()
    if not (args.json or args.sidecar_dir):
        parser.error("give --json and/or --sidecar-dir")

    labels = load_labels(args.pt_file)
    lengths = {len(v) for v in labels.values()}
    if len(lengths) != 1:
        sys.exit(f"label arrays differ in length: {sorted(lengths)}")

    if args.json:
        args.json.write_text(json.dumps(labels))
        print(f"wrote {args.json} ({', '.join(labels)})")
    if args.sidecar_dir:
        args.sidecar_dir.mkdir(parents=True, exist_ok=True)
        for key, values in labels.items():
            out = args.sidecar_dir / f"{key}.txt"
            out.write_text("".join(f"{y}\n" for y in values))
            print(f"wrote {out} ({len(values)} labels)")


if __name__ == "__main__":
    main()
