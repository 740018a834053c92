#!/usr/bin/env python3
"""Emit the bundled synthetic corpora as files for the CLI.

Writes a digit-style IDX corpus (images + prototype labels) and a directory
of texture PGMs, so every drbn subcommand can be exercised offline.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np

from drbn.dataio import (
    IdxTensor,
    synthetic_digits,
    synthetic_textures,
    write_idx,
    write_pgm,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="data")
    ap.add_argument("--digits", type=int, default=1000)
    ap.add_argument("--side", type=int, default=14)
    ap.add_argument("--textures", type=int, default=8)
    ap.add_argument("--texture-size", type=int, default=32)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    os.makedirs(args.out_dir, exist_ok=True)
    tensor, labels = synthetic_digits(args.digits, side=args.side, seed=args.seed)
    write_idx(os.path.join(args.out_dir, "digits.idx"), tensor)
    write_idx(os.path.join(args.out_dir, "digit-labels.idx"),
              IdxTensor((args.digits,), labels.astype(np.uint8)))
    tex_dir = os.path.join(args.out_dir, "textures")
    os.makedirs(tex_dir, exist_ok=True)
    for i, img in enumerate(synthetic_textures(args.textures, size=args.texture_size,
                                               seed=args.seed + 1)):
        write_pgm(os.path.join(tex_dir, f"texture_{i:02d}.pgm"), img)
    print(f"wrote {args.digits} digit images and {args.textures} textures under {args.out_dir}/")


if __name__ == "__main__":
    main()
