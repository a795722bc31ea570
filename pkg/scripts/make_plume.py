#!/usr/bin/env python3
"""Synthesize a drifting plume frame with the closed-form transport solver.

A few seeded point sources are evolved under diffusion plus a steady wind,
summed over staggered release times, normalized to [0, 1], and written as a
binary PGM.  The result is fully determined by the seed.
"""
import argparse
import sys

import numpy as np

from plumeops.io import write_pgm
from plumeops.rng import Prng
from plumeops.spectral import DiffusionParams, spectral_solve
from plumeops.tensor import Tensor


def synthesize_plume(
    size: int = 64,
    seed: int = 0,
    d: float = 1.2,
    v: tuple[float, float] = (6.0, 3.0),
    releases: int = 4,
) -> Tensor:
    prng = Prng(seed)
    field = np.zeros((1, 1, size, size))
    sx = int(size * 0.25 + (prng.uniform() - 0.5) * size * 0.1)
    sy = int(size * 0.65 + (prng.uniform() - 0.5) * size * 0.1)
    source = np.zeros((1, 1, size, size))
    source[0, 0, sy, sx] = 1.0
    for k in range(releases):
        t = 0.5 + 1.1 * k + 0.2 * prng.uniform()
        puff = spectral_solve(Tensor(source), DiffusionParams(d, v, t))
        field += puff.data.astype(np.float64)
    field -= field.min()
    peak = field.max()
    if peak > 0:
        field /= peak
    return Tensor(field)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="plume.pgm")
    args = parser.parse_args(argv)
    write_pgm(synthesize_plume(args.size, args.seed), args.out)
    print(f"wrote\t{args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
