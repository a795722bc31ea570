#!/usr/bin/env python3
"""Sweep the transport oracles against each other across parameters.

For a grid of diffusion coefficients and wind speeds, roll the explicit
stepper against the closed-form spectral solution and report the relative L2
distance, plus the cosine-decay vs reflecting-boundary check that backs the
learnable-decay-equals-diffusion-scale claim.
"""
import argparse
import sys

from plumeops.gas_block import GasBlockParams, global_branch
from plumeops.spectral import (
    DiffusionParams,
    fd_rollout,
    gaussian_bump,
    rel_l2,
    spectral_solve,
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=32)
    parser.add_argument("--steps", type=int, default=200)
    parser.add_argument("--t", type=float, default=1.0)
    args = parser.parse_args(argv)

    dt = args.t / args.steps
    bump = gaussian_bump(args.size, sigma=args.size / 8)

    print("D\tvx\tvy\trel_l2(fd, spectral)")
    for d in (0.1, 0.5, 1.0):
        for v in ((0.0, 0.0), (1.0, 0.0), (1.0, -0.5)):
            p = DiffusionParams(d, v, args.t)
            err = rel_l2(fd_rollout(bump, p, dt, args.steps), spectral_solve(bump, p))
            print(f"{d:g}\t{v[0]:g}\t{v[1]:g}\t{err:.3e}")

    print()
    print("alpha=D*t\trel_l2(decay, reflecting fd)")
    for dt_scale in (0.1, 0.5, 1.0):
        params = GasBlockParams.init(1, 1, alpha_decay_init=dt_scale)
        decayed = global_branch(bump, params)
        fd = fd_rollout(
            bump, DiffusionParams(dt_scale), args.t / args.steps, args.steps,
            boundary="reflect",
        )
        print(f"{dt_scale:g}\t{rel_l2(decayed, fd):.3e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
