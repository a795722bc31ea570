"""Verification instruments: finite-difference checks and receptive fields.

Gradient checking sums the graph output to a scalar, pulls analytic
gradients back through the tape, then nudges each sampled parameter
coordinate by +/-h and recomputes.  Both sides run under float64 storage so
the comparison at the 1e-3 tolerance measures the backward rules, not
float32 rounding.

The receptive-field map accumulates |d(center activation)/d(input)| over a
seeded batch of random inputs and normalizes by its maximum; the
high-contribution area ratio is the smallest fraction of pixels holding a
given share of that mass.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .rng import Prng
from .tensor import Parameter, Tensor, backward, precision64, sum_all


@dataclass
class GradCheckEntry:
    name: str
    analytic: float
    numeric: float
    rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    h: float
    tol: float

    @property
    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if not e.passed]

    @property
    def all_pass(self) -> bool:
        return not self.failures

    def to_text(self) -> str:
        """One metric per line, name<TAB>value; deterministic formatting."""
        lines = [f"checked\t{len(self.entries)}", f"failures\t{len(self.failures)}"]
        for e in self.entries:
            lines.append(f"{e.name}\t{e.rel_err:.12e}")
        return "\n".join(lines) + "\n"


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def finite_diff_grad(
    f: Callable[[np.ndarray], float], theta: np.ndarray, h: float
) -> np.ndarray:
    """Central differences (f(x+h*e_i) - f(x-h*e_i)) / 2h in float64."""
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros(theta.size, dtype=np.float64)
    flat = theta.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f(theta.reshape(theta.shape)))
        flat[i] = orig - h
        f_minus = float(f(theta.reshape(theta.shape)))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError(f"objective is non-finite near coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(theta.shape)


def _loss(forward: Callable[[], Tensor]) -> float:
    return float(forward().data.sum(dtype=np.float64))


def grad_check(
    forward: Callable[[], Tensor],
    params: Sequence[tuple[str, Parameter]],
    inputs: Sequence[tuple[str, Tensor]] = (),
    h: float = 1e-3,
    tol: float = 1e-3,
    max_coords: int = 64,
    seed: int = 0,
) -> GradCheckReport:
    """Check d(sum(forward())) / d(coordinate) for every listed leaf.

    Parameters (and optionally leaf input tensors) are nudged in place;
    coordinates beyond ``max_coords`` per leaf are subsampled with a seeded
    stream so reports are reproducible.
    """
    picker = Prng(seed)
    entries: list[GradCheckEntry] = []
    leaves = list(params) + list(inputs)
    # Nudged coordinates must carry the step exactly, so checked leaves are
    # held in float64 for the duration (input tensors are restored after).
    restore = []
    for _, leaf in leaves:
        if leaf.data.dtype != np.float64:
            restore.append((leaf, leaf.data.dtype))
            leaf.data = leaf.data.astype(np.float64)
    try:
        entries = _grad_check_body(forward, leaves, h, tol, max_coords, picker)
    finally:
        for leaf, dtype in restore:
            leaf.data = leaf.data.astype(dtype)
    return GradCheckReport(entries, h, tol)


def _grad_check_body(forward, leaves, h, tol, max_coords, picker):
    entries: list[GradCheckEntry] = []
    with precision64():
        out = forward()
        grads = backward(sum_all(out), np.ones((1, 1, 1, 1)))
        for name, leaf in leaves:
            analytic = grads.wrt(leaf).reshape(-1)
            flat = leaf.data.reshape(-1)
            n = flat.size
            if n <= max_coords:
                coords = range(n)
            else:
                coords = sorted(
                    {picker.next_u64() % n for _ in range(max_coords)}
                )
            for i in coords:
                orig = flat[i]
                flat[i] = orig + h
                f_plus = _loss(forward)
                flat[i] = orig - h
                f_minus = _loss(forward)
                flat[i] = orig
                if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                    raise ValueError(
                        f"objective is non-finite while nudging {name}[{i}]"
                    )
                numeric = (f_plus - f_minus) / (2.0 * h)
                rel = _rel_err(float(analytic[i]), numeric)
                entries.append(
                    GradCheckEntry(
                        f"{name}[{i}]", float(analytic[i]), numeric, rel, rel <= tol
                    )
                )
    return entries


@dataclass
class ErfMap:
    """Normalized |gradient| of a central activation w.r.t. input pixels."""

    values: np.ndarray
    description: str
    input_dims: tuple[int, int, int]

    def __post_init__(self) -> None:
        if self.values.min() < 0:
            raise ValueError("map entries must be nonnegative")
        peak = self.values.max()
        if peak > 0 and not np.isclose(peak, 1.0):
            raise ValueError("a nonzero map must be normalized to max 1")


def erf_map(
    network: Callable[[Tensor], Tensor],
    channels: int,
    height: int,
    width: int,
    seed: int = 0,
    batch: int = 8,
) -> ErfMap:
    """Receptive field of the spatially-central activations of ``network``.

    The objective is the channel sum of the output at the center pixel;
    its input gradient is averaged (as channel-summed |grad|) over a seeded
    batch of uniform(-1, 1) inputs, then scaled to peak 1.
    """
    prng = Prng(seed)
    x = Tensor(prng.fill((batch, channels, height, width), 1.0))
    out = network(x)
    if out.h != height or out.w != width:
        raise ValueError(
            f"network output {out.h}x{out.w} is not aligned with input "
            f"{height}x{width}"
        )
    cot = np.zeros(out.shape)
    cot[:, :, height // 2, width // 2] = 1.0
    g = backward(out, cot).wrt(x)
    acc = np.abs(g).sum(axis=1).mean(axis=0)
    peak = acc.max()
    if peak > 0:
        acc = acc / peak
    return ErfMap(acc, f"seeded random weights, batch={batch}", (channels, height, width))


def contribution_ratio(erf: ErfMap, threshold: float) -> float:
    """Smallest pixel fraction whose mass reaches ``threshold`` of the total."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    flat = np.sort(erf.values.reshape(-1).astype(np.float64))[::-1]
    total = flat.sum()
    if total == 0:
        raise ValueError("contribution ratio is undefined for an all-zero map")
    csum = np.cumsum(flat)
    count = int(np.searchsorted(csum, threshold * total, side="left")) + 1
    return count / flat.size
