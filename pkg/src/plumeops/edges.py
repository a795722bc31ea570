"""Gradient/phase edge operator and its pooled multi-scale pyramid.

The edge map fuses two cues computed per channel:

  G  - max absolute response over four fixed Sobel-style orientations,
       normalized to [0, 1) by its per-image maximum so it is commensurate
       with the phase cue before mixing;
  P  - phase congruency over a small bank of even/odd quadrature filters,
       P = |sum_s r_s| / (sum_s |r_s| + eps), which is bounded in [0, 1) by
       the triangle inequality and contrast-invariant up to eps.

The mixing weight alpha lives behind a logit so it stays in (0, 1); driving
the logit to +/-inf recovers the exact gradient-only / phase-only endpoints
bit for bit.  Only the fusion is differentiated - both cue maps come from
fixed, non-learnable banks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import (
    KernelWeights,
    Parameter,
    ShapeError,
    Tensor,
    _finalize,
    add,
    add_const,
    conv2d,
    maxpool2,
    mul,
    mul_const,
    param_tensor,
    sigmoid,
)

SOBEL_0 = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_45 = np.array([[0.0, 1.0, 2.0], [-1.0, 0.0, 1.0], [-2.0, -1.0, 0.0]])
SOBEL_90 = np.array([[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]])
SOBEL_135 = np.array([[-2.0, -1.0, 0.0], [-1.0, 0.0, 1.0], [0.0, 1.0, 2.0]])

_ORIENTED = {0: SOBEL_0, 45: SOBEL_45, 90: SOBEL_90, 135: SOBEL_135}

LAPLACIAN_5PT = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def correlate_same(xd: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Zero same-padded correlation of a (B,C,H,W) array with one odd kernel."""
    k = kernel.shape[0]
    p = k // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return np.einsum("bchwij,ij->bchw", win, kernel)


@dataclass(frozen=True)
class DirectionalBank:
    """Fixed oriented 3x3 stencils; every kernel sums to zero."""

    directions: tuple[int, ...] = (0, 45, 90, 135)
    kernels: tuple[np.ndarray, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        if not self.directions:
            raise ValueError("bank needs at least one orientation")
        ks = []
        for d in self.directions:
            if d not in _ORIENTED:
                raise ValueError(f"unsupported orientation {d}")
            ks.append(_ORIENTED[d])
        object.__setattr__(self, "kernels", tuple(ks))


@dataclass(frozen=True)
class GaborBank:
    """Even/odd quadrature pairs at log-spaced wavelengths 3*2^s pixels.

    7x7 extent, isotropic Gaussian envelope (sigma = 2 px), one carrier
    orientation (along x), each kernel L2-normalized.  The odd kernels are
    exactly zero-mean and each pair is orthogonal by antisymmetry.
    """

    wavelengths: tuple[float, ...] = (3.0, 6.0, 12.0)
    extent: int = 7
    sigma: float = 2.0
    even: tuple[np.ndarray, ...] = field(default=(), repr=False)
    odd: tuple[np.ndarray, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        if not self.wavelengths:
            raise ValueError("bank needs at least one scale")
        half = self.extent // 2
        y, x = np.mgrid[-half : half + 1, -half : half + 1]
        env = np.exp(-(x**2 + y**2) / (2.0 * self.sigma**2))
        evens, odds = [], []
        for lam in self.wavelengths:
            phase = 2.0 * np.pi * x / lam
            e = env * np.cos(phase)
            o = env * np.sin(phase)
            evens.append(e / np.sqrt((e**2).sum()))
            odds.append(o / np.sqrt((o**2).sum()))
        object.__setattr__(self, "even", tuple(evens))
        object.__setattr__(self, "odd", tuple(odds))

    @classmethod
    def with_scales(cls, scales: int) -> "GaborBank":
        return cls(wavelengths=tuple(3.0 * 2.0**s for s in range(scales)))


@dataclass
class AgpeoParams:
    """Learnable fusion weight alpha = sigmoid(alpha_logit) in (0, 1)."""

    alpha_logit: Parameter
    eps: float = 1e-6

    @classmethod
    def init(cls, alpha: float = 0.7) -> "AgpeoParams":
        return cls.from_alpha(alpha)

    @classmethod
    def from_alpha(cls, alpha: float) -> "AgpeoParams":
        """Logit of a target alpha; 0 and 1 map to -/+inf (exact endpoints)."""
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        if alpha == 0.0:
            logit = -math.inf
        elif alpha == 1.0:
            logit = math.inf
        else:
            logit = math.log(alpha / (1.0 - alpha))
        return cls(Parameter("alpha_logit", logit))

    def alpha(self) -> float:
        z = self.alpha_logit.data.item()
        if z >= 0:
            return 1.0 / (1.0 + math.exp(-z))
        e = math.exp(z)
        return e / (1.0 + e)


def directional_gradient(x: Tensor, bank: DirectionalBank | None = None) -> Tensor:
    """Per-pixel max absolute response over the bank's orientations."""
    bank = bank if bank is not None else DirectionalBank()
    xd = x.data.astype(np.float64)
    resp = np.stack([np.abs(correlate_same(xd, k)) for k in bank.kernels])
    return Tensor(_finalize(resp.max(axis=0)))


def phase_congruency(
    x: Tensor, bank: GaborBank | None = None, eps: float = 1e-6
) -> Tensor:
    """Alignment of quadrature-filter phases across scales, in [0, 1).

    Responses r_s = even_s*x + i*odd_s*x are summed as vectors; the mean
    phase is the argument of that sum, so the numerator collapses to
    |sum_s r_s| and the bound P < 1 is structural rather than a clamp.
    """
    bank = bank if bank is not None else GaborBank()
    xd = x.data.astype(np.float64)
    sum_re = np.zeros_like(xd)
    sum_im = np.zeros_like(xd)
    amp_total = np.zeros_like(xd)
    for e, o in zip(bank.even, bank.odd):
        re = correlate_same(xd, e)
        im = correlate_same(xd, o)
        sum_re += re
        sum_im += im
        amp_total += np.hypot(re, im)
    p = np.hypot(sum_re, sum_im) / (amp_total + eps)
    return Tensor(_finalize(p))


def normalized_gradient(
    x: Tensor, bank: DirectionalBank | None = None, eps: float = 1e-6
) -> Tensor:
    """Directional gradient scaled into [0, 1) by its per-image maximum."""
    g = directional_gradient(x, bank).data.astype(np.float64)
    peak = g.max(axis=(1, 2, 3), keepdims=True)
    return Tensor(_finalize(g / (peak + eps)))


def agpeo(
    x: Tensor,
    p: AgpeoParams,
    dir_bank: DirectionalBank | None = None,
    gabor_bank: GaborBank | None = None,
) -> Tensor:
    """Fused edge map alpha*G_norm + (1-alpha)*P, entries in [0, 1]."""
    g_norm = normalized_gradient(x, dir_bank, p.eps)
    p_map = phase_congruency(x, gabor_bank, p.eps)
    alpha = sigmoid(param_tensor(p.alpha_logit))
    one_minus = add_const(mul_const(alpha, -1.0), 1.0)
    return add(mul(alpha, g_norm), mul(one_minus, p_map))


@dataclass
class EdgePyramid:
    """Max-pooled levels of an edge map plus their pointwise projections."""

    levels: list[Tensor]
    projected: list[Tensor]

    def __post_init__(self) -> None:
        e0 = self.levels[0].data
        if e0.min() < 0.0 or e0.max() > 1.0:
            raise ValueError("base level entries must lie in [0, 1]")
        for i in range(1, len(self.levels)):
            prev, cur = self.levels[i - 1], self.levels[i]
            if cur.h != prev.h // 2 or cur.w != prev.w // 2:
                raise ShapeError(
                    f"level {i} dims {cur.h}x{cur.w} are not half of level "
                    f"{i - 1} dims {prev.h}x{prev.w}"
                )


def identity_projection(channels: int) -> KernelWeights:
    return KernelWeights(
        "pointwise", Parameter("proj.w", np.eye(channels, dtype=np.float64))
    )


def build_pyramid(
    e0: Tensor, n_levels: int, projections: list[KernelWeights] | None = None
) -> EdgePyramid:
    """Iterated 2x2 max-pooling with a per-level 1x1 projection.

    ``projections`` needs n_levels+1 kernels (level 0 included); by default
    every projection is the channel identity, so projected == pooled.
    """
    if n_levels < 0:
        raise ValueError("n_levels must be >= 0")
    if e0.h < 2**n_levels or e0.w < 2**n_levels:
        raise ShapeError(
            f"dims {e0.h}x{e0.w} too small for {n_levels} pooling levels"
        )
    if projections is None:
        projections = [identity_projection(e0.c) for _ in range(n_levels + 1)]
    if len(projections) != n_levels + 1:
        raise ValueError(f"need {n_levels + 1} projections, got {len(projections)}")
    levels = [e0]
    for _ in range(n_levels):
        levels.append(maxpool2(levels[-1]))
    projected = [conv2d(level, proj) for level, proj in zip(levels, projections)]
    return EdgePyramid(levels, projected)


def sobel_edge(x: Tensor) -> Tensor:
    """Classical gradient magnitude sqrt(gx^2 + gy^2) (baseline operator)."""
    xd = x.data.astype(np.float64)
    gx = correlate_same(xd, SOBEL_0)
    gy = correlate_same(xd, SOBEL_90)
    return Tensor(_finalize(np.hypot(gx, gy)))


def laplacian_edge(x: Tensor) -> Tensor:
    """Absolute 5-point Laplacian response (baseline operator)."""
    xd = x.data.astype(np.float64)
    return Tensor(_finalize(np.abs(correlate_same(xd, LAPLACIAN_5PT))))
