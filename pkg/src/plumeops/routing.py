"""Content-adaptive cross-scale routing algebra.

An importance map blends three sigmoid-bounded cues (global channel
statistics, local 3x3 context, channel diversity) with softmax-normalized
weights; a pointwise head turns it into four per-pixel path weights in
(0, 1).  Those weights drive two modulation primitives over a three-level
feature pyramid:

  fuse   y = f1 + f2 * (w * (BA + sigmoid(std(f2))))       BA fixed at 0.5
  self   y = f  * (IDAS + w * (BA + sigmoid(std(f))))      IDAS fixed at 1

so a closed path (w = 0) passes f1 through untouched and self-modulation
never destroys the identity component.  The blend (1-w)*local + w*transport
is the same update written as a convex step, which is what lets w/dt read
as a per-pixel transport speed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gas_block import seeded_kernel
from .rng import Prng
from .tensor import (
    KernelWeights,
    Parameter,
    ShapeError,
    Tensor,
    add,
    add_const,
    conv2d,
    maxpool2,
    mul,
    mul_const,
    reduce,
    relu,
    sigmoid,
    slice_channels,
    softmax_pick,
    upsample_nearest,
)

BA = 0.5
IDAS = 1.0


@dataclass(frozen=True)
class AimmConstants:
    """Fixed modulation constants; never trained."""

    ba: float = BA
    idas: float = IDAS


@dataclass
class ImportanceParams:
    """Three reduce-expand branches plus softmax fusion logits."""

    global_reduce: KernelWeights
    global_expand: KernelWeights
    local_context: KernelWeights
    local_expand: KernelWeights
    diversity_reduce: KernelWeights
    diversity_expand: KernelWeights
    fusion_logits: Parameter
    eps: float = 1e-6

    def __post_init__(self) -> None:
        if self.fusion_logits.data.shape != (3,):
            raise ShapeError("fusion_logits must hold exactly 3 logits")

    @property
    def channels(self) -> int:
        return self.global_reduce.in_channels

    def fusion_weights(self) -> np.ndarray:
        z = self.fusion_logits.data - self.fusion_logits.data.max()
        e = np.exp(z)
        return e / e.sum()

    def parameters(self):
        out = []
        for kw in (
            self.global_reduce,
            self.global_expand,
            self.local_context,
            self.local_expand,
            self.diversity_reduce,
            self.diversity_expand,
        ):
            out += kw.parameters()
        out.append((self.fusion_logits.name, self.fusion_logits))
        return out

    @classmethod
    def init(cls, channels: int, prng: Prng | None = None) -> "ImportanceParams":
        """Seeded branches with reduction width max(C//4, 1); equal logits."""
        prng = prng if prng is not None else Prng(0)
        cr = max(channels // 4, 1)
        return cls(
            global_reduce=seeded_kernel("pointwise", channels, cr, prng, name="ie.g1"),
            global_expand=seeded_kernel("pointwise", cr, channels, prng, name="ie.g2"),
            local_context=seeded_kernel("dense", channels, cr, prng, name="ie.l1"),
            local_expand=seeded_kernel("pointwise", cr, channels, prng, name="ie.l2"),
            diversity_reduce=seeded_kernel(
                "pointwise", channels, cr, prng, name="ie.d1"
            ),
            diversity_expand=seeded_kernel(
                "pointwise", cr, channels, prng, name="ie.d2"
            ),
            fusion_logits=Parameter("ie.fusion_logits", np.zeros(3)),
        )


@dataclass
class PathWeights:
    """Four single-channel routing maps, entries in [0, 1]."""

    w1: Tensor
    w2: Tensor
    w3: Tensor
    w4: Tensor

    def __post_init__(self) -> None:
        for name in ("w1", "w2", "w3", "w4"):
            t = getattr(self, name)
            if t.c != 1:
                raise ShapeError(f"{name} must be single-channel, got C={t.c}")
            if t.data.min() < 0.0 or t.data.max() > 1.0:
                raise ValueError(f"{name} entries must lie in [0, 1]")


@dataclass
class FeaturePyramid:
    """Shallow/mid/deep levels with exact factor-2 spatial relations."""

    p3: Tensor
    p4: Tensor
    p5: Tensor

    def __post_init__(self) -> None:
        if not (self.p3.c == self.p4.c == self.p5.c):
            raise ShapeError("pyramid levels must share a channel width")
        if self.p3.h != 2 * self.p4.h or self.p3.w != 2 * self.p4.w:
            raise ShapeError(
                f"p3 must be exactly twice p4: {self.p3.h}x{self.p3.w} vs "
                f"{self.p4.h}x{self.p4.w}"
            )
        if self.p4.h != 2 * self.p5.h or self.p4.w != 2 * self.p5.w:
            raise ShapeError(
                f"p4 must be exactly twice p5: {self.p4.h}x{self.p4.w} vs "
                f"{self.p5.h}x{self.p5.w}"
            )


def importance_map(x: Tensor, p: ImportanceParams) -> Tensor:
    """Sigmoid-fused importance in (0,1)^(B,C,H,W) from the three branches.

    The diversity branch is modulated by each channel's spatial standard
    deviation, max-normalized per image; that statistic is treated as a
    constant of the input rather than a differentiated quantity.
    """
    if x.c != p.channels:
        raise ShapeError(f"expected {p.channels} channels, got {x.c}")
    gap = reduce(x, "global_avg")
    g_vec = sigmoid(conv2d(relu(conv2d(gap, p.global_reduce)), p.global_expand))
    g_tilde = upsample_nearest(g_vec, x.h, x.w)

    local = sigmoid(conv2d(relu(conv2d(x, p.local_context)), p.local_expand))

    d_gate = sigmoid(conv2d(relu(conv2d(x, p.diversity_reduce)), p.diversity_expand))
    std = reduce(x, "channel_std").data.astype(np.float64)
    s_norm = std / (std.max(axis=1, keepdims=True) + p.eps)
    diversity = mul(d_gate, Tensor(s_norm))

    w_g = softmax_pick(p.fusion_logits, 0)
    w_l = softmax_pick(p.fusion_logits, 1)
    w_d = softmax_pick(p.fusion_logits, 2)
    blend = add(add(mul(w_g, g_tilde), mul(w_l, local)), mul(w_d, diversity))
    return sigmoid(blend)


def path_weights(importance: Tensor, head: KernelWeights) -> PathWeights:
    """Pointwise C->4 head + sigmoid, split into four (B,1,H,W) maps."""
    if head.mode != "pointwise" or head.out_channels != 4:
        raise ShapeError("path head must be a pointwise kernel with 4 outputs")
    w = sigmoid(conv2d(importance, head))
    return PathWeights(*(slice_channels(w, i, i + 1) for i in range(4)))


def _richness(f: Tensor, ba: float) -> Tensor:
    return add_const(sigmoid(reduce(f, "channel_std")), ba)


def aimm_fuse(
    f1: Tensor, f2: Tensor, w: Tensor, constants: AimmConstants = AimmConstants()
) -> Tensor:
    """y = f1 + f2 * (w * (BA + sigmoid(std(f2)))); w broadcasts over channels."""
    if f1.shape != f2.shape:
        raise ShapeError(f"feature shapes differ: {f1.shape} vs {f2.shape}")
    return add(f1, mul(f2, mul(w, _richness(f2, constants.ba))))


def aimm_self(
    f: Tensor, w: Tensor, constants: AimmConstants = AimmConstants()
) -> Tensor:
    """y = f * (IDAS + w * (BA + sigmoid(std(f)))); identity at w = 0."""
    factor = add_const(mul(w, _richness(f, constants.ba)), constants.idas)
    return mul(f, factor)


def transport_blend(f_local: Tensor, f_transport: Tensor, w: Tensor) -> Tensor:
    """Convex combination (1-w)*local + w*transport."""
    if f_local.shape != f_transport.shape:
        raise ShapeError(
            f"feature shapes differ: {f_local.shape} vs {f_transport.shape}"
        )
    one_minus = add_const(mul_const(w, -1.0), 1.0)
    return add(mul(one_minus, f_local), mul(w, f_transport))


def velocity_surrogate(w: Tensor, dt: float) -> Tensor:
    """Per-pixel transport-speed reading of a routing map: w / dt."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return Tensor(w.data.astype(np.float64) / dt)


@dataclass
class RoutingParams:
    """Importance estimator, path head, and the per-level refine convs."""

    importance: ImportanceParams
    head: KernelWeights
    refine_p3: tuple[KernelWeights, KernelWeights]
    refine_p4: tuple[KernelWeights, KernelWeights]

    def parameters(self):
        out = self.importance.parameters()
        out += self.head.parameters()
        for pair in (self.refine_p3, self.refine_p4):
            for kw in pair:
                out += kw.parameters()
        return out

    @classmethod
    def init(cls, channels: int, prng: Prng | None = None) -> "RoutingParams":
        prng = prng if prng is not None else Prng(0)
        imp = ImportanceParams.init(channels, prng)
        head = seeded_kernel("pointwise", channels, 4, prng, name="head")
        refine_p3 = (
            seeded_kernel("dense", channels, channels, prng, name="refine_p3.a"),
            seeded_kernel("dense", channels, channels, prng, name="refine_p3.b"),
        )
        refine_p4 = (
            seeded_kernel("dense", channels, channels, prng, name="refine_p4.a"),
            seeded_kernel("dense", channels, channels, prng, name="refine_p4.b"),
        )
        return cls(imp, head, refine_p3, refine_p4)

    def make_refine_identity(self) -> None:
        """Zero the second refine conv of each pair, making refine a no-op."""
        for pair in (self.refine_p3, self.refine_p4):
            pair[1].weight.data[:] = 0.0
            if pair[1].bias is not None:
                pair[1].bias.data[:] = 0.0


def refine(x: Tensor, pair: tuple[KernelWeights, KernelWeights]) -> Tensor:
    """Plumbing consolidation block: x + conv_b(relu(conv_a(x)))."""
    return add(x, conv2d(relu(conv2d(x, pair[0])), pair[1]))


def casr_pan_forward(pyr: FeaturePyramid, params: RoutingParams) -> FeaturePyramid:
    """Three cross-scale paths plus one self path, gated per pixel.

    The importance map is read off the mid level; its path weights are
    nearest-resized wherever a path targets another level.  Mid-level
    updates apply in the declared order: deep-to-mid fuse, shallow-to-mid
    fuse, then self-enhancement.  The deep level passes through untouched.
    """
    i_map = importance_map(pyr.p4, params.importance)
    w = path_weights(i_map, params.head)

    p5_up = upsample_nearest(pyr.p5, pyr.p4.h, pyr.p4.w)
    p4_a = aimm_fuse(pyr.p4, p5_up, w.w1)

    p5_up4 = upsample_nearest(pyr.p5, pyr.p3.h, pyr.p3.w)
    w2_up = upsample_nearest(w.w2, pyr.p3.h, pyr.p3.w)
    p3_out = aimm_fuse(pyr.p3, p5_up4, w2_up)

    p3_down = maxpool2(pyr.p3)
    p4_b = aimm_fuse(p4_a, p3_down, w.w3)
    p4_out = aimm_self(p4_b, w.w4)

    return FeaturePyramid(
        refine(p3_out, params.refine_p3),
        refine(p4_out, params.refine_p4),
        pyr.p5,
    )
