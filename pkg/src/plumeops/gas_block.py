"""Diffusion-convection feature operator with edge-gated residual fusion.

Pipeline per forward pass, all shapes (B, C, H, W):

  local    x_local = depthwise3x3(x)
  split    x_proj, z = pointwise C->2C (x_proj), C->2C (z halves)
  global   x_global = idct2(exp(-softplus(a)*K^2) * W_f * dct2(x_proj))
  gate     x_global *= sigmoid(pointwise(edge_prior))
  fuse     y = silu(pointwise(channel_norm(x_local + x_global) * sigmoid(z)) + x)

The decay scale is reparameterized through softplus so it can never go
negative; with the per-channel gain at 1 it plays the role of the diffusion
scale D*t, which the spectral module's reflecting-boundary stepper verifies.
The convection phase term of the periodic solution is deliberately absent
here: directional transport lives only in the oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import Prng, init_bound
from .spectral import dct2, decay_apply, idct2
from .tensor import (
    KernelWeights,
    Parameter,
    ShapeError,
    Tensor,
    add,
    channel_norm,
    conv2d,
    mul,
    param_tensor,
    sigmoid,
    silu,
    slice_channels,
    softplus,
)


def softplus_inv(y: float) -> float:
    """x with softplus(x) = y; y = 0 maps to -inf (softplus(-inf) = 0)."""
    if y < 0:
        raise ValueError(f"softplus range is [0, inf), got {y}")
    if y == 0:
        return -math.inf
    return y + math.log(-math.expm1(-y))


def seeded_kernel(
    mode: str,
    in_channels: int,
    out_channels: int,
    prng: Prng,
    k: int = 3,
    bias: bool = True,
    name: str = "conv",
) -> KernelWeights:
    """Kernel with uniform(-b, b) entries, b = 1/sqrt(fan_in); weight then bias."""
    if mode == "depthwise":
        b = init_bound(k * k)
        w = prng.fill((in_channels, k, k), b)
    elif mode == "pointwise":
        b = init_bound(in_channels)
        w = prng.fill((out_channels, in_channels), b)
    else:
        b = init_bound(in_channels * k * k)
        w = prng.fill((out_channels, in_channels, k, k), b)
    bias_p = None
    if bias:
        bias_p = Parameter(f"{name}.b", prng.fill((out_channels,), b))
    return KernelWeights(mode, Parameter(f"{name}.w", w), bias_p)


@dataclass
class GasBlockParams:
    """Every learnable quantity of the block.

    dw has no bias so a stencil-initialized kernel stays a pure stencil;
    the three pointwise projections carry biases.  The raw decay scalar maps
    through softplus, so alpha_decay >= 0 by construction.
    """

    dw: KernelWeights
    in_proj: KernelWeights
    alpha_decay_raw: Parameter
    w_f: Parameter
    gate_conv: KernelWeights
    out_gain: Parameter
    out_bias: Parameter
    out_proj: KernelWeights
    norm_eps: float = 1e-5

    def __post_init__(self) -> None:
        c = self.dw.in_channels
        if self.dw.mode != "depthwise":
            raise ShapeError("dw must be a depthwise kernel")
        if self.in_proj.mode != "pointwise" or self.in_proj.out_channels != 2 * c:
            raise ShapeError(
                f"in_proj must map {c} -> {2 * c} channels, got "
                f"{self.in_proj.in_channels} -> {self.in_proj.out_channels}"
            )
        if self.w_f.data.shape != (c,):
            raise ShapeError(f"w_f must be a length-{c} vector")
        if self.gate_conv.mode != "pointwise" or self.gate_conv.out_channels != c:
            raise ShapeError(f"gate_conv must be pointwise with {c} outputs")
        if self.out_proj.mode != "pointwise" or self.out_proj.out_channels != c:
            raise ShapeError(f"out_proj must map {c} -> {c} channels")

    @property
    def channels(self) -> int:
        return self.dw.in_channels

    def alpha_decay(self) -> Tensor:
        return softplus(param_tensor(self.alpha_decay_raw))

    def alpha_decay_value(self) -> float:
        return np.logaddexp(0.0, self.alpha_decay_raw.data).item()

    def parameters(self):
        out = list(self.dw.parameters())
        out += self.in_proj.parameters()
        out.append((self.alpha_decay_raw.name, self.alpha_decay_raw))
        out.append((self.w_f.name, self.w_f))
        out += self.gate_conv.parameters()
        out.append((self.out_gain.name, self.out_gain))
        out.append((self.out_bias.name, self.out_bias))
        out += self.out_proj.parameters()
        return out

    @classmethod
    def init(
        cls,
        channels: int,
        edge_channels: int = 1,
        prng: Prng | None = None,
        alpha_decay_init: float = 0.5,
    ) -> "GasBlockParams":
        """Seeded init.  Stream order: dw, in_proj, gate_conv, out_proj.

        w_f and the norm gain start at 1, biases at 0, so a fresh block's
        global branch is a faithful decay at scale alpha_decay_init.
        """
        prng = prng if prng is not None else Prng(0)
        dw = seeded_kernel("depthwise", channels, channels, prng, bias=False, name="dw")
        in_proj = seeded_kernel(
            "pointwise", channels, 2 * channels, prng, name="in_proj"
        )
        gate = seeded_kernel("pointwise", edge_channels, channels, prng, name="gate")
        out_proj = seeded_kernel("pointwise", channels, channels, prng, name="out_proj")
        return cls(
            dw=dw,
            in_proj=in_proj,
            alpha_decay_raw=Parameter(
                "alpha_decay_raw", softplus_inv(alpha_decay_init)
            ),
            w_f=Parameter("w_f", np.ones(channels)),
            gate_conv=gate,
            out_gain=Parameter("out_gain", np.ones(channels)),
            out_bias=Parameter("out_bias", np.zeros(channels)),
            out_proj=out_proj,
        )


@dataclass
class GasBlockTrace:
    """Every intermediate of one forward pass, all (B, C, H, W)."""

    x_local: Tensor
    x_proj: Tensor
    z: Tensor
    x_global_pre: Tensor
    x_global: Tensor
    y_prime: Tensor
    y: Tensor

    def fields(self):
        return {
            "x_local": self.x_local,
            "x_proj": self.x_proj,
            "z": self.z,
            "x_global_pre": self.x_global_pre,
            "x_global": self.x_global,
            "y_prime": self.y_prime,
            "y": self.y,
        }


def local_branch(x: Tensor, p: GasBlockParams) -> Tensor:
    if x.c != p.channels:
        raise ShapeError(f"expected {p.channels} channels, got {x.c}")
    return conv2d(x, p.dw)


def project_split(x_local: Tensor, p: GasBlockParams) -> tuple[Tensor, Tensor]:
    """Pointwise C->2C projection; first half is the feature, second the gate."""
    proj = conv2d(x_local, p.in_proj)
    c = p.channels
    return slice_channels(proj, 0, c), slice_channels(proj, c, 2 * c)


def global_branch(x_proj: Tensor, p: GasBlockParams) -> Tensor:
    """Frequency-decayed reconstruction: idct2(decay(dct2(x)))."""
    return idct2(decay_apply(dct2(x_proj), p.alpha_decay(), p.w_f))


def edge_gate(edge_prior: Tensor, p: GasBlockParams) -> Tensor:
    if edge_prior.c != p.gate_conv.in_channels:
        raise ShapeError(
            f"edge prior has {edge_prior.c} channels, gate expects "
            f"{p.gate_conv.in_channels}"
        )
    return sigmoid(conv2d(edge_prior, p.gate_conv))


def gas_block_forward(
    x: Tensor, edge_prior: Tensor, p: GasBlockParams
) -> tuple[Tensor, GasBlockTrace]:
    """Full block: local + gated-global fusion with a silu residual output."""
    if edge_prior.h != x.h or edge_prior.w != x.w:
        raise ShapeError(
            f"edge prior is {edge_prior.h}x{edge_prior.w}, features are {x.h}x{x.w}"
            " (caller resizes)"
        )
    x_local = local_branch(x, p)
    x_proj, z = project_split(x_local, p)
    x_global_pre = global_branch(x_proj, p)
    x_global = mul(x_global_pre, edge_gate(edge_prior, p))
    fused = channel_norm(add(x_local, x_global), p.out_gain, p.out_bias, p.norm_eps)
    y_prime = conv2d(mul(fused, sigmoid(z)), p.out_proj)
    y = silu(add(y_prime, x))
    return y, GasBlockTrace(x_local, x_proj, z, x_global_pre, x_global, y_prime, y)
