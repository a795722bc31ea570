"""Orthonormal 2D DCT, the frequency-decay kernel, and two PDE oracles.

The cosine transform is evaluated as a separable matrix product against
precomputed orthonormal bases: exact adjoints, exact Parseval, and more than
fast enough at the grid sizes this library targets.  ``spectral_solve`` and
``fd_step`` implement the convection-diffusion evolution two independent
ways (periodic Fourier factor vs explicit central differences) so each can
serve as the other's oracle; a reflecting-boundary stepper variant exists to
cross-check the cosine-basis decay path, whose implicit boundary is Neumann.

Conventions fixed here: grid spacing h = 1; DCT frequencies are
omega = pi*k/N radians per sample; DFT wavenumbers are angular 2*pi*m/N.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    Parameter,
    ShapeError,
    Tensor,
    _finalize,
    _node,
    elementwise,
    mul,
    param_tensor,
)


class CflError(ValueError):
    """Raised when an explicit step exceeds its stability bound."""


@dataclass(frozen=True)
class FrequencyGrid:
    """Pixel-indexed DCT frequencies and their squared magnitude K^2."""

    h: int
    w: int
    omega_x: np.ndarray = field(repr=False)
    omega_y: np.ndarray = field(repr=False)
    k2: np.ndarray = field(repr=False)


def freq_grid(h: int, w: int) -> FrequencyGrid:
    if h < 1 or w < 1:
        raise ShapeError(f"grid dims must be >= 1, got {h}x{w}")
    wx = np.pi * np.arange(w) / w
    wy = np.pi * np.arange(h) / h
    k2 = wy[:, None] ** 2 + wx[None, :] ** 2
    return FrequencyGrid(h, w, wx, wy, k2)


@dataclass
class DiffusionParams:
    """Convection-diffusion coefficients: D >= 0, velocity (vx, vy), t >= 0."""

    d: float
    v: tuple[float, float] = (0.0, 0.0)
    t: float = 0.0
    h: float = 1.0

    def __post_init__(self) -> None:
        if self.d < 0:
            raise ValueError(f"diffusion coefficient must be >= 0, got {self.d}")
        if self.t < 0:
            raise ValueError(f"elapsed time must be >= 0, got {self.t}")


@dataclass
class SpectralField:
    """Per-channel transform coefficients plus the basis they live in.

    dct2 fields hold a real Tensor; dft2 fields hold a raw complex array
    (conjugate-symmetric whenever the source was real).
    """

    coeffs: Tensor | np.ndarray
    basis: str

    def __post_init__(self) -> None:
        if self.basis == "dct2":
            if not isinstance(self.coeffs, Tensor):
                raise TypeError("dct2 coefficients must be a real Tensor")
        elif self.basis == "dft2":
            arr = np.asarray(self.coeffs)
            if not np.iscomplexobj(arr):
                raise TypeError("dft2 coefficients must be complex")
        else:
            raise ValueError(f"unknown spectral basis {self.basis!r}")


@functools.lru_cache(maxsize=32)
def _dct_matrix(n: int) -> np.ndarray:
    # Orthonormal type-II rows: M[k, j] = s_k * cos(pi * (2j+1) * k / (2n)).
    j = np.arange(n)
    k = np.arange(n)[:, None]
    m = np.cos(np.pi * (2 * j + 1) * k / (2 * n))
    m[0] *= np.sqrt(1.0 / n)
    m[1:] *= np.sqrt(2.0 / n)
    return m


def dct2(x: Tensor) -> SpectralField:
    """Orthonormal separable 2D type-II DCT of each channel."""
    mh = _dct_matrix(x.h)
    mw = _dct_matrix(x.w)

    def run():
        return _finalize(
            np.einsum("ky,bcyx,jx->bckj", mh, x.data.astype(np.float64), mw)
        )

    def back(cot):
        return (np.einsum("ky,bckj,jx->bcyx", mh, cot, mw),)

    out = _node(run(), "dct2", (x,), back, run)
    return SpectralField(out, "dct2")


def idct2(f: SpectralField) -> Tensor:
    """Exact inverse of :func:`dct2` (type-III with matching normalization)."""
    if f.basis != "dct2":
        raise ValueError(f"idct2 requires a dct2 field, got basis {f.basis!r}")
    coeffs = f.coeffs
    mh = _dct_matrix(coeffs.h)
    mw = _dct_matrix(coeffs.w)

    def run():
        return _finalize(
            np.einsum("yk,bckj,xj->bcyx", mh.T, coeffs.data.astype(np.float64), mw.T)
        )

    def back(cot):
        return (np.einsum("ky,bcyx,jx->bckj", mh, cot, mw),)

    return _node(run(), "idct2", (coeffs,), back, run)


def decay_apply(
    f: SpectralField,
    alpha_decay: float | Tensor,
    w_f: np.ndarray | Parameter | None = None,
) -> SpectralField:
    """Scale dct2 coefficients by exp(-alpha * K^2) and a per-channel gain.

    K^2 vanishes at the DC coefficient, so the channel mean is touched only
    by the gain.  ``alpha_decay`` may be a plain nonnegative float or a
    (1,1,1,1) tensor (e.g. a softplus-constrained parameter) so the decay
    scale stays differentiable.
    """
    if f.basis != "dct2":
        raise ValueError(f"decay_apply requires a dct2 field, got {f.basis!r}")
    coeffs = f.coeffs
    grid = freq_grid(coeffs.h, coeffs.w)
    k2 = Tensor(grid.k2.reshape(1, 1, coeffs.h, coeffs.w))

    if isinstance(alpha_decay, Tensor):
        alpha_t = alpha_decay
    else:
        if alpha_decay < 0:
            raise ValueError(f"alpha_decay must be >= 0, got {alpha_decay}")
        alpha_t = Tensor(np.full((1, 1, 1, 1), alpha_decay))

    out = mul(coeffs, elementwise(mul(alpha_t, k2), "exp_neg"))
    if w_f is not None:
        if isinstance(w_f, Parameter):
            out = mul(out, param_tensor(w_f))
        else:
            wf = np.asarray(w_f, dtype=np.float64).reshape(1, -1, 1, 1)
            if wf.shape[1] != coeffs.c:
                raise ShapeError(
                    f"w_f must have one entry per channel ({coeffs.c}), "
                    f"got {wf.shape[1]}"
                )
            out = mul(out, Tensor(wf))
    return SpectralField(out, "dct2")


def dft2_field(x: Tensor) -> SpectralField:
    """Raw 2D DFT of each channel, mostly useful for inspecting symmetry."""
    return SpectralField(np.fft.fft2(x.data.astype(np.float64), axes=(2, 3)), "dft2")


def _axis_phase(n: int, v: float, t: float, h: float) -> np.ndarray:
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=h)
    phase = np.exp(-1j * v * k * t)
    # The Nyquist mode is self-conjugate along its axis and cannot carry a
    # complex phase in a real signal; project it to its real part.
    if n % 2 == 0:
        phase[n // 2] = phase[n // 2].real
    return phase


def _evolution_factor(height: int, width: int, p: DiffusionParams) -> np.ndarray:
    kx = 2.0 * np.pi * np.fft.fftfreq(width, d=p.h)
    ky = 2.0 * np.pi * np.fft.fftfreq(height, d=p.h)
    decay = np.exp(-p.d * (kx[None, :] ** 2 + ky[:, None] ** 2) * p.t)
    return (
        decay
        * _axis_phase(width, p.v[0], p.t, p.h)[None, :]
        * _axis_phase(height, p.v[1], p.t, p.h)[:, None]
    )


def spectral_solve(u0: Tensor, p: DiffusionParams) -> Tensor:
    """Closed-form periodic evolution of the convection-diffusion equation.

    Each Fourier mode is scaled by exp(-D*(kx^2+ky^2)*t) and phase-shifted by
    exp(-i*(vx*kx + vy*ky)*t); the real part of the inverse transform is
    returned (the imaginary residue is at rounding level).
    """
    factor = _evolution_factor(u0.h, u0.w, p)
    spec = np.fft.fft2(u0.data.astype(np.float64), axes=(2, 3))
    out = np.fft.ifft2(spec * factor, axes=(2, 3))
    return Tensor(_finalize(out.real))


def _neighbors(u: np.ndarray, boundary: str):
    if boundary == "periodic":
        left = np.roll(u, 1, axis=3)
        right = np.roll(u, -1, axis=3)
        up = np.roll(u, 1, axis=2)
        down = np.roll(u, -1, axis=2)
    elif boundary == "reflect":
        # Half-sample mirror (ghost = edge value), matching the cosine basis.
        left = np.concatenate([u[:, :, :, :1], u[:, :, :, :-1]], axis=3)
        right = np.concatenate([u[:, :, :, 1:], u[:, :, :, -1:]], axis=3)
        up = np.concatenate([u[:, :, :1, :], u[:, :, :-1, :]], axis=2)
        down = np.concatenate([u[:, :, 1:, :], u[:, :, -1:, :]], axis=2)
    else:
        raise ValueError(f"unknown boundary mode {boundary!r}")
    return left, right, up, down


def fd_step(
    u: Tensor, p: DiffusionParams, dt: float, boundary: str = "periodic"
) -> Tensor:
    """One explicit central-difference step u + dt*(D*lap(u) - v.grad(u))."""
    h = p.h
    diff_number = p.d * dt / h**2
    if diff_number > 0.25:
        raise CflError(
            f"CFL diffusion bound violated: D*dt/h^2 = {diff_number:g} > 0.25"
        )
    conv_number = max(abs(p.v[0]), abs(p.v[1])) * dt / h
    if conv_number > 0.5:
        raise CflError(
            f"CFL convection bound violated: max|v|*dt/h = {conv_number:g} > 0.5"
        )
    ud = u.data.astype(np.float64)
    left, right, up, down = _neighbors(ud, boundary)
    lap = (left + right + up + down - 4.0 * ud) / h**2
    dudx = (right - left) / (2.0 * h)
    dudy = (down - up) / (2.0 * h)
    out = ud + dt * (p.d * lap - p.v[0] * dudx - p.v[1] * dudy)
    return Tensor(_finalize(out))


def fd_rollout(
    u0: Tensor, p: DiffusionParams, dt: float, steps: int, boundary: str = "periodic"
) -> Tensor:
    """Repeatedly apply :func:`fd_step` (convenience for oracle comparisons)."""
    u = u0
    for _ in range(steps):
        u = fd_step(u, p, dt, boundary)
    return u


def gaussian_bump(
    size: int, sigma: float | None = None, amplitude: float = 1.0
) -> Tensor:
    """Centered isotropic Gaussian field, the standard oracle initial state."""
    if sigma is None:
        sigma = size / 8.0
    c = (size - 1) / 2.0
    y = np.arange(size)[:, None] - c
    x = np.arange(size)[None, :] - c
    u = amplitude * np.exp(-(x**2 + y**2) / (2.0 * sigma**2))
    return Tensor(u.reshape(1, 1, size, size))


def rel_l2(a: Tensor, b: Tensor) -> float:
    """Relative L2 distance ||a-b|| / ||b||."""
    av = a.data.astype(np.float64)
    bv = b.data.astype(np.float64)
    denom = np.sqrt(np.sum(bv**2))
    if denom == 0:
        return float(np.sqrt(np.sum((av - bv) ** 2)))
    return float(np.sqrt(np.sum((av - bv) ** 2)) / denom)
