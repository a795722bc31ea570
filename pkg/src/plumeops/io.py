"""Bit-exact file formats: binary PGM images, GTSR tensors, run configs.

GTSR layout: magic b"GTSR", one version byte 0x01, four little-endian uint32
dims (B, C, H, W), then B*C*H*W little-endian float32 values, row-major with
width fastest.  PGM is the canonical binary "P5" form with maxval 255; reads
map pixels to p/255 and writes quantize clamped [0, 1] values round-half-up.
All writes go through a temp file + rename so partial output never lands
under the target name.
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

GTSR_MAGIC = b"GTSR"
GTSR_VERSION = 1


class FormatError(ValueError):
    """Raised for malformed files or config text."""


def atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-plumeops-")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tensor(t: Tensor, path: str) -> None:
    header = GTSR_MAGIC + bytes([GTSR_VERSION]) + struct.pack("<4I", *t.shape)
    payload = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    atomic_write(path, header + payload)


def read_tensor(path: str) -> Tensor:
    with open(path, "rb") as handle:
        blob = handle.read()
    if len(blob) < 5 or blob[:4] != GTSR_MAGIC:
        raise FormatError(f"{path}: not a GTSR tensor file (bad magic)")
    if blob[4] != GTSR_VERSION:
        raise FormatError(f"{path}: unsupported GTSR version {blob[4]}")
    if len(blob) < 21:
        raise FormatError(f"{path}: truncated GTSR header")
    dims = struct.unpack("<4I", blob[5:21])
    if any(d < 1 for d in dims):
        raise FormatError(f"{path}: GTSR dims must all be >= 1, got {dims}")
    n = dims[0] * dims[1] * dims[2] * dims[3]
    body = blob[21:]
    if len(body) != 4 * n:
        raise FormatError(
            f"{path}: payload holds {len(body)} bytes, dims {dims} need {4 * n}"
        )
    data = np.frombuffer(body, dtype="<f4").reshape(dims)
    return Tensor(data)


def write_pgm(t: Tensor, path: str) -> None:
    """Quantize a single-channel tensor (clamped to [0,1]) to canonical P5."""
    if t.b != 1 or t.c != 1:
        raise FormatError(
            f"PGM output needs a 1x1xHxW tensor, got {tuple(t.shape)}"
        )
    v = np.clip(t.data[0, 0].astype(np.float64), 0.0, 1.0)
    q = np.floor(v * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{t.w} {t.h}\n255\n".encode("ascii")
    atomic_write(path, header + q.tobytes())


def _pgm_tokens(blob: bytes, count: int):
    """First ``count`` whitespace-separated header tokens ('#' comments skipped)."""
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(blob):
            raise FormatError("truncated PGM header")
        ch = blob[i : i + 1]
        if ch == b"#":
            while i < len(blob) and blob[i : i + 1] != b"\n":
                i += 1
            continue
        if ch.isspace():
            i += 1
            continue
        start = i
        while i < len(blob) and not blob[i : i + 1].isspace():
            i += 1
        tokens.append(blob[start:i])
    # exactly one whitespace byte separates the maxval from the payload
    return tokens, i + 1


def read_pgm(path: str) -> Tensor:
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:2] != b"P5":
        raise FormatError(f"{path}: wrong magic, expected binary PGM 'P5'")
    try:
        tokens, offset = _pgm_tokens(blob, 4)
    except FormatError as err:
        raise FormatError(f"{path}: {err}") from None
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: wrong magic, expected binary PGM 'P5'")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise FormatError(f"{path}: malformed PGM header (non-numeric field)") from None
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}, expected 255")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad PGM dims {width}x{height}")
    body = blob[offset:]
    if len(body) < width * height:
        raise FormatError(
            f"{path}: truncated PGM payload, expected {width * height} bytes, "
            f"got {len(body)}"
        )
    if len(body) > width * height:
        raise FormatError(
            f"{path}: {len(body) - width * height} trailing bytes after the "
            f"{width * height}-byte payload"
        )
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width)
    return Tensor((pixels / 255.0).reshape(1, 1, height, width))


_DIRECTION_CHOICES = (0, 45, 90, 135)


@dataclass
class RunConfig:
    """key=value run settings; unknown keys are rejected."""

    seed: int = 0
    alpha_fusion_init: float = 0.7
    alpha_decay_init: float = 0.5
    pyramid_levels: int = 3
    gabor_scales: int = 3
    directions: tuple[int, ...] = _DIRECTION_CHOICES


def parse_run_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if key == "seed":
                seed = int(value)
                if not 0 <= seed < 2**64:
                    raise FormatError(
                        f"line {lineno}: seed must be unsigned 64-bit, got {value}"
                    )
                cfg.seed = seed
            elif key == "alpha_fusion_init":
                cfg.alpha_fusion_init = float(value)
            elif key == "alpha_decay_init":
                cfg.alpha_decay_init = float(value)
            elif key == "pyramid_levels":
                cfg.pyramid_levels = int(value)
            elif key == "gabor_scales":
                cfg.gabor_scales = int(value)
            elif key == "directions":
                dirs = tuple(sorted(int(v) for v in value.split(",") if v.strip()))
                bad = [d for d in dirs if d not in _DIRECTION_CHOICES]
                if bad or not dirs:
                    raise FormatError(
                        f"line {lineno}: directions must be a nonempty subset of "
                        f"{_DIRECTION_CHOICES}, got {value!r}"
                    )
                cfg.directions = dirs
            else:
                raise FormatError(f"line {lineno}: unknown key {key!r}")
        except FormatError:
            raise
        except ValueError:
            raise FormatError(
                f"line {lineno}: bad value {value!r} for key {key!r}"
            ) from None
    return cfg


def format_run_config(cfg: RunConfig) -> str:
    return (
        f"seed={cfg.seed}\n"
        f"alpha_fusion_init={cfg.alpha_fusion_init}\n"
        f"alpha_decay_init={cfg.alpha_decay_init}\n"
        f"pyramid_levels={cfg.pyramid_levels}\n"
        f"gabor_scales={cfg.gabor_scales}\n"
        f"directions={','.join(str(d) for d in cfg.directions)}\n"
    )
