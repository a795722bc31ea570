"""Dense rank-4 tensor substrate with a minimal reverse-mode tape.

Every value flowing through the library is a ``Tensor``: a contiguous
(batch, channel, height, width) array of 32-bit reals.  Operations are pure
functions that return a fresh tensor carrying a ``TapeNode``; the node knows
how to push a cotangent back to the operation's inputs, so whole pipelines
can be differentiated by walking nodes in reverse.  There is no global tape:
provenance hangs off each tensor, which makes concurrent forward passes on
distinct inputs trivially safe.

Storage is float32 by default.  Reductions and transforms accumulate in
float64, and the :func:`precision64` context switches storage itself to
float64 for the benefit of finite-difference gradient checks.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when an operand's shape violates an operation's contract."""


_AXIS_NAMES = ("batch", "channel", "height", "width")

# Active storage dtype; see precision64().
_storage = {"dtype": np.float32}


@contextlib.contextmanager
def precision64():
    """Run the enclosed ops with float64 tensor storage (for grad checks)."""
    prev = _storage["dtype"]
    _storage["dtype"] = np.float64
    try:
        yield
    finally:
        _storage["dtype"] = prev


def _finalize(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=_storage["dtype"])


class Parameter:
    """Named learnable array.  float64 storage; nudged in place by checkers."""

    __slots__ = ("name", "data")

    def __init__(self, name: str, data) -> None:
        self.name = name
        self.data = np.ascontiguousarray(data, dtype=np.float64)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class TapeNode:
    """Record of one forward call: inputs, a backward rule, and a replayer.

    ``backward(cotangent)`` returns one cotangent array per entry of
    ``inputs`` (Tensors or Parameters).  ``replay()`` re-executes the forward
    computation and must reproduce the recorded output bit-exactly.
    """

    __slots__ = ("op", "inputs", "out_shape", "_backward", "_replay")

    def __init__(self, op, inputs, out_shape, backward, replay) -> None:
        self.op = op
        self.inputs = tuple(inputs)
        self.out_shape = tuple(out_shape)
        self._backward = backward
        self._replay = replay

    def backward(self, cotangent: np.ndarray):
        return self._backward(cotangent)

    def replay(self) -> np.ndarray:
        return self._replay()

    def __repr__(self) -> str:
        return f"TapeNode({self.op!r}, out_shape={self.out_shape})"


class Tensor:
    """Immutable dense (B, C, H, W) array of 32-bit reals."""

    __slots__ = ("data", "node")

    def __init__(self, data, node: TapeNode | None = None) -> None:
        arr = np.ascontiguousarray(data)
        if arr.ndim != 4:
            raise ShapeError(f"tensor must be rank 4 (B,C,H,W), got rank {arr.ndim}")
        for axis, n in enumerate(arr.shape):
            if n < 1:
                raise ShapeError(f"{_AXIS_NAMES[axis]} axis must be >= 1, got {n}")
        if arr.dtype != _storage["dtype"]:
            arr = arr.astype(_storage["dtype"])
        self.data = arr
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def b(self) -> int:
        return self.data.shape[0]

    @property
    def c(self) -> int:
        return self.data.shape[1]

    @property
    def h(self) -> int:
        return self.data.shape[2]

    @property
    def w(self) -> int:
        return self.data.shape[3]

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        op = self.node.op if self.node is not None else "leaf"
        return f"Tensor(shape={self.shape}, from={op})"


@dataclass
class KernelWeights:
    """Convolution weights: depthwise (C,k,k), pointwise (Co,Ci) or dense (Co,Ci,k,k)."""

    mode: str
    weight: Parameter
    bias: Parameter | None = None

    def __post_init__(self) -> None:
        w = self.weight.data
        if self.mode == "depthwise":
            if w.ndim != 3 or w.shape[1] != w.shape[2]:
                raise ShapeError(f"depthwise weight must be (C,k,k), got {w.shape}")
        elif self.mode == "pointwise":
            if w.ndim != 2:
                raise ShapeError(f"pointwise weight must be (Cout,Cin), got {w.shape}")
        elif self.mode == "dense":
            if w.ndim != 4 or w.shape[2] != w.shape[3]:
                raise ShapeError(f"dense weight must be (Cout,Cin,k,k), got {w.shape}")
        else:
            raise ShapeError(f"unknown conv mode {self.mode!r}")
        if self.k not in (1, 3):
            raise ShapeError(f"kernel extent must be 1 or 3, got {self.k}")
        if self.bias is not None and self.bias.data.shape != (self.out_channels,):
            raise ShapeError(
                f"bias must have one entry per output channel "
                f"({self.out_channels}), got {self.bias.data.shape}"
            )

    @property
    def k(self) -> int:
        if self.mode == "pointwise":
            return 1
        return self.weight.data.shape[-1]

    @property
    def in_channels(self) -> int:
        if self.mode == "depthwise":
            return self.weight.data.shape[0]
        return self.weight.data.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.data.shape[0]

    def parameters(self):
        out = [(self.weight.name, self.weight)]
        if self.bias is not None:
            out.append((self.bias.name, self.bias))
        return out


# ---------------------------------------------------------------------------
# tape plumbing


def _node(out_arr, op, inputs, backward, replay) -> Tensor:
    out = Tensor(_finalize(out_arr))
    out.node = TapeNode(op, inputs, out.shape, backward, replay)
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def vjp(node: TapeNode, cotangent) -> tuple:
    """Pull one cotangent through a single node.

    Returns one gradient array per node input (Tensor or Parameter), i.e. the
    gradients of <cotangent, output> with respect to each input.
    """
    cot = cotangent.data if isinstance(cotangent, Tensor) else np.asarray(cotangent)
    if tuple(cot.shape) != node.out_shape:
        raise ShapeError(
            f"cotangent shape {tuple(cot.shape)} does not match "
            f"node output shape {node.out_shape}"
        )
    return tuple(node.backward(cot.astype(np.float64)))


class Gradients:
    """Accumulated leaf gradients from one backward pass."""

    def __init__(self, by_id: dict) -> None:
        self._by_id = by_id

    def wrt(self, obj) -> np.ndarray:
        """Gradient for a leaf Tensor or Parameter (zeros if disconnected)."""
        hit = self._by_id.get(id(obj))
        if hit is not None:
            return hit[1]
        return np.zeros(obj.data.shape, dtype=np.float64)


def backward(output: Tensor, cotangent) -> Gradients:
    """Reverse-mode sweep from ``output`` back to all leaves it depends on."""
    cot = cotangent.data if isinstance(cotangent, Tensor) else np.asarray(cotangent)
    if tuple(cot.shape) != tuple(output.shape):
        raise ShapeError(
            f"cotangent shape {tuple(cot.shape)} does not match "
            f"output shape {tuple(output.shape)}"
        )
    if output.node is None:
        return Gradients({})

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in seen:
            continue
        seen.add(id(tensor))
        stack.append((tensor, True))
        for inp in tensor.node.inputs:
            if isinstance(inp, Tensor) and inp.node is not None:
                stack.append((inp, False))

    cots: dict[int, list] = {id(output): [output, cot.astype(np.float64)]}
    leaves: dict[int, list] = {}
    for tensor in reversed(order):
        entry = cots.get(id(tensor))
        if entry is None:
            continue
        grads = tensor.node.backward(entry[1])
        for inp, g in zip(tensor.node.inputs, grads):
            if g is None:
                continue
            if isinstance(inp, Tensor) and inp.node is not None:
                slot = cots.setdefault(id(inp), [inp, None])
            else:
                slot = leaves.setdefault(id(inp), [inp, None])
            slot[1] = g if slot[1] is None else slot[1] + g
    return Gradients(leaves)


# ---------------------------------------------------------------------------
# primitive arithmetic (numpy broadcasting semantics, rank-4 operands)


def _binary(op_name, x: Tensor, y: Tensor, fwd, bwd) -> Tensor:
    out = fwd(x.data, y.data)
    xs, ys = x.shape, y.shape

    def back(cot):
        gx, gy = bwd(cot, x.data, y.data)
        return _unbroadcast(gx, xs), _unbroadcast(gy, ys)

    return _node(out, op_name, (x, y), back, lambda: _finalize(fwd(x.data, y.data)))


def add(x: Tensor, y: Tensor) -> Tensor:
    return _binary("add", x, y, lambda a, b: a + b, lambda cot, a, b: (cot, cot))


def sub(x: Tensor, y: Tensor) -> Tensor:
    return _binary("sub", x, y, lambda a, b: a - b, lambda cot, a, b: (cot, -cot))


def mul(x: Tensor, y: Tensor) -> Tensor:
    return _binary(
        "mul", x, y, lambda a, b: a * b, lambda cot, a, b: (cot * b, cot * a)
    )


def add_const(x: Tensor, c: float) -> Tensor:
    return _node(
        x.data + c, "add_const", (x,), lambda cot: (cot,),
        lambda: _finalize(x.data + c),
    )


def mul_const(x: Tensor, c: float) -> Tensor:
    return _node(
        x.data * c, "mul_const", (x,), lambda cot: (cot * c,),
        lambda: _finalize(x.data * c),
    )


def sum_all(x: Tensor) -> Tensor:
    """Sum every entry into a (1,1,1,1) tensor (float64 accumulation)."""
    def run():
        return _finalize(x.data.sum(dtype=np.float64).reshape(1, 1, 1, 1))

    def back(cot):
        return (np.full(x.shape, float(cot.reshape(())), dtype=np.float64),)

    return _node(run(), "sum_all", (x,), back, run)


def param_tensor(p: Parameter) -> Tensor:
    """Lift a scalar or per-channel parameter into a broadcastable tensor leaf.

    Scalars map to (1,1,1,1); length-C vectors map to (1,C,1,1).
    """
    if p.data.ndim == 0 or p.data.size == 1:
        shape = (1, 1, 1, 1)
    elif p.data.ndim == 1:
        shape = (1, p.data.size, 1, 1)
    else:
        raise ShapeError(f"cannot lift parameter of shape {p.data.shape} to a tensor")

    def run():
        return _finalize(p.data.reshape(shape))

    def back(cot):
        return (cot.reshape(shape).sum(axis=(0, 2, 3)).reshape(p.data.shape)
                if p.data.ndim == 1 else
                np.asarray(cot.sum()).reshape(p.data.shape),)

    return _node(run(), "param", (p,), back, run)


# ---------------------------------------------------------------------------
# elementwise maps


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_ELEMENTWISE: dict[str, tuple[Callable, Callable]] = {
    "sigmoid": (
        _sigmoid,
        lambda x, y, cot: cot * y * (1.0 - y),
    ),
    "relu": (
        lambda x: np.maximum(x, 0.0),
        lambda x, y, cot: cot * (x > 0),
    ),
    "silu": (
        lambda x: x * _sigmoid(x),
        lambda x, y, cot: cot * (_sigmoid(x) * (1.0 + x * (1.0 - _sigmoid(x)))),
    ),
    "abs": (
        np.abs,
        lambda x, y, cot: cot * np.sign(x),
    ),
    "exp_neg": (
        lambda x: np.exp(-x),
        lambda x, y, cot: -cot * y,
    ),
}


def elementwise(x: Tensor, kind: str) -> Tensor:
    """Apply sigmoid / relu / silu / abs / exp_neg entry by entry."""
    try:
        fwd, bwd = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    y = fwd(x.data)

    def back(cot):
        return (bwd(x.data.astype(np.float64), np.asarray(y, dtype=np.float64), cot),)

    return _node(y, f"elementwise[{kind}]", (x,), back, lambda: _finalize(fwd(x.data)))


def sigmoid(x: Tensor) -> Tensor:
    return elementwise(x, "sigmoid")


def relu(x: Tensor) -> Tensor:
    return elementwise(x, "relu")


def silu(x: Tensor) -> Tensor:
    return elementwise(x, "silu")


def softplus(x: Tensor) -> Tensor:
    """log(1 + e^x), the nonnegativity reparameterization for decay rates."""
    def run():
        return _finalize(np.logaddexp(0.0, x.data))

    def back(cot):
        return (cot * _sigmoid(x.data.astype(np.float64)),)

    return _node(run(), "softplus", (x,), back, run)


# ---------------------------------------------------------------------------
# convolution, pooling, reductions, resampling


def _pad_same(x: np.ndarray, k: int) -> np.ndarray:
    p = k // 2
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _conv_raw(xd: np.ndarray, w: KernelWeights) -> np.ndarray:
    wd = w.weight.data
    if w.mode == "pointwise":
        out = np.einsum("bchw,oc->bohw", xd, wd)
    else:
        win = sliding_window_view(_pad_same(xd, w.k), (w.k, w.k), axis=(2, 3))
        if w.mode == "depthwise":
            out = np.einsum("bchwij,cij->bchw", win, wd)
        else:
            out = np.einsum("bchwij,ocij->bohw", win, wd)
    if w.bias is not None:
        out = out + w.bias.data.reshape(1, -1, 1, 1)
    return out


def conv2d(x: Tensor, w: KernelWeights) -> Tensor:
    """Zero same-padded correlation (no kernel flip), stride 1, k in {1, 3}."""
    if x.c != w.in_channels:
        raise ShapeError(
            f"conv2d: channel axis has {x.c} channels, kernel expects {w.in_channels}"
        )
    xd = x.data
    inputs: list = [x, w.weight]
    if w.bias is not None:
        inputs.append(w.bias)

    def back(cot):
        wd = w.weight.data
        if w.mode == "pointwise":
            gx = np.einsum("bohw,oc->bchw", cot, wd)
            gw = np.einsum("bohw,bchw->oc", cot, xd)
        else:
            win_x = sliding_window_view(_pad_same(xd, w.k), (w.k, w.k), axis=(2, 3))
            win_c = sliding_window_view(_pad_same(cot, w.k), (w.k, w.k), axis=(2, 3))
            if w.mode == "depthwise":
                gw = np.einsum("bchw,bchwij->cij", cot, win_x)
                gx = np.einsum("bchwij,cij->bchw", win_c, wd[:, ::-1, ::-1])
            else:
                gw = np.einsum("bohw,bchwij->ocij", cot, win_x)
                gx = np.einsum("bohwij,ocij->bchw", win_c, wd[:, :, ::-1, ::-1])
        grads = [gx, gw]
        if w.bias is not None:
            grads.append(cot.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _node(
        _conv_raw(xd, w), f"conv2d[{w.mode}]", inputs, back,
        lambda: _finalize(_conv_raw(xd, w)),
    )


def maxpool2(x: Tensor) -> Tensor:
    """2x2 block max, stride 2; a trailing odd row/column is dropped."""
    B, C, H, W = x.shape
    if H < 2 or W < 2:
        raise ShapeError(f"pool underflow: spatial dims {H}x{W} are below 2x2")
    H2, W2 = H // 2, W // 2

    def blocks():
        xc = x.data[:, :, : 2 * H2, : 2 * W2]
        return (
            xc.reshape(B, C, H2, 2, W2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(B, C, H2, W2, 4)
        )

    blk = blocks()
    idx = blk.argmax(axis=-1)  # first max in row-major block order
    out = np.take_along_axis(blk, idx[..., None], axis=-1)[..., 0]

    def back(cot):
        g = np.zeros((B, C, H2, W2, 4), dtype=np.float64)
        np.put_along_axis(g, idx[..., None], cot[..., None], axis=-1)
        g = (
            g.reshape(B, C, H2, W2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(B, C, 2 * H2, 2 * W2)
        )
        full = np.zeros((B, C, H, W), dtype=np.float64)
        full[:, :, : 2 * H2, : 2 * W2] = g
        return (full,)

    def replay():
        b = blocks()
        i = b.argmax(axis=-1)
        return _finalize(np.take_along_axis(b, i[..., None], axis=-1)[..., 0])

    return _node(out, "maxpool2", (x,), back, replay)


def reduce(x: Tensor, kind: str) -> Tensor:
    """Spatial reduction to (B,C,1,1): global mean or population std."""
    B, C, H, W = x.shape
    n = H * W
    if kind == "global_avg":
        def run():
            return _finalize(x.data.mean(axis=(2, 3), keepdims=True, dtype=np.float64))

        def back(cot):
            return (np.broadcast_to(cot / n, (B, C, H, W)).astype(np.float64),)

        return _node(run(), "reduce[global_avg]", (x,), back, run)

    if kind == "channel_std":
        xd64 = x.data.astype(np.float64)
        m = xd64.mean(axis=(2, 3), keepdims=True)
        var = np.square(xd64 - m).mean(axis=(2, 3), keepdims=True)
        std = np.sqrt(var)

        def back(cot):
            safe = np.where(std > 0, std, 1.0)
            g = (xd64 - m) / (n * safe) * cot
            return (np.where(std > 0, g, 0.0),)

        def replay():
            m2 = x.data.astype(np.float64).mean(axis=(2, 3), keepdims=True)
            v2 = np.square(x.data.astype(np.float64) - m2).mean(
                axis=(2, 3), keepdims=True
            )
            return _finalize(np.sqrt(v2))

        return _node(std, "reduce[channel_std]", (x,), back, replay)

    raise ValueError(f"unknown reduce kind {kind!r}")


def upsample_nearest(x: Tensor, target_h: int, target_w: int) -> Tensor:
    """Nearest-neighbor resize to a target at least as large as the source."""
    B, C, H, W = x.shape
    if target_h < H or target_w < W:
        raise ShapeError(
            f"upsample target {target_h}x{target_w} smaller than source {H}x{W}"
        )
    rows = (np.arange(target_h) * H) // target_h
    cols = (np.arange(target_w) * W) // target_w

    def run():
        return _finalize(x.data[:, :, rows][:, :, :, cols])

    def back(cot):
        part = np.zeros((B, C, H, target_w), dtype=np.float64)
        np.add.at(part, (slice(None), slice(None), rows), cot)
        g = np.zeros((B, C, H, W), dtype=np.float64)
        np.add.at(g, (slice(None), slice(None), slice(None), cols), part)
        return (g,)

    return _node(run(), "upsample_nearest", (x,), back, run)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Channel-range view [start, stop) as a fresh tensor."""
    if not (0 <= start < stop <= x.c):
        raise ShapeError(f"channel slice [{start}:{stop}) out of range for C={x.c}")

    def run():
        return _finalize(x.data[:, start:stop])

    def back(cot):
        g = np.zeros(x.shape, dtype=np.float64)
        g[:, start:stop] = cot
        return (g,)

    return _node(run(), "slice_channels", (x,), back, run)


def channel_norm(
    x: Tensor, gain: Parameter, bias: Parameter, eps: float = 1e-5
) -> Tensor:
    """Per-position normalization over the channel axis, then gain/bias.

    With a single channel the standardization is degenerate and the map
    reduces to the plain affine gain*x + bias.
    """
    B, C, H, W = x.shape
    if gain.data.shape != (C,) or bias.data.shape != (C,):
        raise ShapeError(f"gain/bias must be length-{C} vectors")
    g = gain.data.reshape(1, C, 1, 1)
    b = bias.data.reshape(1, C, 1, 1)
    xd64 = x.data.astype(np.float64)

    if C == 1:
        def run():
            return _finalize(g * x.data + b)

        def back(cot):
            return (
                cot * g,
                np.asarray(cot * xd64).sum(axis=(0, 2, 3)),
                cot.sum(axis=(0, 2, 3)),
            )

        return _node(run(), "channel_norm", (x, gain, bias), back, run)

    m = xd64.mean(axis=1, keepdims=True)
    var = np.square(xd64 - m).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd64 - m) * inv

    def run():
        return _finalize(g * xhat + b)

    def back(cot):
        gxh = cot * g
        gx = inv * (
            gxh
            - gxh.mean(axis=1, keepdims=True)
            - xhat * (gxh * xhat).mean(axis=1, keepdims=True)
        )
        return (gx, (cot * xhat).sum(axis=(0, 2, 3)), cot.sum(axis=(0, 2, 3)))

    return _node(run(), "channel_norm", (x, gain, bias), back, run)


def softmax_pick(logits: Parameter, index: int) -> Tensor:
    """One softmax weight of a small logit vector, as a (1,1,1,1) tensor."""
    n = logits.data.size
    if not 0 <= index < n:
        raise ShapeError(f"softmax index {index} out of range for {n} logits")

    def weights():
        z = logits.data - logits.data.max()
        e = np.exp(z)
        return e / e.sum()

    def run():
        return _finalize(weights()[index].reshape(1, 1, 1, 1))

    def back(cot):
        w = weights()
        s = float(np.asarray(cot).sum())
        grad = -w[index] * w
        grad[index] += w[index]
        return (s * grad,)

    return _node(run(), "softmax_pick", (logits,), back, run)
