"""Minimal reverse-mode differentiation over dense numpy arrays.

Operations are recorded on the active :class:`Tape` whenever at least one
input requires a gradient.  Outside a tape every op is a plain forward
computation, which is how inference and "constant target" passes run.

Tensors are laid out as ``(batch, channels, frames)`` for the convolution
stack; the reduction and elementwise ops accept any shape.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NonFiniteError, ShapeError

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "axialvc_active_tape", default=None
)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: "_Node | None" = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def tape_id(self) -> int | None:
        return None if self.node is None else self.node.index

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, c: float) -> "Tensor":
        return scale(self, c)

    __rmul__ = __mul__


@dataclass
class _Node:
    index: int
    kind: str
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    kink: np.ndarray | None = None
    tape: "Tape | None" = None


class Tape:
    """Ordered record of differentiable ops.

    Used as a context manager; nodes are appended in execution order, so the
    recording order is already a topological order of the graph.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def kink_signature(self) -> np.ndarray:
        """Concatenated sign patterns of every non-smooth op on the tape.

        Two forward passes with equal signatures did not cross a kink, which is
        what the finite-difference harness uses to exclude non-smooth points.
        """
        parts = [n.kink.ravel() for n in self.nodes if n.kink is not None]
        if not parts:
            return np.zeros(0, dtype=np.int8)
        return np.concatenate(parts)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.node is None or loss.node.tape is not self:
            raise ValueError("loss was not produced on this tape (detached tensor)")
        grads: dict[int, np.ndarray] = {loss.node.index: np.ones_like(loss.data)}
        for node in reversed(self.nodes[: loss.node.index + 1]):
            g = grads.pop(node.index, None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.node is not None:
                    if inp.node.tape is not self:
                        continue  # produced on an earlier, consumed tape: a constant here
                    prev = grads.get(inp.node.index)
                    grads[inp.node.index] = gi if prev is None else prev + gi
                else:
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
        for node in self.nodes:
            node.inputs = ()
            node.tape = None
        self.nodes.clear()


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


class no_grad:
    """Suspend recording: ops inside run as plain forward computations."""

    def __enter__(self):
        self._token = _ACTIVE_TAPE.set(None)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)


def backward(loss: Tensor) -> None:
    """Backpropagate ``loss`` through the active tape, then consume the tape."""
    tape = active_tape()
    if tape is None:
        raise ValueError("no active tape; run the forward pass inside `with Tape():`")
    tape.backward(loss)


def _check_finite(kind: str, arr: np.ndarray) -> None:
    # a NaN or Inf anywhere propagates into the sum
    if not np.isfinite(np.add.reduce(arr, axis=None)) and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value produced by {kind}")


def _make(kind, data, inputs, backward_fn, kink=None) -> Tensor:
    _check_finite(kind, data)
    out = Tensor(data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = _Node(len(tape.nodes), kind, tuple(inputs), backward_fn, kink, tape)
        tape.nodes.append(out.node)
    return out


def _same_shape(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _make("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def scale(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    return _make("scale", x.data * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make("relu", np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,),
                 lambda g: (g * mask,), kink=mask)


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in [0, 1), got {slope}")
    pos = x.data > 0
    s = x.dtype.type(slope)
    factor = np.where(pos, x.dtype.type(1), s)
    return _make("leaky_relu", x.data * factor, (x,), lambda g: (g * factor,), kink=pos)


def gaussian_noise(x: Tensor, std: float, seed: int) -> Tensor:
    """``x + eps`` with ``eps ~ N(0, std^2)`` drawn from ``seed``; eps is a constant."""
    if std < 0:
        raise ValueError("noise std must be nonnegative")
    if std == 0:
        return _make("noise", x.data.copy(), (x,), lambda g: (g,))
    eps = np.random.default_rng(seed).standard_normal(x.shape).astype(x.dtype, copy=False)
    return _make("noise", x.data + eps * x.dtype.type(std), (x,), lambda g: (g,))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def take(x: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice ``[start:stop]`` along ``axis``."""
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def bwd(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _make("take", x.data[index].copy(), (x,), bwd)


def repeat_channels(k: Tensor, times: int) -> Tensor:
    """Repeat each row of a ``(rows, ...)`` tensor ``times`` times along axis 0."""
    if times < 1:
        raise ValueError("times must be positive")
    out = np.repeat(k.data, times, axis=0)

    def bwd(g):
        return (g.reshape((k.shape[0], times) + k.shape[1:]).sum(axis=1),)

    return _make("repeat_channels", out, (k,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along the channel axis (axis 1 for ``(B, C, T)`` tensors)."""
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make("concat", out, tuple(tensors), bwd)


# ----------------------------------------------------------------- reductions


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _make("sum", np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                 lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return _make("mean", np.asarray(x.data.mean(), dtype=x.dtype), (x,),
                 lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference; subgradient 0 where ``a == b``."""
    _same_shape("l1_loss", a, b)
    diff = a.data - b.data
    n = diff.size
    sign = np.sign(diff)
    out = np.asarray(np.abs(diff).mean(), dtype=a.dtype)

    def bwd(g):
        ga = sign * (g / n)
        return ga, -ga

    return _make("l1", out, (a, b), bwd, kink=sign.astype(np.int8))


def bce_with_logits(logits: Tensor, target_is_real: bool) -> Tensor:
    """Mean binary cross entropy on logits against a constant 1 (real) or 0 (fake) target."""
    z = logits.data
    # real: softplus(-z); fake: softplus(z)
    s = -z if target_is_real else z
    vals = np.maximum(s, 0) + np.log1p(np.exp(-np.abs(s)))
    n = z.size
    out = np.asarray(vals.mean(), dtype=z.dtype)

    def bwd(g):
        sig = 0.5 * (1.0 + np.tanh(0.5 * s))  # sigmoid(s), overflow-free
        dz = -sig if target_is_real else sig
        return ((g / n) * dz,)

    return _make("bce", out, (logits,), bwd)


# ---------------------------------------------------------------- convolution


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    groups: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"channels ({self.in_channels}, {self.out_channels}) not divisible by groups {self.groups}"
            )
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ShapeError("kernel and stride must be positive, padding nonnegative")

    @classmethod
    def same(cls, in_channels: int, out_channels: int, kernel: int, groups: int = 1) -> "ConvSpec":
        if kernel % 2 == 0:
            raise ShapeError(f"shape-preserving conv needs an odd kernel, got {kernel}")
        return cls(in_channels, out_channels, kernel, 1, groups, kernel // 2)

    @property
    def weight_shape(self) -> tuple[int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, self.kernel)

    def out_frames(self, frames: int) -> int:
        span = frames + 2 * self.padding - self.kernel
        if span < 0:
            raise ShapeError(f"input of {frames} frames is shorter than kernel {self.kernel}")
        if span % self.stride:
            raise ShapeError(f"stride {self.stride} does not divide {span} evenly")
        return 1 + span // self.stride


def _pad_time(x: np.ndarray, p: int) -> np.ndarray:
    if not p:
        return x
    out = np.zeros(x.shape[:2] + (x.shape[2] + 2 * p,), dtype=x.dtype)
    out[:, :, p:-p] = x
    return out


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """Grouped 1D cross-correlation with symmetric zero padding.

    ``x`` is ``(B, C_in, T)``; ``weight`` is ``(C_out, C_in/groups, k)``.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"conv1d input must be (batch, channels, frames), got {x.shape}")
    B, cin, T = x.shape
    if cin != spec.in_channels:
        raise ShapeError(f"conv1d expected {spec.in_channels} input channels, got {cin}")
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"conv1d weight shape {weight.shape} != {spec.weight_shape}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeError(f"conv1d bias shape {bias.shape} != ({spec.out_channels},)")
    tout = spec.out_frames(T)
    k, s, p, G = spec.kernel, spec.stride, spec.padding, spec.groups
    cout = spec.out_channels
    w = weight.data
    xp = _pad_time(x.data, p)
    stop = s * (tout - 1) + 1
    pointwise = G == 1 and k == 1 and s == 1
    depthwise = G == cin == cout

    if pointwise:
        wmat = w[:, :, 0]
        cols = xp
        out = wmat @ xp
    elif G == 1:
        # (B, Cin*k, Tout) with row index c*k + j
        win = sliding_window_view(xp, k, axis=2)[:, :, ::s, :]
        cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(B, cin * k, tout)
        wmat = w.reshape(cout, cin * k)
        out = wmat @ cols
    elif depthwise:
        out = w[None, :, 0, 0, None] * xp[:, :, 0:stop:s]
        for j in range(1, k):
            out += w[None, :, 0, j, None] * xp[:, :, j : j + stop : s]
    else:
        cg, og = cin // G, cout // G
        win = sliding_window_view(xp, k, axis=2)[:, :, ::s, :].reshape(B, G, cg, tout, k)
        out = np.einsum("bgctk,gock->bgot", win, w.reshape(G, og, cg, k), optimize=True)
        out = out.reshape(B, cout, tout)
    if bias is not None:
        out += bias.data[None, :, None]

    def bwd(g):
        gx = gw = gb = None
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        if G == 1:
            if weight.requires_grad:
                gw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
            if x.requires_grad:
                dcols = wmat.T @ g
                if pointwise:
                    gx = dcols
                else:
                    dcols = dcols.reshape(B, cin, k, tout)
                    dxp = np.zeros_like(xp)
                    for j in range(k):
                        dxp[:, :, j : j + stop : s] += dcols[:, :, j]
                    gx = dxp[:, :, p : p + T] if p else dxp
            return (gx, gw) if bias is None else (gx, gw, gb)
        dxp = np.zeros_like(xp) if x.requires_grad else None
        if depthwise:
            if weight.requires_grad:
                gw = np.empty_like(w)
                for j in range(k):
                    gw[:, 0, j] = np.einsum("bct,bct->c", g, xp[:, :, j : j + stop : s])
            if dxp is not None:
                for j in range(k):
                    dxp[:, :, j : j + stop : s] += w[None, :, 0, j, None] * g
        else:
            gg = g.reshape(B, G, og, tout)
            wg = w.reshape(G, og, cg, k)
            if weight.requires_grad:
                gw = np.einsum("bgot,bgctk->gock", gg, win, optimize=True).reshape(w.shape)
            if dxp is not None:
                dwin = np.einsum("bgot,gock->bgctk", gg, wg, optimize=True).reshape(B, cin, tout, k)
                for j in range(k):
                    dxp[:, :, j : j + stop : s] += dwin[:, :, :, j]
        if dxp is not None:
            gx = dxp[:, :, p : p + T] if p else dxp
        return (gx, gw) if bias is None else (gx, gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _make("conv1d", out, inputs, bwd)
