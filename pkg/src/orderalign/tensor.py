"""Dense float64 tensors, a kernel tape, and the differentiable kernels.

Every kernel takes an optional ``tape``. When one is given the kernel
records a backward closure on it; ``backward`` later replays the tape in
reverse, accumulating ``grad`` on every tensor that took part.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NORM_EPS = 1e-8


class ShapeError(ValueError):
    """Raised when kernel operands have incompatible shapes."""


class Tensor:
    """A dense float64 array with a same-shape gradient buffer."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if 0 in arr.shape:
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        self.data = arr
        self.grad = np.zeros_like(arr)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"


def _wrap(arr: np.ndarray) -> Tensor:
    # Avoids the copy in Tensor.__init__ for freshly computed arrays.
    t = Tensor.__new__(Tensor)
    t.data = np.ascontiguousarray(arr, dtype=np.float64)
    t.grad = np.zeros_like(t.data)
    t.name = None
    return t


@dataclass
class TapeEntry:
    kernel: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], None]


@dataclass
class KernelTape:
    """Ordered record of executed kernels."""

    entries: list[TapeEntry] = field(default_factory=list)
    consumed: bool = False

    def record(self, kernel: str, inputs: Sequence[Tensor], output: Tensor,
               backward: Callable[[np.ndarray], None]) -> None:
        if self.consumed:
            raise RuntimeError("cannot record on a tape that has already been replayed")
        self.entries.append(TapeEntry(kernel, tuple(inputs), output, backward))

    def __len__(self) -> int:
        return len(self.entries)


def backward(tape: KernelTape, loss: Tensor) -> None:
    """Replay ``tape`` in reverse, seeding d(loss)/d(loss) = 1.

    Gradients accumulate into ``grad``; callers zero parameter grads
    between steps.
    """
    if tape.consumed:
        raise RuntimeError("tape already consumed by a previous backward pass")
    if loss.size != 1:
        raise ShapeError(f"loss must have a single element, got shape {loss.shape}")
    tape.consumed = True
    loss.grad += 1.0
    for entry in reversed(tape.entries):
        entry.backward(entry.output.grad)


def conv1d_padded(x: Tensor, weights: Tensor, bias: Tensor,
                  tape: KernelTape | None = None) -> Tensor:
    """Same-length 1-D convolution over time.

    ``x`` is [t, c_in], ``weights`` is [c_out, c_in, l] with odd ``l``,
    ``bias`` is [c_out]. The input is zero-padded by (l - 1) / 2 on both
    sides, so output position ``i`` sees input rows i - (l-1)/2 .. i + (l-1)/2.
    No activation is applied.
    """
    if x.data.ndim != 2 or weights.data.ndim != 3:
        raise ShapeError(f"conv1d_padded expects input [t, c_in] and weights [c_out, c_in, l], "
                         f"got {x.shape} and {weights.shape}")
    t, c_in = x.shape
    c_out, w_in, length = weights.shape
    if w_in != c_in:
        raise ShapeError(f"input channels mismatch: input {x.shape} vs weights {weights.shape}")
    if length % 2 == 0:
        raise ShapeError(f"filter length must be odd, got {length}")
    if bias.shape != (c_out,):
        raise ShapeError(f"bias {bias.shape} does not match weights {weights.shape}")

    pad = (length - 1) // 2
    padded = np.zeros((t + 2 * pad, c_in))
    padded[pad:pad + t] = x.data
    # cols[x, m, p] = padded[x + p, m]
    cols = sliding_window_view(padded, length, axis=0).reshape(t, c_in * length)
    w_flat = weights.data.reshape(c_out, c_in * length)
    out = _wrap(cols @ w_flat.T + bias.data)

    if tape is not None:
        def _backward(g: np.ndarray) -> None:
            weights.grad += (g.T @ cols).reshape(c_out, c_in, length)
            bias.grad += g.sum(axis=0)
            dcols = (g @ w_flat).reshape(t, c_in, length)
            dpad = np.zeros_like(padded)
            for p in range(length):
                dpad[p:p + t] += dcols[:, :, p]
            x.grad += dpad[pad:pad + t]

        tape.record("conv1d_padded", (x, weights, bias), out, _backward)
    return out


def maxout2(a: Tensor, b: Tensor, tape: KernelTape | None = None) -> Tensor:
    """Elementwise max of two branches; ties go to ``a``."""
    if a.shape != b.shape:
        raise ShapeError(f"maxout2 branch shapes differ: {a.shape} vs {b.shape}")
    take_a = a.data >= b.data
    out = _wrap(np.where(take_a, a.data, b.data))

    if tape is not None:
        def _backward(g: np.ndarray) -> None:
            a.grad += np.where(take_a, g, 0.0)
            b.grad += np.where(take_a, 0.0, g)

        tape.record("maxout2", (a, b), out, _backward)
    return out


def maxpool_over_time(x: Tensor, tape: KernelTape | None = None) -> Tensor:
    """Column-wise max over the time axis of a [t, f] map.

    The gradient of each column goes to its first maximal row.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"maxpool_over_time expects [t, f], got {x.shape}")
    # np.argmax returns the first occurrence of the maximum
    idx = np.argmax(x.data, axis=0)
    cols = np.arange(x.shape[1])
    out = _wrap(x.data[idx, cols])

    if tape is not None:
        def _backward(g: np.ndarray) -> None:
            x.grad[idx, cols] += g

        tape.record("maxpool_over_time", (x,), out, _backward)
    return out


def linear(x: Tensor, weight: Tensor, tape: KernelTape | None = None) -> Tensor:
    """Bias-free linear map ``W @ x``.

    ``x`` may be a vector [n] or a row batch [B, n]; the result is [d] or [B, d].
    """
    if weight.data.ndim != 2 or x.data.ndim not in (1, 2) or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: cannot apply weight {weight.shape} to input {x.shape}")
    out = _wrap(x.data @ weight.data.T)

    if tape is not None:
        def _backward(g: np.ndarray) -> None:
            if x.data.ndim == 1:
                weight.grad += np.outer(g, x.data)
            else:
                weight.grad += g.T @ x.data
            x.grad += g @ weight.data

        tape.record("linear", (x, weight), out, _backward)
    return out


def abs_elementwise(x: Tensor, tape: KernelTape | None = None) -> Tensor:
    """Elementwise |x|; subgradient 0 at exactly 0."""
    out = _wrap(np.abs(x.data))

    if tape is not None:
        sign = np.sign(x.data)

        def _backward(g: np.ndarray) -> None:
            x.grad += sign * g

        tape.record("abs_elementwise", (x,), out, _backward)
    return out


def unit_normalize(x: Tensor, tape: KernelTape | None = None, eps: float = NORM_EPS) -> Tensor:
    """Scale a vector (or each row of a [B, d] batch) to unit Euclidean norm."""
    if x.data.ndim not in (1, 2):
        raise ShapeError(f"unit_normalize expects [d] or [B, d], got {x.shape}")
    norms = np.linalg.norm(x.data, axis=-1, keepdims=True)
    if np.any(norms <= eps):
        bad = np.flatnonzero(norms.reshape(-1) <= eps).tolist()
        raise FloatingPointError(f"cannot normalize: norm <= {eps:g} (rows {bad})")
    y = x.data / norms
    out = _wrap(y)

    if tape is not None:
        def _backward(g: np.ndarray) -> None:
            # d(x/|x|) = (g - y <y, g>) / |x|
            proj = np.sum(y * g, axis=-1, keepdims=True)
            x.grad += (g - y * proj) / norms

        tape.record("unit_normalize", (x,), out, _backward)
    return out


def stack(rows: Sequence[Tensor], tape: KernelTape | None = None) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    if not rows:
        raise ShapeError("stack needs at least one tensor")
    shape = rows[0].shape
    for r in rows:
        if r.shape != shape:
            raise ShapeError(f"stack: shape {r.shape} differs from {shape}")
    out = _wrap(np.stack([r.data for r in rows]))

    if tape is not None:
        def _backward(g: np.ndarray) -> None:
            for i, r in enumerate(rows):
                r.grad += g[i]

        tape.record("stack", tuple(rows), out, _backward)
    return out


def total(x: Tensor, tape: KernelTape | None = None) -> Tensor:
    """Sum of all elements, as a one-element tensor."""
    out = _wrap(np.array([x.data.sum()]))

    if tape is not None:
        def _backward(g: np.ndarray) -> None:
            x.grad += g[0]

        tape.record("total", (x,), out, _backward)
    return out
