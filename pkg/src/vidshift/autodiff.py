"""Dense tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps a numpy float array. A :class:`Tape` records
every primitive applied to tracked tensors, in execution order, together
with a backward rule. :func:`backward` replays the tape once in reverse
and accumulates gradients by summation, so results are deterministic and
bit-identical across repeated calls.

Feature maps follow a frame/batch x channel x height x width layout;
the channel axis is always ``-3``. Ops accept 3-D (C, H, W) or 4-D
(N, C, H, W) arrays unless stated otherwise.

Tensors are immutable after construction apart from two exceptions that
keep the engine small: the ``grad`` buffer written by backward, and leaf
data buffers that an optimizer updates in place between tapes.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgument

CHANNEL_AXIS = -3


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return np.ascontiguousarray(arr, dtype=dtype)
    if arr.dtype in (np.float32, np.float64):
        return np.ascontiguousarray(arr)
    return np.ascontiguousarray(arr, dtype=np.float32)


class Tensor:
    """N-dimensional float array, optionally tracked on a tape."""

    __slots__ = ("data", "tape", "node", "grad")

    def __init__(self, data, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.tape: Tape | None = None
        self.node: int | None = None
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def detach(self) -> "Tensor":
        """Return an untracked view of the same data."""
        return Tensor(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise InvalidArgument(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        tracked = "" if self.tape is None else f", node={self.node}"
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tracked})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


class Tape:
    """Ordered record of primitive applications.

    Steps are appended in forward execution order, so every input of a
    step was produced earlier or is a watched leaf; the reverse sweep in
    :func:`backward` is therefore already topologically sorted.
    """

    def __init__(self):
        self._steps: list[tuple[int, tuple, object]] = []
        self._n_nodes = 0
        self._leaves: list[Tensor] = []
        self._grads: list[np.ndarray | None] | None = None

    def _new_node(self) -> int:
        nid = self._n_nodes
        self._n_nodes += 1
        return nid

    def watch(self, tensor: Tensor) -> Tensor:
        """Register ``tensor`` as a differentiable leaf of this tape."""
        tensor.tape = self
        tensor.node = self._new_node()
        tensor.grad = None
        self._leaves.append(tensor)
        return tensor

    def record(self, out_data: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
        """Create the output tensor of a primitive and record its step.

        ``backward_fn`` maps the output gradient to a sequence of input
        gradients aligned with ``inputs`` (``None`` for untracked slots).
        """
        out = Tensor(out_data)
        out.tape = self
        out.node = self._new_node()
        node_ids = tuple(t.node if t.tape is self else None for t in inputs)
        self._steps.append((out.node, node_ids, backward_fn))
        return out

    def grad_of(self, tensor: Tensor) -> np.ndarray | None:
        """Gradient computed by the last backward pass, by node."""
        if self._grads is None or tensor.tape is not self or tensor.node is None:
            return None
        return self._grads[tensor.node]

    @property
    def n_steps(self) -> int:
        return len(self._steps)

    def release(self) -> None:
        """Detach all watched leaves so future ops are untracked."""
        for leaf in self._leaves:
            leaf.tape = None
            leaf.node = None


def apply_op(out_data: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    """Route a primitive's output through the tape of its inputs, if any.

    All tracked inputs must share one tape; mixing tapes is an error.
    """
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise InvalidArgument("inputs belong to different tapes")
    if tape is None:
        return Tensor(out_data)
    return tape.record(out_data, inputs, backward_fn)


def backward(tape: Tape, output: Tensor) -> None:
    """Reverse sweep from a scalar output; populates leaf ``grad`` fields.

    Gradients accumulate by summation in fixed reverse step order, and a
    leaf that the output does not reach receives an all-zero gradient.
    Repeated calls on the same tape overwrite and reproduce the same
    values bit for bit.
    """
    if output.tape is not tape or output.node is None:
        raise InvalidArgument("output was not produced on this tape")
    if output.data.size != 1:
        raise InvalidArgument(f"backward root must be scalar, got shape {output.shape}")
    grads: list[np.ndarray | None] = [None] * tape._n_nodes
    grads[output.node] = np.ones_like(output.data)
    for out_id, in_ids, backward_fn in reversed(tape._steps):
        g = grads[out_id]
        if g is None:
            continue
        in_grads = backward_fn(g)
        for nid, ig in zip(in_ids, in_grads):
            if nid is None or ig is None:
                continue
            if grads[nid] is None:
                grads[nid] = ig
            else:
                grads[nid] = grads[nid] + ig
    tape._grads = grads
    for leaf in tape._leaves:
        g = grads[leaf.node]
        leaf.grad = np.zeros_like(leaf.data) if g is None else g


# ---------------------------------------------------------------------------
# elementwise and structural primitives


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise InvalidArgument(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return apply_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return apply_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return apply_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, s: float) -> Tensor:
    return apply_op(a.data * s, (a,), lambda g: (g * s,))


def absolute(a: Tensor) -> Tensor:
    """Elementwise |x|; subgradient 0 at exactly 0."""
    ad = a.data
    return apply_op(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def relu(a: Tensor) -> Tensor:
    ad = a.data
    return apply_op(np.maximum(ad, 0.0), (a,), lambda g: (g * (ad > 0),))


def sum_all(a: Tensor) -> Tensor:
    shape, dtype = a.shape, a.data.dtype
    out = np.asarray(a.data.sum(), dtype=dtype)
    return apply_op(out, (a,), lambda g: (np.broadcast_to(g, shape).astype(dtype, copy=False),))


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    shape, dtype = a.shape, a.data.dtype
    out = np.asarray(a.data.mean(), dtype=dtype)
    return apply_op(out, (a,), lambda g: ((np.broadcast_to(g, shape) / n).astype(dtype, copy=False),))


def concat_channels(tensors: list[Tensor]) -> Tensor:
    """Concatenate along the channel axis."""
    if not tensors:
        raise InvalidArgument("concat_channels: empty input list")
    sizes = [t.shape[CHANNEL_AXIS] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=CHANNEL_AXIS))

    out = np.concatenate([t.data for t in tensors], axis=CHANNEL_AXIS)
    return apply_op(out, tuple(tensors), bwd)


def split_channels(t: Tensor, parts: int) -> list[Tensor]:
    """Split into ``parts`` equal channel slices."""
    c = t.shape[CHANNEL_AXIS]
    if parts < 1 or c % parts != 0:
        raise InvalidArgument(f"split_channels: {c} channels not divisible into {parts} parts")
    width = c // parts
    outs = []
    for i in range(parts):
        lo = i * width

        def bwd(g, lo=lo):
            full = np.zeros_like(t.data)
            sl = [slice(None)] * t.data.ndim
            sl[CHANNEL_AXIS] = slice(lo, lo + width)
            full[tuple(sl)] = g
            return (full,)

        sl = [slice(None)] * t.data.ndim
        sl[CHANNEL_AXIS] = slice(lo, lo + width)
        outs.append(apply_op(np.ascontiguousarray(t.data[tuple(sl)]), (t,), bwd))
    return outs


def take_channels(t: Tensor, lo: int, hi: int) -> Tensor:
    """Channel slice [lo, hi); gradient embeds back at the same offset."""
    c = t.shape[CHANNEL_AXIS]
    if not (0 <= lo < hi <= c):
        raise InvalidArgument(f"take_channels: range [{lo}, {hi}) out of {c} channels")

    def bwd(g):
        full = np.zeros_like(t.data)
        sl = [slice(None)] * t.data.ndim
        sl[CHANNEL_AXIS] = slice(lo, hi)
        full[tuple(sl)] = g
        return (full,)

    sl = [slice(None)] * t.data.ndim
    sl[CHANNEL_AXIS] = slice(lo, hi)
    return apply_op(np.ascontiguousarray(t.data[tuple(sl)]), (t,), bwd)


def zeros_like(t: Tensor) -> Tensor:
    return Tensor(np.zeros_like(t.data))
