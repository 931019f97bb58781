"""Spatial and temporal feature shifting and the shift-fusion block.

A shift block splits each frame's channels into a kept half and a
propagated half, hands the propagated half to a neighboring frame
(forward or backward in time), spreads it over a set of spatial
displacement groups, and fuses everything with two lightweight
convolution blocks. Stacking blocks of alternating direction gives
bi-directional propagation with a temporal radius equal to the number
of blocks per direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, apply_op, concat_channels, split_channels, zeros_like
from .errors import InvalidArgument
from .ops import channel_attention, channel_scale, conv2d, layer_norm, pointwise_conv, simple_gate

FORWARD = "forward"
BACKWARD = "backward"
BIDIRECTIONAL = "bidirectional"


@dataclass(frozen=True)
class ShiftSpec:
    """Displacement set and granularity of the grouped spatial shift.

    ``displacements`` is the sorted, zero-symmetric value set D; group m
    of the propagated channels is assigned displacement (dy, dx) row-major
    over D x D, and that assignment is part of the serialized model
    format. Legal nonzero magnitudes are k*(base_length-1)+1 for integer
    k >= 1. With ``pre_shift_reduction`` each group moves by |d|-1 pixels
    and a following depthwise 3x3 covers the remaining pixel, smoothing
    the seams between adjacent displacement groups.
    """

    displacements: tuple[int, ...]
    base_length: int
    pre_shift_reduction: bool = True

    def __post_init__(self):
        d = tuple(self.displacements)
        object.__setattr__(self, "displacements", d)
        if self.base_length < 1:
            raise InvalidArgument(f"base_length must be >= 1, got {self.base_length}")
        if list(d) != sorted(d):
            raise InvalidArgument(f"displacements must be sorted, got {d}")
        if 0 not in d:
            raise InvalidArgument(f"displacements must contain 0, got {d}")
        if tuple(sorted(-v for v in d)) != d:
            raise InvalidArgument(f"displacements must be symmetric about 0, got {d}")
        for v in d:
            if v == 0:
                continue
            step = self.base_length - 1
            if step == 0:
                if abs(v) != 1:
                    raise InvalidArgument(
                        f"displacement {v} illegal for base_length 1 (only |d|=1 allowed)"
                    )
            elif (abs(v) - 1) % step != 0 or (abs(v) - 1) // step < 1:
                raise InvalidArgument(
                    f"displacement {v} is not k*(s-1)+1 for integer k>=1 with s={self.base_length}"
                )

    @property
    def group_count(self) -> int:
        """Number of displacement groups M = |D|^2."""
        return len(self.displacements) ** 2

    def group_displacements(self) -> list[tuple[int, int]]:
        """(dy, dx) per group, row-major over D x D."""
        return [(dy, dx) for dy in self.displacements for dx in self.displacements]

    def group_offsets(self) -> list[tuple[int, int]]:
        """Pixel offsets actually applied per group."""

        def reduce(v: int) -> int:
            if not self.pre_shift_reduction or v == 0:
                return v
            return (abs(v) - 1) * (1 if v > 0 else -1)

        return [(reduce(dy), reduce(dx)) for dy, dx in self.group_displacements()]


# ---------------------------------------------------------------------------
# shift primitives


def _shift_into(out: np.ndarray, src: np.ndarray, dy: int, dx: int) -> None:
    h, w = src.shape[-2], src.shape[-1]
    ys, ye = max(dy, 0), h + min(dy, 0)
    xs, xe = max(dx, 0), w + min(dx, 0)
    if ys >= ye or xs >= xe:
        return
    out[..., ys:ye, xs:xe] = src[..., ys - dy : ye - dy, xs - dx : xe - dx]


def spatial_shift(x: Tensor, dx: int, dy: int) -> Tensor:
    """Translate content by (+dx, +dy) pixels, filling vacated cells with 0.

    out(c, y, x) = in(c, y - dy, x - dx) where defined.
    """
    h, w = x.shape[-2], x.shape[-1]
    if abs(dx) >= w or abs(dy) >= h:
        raise InvalidArgument(f"shift ({dx}, {dy}) out of range for extent {h}x{w}")

    out = np.zeros_like(x.data)
    _shift_into(out, x.data, dy, dx)

    def bwd(g):
        gx = np.zeros_like(g)
        _shift_into(gx, g, -dy, -dx)
        return (gx,)

    return apply_op(out, (x,), bwd)


def grouped_shift(x: Tensor, offsets: list[tuple[int, int]]) -> Tensor:
    """Shift equal channel slices by per-slice (dy, dx) offsets."""
    c = x.shape[-3]
    m = len(offsets)
    if m < 1 or c % m:
        raise InvalidArgument(f"grouped_shift: {c} channels not divisible by {m} groups")
    h, w = x.shape[-2], x.shape[-1]
    for dy, dx in offsets:
        if abs(dx) >= w or abs(dy) >= h:
            raise InvalidArgument(f"shift ({dx}, {dy}) out of range for extent {h}x{w}")
    cs = c // m

    def run(src, offs):
        out = np.zeros_like(src)
        for i, (dy, dx) in enumerate(offs):
            sl = (Ellipsis, slice(i * cs, (i + 1) * cs), slice(None), slice(None))
            _shift_into(out[sl], src[sl], dy, dx)
        return out

    inverse = [(-dy, -dx) for dy, dx in offsets]
    return apply_op(run(x.data, offsets), (x,), lambda g: (run(g, inverse),))


@dataclass
class DwConv:
    """Depthwise convolution, optionally trained with extra parallel branches.

    The branches (a per-channel 1x1 and a per-channel identity gain) fold
    into the base kernel exactly; see ``merged_kernel``.
    """

    kernel: Tensor  # (C, 1, k, k), k odd
    rep_point: Tensor | None = None  # (C, 1, 1, 1)
    rep_gain: Tensor | None = None  # (C,)

    @property
    def k(self) -> int:
        return self.kernel.shape[-1]

    def apply(self, x: Tensor) -> Tensor:
        c = self.kernel.shape[0]
        y = conv2d(x, self.kernel, groups=c, padding=(self.k - 1) // 2)
        if self.rep_point is not None:
            y = add(y, conv2d(x, self.rep_point, groups=c, padding=0))
        if self.rep_gain is not None:
            y = add(y, channel_scale(x, self.rep_gain))
        return y

    def merged_kernel(self) -> np.ndarray:
        merged = self.kernel.data.copy()
        mid = (self.k - 1) // 2
        if self.rep_point is not None:
            merged[:, 0, mid, mid] += self.rep_point.data[:, 0, 0, 0]
        if self.rep_gain is not None:
            merged[:, 0, mid, mid] += self.rep_gain.data
        return merged


def grouped_spatial_shift(propagated: Tensor, spec: ShiftSpec, smoothing: Tensor | DwConv) -> Tensor:
    """Shift channel groups along their displacements, then smooth.

    The propagated channels split into M = |D|^2 equal slices (row-major
    over (dy, dx) in D x D), each slice translates by its group offset,
    and one shared depthwise 3x3 filters the re-concatenated result.
    """
    c = propagated.shape[-3]
    m = spec.group_count
    if c % m:
        raise InvalidArgument(
            f"grouped_spatial_shift: {c} propagated channels not divisible by M={m}"
        )
    if isinstance(smoothing, Tensor):
        smoothing = DwConv(smoothing)
    if smoothing.kernel.shape != (c, 1, 3, 3):
        raise InvalidArgument(
            f"smoothing kernel shape {smoothing.kernel.shape} != ({c}, 1, 3, 3)"
        )
    shifted = grouped_shift(propagated, spec.group_offsets())
    return smoothing.apply(shifted)


# ---------------------------------------------------------------------------
# temporal shift


def temporal_shift(features: list[Tensor], direction: str) -> list[tuple[Tensor, Tensor]]:
    """Split frames into kept/propagated halves and pair with a neighbor.

    Forward pairs frame i's kept half with frame i-1's propagated half;
    backward pairs it with frame i+1's. A missing neighbor at either end
    of the sequence contributes an all-zero tensor.
    """
    if direction not in (FORWARD, BACKWARD):
        raise InvalidArgument(f"direction must be forward or backward, got {direction!r}")
    if not features:
        raise InvalidArgument("temporal_shift: empty frame sequence")
    c = features[0].shape[-3]
    if c % 2:
        raise InvalidArgument(f"temporal_shift: channel count must be even, got {c}")
    halves = [split_channels(f, 2) for f in features]
    t = len(features)
    pairs = []
    for i in range(t):
        j = i - 1 if direction == FORWARD else i + 1
        if 0 <= j < t:
            incoming = halves[j][1]
        else:
            incoming = zeros_like(halves[i][1])
        pairs.append((halves[i][0], incoming))
    return pairs


def tsm_split(features: list[Tensor]) -> list[tuple[Tensor, Tensor]]:
    """Three-frame simultaneous shift: keep 3/4, take 1/8 from each neighbor.

    Frame i keeps its first 3/4 channels; the incoming quarter is the
    previous frame's seventh eighth next to the next frame's last eighth,
    with zeros at the sequence boundaries.
    """
    from .autodiff import take_channels

    c = features[0].shape[-3]
    if c % 8:
        raise InvalidArgument(f"bidirectional shift needs channels divisible by 8, got {c}")
    e = c // 8
    t = len(features)
    pairs = []
    for i in range(t):
        kept = take_channels(features[i], 0, 6 * e)
        past = take_channels(features[i - 1], 6 * e, 7 * e) if i > 0 else None
        future = take_channels(features[i + 1], 7 * e, 8 * e) if i < t - 1 else None
        zero = Tensor(np.zeros(features[i].shape[:-3] + (e,) + features[i].shape[-2:], dtype=features[i].dtype))
        incoming = concat_channels([past if past is not None else zero,
                                    future if future is not None else zero])
        pairs.append((kept, incoming))
    return pairs


# ---------------------------------------------------------------------------
# fusion layer


@dataclass
class FusionConv:
    """One lightweight fusion block.

    layer norm -> pointwise expand x2 -> parallel depthwise 3x3 + kxk
    -> simple gate -> channel attention -> pointwise projection, with an
    optional residual when input and output widths match.
    """

    ln_gamma: Tensor
    ln_beta: Tensor
    pw_in: Tensor  # (2*c_in, c_in, 1, 1)
    dw_small: DwConv  # 3x3 over 2*c_in channels
    dw_large: DwConv  # k x k over 2*c_in channels
    ca_weight: Tensor  # (c_in, c_in)
    pw_out: Tensor  # (c_out, c_in, 1, 1)
    residual: bool = False

    def apply(self, x: Tensor, bypass_attention: bool = False) -> Tensor:
        y = layer_norm(x, self.ln_gamma, self.ln_beta)
        y = pointwise_conv(y, self.pw_in)
        y = add(self.dw_small.apply(y), self.dw_large.apply(y))
        y = simple_gate(y)
        if not bypass_attention:
            y = channel_attention(y, self.ca_weight)
        y = pointwise_conv(y, self.pw_out)
        return add(x, y) if self.residual else y


@dataclass
class GstsBlockParams:
    """Parameters of one grouped spatial-temporal shift block."""

    direction: str  # forward | backward | bidirectional
    width: int  # channel count c of the block's features
    fuse1: FusionConv  # concat width -> c, no residual
    fuse2: FusionConv  # c -> c, residual
    smoothing: DwConv | None  # over the propagated channels; None disables spatial shift


@dataclass
class ShiftTrace:
    """Attribution hook: the propagated half entering one block's spatial shift."""

    direction: str
    spec: ShiftSpec
    propagated: Tensor


def gsts_block(
    features: list[Tensor],
    params: GstsBlockParams,
    spec: ShiftSpec | None = None,
    trace: list[ShiftTrace] | None = None,
    bypass_attention: bool = False,
) -> list[Tensor]:
    """Apply one shift block to a frame sequence.

    Per frame: out_i = concat(kept_i, incoming_i) + F(fusion input), where
    the fusion input additionally carries the spatially shifted incoming
    half when spatial shift is enabled, and F is the two fusion blocks.
    """
    if params.smoothing is not None and spec is None:
        raise InvalidArgument("gsts_block: spatial shift enabled but no ShiftSpec given")
    if params.direction == BIDIRECTIONAL:
        pairs = tsm_split(features)
    else:
        pairs = temporal_shift(features, params.direction)
    outs = []
    for kept, incoming in pairs:
        parts = [kept, incoming]
        if params.smoothing is not None:
            if trace is not None:
                trace.append(ShiftTrace(params.direction, spec, incoming))
            parts.append(grouped_spatial_shift(incoming, spec, params.smoothing))
        fused = concat_channels(parts)
        y = params.fuse1.apply(fused, bypass_attention)
        y = params.fuse2.apply(y, bypass_attention)
        outs.append(add(concat_channels([kept, incoming]), y))
    return outs
