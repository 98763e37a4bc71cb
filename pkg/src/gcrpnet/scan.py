"""Spatial-to-sequence scan orders.

A scan order is a permutation of the ``h * w`` flat (row-major) indices of a
feature map: ``forward[i]`` is the flat index read at sequence position ``i``.

* :func:`cross_scan_orders` -- the global four-way scan (rows, columns and
  both reversals).
* :func:`less2d_orders` -- split the map into a ``g x g`` grid of
  non-overlapping blocks, scan each block independently in the four
  directions, and concatenate the per-block sequences with blocks taken in
  row-major order. ``g = 1`` is the global scan.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from .tensor import Tensor, _record, scatter

DIRECTIONS = ("rightward", "downward", "leftward", "upward")

# decoder feature scale -> blocks per side
SCALE_TO_GRID = {Fraction(1, 16): 1, Fraction(1, 8): 2, Fraction(1, 4): 4, Fraction(1, 2): 8}


class PartitionError(ValueError):
    """Grid size does not divide the feature map."""


@dataclass(frozen=True)
class BlockPartition:
    height: int
    width: int
    grid: int = 1

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise PartitionError(f"feature map must be at least 1x1, got {self.height}x{self.width}")
        if self.grid < 1:
            raise PartitionError(f"grid must be >= 1, got {self.grid}")
        if self.height % self.grid or self.width % self.grid:
            raise PartitionError(
                f"grid {self.grid} must divide both height {self.height} and width {self.width}"
            )

    @property
    def block_h(self) -> int:
        return self.height // self.grid

    @property
    def block_w(self) -> int:
        return self.width // self.grid

    @property
    def num_blocks(self) -> int:
        return self.grid * self.grid

    def block_of(self, flat_index) -> np.ndarray:
        """Row-major block number containing each flat index."""
        flat_index = np.asarray(flat_index)
        r, c = np.divmod(flat_index, self.width)
        return (r // self.block_h) * self.grid + c // self.block_w


@dataclass(frozen=True)
class ScanOrder:
    forward: np.ndarray
    direction: str
    partition: BlockPartition
    inverse: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        fwd = np.asarray(self.forward, dtype=np.intp)
        inv = np.empty_like(fwd)
        inv[fwd] = np.arange(fwd.size)
        fwd.setflags(write=False)
        inv.setflags(write=False)
        object.__setattr__(self, "forward", fwd)
        object.__setattr__(self, "inverse", inv)

    def __len__(self) -> int:
        return self.forward.size

    def __eq__(self, other) -> bool:
        return (isinstance(other, ScanOrder) and self.direction == other.direction
                and np.array_equal(self.forward, other.forward))

    __hash__ = None


@lru_cache(maxsize=128)
def less2d_orders(h: int, w: int, g: int) -> tuple[ScanOrder, ...]:
    """Block-local four-direction scan orders (rightward, downward, leftward, upward).

    Raises:
        PartitionError: if ``g`` does not divide ``h`` and ``w``.
    """
    part = BlockPartition(h, w, g)
    bh, bw = part.block_h, part.block_w
    idx = np.arange(h * w).reshape(g, bh, g, bw).transpose(0, 2, 1, 3)  # (gy, gx, bh, bw)
    right = idx.reshape(g * g, bh * bw)
    down = idx.transpose(0, 1, 3, 2).reshape(g * g, bh * bw)
    seqs = (right, down, right[:, ::-1], down[:, ::-1])
    return tuple(ScanOrder(s.reshape(-1), d, part) for s, d in zip(seqs, DIRECTIONS))


def cross_scan_orders(h: int, w: int) -> tuple[ScanOrder, ...]:
    """Global four-direction scan: row-major, column-major and their reversals."""
    return less2d_orders(h, w, 1)


def resolution_to_grid(stage_scale) -> int:
    """Blocks per side for a decoder feature at ``stage_scale`` of the input.

    Accepts a float, :class:`~fractions.Fraction` or string like ``"1/4"``.
    """
    try:
        key = Fraction(stage_scale).limit_denominator(64)
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"cannot interpret scale {stage_scale!r}") from exc
    if key not in SCALE_TO_GRID:
        allowed = ", ".join(str(k) for k in SCALE_TO_GRID)
        raise ValueError(f"unsupported stage scale {stage_scale!r}; expected one of {allowed}")
    return SCALE_TO_GRID[key]


def stacked_forward(orders: Sequence[ScanOrder]) -> np.ndarray:
    return np.stack([o.forward for o in orders])


def scan_gather(x: Tensor, orders: Sequence[ScanOrder], axis: int = -2) -> Tensor:
    """Read a flattened map (..., L, D) along every order -> (..., K, L, D).

    One fused op; its adjoint scatters each direction back with the inverse
    permutation and sums.
    """
    axis = axis % x.ndim
    fwd = stacked_forward(orders)
    inv = np.stack([o.inverse for o in orders])
    out = np.take(x.data, fwd, axis=axis)

    def backward(g):
        return (_merge(g, inv, axis),)

    return _record(out, (x,), backward)


def _merge(y: np.ndarray, inv: np.ndarray, axis: int) -> np.ndarray:
    # y: (..., K, L, ...) with K at ``axis``
    acc = None
    for k in range(inv.shape[0]):
        part = np.take(np.take(y, k, axis=axis), inv[k], axis=axis)
        acc = part if acc is None else acc + part
    return acc


def scan_merge_stacked(y: Tensor, orders: Sequence[ScanOrder], axis: int = -3) -> Tensor:
    """Fused :func:`scan_merge` for outputs stacked as (..., K, L, D)."""
    axis = axis % y.ndim
    fwd = stacked_forward(orders)
    inv = np.stack([o.inverse for o in orders])
    if y.shape[axis] != len(orders):
        raise ValueError(f"{y.shape[axis]} stacked outputs for {len(orders)} orders")
    return _record(_merge(y.data, inv, axis), (y,), lambda g: (np.take(g, fwd, axis=axis),))


def scan_merge(ys: Sequence[Tensor], orders: Sequence[ScanOrder], axis: int = -2) -> Tensor:
    """Scatter each directional output back to spatial layout and sum.

    Args:
        ys: one (..., L, D) tensor per order.
        orders: the orders that produced ``ys``.
        axis: sequence axis of each ``ys`` entry.
    """
    if len(ys) != len(orders):
        raise ValueError(f"{len(ys)} outputs for {len(orders)} orders")
    shape = ys[0].shape
    for y in ys:
        if y.shape != shape:
            raise ValueError(f"directional outputs differ in shape: {[t.shape for t in ys]}")
    out = None
    for y, o in zip(ys, orders):
        part = scatter(y, o.forward, axis)
        out = part if out is None else out + part
    return out


def format_order(order: ScanOrder) -> str:
    return "[" + ", ".join(str(int(i)) for i in order.forward) + "]"
