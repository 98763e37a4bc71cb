from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcrpnet.scan import (DIRECTIONS, BlockPartition, PartitionError, cross_scan_orders, format_order, less2d_orders,
                          resolution_to_grid, scan_gather, scan_merge, scan_merge_stacked)
from gcrpnet.tensor import Tensor


def cross_oracle(h, w):
    grid = np.arange(h * w).reshape(h, w)
    right = grid.reshape(-1)
    down = grid.T.reshape(-1)
    return {"rightward": right, "downward": down, "leftward": right[::-1], "upward": down[::-1]}


def block_oracle(h, w, g, direction):
    """Enumerate blocks row-major and scan each one independently."""
    bh, bw = h // g, w // g
    grid = np.arange(h * w).reshape(h, w)
    seq = []
    for by in range(g):
        for bx in range(g):
            block = grid[by * bh:(by + 1) * bh, bx * bw:(bx + 1) * bw]
            local = cross_oracle(bh, bw)[direction]
            seq.extend(block.reshape(-1)[local])
    return np.array(seq)


def test_hand_derived_4x4_g2_rightward():
    right = less2d_orders(4, 4, 2)[0]
    assert right.direction == "rightward"
    assert right.forward.tolist() == [0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15]


def test_small_cross_scans():
    orders = cross_scan_orders(2, 2)
    assert orders[0].forward.tolist() == [0, 1, 2, 3]
    assert orders[1].forward.tolist() == [0, 2, 1, 3]


@given(st.integers(1, 12), st.integers(1, 12))
@settings(max_examples=50, deadline=None)
def test_leftward_reverses_rightward(h, w):
    orders = {o.direction: o.forward for o in cross_scan_orders(h, w)}
    np.testing.assert_array_equal(orders["leftward"], orders["rightward"][::-1])
    np.testing.assert_array_equal(orders["upward"], orders["downward"][::-1])


SIDES = (8, 16, 24, 48)
CASES = [(h, w, g) for h in SIDES for w in SIDES for g in (1, 2, 4, 8) if h % g == 0 and w % g == 0]


@pytest.mark.parametrize("h,w,g", CASES)
def test_order_suite(h, w, g):
    orders = less2d_orders(h, w, g)
    assert tuple(o.direction for o in orders) == DIRECTIONS
    n = h * w
    part = BlockPartition(h, w, g)
    block_of = part.block_of(np.arange(n))
    per_block = part.block_h * part.block_w
    for o in orders:
        assert np.array_equal(np.sort(o.forward), np.arange(n))
        assert np.array_equal(o.inverse[o.forward], np.arange(n))
        assert np.array_equal(o.forward[o.inverse], np.arange(n))
        # locality: consecutive chunks of one block's size stay inside one block, in row-major block order
        chunks = block_of[o.forward].reshape(g * g, per_block)
        assert np.all(chunks == np.arange(g * g)[:, None])
        np.testing.assert_array_equal(o.forward, block_oracle(h, w, g, o.direction))
    if g == 1:
        ref = cross_oracle(h, w)
        for o in orders:
            np.testing.assert_array_equal(o.forward, ref[o.direction])


def test_non_divisible_grid_is_rejected():
    with pytest.raises(PartitionError, match="divide"):
        less2d_orders(6, 8, 4)


@pytest.mark.parametrize("scale,g", [(Fraction(1, 16), 1), (Fraction(1, 8), 2), (Fraction(1, 4), 4),
                                     (Fraction(1, 2), 8), (0.25, 4)])
def test_resolution_to_grid(scale, g):
    assert resolution_to_grid(scale) == g


def test_resolution_to_grid_unknown():
    with pytest.raises(ValueError):
        resolution_to_grid(Fraction(1, 32))


def test_merge_of_identical_outputs_is_four_times():
    orders = less2d_orders(4, 6, 2)
    v = np.random.default_rng(0).standard_normal((1, 24, 3))
    seqs = [Tensor(v[:, o.forward]) for o in orders]
    np.testing.assert_allclose(scan_merge(seqs, orders, axis=1).data, 4 * v)


def test_merge_single_direction_unscrambles():
    orders = less2d_orders(4, 4, 2)
    x = np.random.default_rng(1).standard_normal((1, 16, 2))
    seqs = [Tensor(np.zeros((1, 16, 2))) for _ in range(4)]
    seqs[2] = Tensor(x[:, orders[2].forward])
    np.testing.assert_allclose(scan_merge(seqs, orders, axis=1).data, x)


@pytest.mark.parametrize("g", [1, 2, 4])
def test_gather_then_merge_is_four_x(g):
    orders = less2d_orders(8, 4 * g, g)
    x = np.random.default_rng(g).standard_normal((2, 32 * g, 3))
    stacked = scan_gather(Tensor(x), orders, axis=1)
    assert stacked.shape == (2, 4, 32 * g, 3)
    np.testing.assert_allclose(scan_merge_stacked(stacked, orders, axis=1).data, 4 * x)


def test_merge_shape_mismatch():
    orders = less2d_orders(2, 2, 1)
    with pytest.raises(ValueError):
        scan_merge([Tensor(np.zeros((1, 4, 1)))] * 3, orders, axis=1)


def test_format_order():
    assert format_order(less2d_orders(2, 2, 1)[1]) == "[0, 2, 1, 3]"
