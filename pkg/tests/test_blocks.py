import numpy as np
import pytest

from gcrpnet import functional as F
from gcrpnet.blocks import (CCS, DSHGAM, MCAEM, MSFF, RGCA, SS2D, ChannelAttention, LEVSSBlock, SpatialAttention,
                            VSSBlock)
from gcrpnet.scan import less2d_orders
from gcrpnet.tensor import Tensor

F64 = np.float64


def rng(seed=0):
    return np.random.default_rng(seed)


def randn(*shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


def perturb(module, seed=0, std=0.3):
    r = np.random.default_rng(seed)
    for p in module.parameters():
        p.data += r.standard_normal(p.shape) * std
    return module


def all_grads_nonzero(module):
    dead = [name for name, p in module.named_parameters() if p.grad is None or not np.any(p.grad)]
    assert not dead, f"parameters without gradient: {dead}"


def test_attention_ranges():
    x = randn(2, 8, 5, 5)
    ca = perturb(ChannelAttention(8, rng(), dtype=F64))
    sa = perturb(SpatialAttention(rng(), dtype=F64))
    w, m = ca(x).data, sa(x).data
    assert w.shape == (2, 8, 1, 1) and m.shape == (2, 1, 5, 5)
    assert np.all((w > 0) & (w < 1)) and np.all((m > 0) & (m < 1))


def test_spatial_attention_constant_input_is_uniform_inside():
    sa = perturb(SpatialAttention(rng(), dtype=F64))
    m = sa(Tensor(np.full((1, 4, 12, 12), 0.7))).data[0, 0]
    # positions whose 7x7 window lies fully inside see identical inputs
    inner = m[3:-3, 3:-3]
    np.testing.assert_allclose(inner, inner[0, 0], rtol=1e-12)


def test_channel_attention_zero_input_oracle():
    ca = perturb(ChannelAttention(8, rng(), dtype=F64))
    w1, b1 = ca.fc1.weight.data, ca.fc1.bias.data
    w2, b2 = ca.fc2.weight.data, ca.fc2.bias.data
    hidden = np.maximum(b1, 0)
    logits = 2 * (hidden @ w2 + b2)        # avg and max branches are both zero vectors
    expected = 1 / (1 + np.exp(-logits))
    np.testing.assert_allclose(ca(Tensor(np.zeros((1, 8, 3, 3)))).data.reshape(-1), expected, rtol=1e-12)


def test_ccs_shape_and_zero_input():
    ccs = perturb(CCS(8, rng(), dtype=F64))
    x = randn(2, 8, 6, 6)
    assert ccs(x).shape == x.shape
    out = ccs(Tensor(np.zeros((1, 8, 6, 6)))).data
    np.testing.assert_allclose(out, np.broadcast_to(out[:, :, :1, :1], out.shape), rtol=1e-12)


def test_ccs_with_unit_attention_is_plain_conv_path():
    ccs = perturb(CCS(8, rng(), dtype=F64))
    x = randn(1, 8, 6, 6)
    ccs.ca.forward = lambda t: Tensor(np.ones((t.shape[0], t.shape[1], 1, 1)))
    ccs.sa.forward = lambda t: Tensor(np.ones((t.shape[0], 1) + t.shape[2:]))
    plain = F.silu(ccs.norm(ccs.conv(x))).data
    np.testing.assert_array_equal(ccs(x).data, plain)


CHANNELS = (4, 6, 8, 10)


def stage_feats(seed=0, side=16):
    return [randn(2, c, side >> i, side >> i, seed=seed + i) for i, c in enumerate(CHANNELS)]


@pytest.mark.parametrize("level", range(4))
def test_msff_shape_and_bias(level):
    m = perturb(MSFF(level, CHANNELS, rng(), dtype=F64))
    feats = stage_feats()
    out = m(feats)
    assert out.shape == feats[level].shape
    zeros = [Tensor(np.zeros(f.shape)) for f in feats]
    np.testing.assert_allclose(m(zeros).data, np.broadcast_to(m.fuse.bias.data[None, :, None, None], out.shape))


@pytest.mark.parametrize("level,src", [(0, 2), (2, 0), (1, 1), (3, 0)])
def test_msff_isolates_one_level(level, src):
    m = MSFF(level, CHANNELS, rng(), dtype=F64)
    feats = stage_feats()
    feats = [f if i == src else Tensor(np.zeros(f.shape)) for i, f in enumerate(feats)]
    w = np.zeros(m.fuse.weight.shape)
    offset = sum(CHANNELS[:src])
    c = min(CHANNELS[src], CHANNELS[level])
    for k in range(c):
        w[k, offset + k, 0, 0] = 1.0
    m.fuse.weight.data[:] = w
    m.fuse.bias.data[:] = 0
    th = feats[level].shape[2]
    f = feats[src]
    if f.shape[2] > th:
        expected = F.avg_pool(f, f.shape[2] // th).data
    else:
        expected = F.resize(f, th, th).data
    np.testing.assert_allclose(m(feats).data[:, :c], expected[:, :c], atol=1e-12)


def test_rgca_shape_nodes_and_residual():
    r = perturb(RGCA(8, 2, rng(), dtype=F64))
    fc, skip = randn(2, 8, 8, 8), randn(2, 8, 8, 8, seed=1)
    assert r(fc, skip).shape == skip.shape
    assert r.last_num_nodes == (8 // 2) * (8 // 2)
    r.up.weight.data[:] = 0
    r.up.bias.data[:] = 0
    assert np.array_equal(r(fc, skip).data, skip.data)


def test_rgca_requires_divisible_stride():
    r = RGCA(4, 4, rng(), dtype=F64)
    with pytest.raises(ValueError):
        r(randn(1, 4, 6, 6), randn(1, 4, 6, 6))


def test_dshgam_shapes_and_residual_start():
    d = perturb(DSHGAM(CHANNELS, (2, 2, 1, 1), rng(), dtype=F64))
    feats = stage_feats()
    outs = d(feats)
    assert [o.shape for o in outs] == [f.shape for f in feats]
    for r in d.rgca:
        r.up.weight.data[:] = 0
        r.up.bias.data[:] = 0
    for o, f in zip(d(feats), feats):
        assert np.array_equal(o.data, f.data)


def test_mcaem_shape_kernels_and_identity():
    m = perturb(MCAEM(8, rng(), dtype=F64))
    assert MCAEM.KERNELS == (3, 5, 7)
    assert [dw.weight.shape[-1] for dw in m.depthwise] == [3, 5, 7]
    x = randn(2, 8, 7, 7)
    assert m(x).shape == x.shape
    m.compress.weight.data[:] = 0
    m.compress.bias.data[:] = 0
    assert np.array_equal(m(x).data, x.data)


def test_vss_blocks_shape_and_identity():
    x = randn(2, 8, 8, 6)
    for block in (VSSBlock(6, rng(), d_state=3, dtype=F64), LEVSSBlock(6, 0.25, rng(), d_state=3, dtype=F64)):
        perturb(block)
        assert block(x).shape == x.shape
        block.ss2d.out_proj.weight.data[:] = 0
        block.ss2d.out_proj.bias.data[:] = 0
        if isinstance(block, LEVSSBlock):
            block.mcaem.compress.weight.data[:] = 0
            block.mcaem.compress.bias.data[:] = 0
        assert np.array_equal(block(x).data, x.data)


def test_levss_grids():
    assert [LEVSSBlock(4, s, rng()).grid for s in (1 / 16, 1 / 8, 1 / 4, 1 / 2)] == [1, 2, 4, 8]
    assert LEVSSBlock(4, 1 / 2, rng(), use_less2d=False).grid == 1
    assert LEVSSBlock(4, 1 / 2, rng(), use_mcaem=False).mcaem is None


def test_levss_at_coarsest_scale_matches_vss():
    vss = perturb(VSSBlock(4, rng(3), d_state=2, dtype=F64), seed=1)
    lev = LEVSSBlock(4, 1 / 16, rng(3), d_state=2, use_mcaem=False, dtype=F64)
    lev.load_state_dict(vss.state_dict())
    x = randn(1, 4, 4, 4)
    assert lev.grid == vss.grid == 1
    np.testing.assert_array_equal(lev(x).data, vss(x).data)
    np.testing.assert_array_equal(less2d_orders(4, 4, lev.grid)[1].forward, less2d_orders(4, 4, 1)[1].forward)


def test_ss2d_shared_parameters_option():
    s = SS2D(4, rng(), d_state=2, share_params=True)
    assert s.a_log.shape[0] == 1
    assert SS2D(4, rng(), d_state=2).a_log.shape[0] == 4


@pytest.mark.parametrize("make,call,inputs", [
    (lambda: CCS(8, rng(), dtype=F64), lambda m, xs: m(xs[0]), lambda: [randn(1, 8, 5, 5)]),
    (lambda: MSFF(1, CHANNELS, rng(), dtype=F64), lambda m, xs: m(xs), stage_feats),
    (lambda: RGCA(8, 2, rng(), dtype=F64), lambda m, xs: m(*xs), lambda: [randn(1, 8, 4, 4), randn(1, 8, 4, 4, seed=2)]),
    (lambda: DSHGAM(CHANNELS, (2, 1, 1, 1), rng(), dtype=F64), lambda m, xs: sum(o.sum() for o in m(xs)), stage_feats),
    (lambda: MCAEM(8, rng(), dtype=F64), lambda m, xs: m(xs[0]), lambda: [randn(1, 8, 5, 5)]),
    (lambda: LEVSSBlock(6, 0.25, rng(), d_state=2, dtype=F64), lambda m, xs: m(xs[0]), lambda: [randn(1, 4, 4, 6)]),
])
def test_every_block_parameter_receives_gradient(make, call, inputs):
    m = perturb(make(), seed=5)   # keeps one-unit ReLU bottlenecks off their dead side
    out = call(m, inputs())
    (out * out).sum().backward()
    all_grads_nonzero(m)
