"""Composite network blocks.

Layout conventions: convolutional blocks take NCHW maps; the state-space
blocks (:class:`SS2D`, :class:`VSSBlock`, :class:`LEVSSBlock`) take NHWC maps
so their linear layers act on the last axis.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import functional as F
from .graph import GATLayer, build_grid_graph, gat_forward
from .nn import Conv2d, ConvTranspose2d, DepthwiseConv2d, LayerNorm, Linear, Module
from .scan import less2d_orders, resolution_to_grid, scan_gather, scan_merge_stacked
from .ssm import SSMParams, selective_scan
from .tensor import Tensor, concat, mean, split, tmax
from .nn import Parameter


class ChannelAttention(Module):
    """Average- and max-pooled descriptors through a shared bottleneck MLP, then a sigmoid.

    Returns per-channel weights shaped (N, C, 1, 1).
    """

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4, dtype=np.float32):
        hidden = max(1, channels // reduction)
        self.fc1 = Linear(channels, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, channels, rng, dtype=dtype)

    def _mlp(self, v: Tensor) -> Tensor:
        return self.fc2(F.relu(self.fc1(v)))

    def forward(self, x: Tensor) -> Tensor:
        n, c = x.shape[:2]
        avg = F.global_avg_pool(x).reshape(n, c)
        mx = F.global_max_pool(x).reshape(n, c)
        return F.sigmoid(self._mlp(avg) + self._mlp(mx)).reshape(n, c, 1, 1)


class SpatialAttention(Module):
    """Channel-wise mean and max maps -> k x k conv -> sigmoid; returns (N, 1, H, W)."""

    def __init__(self, rng: np.random.Generator, kernel: int = 7, dtype=np.float32):
        self.conv = Conv2d(2, 1, kernel, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        stats = concat([mean(x, axis=1, keepdims=True), tmax(x, axis=1, keepdims=True)], axis=1)
        return F.sigmoid(self.conv(stats))


class CCS(Module):
    """Channel attention, then spatial attention, then 3x3 conv + norm + SiLU."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4, dtype=np.float32):
        self.ca = ChannelAttention(channels, rng, reduction, dtype)
        self.sa = SpatialAttention(rng, dtype=dtype)
        self.conv = Conv2d(channels, channels, 3, rng, dtype=dtype)
        self.norm = LayerNorm(channels, axis=1, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = x * self.ca(x)
        x = x * self.sa(x)
        return F.silu(self.norm(self.conv(x)))


class MSFF(Module):
    """Resample all four stage features to level ``level`` and fuse with a 1x1 conv.

    Coarser maps are bilinearly upsampled, finer maps are average pooled.
    """

    def __init__(self, level: int, channels: Sequence[int], rng: np.random.Generator, dtype=np.float32):
        self.level = level
        self.fuse = Conv2d(sum(channels), channels[level], 1, rng, dtype=dtype)

    def forward(self, feats: Sequence[Tensor]) -> Tensor:
        th, tw = feats[self.level].shape[2:]
        aligned = []
        for f in feats:
            h, w = f.shape[2:]
            if h > th:
                aligned.append(F.avg_pool(f, h // th))
            elif h < th:
                aligned.append(F.resize(f, th, tw, "bilinear"))
            else:
                aligned.append(f)
        return self.fuse(concat(aligned, axis=1))


class RGCA(Module):
    """Strided downsample -> grid-graph attention -> transposed-conv upsample,
    gated by channel attention of the input, added to the skip feature."""

    def __init__(self, channels: int, stride: int, rng: np.random.Generator, connectivity: int = 8,
                 reduction: int = 4, dtype=np.float32):
        self.stride = stride
        self.connectivity = connectivity
        self.down = Conv2d(channels, channels, stride, rng, stride=stride, padding=0, dtype=dtype)
        self.gat = GATLayer(channels, rng, dtype=dtype)
        self.up = ConvTranspose2d(channels, channels, stride, rng, stride=stride, dtype=dtype)
        self.ca = ChannelAttention(channels, rng, reduction, dtype)
        self.last_num_nodes = None

    def graph_branch(self, fc: Tensor) -> Tensor:
        n, c, h, w = fc.shape
        s = self.stride
        if h % s or w % s:
            raise ValueError(f"RGCA stride {s} must divide feature size {h}x{w}")
        z = self.down(fc)
        hs, ws = z.shape[2:]
        graph = build_grid_graph(hs, ws, self.connectivity)
        self.last_num_nodes = graph.n
        nodes = z.reshape(n, c, hs * ws).transpose(0, 2, 1)
        out = gat_forward(nodes, self.gat, graph)
        grid = out.transpose(0, 2, 1).reshape(n, c, hs, ws)
        return self.up(grid)

    def forward(self, fc: Tensor, skip: Tensor) -> Tensor:
        return self.graph_branch(fc) * self.ca(fc) + skip


class DSHGAM(Module):
    """Per level: MSFF -> CCS -> RGCA, producing enhanced skip features."""

    def __init__(self, channels: Sequence[int], strides: Sequence[int], rng: np.random.Generator,
                 connectivity: int = 8, reduction: int = 4, dtype=np.float32):
        self.msff = [MSFF(i, channels, rng, dtype) for i in range(len(channels))]
        self.ccs = [CCS(c, rng, reduction, dtype) for c in channels]
        self.rgca = [RGCA(c, s, rng, connectivity, reduction, dtype) for c, s in zip(channels, strides)]

    def forward(self, feats: Sequence[Tensor]) -> list[Tensor]:
        out = []
        for i, f in enumerate(feats):
            fc = self.ccs[i](self.msff[i](feats))
            out.append(self.rgca[i](fc, f))
        return out


class MCAEM(Module):
    """Depthwise-separable branches (k = 3, 5, 7), each enhanced by the sum of
    channel- and spatial-attention outputs, concatenated, 1x1 compressed and
    added back to the input."""

    KERNELS = (3, 5, 7)

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4, dtype=np.float32):
        self.depthwise = [DepthwiseConv2d(channels, k, rng, dtype=dtype) for k in self.KERNELS]
        self.pointwise = [Conv2d(channels, channels, 1, rng, dtype=dtype) for _ in self.KERNELS]
        self.ca = [ChannelAttention(channels, rng, reduction, dtype) for _ in self.KERNELS]
        self.sa = [SpatialAttention(rng, dtype=dtype) for _ in self.KERNELS]
        self.compress = Conv2d(3 * channels, channels, 1, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        branches = []
        for dw, pw, ca, sa in zip(self.depthwise, self.pointwise, self.ca, self.sa):
            y = pw(dw(x))
            branches.append(y * ca(y) + y * sa(y))
        return x + self.compress(concat(branches, axis=1))


class SS2D(Module):
    """Gated four-direction selective scan over an NHWC map (no residual)."""

    def __init__(self, channels: int, rng: np.random.Generator, d_state: int = 8, expand: int = 2,
                 share_params: bool = False, scan_method: str = "sequential", dtype=np.float32):
        inner = expand * channels
        self.inner = inner
        self.scan_method = scan_method
        self.in_proj = Linear(channels, 2 * inner, rng, dtype=dtype)
        self.conv = DepthwiseConv2d(inner, 3, rng, dtype=dtype)
        lead = (1,) if share_params else (4,)
        p = SSMParams.init(inner, d_state, rng, lead=lead, dtype=dtype)
        self.a_log = Parameter(p.a_log.data)
        self.x_proj = Parameter(p.x_proj.data)
        self.dt_proj = Parameter(p.dt_proj.data)
        self.dt_bias = Parameter(p.dt_bias.data)
        self.out_norm = LayerNorm(inner, dtype=dtype)
        self.out_proj = Linear(inner, channels, rng, dtype=dtype)

    @property
    def ssm_params(self) -> SSMParams:
        return SSMParams(self.a_log, self.x_proj, self.dt_proj, self.dt_bias)

    def forward(self, x: Tensor, grid: int = 1) -> Tensor:
        b, h, w, c = x.shape
        orders = less2d_orders(h, w, grid)
        xi, z = split(self.in_proj(x), [self.inner, self.inner], axis=-1)
        xi = F.silu(self.conv(F.nhwc_to_nchw(xi)))
        seq = F.nchw_to_nhwc(xi).reshape(b, h * w, self.inner)
        xs = scan_gather(seq, orders, axis=1)                          # (B, 4, L, Di)
        ys = selective_scan(xs, self.ssm_params, method=self.scan_method)
        y = scan_merge_stacked(ys, orders, axis=1)                      # (B, L, Di)
        y = self.out_norm(y) * F.silu(z.reshape(b, h * w, self.inner))
        return self.out_proj(y).reshape(b, h, w, c)


class VSSBlock(Module):
    """Pre-norm residual wrapper around :class:`SS2D` with the global cross scan."""

    def __init__(self, channels: int, rng: np.random.Generator, d_state: int = 8, expand: int = 2,
                 share_params: bool = False, scan_method: str = "sequential", dtype=np.float32):
        self.grid = 1
        self.norm = LayerNorm(channels, dtype=dtype)
        self.ss2d = SS2D(channels, rng, d_state, expand, share_params, scan_method, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.ss2d(self.norm(x), self.grid)


class LEVSSBlock(VSSBlock):
    """MCAEM followed by the VSS skeleton scanning with block-local LESS2D orders.

    Args:
        stage_scale: feature scale relative to the input (1/16 ... 1/2); sets the grid.
        use_mcaem: False gives the w/o-MCAEM wiring.
        use_less2d: False falls back to the global cross scan (grid 1).
    """

    def __init__(self, channels: int, stage_scale, rng: np.random.Generator, d_state: int = 8,
                 expand: int = 2, use_mcaem: bool = True, use_less2d: bool = True,
                 share_params: bool = False, scan_method: str = "sequential", reduction: int = 4,
                 dtype=np.float32):
        self.mcaem = MCAEM(channels, rng, reduction, dtype) if use_mcaem else None
        super().__init__(channels, rng, d_state, expand, share_params, scan_method, dtype)
        self.grid = resolution_to_grid(stage_scale) if use_less2d else 1

    def forward(self, x: Tensor) -> Tensor:
        if self.mcaem is not None:
            x = F.nchw_to_nhwc(self.mcaem(F.nhwc_to_nchw(x)))
        return super().forward(x)
