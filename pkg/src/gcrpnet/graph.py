"""Grid graphs over downsampled feature maps and a single-head graph attention layer.

Every spatial location of an ``h x w`` grid is a node (``n = h * w``). The
neighbourhood of a node is itself plus its 4- or 8-connected lattice
neighbours. Neighbour lists are stored padded to a fixed width so attention
runs as dense (n, k) array ops; padded slots repeat the node itself and are
masked out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .nn import Module, Parameter, trunc_normal
from .tensor import Tensor, matmul, take, tsum, transpose

_OFFSETS = {
    4: [(-1, 0), (0, -1), (0, 1), (1, 0)],
    8: [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
}


@dataclass(frozen=True)
class GridGraph:
    """Lattice graph with self-loops.

    Attributes:
        height, width: grid dims.
        connectivity: 4 or 8.
        index: (n, k) neighbour indices; column 0 is the node itself.
        mask: (n, k) True where ``index`` is a real neighbour.
    """

    height: int
    width: int
    connectivity: int
    index: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.height * self.width

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j, ok in zip(self.index[i], self.mask[i]) if ok]

    @property
    def adjacency(self) -> list[list[int]]:
        return [self.neighbors(i) for i in range(self.n)]

    def dense_mask(self) -> np.ndarray:
        m = np.zeros((self.n, self.n), dtype=bool)
        rows = np.repeat(np.arange(self.n), self.index.shape[1])
        m[rows[self.mask.reshape(-1)], self.index[self.mask]] = True
        return m

    def relabel(self, perm: np.ndarray) -> "GridGraph":
        """Graph with node ``i`` renamed ``perm[i]``; neighbour column order is kept."""
        perm = np.asarray(perm)
        index = np.empty_like(self.index)
        mask = np.empty_like(self.mask)
        index[perm] = perm[self.index]
        mask[perm] = self.mask
        return GridGraph(self.height, self.width, self.connectivity, index, mask)


def build_grid_graph(h: int, w: int, connectivity: int = 8) -> GridGraph:
    if h < 1 or w < 1:
        raise ValueError(f"grid must be at least 1x1, got {h}x{w}")
    if connectivity not in _OFFSETS:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    rr, cc = np.divmod(np.arange(h * w), w)
    cols_idx = [rr * w + cc]
    cols_mask = [np.ones(h * w, dtype=bool)]
    for dr, dc in _OFFSETS[connectivity]:
        r2, c2 = rr + dr, cc + dc
        ok = (r2 >= 0) & (r2 < h) & (c2 >= 0) & (c2 < w)
        cols_idx.append(np.where(ok, r2 * w + c2, rr * w + cc))
        cols_mask.append(ok)
    index = np.stack(cols_idx, axis=1).astype(np.intp)
    mask = np.stack(cols_mask, axis=1)
    index.setflags(write=False)
    mask.setflags(write=False)
    return GridGraph(h, w, connectivity, index, mask)


class GATLayer(Module):
    """Shared linear map ``W`` (d_out x d) and edge-scoring vector ``l`` (2 d_out).

    ``e_ij = leaky_relu(l . [W f_i || W f_j])``, normalised with a softmax over
    the neighbourhood of ``i``; output ``elu(sum_j a_ij W f_j)``.
    """

    def __init__(self, d: int, rng: np.random.Generator, d_out: int | None = None, slope: float = 0.2,
                 std: float = 0.02, dtype=np.float32):
        d_out = d if d_out is None else d_out
        self.slope = slope
        self.weight = Parameter(trunc_normal(rng, (d_out, d), std, dtype))
        self.attn = Parameter(trunc_normal(rng, (2 * d_out,), 0.1, dtype))

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    def transform(self, features: Tensor) -> Tensor:
        return matmul(features, transpose(self.weight))

    def forward(self, features: Tensor, graph: GridGraph) -> Tensor:
        return gat_forward(features, self, graph)


def _edge_scores(wf: Tensor, layer: GATLayer, graph: GridGraph) -> Tensor:
    d = layer.d_out
    l_src = layer.attn[:d].reshape(d, 1)
    l_dst = layer.attn[d:].reshape(d, 1)
    s_src = matmul(wf, l_src)                      # (..., n, 1)
    s_dst = matmul(wf, l_dst).reshape(wf.shape[:-1])  # (..., n)
    nb = take(s_dst, graph.index, axis=-1)         # (..., n, k)
    return F.leaky_relu(s_src + nb, layer.slope)


def gat_coeffs(features: Tensor, layer: GATLayer, graph: GridGraph, _wf: Tensor | None = None) -> Tensor:
    """Attention coefficients (..., n, k) aligned with ``graph.index``; padded slots are 0."""
    if features.shape[-2] != graph.n:
        raise ValueError(f"{features.shape[-2]} node features for a graph of {graph.n} nodes")
    wf = layer.transform(features) if _wf is None else _wf
    return F.softmax(_edge_scores(wf, layer, graph), axis=-1, mask=graph.mask)


def gat_forward(features: Tensor, layer: GATLayer, graph: GridGraph) -> Tensor:
    """Node features (..., n, d) -> (..., n, d_out)."""
    wf = layer.transform(features)
    a = gat_coeffs(features, layer, graph, _wf=wf)           # (..., n, k)
    neigh = take(wf, graph.index, axis=-2)                    # (..., n, k, d_out)
    agg = tsum(neigh * a.reshape(a.shape + (1,)), axis=-2)
    return F.elu(agg)
