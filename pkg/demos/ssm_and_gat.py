"""Two small numerical building blocks: the discretised state-space scan and grid graph attention."""
# %%
import math
import time

import numpy as np

from gcrpnet.graph import GATLayer, build_grid_graph, gat_coeffs
from gcrpnet.ssm import SSMParams, parallel_scan, selective_scan, zoh_discretize
from gcrpnet.tensor import Tensor

# %% zero-order hold for A = -1 over a step of ln 2 halves the state
d = zoh_discretize(-1.0, 1.0, math.log(2.0))
print("Abar", float(d.abar.data), "Bbar", float(d.bbar.data))

# %% tiny steps: Abar -> 1, Bbar -> dt * B
for dt in (1e-1, 1e-3, 1e-6):
    d = zoh_discretize(-2.0, 1.0, dt)
    print(f"dt={dt:g}  Abar={float(d.abar.data):.8f}  Bbar/dt={float(d.bbar.data) / dt:.6f}")

# %% the associative (log-depth) scan gives the same outputs as the step-by-step loop
rng = np.random.default_rng(0)
p = SSMParams.init(8, 4, rng, dtype=np.float64)
x = Tensor(rng.standard_normal((1, 1000, 8)))
for fn in (selective_scan, parallel_scan):
    t = time.perf_counter()
    y = fn(x, p).data
    print(f"{fn.__name__:15s} {1e3 * (time.perf_counter() - t):7.1f} ms  |y| {np.abs(y).mean():.6f}")
print("max difference", np.abs(selective_scan(x, p).data - parallel_scan(x, p).data).max())

# %% attention over a 3x3 node grid: each row is a distribution over the node and its neighbours
g = build_grid_graph(3, 3)
layer = GATLayer(4, rng, dtype=np.float64)
layer.attn.data[:] = rng.standard_normal(8)
a = gat_coeffs(Tensor(rng.standard_normal((9, 4))), layer, g).data
centre = {int(j): round(float(c), 3) for j, c, m in zip(g.index[4], a[4], g.mask[4]) if m}
print("centre node weights", centre, "sum", sum(centre.values()))
