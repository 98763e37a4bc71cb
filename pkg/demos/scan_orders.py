"""Where each LESS2D scan visits a small grid, drawn as visit-order maps."""
# %%
import numpy as np

from gcrpnet.scan import cross_scan_orders, less2d_orders, resolution_to_grid

H = W = 8


def show(order, h=H, w=W):
    # rank[i] = when pixel i is visited
    rank = np.empty(h * w, dtype=int)
    rank[order.forward] = np.arange(h * w)
    print(order.direction)
    print(rank.reshape(h, w))


# %% plain cross scan: one long row-major / column-major sweep
for o in cross_scan_orders(H, W):
    show(o)

# %% LESS2D with a 2x2 block grid: every block is finished before the next starts
for o in less2d_orders(H, W, 2):
    show(o)

# %% grid per decoder scale
for scale in (1 / 16, 1 / 8, 1 / 4, 1 / 2):
    print(f"scale {scale:.4f} -> {resolution_to_grid(scale)} x {resolution_to_grid(scale)} blocks")
