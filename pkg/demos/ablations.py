"""Train the full model and the three ablated wirings under one protocol and compare training MAE.

About twelve minutes on one CPU core.
"""
# %%
import sys
import tempfile
from pathlib import Path

from gcrpnet.experiments import ablation_runs, synthetic_set

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="gcrpnet_abl_"))
data = synthetic_set(work / "data")

# %%
runs = ablation_runs(data, work / "runs")
for r in runs.values():
    print(r.line())

# %% the full model should not be worse than any variant
full = runs["full"].mae
for name, r in runs.items():
    if name != "full":
        print(f"{name:12s} MAE {r.mae:.4f}  full model {'<=' if full <= r.mae else '>'} it")
