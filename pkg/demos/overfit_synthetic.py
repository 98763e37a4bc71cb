"""Overfit the micro model on 20 synthetic scenes, then run the inference and scoring path end to end.

Takes about three minutes on one CPU core.
"""
# %%
import sys
import tempfile
from pathlib import Path

from gcrpnet import evaluate, infer
from gcrpnet.experiments import convergence_run, synthetic_set
from gcrpnet.metrics import REFERENCE_SCORES

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="gcrpnet_"))
data = synthetic_set(work / "data", n=20, size=64, seed=0)
print("data in", data.root)

# %% 300 AdamW steps, batch 4, no augmentation
result = convergence_run(data, work / "run")
print(result.line())
print("step losses", [round(v, 3) for v in result.step_losses[::50]])

# %% write P1 for every image and score it like a benchmark run
infer(work / "run" / "final.gcrp", data.root / "images", work / "pred")
rep = evaluate(work / "pred", data.root / "GT")
print(rep.to_text())

# %% the same table layout a full-scale run would be compared on
print(rep.comparison_text(REFERENCE_SCORES["EORSSD"], "EORSSD"))
