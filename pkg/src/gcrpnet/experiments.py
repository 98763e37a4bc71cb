"""Desk-scale convergence and ablation runs on a synthetic set."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Augment, DatasetSpec, open_dataset, synth_dataset
from .losses import total_loss
from .model import GCRPNet, ModelConfig
from .tensor import Tensor, no_grad
from .training import SampleCache, TrainConfig, load_checkpoint, predict, train

CONVERGENCE_STEPS = 300
CONVERGENCE_LR = 1e-3
ABLATIONS = {
    "full": {},
    "w/o DS-HGAM": {"use_dshgam": False},
    "w/o MCAEM": {"use_mcaem": False},
    "w/o LESS2D": {"use_less2d": False},
}


@dataclass
class ConvergenceResult:
    name: str
    initial_loss: float
    final_loss: float
    mae: float
    seconds: float
    step_losses: list[float] = field(default_factory=list)

    @property
    def reduction(self) -> float:
        return self.initial_loss / self.final_loss

    def line(self) -> str:
        return (f"{self.name}: loss {self.initial_loss:.4f} -> {self.final_loss:.4f} "
                f"({self.reduction:.1f}x), MAE {self.mae:.4f}, {self.seconds:.0f}s")


def synthetic_set(root, n: int = 20, size: int = 64, seed: int = 0) -> DatasetSpec:
    """Reuse ``root`` if it already holds a dataset, otherwise generate one."""
    root = Path(root)
    if (root / "train.txt").exists():
        return open_dataset(root)
    return synth_dataset(root, n, size, seed)


def dataset_loss_and_mae(model: GCRPNet, dataset: DatasetSpec, loss_scale: str = "native",
                         batch: int = 4) -> tuple[float, float]:
    """Mean training objective and P1 MAE over the whole set, without augmentation."""
    cache = SampleCache(dataset, model.cfg.input_size)
    images, masks = cache.batch(range(len(cache)), False, Augment(), 0, 0)
    dtype = model.cfg.np_dtype
    losses, weights = [], []
    with no_grad():
        for i in range(0, len(images), batch):
            x = Tensor(images[i:i + batch].astype(dtype))
            preds = model.multiscale(x) if loss_scale == "native" else model(x)
            losses.append(total_loss(preds, masks[i:i + batch].astype(dtype)).item())
            weights.append(len(x.data))
    mae = float(np.abs(predict(model, images, batch) - masks[:, 0]).mean())
    return float(np.average(losses, weights=weights)), mae


def convergence_run(dataset: DatasetSpec, out_dir, model_cfg: ModelConfig | None = None,
                    steps: int = CONVERGENCE_STEPS, lr: float = CONVERGENCE_LR, seed: int = 0,
                    loss_scale: str = "native", name: str = "full") -> ConvergenceResult:
    """Overfit ``dataset`` for ``steps`` optimizer steps, no augmentation, constant ``lr``."""
    model_cfg = model_cfg or ModelConfig.micro(seed=seed)
    n = len(dataset)
    batch = 4
    epochs = -(-steps * batch // n)
    tc = TrainConfig(lr=lr, batch=batch, epochs=max(1, epochs), max_steps=steps, seed=seed, augment=False,
                     checkpoint_every=0, loss_scale=loss_scale)
    initial, _ = dataset_loss_and_mae(GCRPNet(model_cfg), dataset, loss_scale)
    start = time.perf_counter()
    result = train(model_cfg, tc, dataset, out_dir)
    seconds = time.perf_counter() - start
    model, _, _ = load_checkpoint(result.checkpoint)
    final, mae = dataset_loss_and_mae(model, dataset, loss_scale)
    return ConvergenceResult(name, initial, final, mae, seconds, result.losses)


def ablation_runs(dataset: DatasetSpec, out_dir, seed: int = 0, steps: int = CONVERGENCE_STEPS,
                  names=tuple(ABLATIONS)) -> dict[str, ConvergenceResult]:
    out = {}
    for name in names:
        cfg = ModelConfig.micro(seed=seed, **ABLATIONS[name])
        slug = name.replace("/", "").replace(" ", "_")
        out[name] = convergence_run(dataset, Path(out_dir) / slug, cfg, steps=steps, seed=seed, name=name)
    return out
