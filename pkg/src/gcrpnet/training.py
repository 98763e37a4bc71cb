"""Training loop, checkpointing, inference and directory evaluation."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import checkpoint as ckpt
from .data import (Augment, DatasetSpec, IngestionError, augment_pair, list_stems, load_sample,
                   normalize, read_image, read_mask, read_saliency_png, sample_seed, write_saliency_png)
from .losses import LossWeights, total_loss
from .metrics import EvalReport, Evaluator
from .model import GCRPNet, ModelConfig
from .optim import AdamW, AdamWConfig, NumericalError
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

CONFIG_ENTRY = "meta/config"
STEP_ENTRY = "meta/step"
OPTIM_PREFIX = "optim/"


def worker_threads() -> int:
    """Loader thread count from ``GCRP_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("GCRP_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch: int = 4
    epochs: int = 100
    max_steps: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    augment: bool = True
    flip_p: float = 0.5
    scale_min: float = 0.75
    scale_max: float = 1.25
    checkpoint_every: int = 500
    iou_eps: float = 1.0
    loss_scale: str = "native"   # "native": each head at its own size; "full": heads upsampled first

    def __post_init__(self):
        if self.loss_scale not in ("native", "full"):
            raise ValueError(f"loss_scale must be 'native' or 'full', got {self.loss_scale!r}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")

    @property
    def optim(self) -> AdamWConfig:
        return AdamWConfig(self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)

    @property
    def aug(self) -> Augment:
        return Augment(self.flip_p, (self.scale_min, self.scale_max))

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in kinds:
                raise KeyError(f"unknown training config key {key!r}")
            if isinstance(raw, str):
                if kinds[key] == "bool":
                    raw = raw.lower() in ("1", "true", "yes", "on")
                elif kinds[key] == "str":
                    pass
                elif kinds[key] == "int":
                    raw = int(raw)
                else:
                    raw = float(raw)
            kwargs[key] = raw
        return cls(**kwargs)


def split_config(values: dict) -> tuple[ModelConfig, TrainConfig]:
    """Route a flat key=value mapping to the model and training configs."""
    model_keys = {f.name for f in dataclasses.fields(ModelConfig)}
    model_vals = {k: v for k, v in values.items() if k in model_keys}
    train_vals = {k: v for k, v in values.items() if k not in model_keys}
    if "seed" in values:
        train_vals["seed"] = values["seed"]
    return ModelConfig.from_dict(model_vals), TrainConfig.from_dict(train_vals)


def read_flat_config(path) -> dict[str, str]:
    values = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value, got {line!r}")
        k, _, v = line.partition("=")
        values[k.strip()] = v.strip()
    return values


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, model: GCRPNet, optimizer: AdamW | None = None, step: int = 0) -> None:
    entries = OrderedDict()
    entries[CONFIG_ENTRY] = ckpt.text_entry(model.cfg.to_text())
    entries[STEP_ENTRY] = np.array([step], dtype=np.int64)
    entries.update(model.state_dict())
    if optimizer is not None:
        for k, v in optimizer.state_arrays().items():
            entries[OPTIM_PREFIX + k] = v
    ckpt.save(path, entries, model.cfg.digest())


def load_checkpoint(path, cfg: ModelConfig | None = None) -> tuple[GCRPNet, dict[str, np.ndarray], int]:
    """Rebuild the model stored at ``path``.

    If ``cfg`` is given the file must have been written for that exact config.

    Returns:
        model, optimizer arrays (prefix stripped), training step.
    """
    digest, entries = ckpt.load(path, cfg.digest() if cfg is not None else None)
    stored = ModelConfig.from_text(ckpt.entry_text(entries.pop(CONFIG_ENTRY)))
    if stored.digest() != digest:
        raise ckpt.CheckpointError("embedded config does not match the header digest")
    step = int(entries.pop(STEP_ENTRY)[0])
    optim = {k[len(OPTIM_PREFIX):]: v for k, v in entries.items() if k.startswith(OPTIM_PREFIX)}
    params = {k: v for k, v in entries.items() if not k.startswith(OPTIM_PREFIX)}
    model = GCRPNet(stored)
    model.load_state_dict(params)
    return model, optim, step


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint: Path
    losses: list[float] = field(default_factory=list)
    steps: int = 0


class SampleCache:
    """Decoded, resized, normalised pairs, keyed by dataset index."""

    def __init__(self, dataset: DatasetSpec, size: int):
        self.pairs = dataset.pairs()
        self.size = size
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def __len__(self) -> int:
        return len(self.pairs)

    def get(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        if index not in self._cache:
            img_path, mask_path = self.pairs[index]
            self._cache[index] = load_sample(img_path, mask_path, self.size)
        return self._cache[index]

    def batch(self, indices, augment: bool, aug: Augment, seed: int, epoch: int,
              threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
        def one(i):
            image, mask = self.get(int(i))
            if augment:
                image, mask = augment_pair(image, mask, sample_seed(seed, epoch, int(i)), aug)
            return image, mask

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                items = list(pool.map(one, indices))
        else:
            items = [one(i) for i in indices]
        return np.stack([a for a, _ in items]), np.stack([b for _, b in items])


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Seeded shuffle of the sorted-stem indices."""
    return np.random.default_rng([seed, epoch, 0x5EED]).permutation(n)


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, dataset: DatasetSpec, out_dir,
          resume: str | Path | None = None, callback=None) -> TrainResult:
    """Run the epoch loop, writing ``loss_log.csv`` and checkpoints into ``out_dir``.

    ``callback(step, loss, model)`` is invoked after every optimizer step.

    Raises:
        NumericalError: on a non-finite loss; the last periodic checkpoint is
            left untouched and the current (still finite) weights are written
            to ``last_good.gcrp``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dtype = model_cfg.np_dtype
    if resume is not None:
        model, optim_arrays, start_step = load_checkpoint(resume, model_cfg)
    else:
        model, optim_arrays, start_step = GCRPNet(model_cfg), {}, 0
    optimizer = AdamW(model.named_parameters(), train_cfg.optim)
    optimizer.load_state_arrays(optim_arrays)
    weights = LossWeights(eps=train_cfg.iou_eps)
    cache = SampleCache(dataset, model_cfg.input_size)
    n = len(cache)
    per_epoch = math.ceil(n / train_cfg.batch)
    total_steps = per_epoch * train_cfg.epochs
    if train_cfg.max_steps:
        total_steps = min(total_steps, train_cfg.max_steps)
    threads = worker_threads()
    log_path = out_dir / "loss_log.csv"
    mode = "a" if resume is not None and log_path.exists() else "w"
    result = TrainResult(checkpoint=out_dir / "final.gcrp", steps=start_step)
    step = start_step
    with open(log_path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(["step", "epoch", "loss"])
        while step < total_steps:
            epoch, pos = divmod(step, per_epoch)
            order = epoch_order(n, train_cfg.seed, epoch)
            idx = order[pos * train_cfg.batch:(pos + 1) * train_cfg.batch]
            images, masks = cache.batch(idx, train_cfg.augment, train_cfg.aug, train_cfg.seed, epoch, threads)
            optimizer.zero_grad()
            x = Tensor(images.astype(dtype))
            preds = model.multiscale(x) if train_cfg.loss_scale == "native" else model(x)
            loss = total_loss(preds, masks.astype(dtype), weights)
            value = loss.item()
            if not math.isfinite(value):
                save_checkpoint(out_dir / "last_good.gcrp", model, optimizer, step)
                raise NumericalError(f"loss became {value} at step {step + 1}")
            loss.backward()
            optimizer.step()
            step += 1
            result.losses.append(value)
            writer.writerow([step, epoch, repr(value)])
            if callback is not None:
                callback(step, value, model)
            if train_cfg.checkpoint_every and step % train_cfg.checkpoint_every == 0:
                fh.flush()
                save_checkpoint(out_dir / f"step_{step:07d}.gcrp", model, optimizer, step)
    save_checkpoint(result.checkpoint, model, optimizer, step)
    result.steps = step
    return result


def predict(model: GCRPNet, images: np.ndarray, batch: int = 4) -> np.ndarray:
    """Final saliency maps (N, S, S) for normalised images (N, 3, S, S)."""
    out = []
    dtype = model.cfg.np_dtype
    with no_grad():
        for i in range(0, len(images), batch):
            out.append(model(Tensor(images[i:i + batch].astype(dtype))).p1.data[:, 0])
    return np.concatenate(out).astype(np.float64)


def dataset_mae(model: GCRPNet, dataset: DatasetSpec) -> float:
    """Mean absolute error of ``p1`` over a dataset at model resolution, no augmentation."""
    cache = SampleCache(dataset, model.cfg.input_size)
    images, masks = cache.batch(range(len(cache)), False, Augment(), 0, 0)
    return float(np.abs(predict(model, images) - masks[:, 0]).mean())


# ---------------------------------------------------------------------------
# inference and evaluation over directories
# ---------------------------------------------------------------------------


def infer(checkpoint_path, image_dir, out_dir, batch: int = 4) -> list[Path]:
    """Write one 8-bit saliency PNG per input image, at the input's own size."""
    model, _, _ = load_checkpoint(checkpoint_path)
    size = model.cfg.input_size
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_dir = Path(image_dir)
    stems = list_stems(image_dir)
    if not stems:
        raise IngestionError([f"no images found in {image_dir}"])
    written = []
    for i in range(0, len(stems), batch):
        chunk = stems[i:i + batch]
        paths = [_image_file(image_dir, s) for s in chunk]
        dims = []
        arrays = []
        for p in paths:
            with Image.open(p) as im:
                dims.append(im.size)
            arrays.append(normalize(read_image(p, size)))
        maps = predict(model, np.stack(arrays), batch)
        for stem, (w, h), m in zip(chunk, dims, maps):
            if (h, w) != m.shape:
                m = np.asarray(Image.fromarray(m.astype(np.float32), "F").resize((w, h), Image.BILINEAR),
                               dtype=np.float64)
            target = out_dir / f"{stem}.png"
            write_saliency_png(target, m)
            written.append(target)
    return written


def _image_file(folder: Path, stem: str) -> Path:
    for p in sorted(folder.glob(f"{stem}.*")):
        return p
    raise FileNotFoundError(stem)


def evaluate(pred_dir, gt_dir) -> EvalReport:
    """Score every prediction PNG against the same-stem GT mask.

    Raises:
        IngestionError: listing every stem present on only one side.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds = set(list_stems(pred_dir))
    gts = set(list_stems(gt_dir))
    problems = [f"prediction {s!r} has no ground truth" for s in sorted(preds - gts)]
    problems += [f"ground truth {s!r} has no prediction" for s in sorted(gts - preds)]
    if problems:
        raise IngestionError(problems)
    if not preds:
        raise IngestionError([f"no predictions found in {pred_dir}"])
    ev = Evaluator()
    for stem in sorted(preds):
        gt = read_mask(_image_file(gt_dir, stem))
        pred = read_saliency_png(_image_file(pred_dir, stem))
        if pred.shape != gt.shape:
            pred = np.asarray(Image.fromarray(pred.astype(np.float32), "F").resize(gt.shape[::-1], Image.BILINEAR),
                              dtype=np.float64).clip(0, 1)
        ev.add(pred, gt)
    return ev.report()
