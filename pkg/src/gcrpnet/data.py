"""Dataset layout, image/mask ingestion, augmentation and a synthetic generator.

Layout (EORSSD style)::

    root/
      images/<stem>.png|.jpg
      GT/<stem>.png          # grayscale, foreground > 0.5 * max intensity
      train.txt, test.txt    # optional split lists, one stem per line
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

IMAGE_DIR = "images"
MASK_DIR = "GT"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class IngestionError(Exception):
    """One or more samples could not be paired or decoded."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems[:10]) + (f" (+{len(problems) - 10} more)" if len(problems) > 10 else ""))


@dataclass(frozen=True)
class DatasetSpec:
    root: Path
    stems: tuple[str, ...]

    def image_path(self, stem: str) -> Path:
        return _find_image(self.root / IMAGE_DIR, stem)

    def mask_path(self, stem: str) -> Path:
        return self.root / MASK_DIR / f"{stem}.png"

    def pairs(self) -> list[tuple[Path, Path]]:
        return [(self.image_path(s), self.mask_path(s)) for s in self.stems]

    def __len__(self) -> int:
        return len(self.stems)


def _find_image(folder: Path, stem: str) -> Path:
    for suf in IMAGE_SUFFIXES:
        p = folder / f"{stem}{suf}"
        if p.exists():
            return p
    raise FileNotFoundError(f"no image for stem {stem!r} in {folder}")


def list_stems(folder: Path) -> list[str]:
    return sorted(p.stem for p in Path(folder).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def open_dataset(root, split: str | None = None) -> DatasetSpec:
    """Pair images with masks by stem (sorted). Unpaired stems are reported together."""
    root = Path(root)
    img_dir, mask_dir = root / IMAGE_DIR, root / MASK_DIR
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise IngestionError([f"{root} must contain {IMAGE_DIR}/ and {MASK_DIR}/"])
    images = set(list_stems(img_dir))
    masks = set(list_stems(mask_dir))
    if split is not None:
        listed = [s.strip() for s in (root / f"{split}.txt").read_text().splitlines() if s.strip()]
        images &= set(listed)
        masks &= set(listed)
    problems = [f"image {s!r} has no mask" for s in sorted(images - masks)]
    problems += [f"mask {s!r} has no image" for s in sorted(masks - images)]
    if problems:
        raise IngestionError(problems)
    if not images:
        raise IngestionError([f"no samples found under {root}"])
    return DatasetSpec(root, tuple(sorted(images)))


# ---------------------------------------------------------------------------
# decoding and augmentation
# ---------------------------------------------------------------------------


def read_image(path, size: int | None = None) -> np.ndarray:
    """RGB float32 in [0, 1], (H, W, 3)."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if size is not None and im.size != (size, size):
                im = im.resize((size, size), Image.BILINEAR)
            return np.asarray(im, dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise IngestionError([f"cannot read image {path}: {exc}"]) from exc


def read_mask(path, size: int | None = None) -> np.ndarray:
    """Binary float32 mask (H, W), thresholded at half of the maximum intensity."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise IngestionError([f"cannot read mask {path}: {exc}"]) from exc
    binary = (arr > 0.5 * max(float(arr.max()), 1.0)).astype(np.float32)
    if size is not None and binary.shape != (size, size):
        resized = Image.fromarray((binary * 255).astype(np.uint8)).resize((size, size), Image.BILINEAR)
        binary = (np.asarray(resized, dtype=np.float32) >= 128).astype(np.float32)
    return binary


def normalize(image: np.ndarray) -> np.ndarray:
    """(H, W, 3) in [0, 1] -> normalised (3, H, W)."""
    return ((image - MEAN) / STD).transpose(2, 0, 1).astype(np.float32)


def flip_horizontal(arr: np.ndarray) -> np.ndarray:
    """Mirror the last axis of a (..., H, W) array."""
    return arr[..., ::-1].copy()


def scale_about_center(arr: np.ndarray, scale: float, order: int) -> np.ndarray:
    """Zoom a (C, H, W) array by ``scale`` about the image centre, keeping H x W.

    Output pixel centre ``(y + 0.5)`` samples the input at
    ``(y + 0.5 - H/2) / scale + H/2``; outside samples are 0.
    """
    _, h, w = arr.shape
    matrix = np.diag([1.0, 1.0 / scale, 1.0 / scale])
    offset = np.array([0.0, (h / 2 - 0.5) * (1 - 1 / scale), (w / 2 - 0.5) * (1 - 1 / scale)])
    return ndimage.affine_transform(arr, matrix, offset=offset, order=order, mode="constant", cval=0.0)


@dataclass(frozen=True)
class Augment:
    flip_p: float = 0.5
    scale_range: tuple[float, float] = (0.75, 1.25)


def augment_pair(image: np.ndarray, mask: np.ndarray, rng: np.random.Generator,
                 aug: Augment = Augment(), force_flip: bool | None = None,
                 force_scale: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Apply the same flip and centre scale-crop to a (3, S, S) image and (1, S, S) mask.

    The image is resampled bilinearly, the mask with nearest neighbour so it
    stays binary.
    """
    flip = rng.random() < aug.flip_p if force_flip is None else force_flip
    scale = rng.uniform(*aug.scale_range) if force_scale is None else force_scale
    if flip:
        image, mask = flip_horizontal(image), flip_horizontal(mask)
    if scale != 1.0:
        image = scale_about_center(image, scale, order=1).astype(np.float32)
        mask = scale_about_center(mask, scale, order=0).astype(np.float32)
    return image, mask


def sample_seed(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, index])


def load_sample(image_path, mask_path, size: int, augment: bool = False, seed: int = 0,
                epoch: int = 0, index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Decode, resize to ``size`` and optionally augment one pair.

    Returns:
        image (3, S, S) normalised float32, mask (1, S, S) in {0, 1}.
    """
    image = normalize(read_image(image_path, size))
    mask = read_mask(mask_path, size)[None]
    if augment:
        image, mask = augment_pair(image, mask, sample_seed(seed, epoch, index))
    return image, mask


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Shape:
    kind: str
    params: tuple[float, ...]

    def area(self) -> float:
        if self.kind == "ellipse":
            _, _, a, b = self.params
            return math.pi * a * b
        if self.kind == "rect":
            _, _, hh, hw = self.params
            return 4 * hh * hw
        if self.kind == "lshape":
            _, _, size, thick = self.params
            return 2 * size * thick - thick * thick
        raise ValueError(self.kind)

    def perimeter(self) -> float:
        if self.kind == "ellipse":
            _, _, a, b = self.params
            return math.pi * (3 * (a + b) - math.sqrt((3 * a + b) * (a + 3 * b)))
        if self.kind == "rect":
            _, _, hh, hw = self.params
            return 4 * (hh + hw)
        _, _, size, _ = self.params
        return 4 * size

    def raster(self, size: int) -> np.ndarray:
        """Pixels whose centre lies inside the shape."""
        yy, xx = np.mgrid[0:size, 0:size] + 0.5
        if self.kind == "ellipse":
            cy, cx, a, b = self.params
            return ((yy - cy) / a) ** 2 + ((xx - cx) / b) ** 2 <= 1.0
        if self.kind == "rect":
            cy, cx, hh, hw = self.params
            return (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)
        y0, x0, s, t = self.params
        vert = (yy >= y0) & (yy < y0 + s) & (xx >= x0) & (xx < x0 + t)
        horiz = (yy >= y0 + s - t) & (yy < y0 + s) & (xx >= x0) & (xx < x0 + s)
        return vert | horiz


def random_shape(rng: np.random.Generator, size: int) -> Shape:
    kind = rng.choice(["ellipse", "rect", "lshape"])
    lo, hi = 0.08 * size, 0.22 * size
    if kind == "ellipse":
        a, b = rng.uniform(lo, hi, 2)
        cy, cx = rng.uniform(hi, size - hi, 2)
        return Shape("ellipse", (cy, cx, a, b))
    if kind == "rect":
        hh, hw = rng.uniform(lo, hi, 2)
        cy, cx = rng.uniform(hi, size - hi, 2)
        return Shape("rect", (cy, cx, hh, hw))
    s = rng.uniform(2 * lo, 2 * hi)
    t = rng.uniform(0.3, 0.5) * s
    y0, x0 = rng.uniform(0, size - s, 2)
    return Shape("lshape", (y0, x0, s, t))


def synth_sample(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray, list[Shape]]:
    """One scene: uint8 RGB image, uint8 {0,255} mask, shapes.

    The background is fine-grained texture around a random base colour; each
    shape is a nearly flat patch offset from that base by 0.15-0.3 per channel,
    so objects differ from their surroundings in smoothness as well as colour.
    """
    base = rng.uniform(0.25, 0.65, 3)
    img = base + ndimage.gaussian_filter(rng.standard_normal((size, size, 3)), sigma=(1, 1, 0)) * 0.5
    shapes = [random_shape(rng, size) for _ in range(int(rng.integers(1, 4)))]
    mask = np.zeros((size, size), dtype=bool)
    for shp in shapes:
        region = shp.raster(size)
        colour = np.clip(base + rng.uniform(0.15, 0.3) * rng.choice([-1.0, 1.0], size=3), 0, 1)
        img[region] = colour + rng.standard_normal((int(region.sum()), 3)) * 0.02
        mask |= region
    img = np.clip(img, 0, 1)
    return (img * 255).round().astype(np.uint8), mask.astype(np.uint8) * 255, shapes


def synth_dataset(root, n: int, size: int, seed: int = 0) -> DatasetSpec:
    """Write ``n`` synthetic scenes to ``root`` in the dataset layout.

    Output is a deterministic function of ``(n, size, seed)``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    root = Path(root)
    (root / IMAGE_DIR).mkdir(parents=True, exist_ok=True)
    (root / MASK_DIR).mkdir(parents=True, exist_ok=True)
    stems = []
    for i in range(n):
        img, mask, _ = synth_sample(np.random.default_rng([seed, i]), size)
        stem = f"synth_{i:05d}"
        Image.fromarray(img, "RGB").save(root / IMAGE_DIR / f"{stem}.png", optimize=False)
        Image.fromarray(mask, "L").save(root / MASK_DIR / f"{stem}.png", optimize=False)
        stems.append(stem)
    (root / "train.txt").write_text("\n".join(stems) + "\n")
    return DatasetSpec(root, tuple(stems))


def write_saliency_png(path, pred: np.ndarray) -> None:
    """Save a [0, 1] map as an 8-bit grayscale PNG."""
    arr = np.clip(np.asarray(pred, dtype=np.float64), 0, 1)
    Image.fromarray((arr * 255).round().astype(np.uint8), "L").save(path)


def read_saliency_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
