import numpy as np
import pytest
from PIL import Image

from gcrpnet import data as D


@pytest.fixture(scope="module")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    D.synth_dataset(root, 6, 48, seed=7)
    return root


def test_synth_is_byte_deterministic(tmp_path, synth_root):
    D.synth_dataset(tmp_path, 6, 48, seed=7)
    for sub in (D.IMAGE_DIR, D.MASK_DIR):
        for p in sorted((synth_root / sub).iterdir()):
            assert (tmp_path / sub / p.name).read_bytes() == p.read_bytes()


def test_synth_masks_are_binary(synth_root):
    for p in (synth_root / D.MASK_DIR).iterdir():
        values = set(np.unique(np.asarray(Image.open(p))).tolist())
        assert values <= {0, 255} and 255 in values


@pytest.mark.parametrize("seed", range(40))
def test_shape_area_within_perimeter(seed):
    rng = np.random.default_rng(seed)
    for size in (48, 64, 128):
        shp = D.random_shape(rng, size)
        assert abs(int(shp.raster(size).sum()) - shp.area()) <= shp.perimeter()


def test_synth_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        D.synth_dataset(tmp_path, 0, 32)


def test_open_dataset_pairs_sorted(synth_root):
    ds = D.open_dataset(synth_root)
    assert list(ds.stems) == sorted(ds.stems) and len(ds) == 6
    assert D.open_dataset(synth_root, split="train").stems == ds.stems


def test_unpaired_stems_are_all_listed(tmp_path):
    (tmp_path / D.IMAGE_DIR).mkdir()
    (tmp_path / D.MASK_DIR).mkdir()
    px = np.zeros((4, 4, 3), np.uint8)
    for stem in ("a", "b", "c"):
        Image.fromarray(px).save(tmp_path / D.IMAGE_DIR / f"{stem}.png")
    for stem in ("b", "d"):
        Image.fromarray(px[..., 0]).save(tmp_path / D.MASK_DIR / f"{stem}.png")
    with pytest.raises(D.IngestionError) as err:
        D.open_dataset(tmp_path)
    assert err.value.problems == ["image 'a' has no mask", "image 'c' has no mask", "mask 'd' has no image"]


def test_unreadable_file_is_an_ingestion_error(tmp_path):
    bad = tmp_path / "x.png"
    bad.write_bytes(b"not an image")
    with pytest.raises(D.IngestionError):
        D.read_image(bad)
    with pytest.raises(D.IngestionError):
        D.read_mask(bad)


def test_no_augment_is_deterministic(synth_root):
    ds = D.open_dataset(synth_root)
    img, msk = ds.pairs()[0]
    a = D.load_sample(img, msk, 32)
    b = D.load_sample(img, msk, 32)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert a[0].shape == (3, 32, 32) and a[1].shape == (1, 32, 32)
    assert set(np.unique(a[1])) <= {0.0, 1.0}


def test_normalisation_constants():
    white = np.ones((1, 1, 3), np.float32)
    np.testing.assert_allclose(D.normalize(white)[:, 0, 0], (1 - D.MEAN) / D.STD, rtol=1e-6)


def test_flip_is_an_involution():
    x = np.random.default_rng(0).random((3, 5, 7))
    assert np.array_equal(D.flip_horizontal(D.flip_horizontal(x)), x)


def marker_target(y, x, size, scale, flip):
    """Where the centre of input pixel (y, x) lands after flip then centre zoom."""
    if flip:
        x = size - 1 - x
    move = lambda v: (v + 0.5 - size / 2) * scale + size / 2 - 0.5
    return move(y), move(x)


@pytest.mark.parametrize("flip", [False, True])
@pytest.mark.parametrize("scale", [0.75, 1.0, 1.1, 1.25])
@pytest.mark.parametrize("yx", [(5, 9), (20, 6), (16, 16)])
def test_geometric_parity_image_and_mask(flip, scale, yx):
    size = 32
    y, x = yx
    image = np.zeros((3, size, size), np.float32)
    mask = np.zeros((1, size, size), np.float32)
    image[:, y - 1:y + 2, x - 1:x + 2] = 1.0      # 3x3 marker survives nearest-neighbour shrinking
    mask[0, y - 1:y + 2, x - 1:x + 2] = 1.0
    out_img, out_mask = D.augment_pair(image, mask, np.random.default_rng(0), force_flip=flip, force_scale=scale)
    ty, tx = marker_target(y, x, size, scale, flip)
    w = out_img[0]
    cy, cx = (np.indices(w.shape) * w).reshape(2, -1).sum(1) / w.sum()
    assert abs(cy - ty) < 0.51 and abs(cx - tx) < 0.51
    my, mx = np.argwhere(out_mask[0] > 0).mean(0)
    assert abs(my - ty) <= 1 and abs(mx - tx) <= 1
    assert set(np.unique(out_mask)) <= {0.0, 1.0}


def test_augment_seed_reproducible():
    image = np.random.default_rng(1).random((3, 16, 16)).astype(np.float32)
    mask = (image[:1] > 0.5).astype(np.float32)
    a = D.augment_pair(image, mask, D.sample_seed(3, 1, 2))
    b = D.augment_pair(image, mask, D.sample_seed(3, 1, 2))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_saliency_png_round_trip(tmp_path):
    pred = np.linspace(0, 1, 64).reshape(8, 8)
    D.write_saliency_png(tmp_path / "p.png", pred)
    back = D.read_saliency_png(tmp_path / "p.png")
    assert np.abs(back - pred).max() <= 0.5 / 255 + 1e-12
