import csv
import math

import numpy as np
import pytest

from gcrpnet import ModelConfig, TrainConfig, evaluate, infer, train
from gcrpnet.data import IMAGE_DIR, MASK_DIR, open_dataset, synth_dataset
from gcrpnet.optim import NumericalError
from gcrpnet.training import epoch_order, read_flat_config, split_config

CFG = ModelConfig.micro(base_channels=4, d_state=2, input_size=32)


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    synth_dataset(root, 4, 32, seed=1)
    return open_dataset(root)


def run(toy, out, **kw):
    tc = TrainConfig(**{"batch": 2, "epochs": 2, "lr": 1e-3, "checkpoint_every": 3, **kw})
    return train(CFG, tc, toy, out)


def test_two_epoch_log_is_finite(toy, tmp_path):
    r = run(toy, tmp_path)
    assert r.steps == 4 and len(r.losses) == 4
    rows = list(csv.DictReader(open(tmp_path / "loss_log.csv")))
    assert [int(row["step"]) for row in rows] == [1, 2, 3, 4]
    assert [int(row["epoch"]) for row in rows] == [0, 0, 1, 1]
    assert all(math.isfinite(float(row["loss"])) for row in rows)
    assert (tmp_path / "final.gcrp").exists() and (tmp_path / "step_0000003.gcrp").exists()


def test_same_seed_same_first_epoch(toy, tmp_path):
    a = run(toy, tmp_path / "a", epochs=1)
    b = run(toy, tmp_path / "b", epochs=1)
    assert a.losses == b.losses
    c = run(toy, tmp_path / "c", epochs=1, seed=5)
    assert c.losses != a.losses


def test_epoch_order_is_seeded_permutation():
    a = epoch_order(10, 0, 3)
    assert np.array_equal(np.sort(a), np.arange(10))
    assert np.array_equal(a, epoch_order(10, 0, 3))
    assert not np.array_equal(a, epoch_order(10, 0, 4))


def test_nan_loss_keeps_last_good(toy, tmp_path, monkeypatch):
    import gcrpnet.training as T

    real = T.total_loss
    calls = {"n": 0}

    def poisoned(preds, g, weights):
        calls["n"] += 1
        out = real(preds, g, weights)
        return out * float("nan") if calls["n"] == 2 else out

    monkeypatch.setattr(T, "total_loss", poisoned)
    with pytest.raises(NumericalError):
        run(toy, tmp_path)
    assert (tmp_path / "last_good.gcrp").exists()
    assert not (tmp_path / "final.gcrp").exists()


def test_flat_config_parsing(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# toy\nbase_channels = 8\ninput_size=32\nlr=0.01\nbatch=2\nseed=3\naugment=false\n")
    mc, tc = split_config(read_flat_config(p))
    assert (mc.base_channels, mc.input_size, mc.seed) == (8, 32, 3)
    assert (tc.lr, tc.batch, tc.seed, tc.augment) == (0.01, 2, 3, False)
    with pytest.raises(KeyError):
        split_config({"bogus": "1"})


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(batch=0)
    assert TrainConfig().lr == 1e-4 and TrainConfig().batch == 4


def test_gt_as_prediction_scores_perfectly(toy):
    rep = evaluate(toy.root / MASK_DIR, toy.root / MASK_DIR)
    assert rep.mae == 0.0 and rep.f_max == 1.0 and rep.num_images == 4


def test_infer_writes_input_sized_maps(toy, tmp_path):
    r = run(toy, tmp_path / "run", epochs=1)
    from PIL import Image

    img_dir = tmp_path / "imgs"
    img_dir.mkdir()
    Image.new("RGB", (50, 30), (120, 80, 40)).save(img_dir / "odd.png")
    Image.new("RGB", (32, 32), (10, 200, 40)).save(img_dir / "even.jpg")
    written = infer(r.checkpoint, img_dir, tmp_path / "pred")
    assert sorted(p.name for p in written) == ["even.png", "odd.png"]
    assert Image.open(tmp_path / "pred" / "odd.png").size == (50, 30)
    assert Image.open(tmp_path / "pred" / "even.png").mode == "L"
    pred = infer(r.checkpoint, toy.root / IMAGE_DIR, tmp_path / "pred2")
    assert len(pred) == 4
    rep = evaluate(tmp_path / "pred2", toy.root / MASK_DIR)
    assert 0 <= rep.mae <= 1


def test_evaluate_lists_mismatched_stems(toy, tmp_path):
    from gcrpnet.data import IngestionError

    (tmp_path / "p").mkdir()
    from PIL import Image

    Image.new("L", (32, 32)).save(tmp_path / "p" / "stray.png")
    with pytest.raises(IngestionError) as err:
        evaluate(tmp_path / "p", toy.root / MASK_DIR)
    assert len(err.value.problems) == 5
