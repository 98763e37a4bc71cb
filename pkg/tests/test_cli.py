import subprocess
import sys

import pytest

from gcrpnet.cli import main


def test_scan_dump(capsys):
    assert main(["scan-dump", "--h", "4", "--w", "4", "--grid", "2", "--dir", "rightward"]) == 0
    assert capsys.readouterr().out.strip() == "[0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15]"


def test_scan_dump_all_directions(capsys):
    assert main(["scan-dump", "--h", "2", "--w", "2", "--grid", "1", "--dir", "all"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines == ["rightward: [0, 1, 2, 3]", "downward: [0, 2, 1, 3]", "leftward: [3, 2, 1, 0]",
                     "upward: [3, 1, 2, 0]"]


def test_scan_dump_bad_grid_exit_code(capsys):
    assert main(["scan-dump", "--h", "5", "--w", "4", "--grid", "2"]) == 2
    assert "divide" in capsys.readouterr().err


def test_synth_train_infer_eval(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--n", "3", "--size", "32", "--seed", "2", "--out", str(data)]) == 0
    cfg = tmp_path / "toy.cfg"
    cfg.write_text("base_channels=4\nenc_depths=1,1,1,1\ndec_depths=1,1,1,1\nd_state=2\ninput_size=32\n"
                   "batch=2\nepochs=1\nlr=0.001\ncheckpoint_every=0\n")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(out)]) == 0
    assert main(["infer", "--ckpt", str(out / "final.gcrp"), "--images", str(data / "images"),
                 "--out", str(tmp_path / "pred")]) == 0
    report = tmp_path / "rep.csv"
    assert main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(data / "GT"), "--report", str(report)]) == 0
    header, row = report.read_text().strip().splitlines()
    assert header.startswith("f_max") and len(row.split(",")) == len(header.split(","))
    assert (tmp_path / "rep_curves.csv").exists()


def test_eval_mismatch_exit_code(tmp_path, capsys):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    from PIL import Image

    Image.new("L", (4, 4)).save(tmp_path / "a" / "x.png")
    Image.new("L", (4, 4)).save(tmp_path / "b" / "y.png")
    assert main(["eval", "--pred", str(tmp_path / "a"), "--gt", str(tmp_path / "b")]) == 2
    err = capsys.readouterr().err
    assert "'x'" in err and "'y'" in err


def test_missing_checkpoint_exit_code(tmp_path):
    assert main(["infer", "--ckpt", str(tmp_path / "none.gcrp"), "--images", str(tmp_path),
                 "--out", str(tmp_path / "o")]) == 2


def test_gradcheck_op_scope(capsys):
    assert main(["gradcheck", "--scope", "op"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 41


def test_bench_prints_timing(capsys):
    assert main(["bench", "--op", "depthwise_conv2d", "--shape", "1,4,8,8", "--repeat", "1"]) == 0
    assert "ms" in capsys.readouterr().out


def test_module_entry_point():
    done = subprocess.run([sys.executable, "-m", "gcrpnet", "--help"], capture_output=True, text=True)
    assert done.returncode == 0 and "scan-dump" in done.stdout


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
