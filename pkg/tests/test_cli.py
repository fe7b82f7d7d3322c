import json

import numpy as np
import pytest

from spgnn.cli import main, pad_to_multiple
from spgnn.config import desk_config
from spgnn.imageio import read_pgm16


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--n", "2", "--size", "64", "--seed", "2"]) == 0
    (root / "desk.json").write_text(json.dumps(desk_config().to_dict()))
    return root


def test_synth_writes_dataset(workspace):
    gt = json.loads((workspace / "data/gt.json").read_text())
    assert len(gt["images"]) == 2
    assert (workspace / "data/images/000001.ppm").exists()


def test_train_detect_eval(workspace, capsys):
    run = workspace / "run"
    assert main(["train", "--config", str(workspace / "desk.json"), "--data", str(workspace / "data"),
                 "--out", str(run), "--steps", "2", "--quiet"]) == 0
    assert (run / "final.ckpt").exists() and (run / "loss.csv").exists()
    dets = workspace / "dets.json"
    assert main(["detect", "--checkpoint", str(run / "final.ckpt"), "--data", str(workspace / "data"),
                 "--out", str(dets)]) == 0
    assert isinstance(json.loads(dets.read_text()), list)
    report = workspace / "report.json"
    assert main(["eval", "--gt", str(workspace / "data/gt.json"), "--dets", str(dets), "--out", str(report)]) == 0
    assert 0.0 <= json.loads(report.read_text())["AP50"] <= 1.0

    # a single odd-sized image is padded, and boxes are clipped back to the original size
    from spgnn.imageio import read_ppm, write_ppm
    px = read_ppm(workspace / "data/images/000000.ppm")[:, :50, :61]
    write_ppm(workspace / "odd.ppm", px)
    one = workspace / "one.json"
    assert main(["detect", "--checkpoint", str(run / "final.ckpt"), "--image", str(workspace / "odd.ppm"),
                 "--out", str(one), "--overlay", str(workspace / "odd.png")]) == 0
    out = json.loads(one.read_text())
    assert out["meta"] == {"original_size": [50, 61], "padded_size": [64, 64], "padded": True,
                           "pad_mode": "reflect"}
    for d in out["detections"]:
        x, y, w, h = d["bbox"]
        assert x >= 0 and y >= 0 and x + w <= 61 and y + h <= 50
    assert (workspace / "odd.png").exists()


def test_superpixel_command(workspace, capsys):
    out = workspace / "labels.pgm"
    assert main(["superpixel", "--image", str(workspace / "data/images/000000.ppm"), "--m", "16",
                 "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    labels = read_pgm16(out)
    assert labels.shape == (64, 64) and labels.max() + 1 == summary["count"]
    side = json.loads(out.with_suffix(".json").read_text())
    assert sum(side["sizes"]) == 64 * 64 and len(side["centroids"]) == side["M"]


def test_shapes_command(capsys):
    assert main(["shapes"]) == 0
    table = json.loads(capsys.readouterr().out)
    assert table["recovered"] == [256, 896, 896]
    assert [s[1:] for s in table["fpn"]] == [[224, 224], [112, 112], [56, 56], [28, 28]]


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--op", "matmul", "--seeds", "2"]) == 0
    assert "matmul" in capsys.readouterr().out
    assert main(["gradcheck", "--op", "nope"]) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("spgnn gradcheck: error: unknown op") and "\n" not in err


def test_graph_command(workspace, tmp_path):
    out = tmp_path / "g.json"
    assert main(["graph", "--image", str(workspace / "data/images/000000.ppm"), "--k", "4",
                 "--out", str(out)]) == 0
    g = json.loads(out.read_text())
    assert g["grid"] == [16, 16] and g["k"] == 4
    nb = np.array(g["neighbors"])
    assert nb.shape == (256, 4) and (nb[:, 0] == np.arange(256)).all()


@pytest.mark.parametrize("argv", [
    ["eval", "--gt", "missing.json", "--dets", "missing.json"],
    ["detect", "--checkpoint", "missing.ckpt", "--image", "x.ppm"],
    ["superpixel", "--image", "missing.ppm"],
    ["train", "--data", "/nonexistent"],
    ["synth", "--out", "unused", "--size", "50"],
])
def test_errors_are_single_line(argv, capsys):
    assert main(argv) == 1
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and err.startswith(f"spgnn {argv[0]}: error:")


def test_bad_config_reports_key(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"fussion": "add"}))
    assert main(["shapes", "--config", str(p)]) == 1
    assert "fussion" in capsys.readouterr().err


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["detect"])
    assert exc.value.code == 2


def test_pad_to_multiple():
    px = np.random.default_rng(0).uniform(size=(3, 40, 70))
    padded, meta = pad_to_multiple(px)
    assert padded.shape == (3, 64, 96) and meta["padded"]
    assert np.array_equal(padded[:, :40, :70], px)
    same, meta = pad_to_multiple(np.zeros((3, 64, 32)))
    assert same.shape == (3, 64, 32) and not meta["padded"]
