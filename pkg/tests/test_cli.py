import json
from pathlib import Path

import numpy as np
import pytest
import torch
import yaml

from headpose.cli import load_config, main
from headpose.data import make_synthetic_dataset
from headpose.models import build_model, load_checkpoint, save_checkpoint
from headpose.training import PoseDataset, TrainConfig, train_teacher

FIXTURE = Path(__file__).parent / "fixtures" / "predictions_10.csv"


def test_load_config_overrides(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"train": {"epochs": 5, "lr": 1e-4}}))
    cfg = load_config(str(p), ["train.epochs=2", "model.backbone=tiny-cnn", "data.pose_filter=true"])
    assert cfg["train"]["epochs"] == 2
    assert cfg["train"]["lr"] == 1e-4
    assert cfg["model"]["backbone"] == "tiny-cnn"
    assert cfg["data"]["pose_filter"] is True


def test_bad_set_syntax_exits_1(capsys):
    assert main(["eval", "--set", "nonsense"]) == 1
    assert "key=value" in capsys.readouterr().err


def test_missing_config_file_exits_1():
    assert main(["eval", "--config", "/nonexistent.yaml"]) == 1


def test_unknown_subcommand_rejected():
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 1  # usage error counts as validation


def test_eval_predictions_fixture(tmp_path, capsys):
    rc = main([
        "eval",
        "--set", f"eval.predictions={FIXTURE}",
        "--out", str(tmp_path),
        "--format", "json",
    ])
    assert rc == 0
    out = capsys.readouterr().out
    payload = json.loads(out[: out.rindex("}") + 1])
    assert payload["count"] == 10
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["count"] == 10


def test_train_eval_predict_roundtrip(tmp_path, capsys):
    out = tmp_path / "run"
    rc = main([
        "train-teacher",
        "--set", "data.train=synthetic:64",
        "--set", "data.seed=1",
        "--set", "train.epochs=2",
        "--set", "train.lr=0.001",
        "--set", "train.batch_size=32",
        "--set", "train.val_fraction=0.0",
        "--set", "model.backbone=tiny-cnn",
        "--out", str(out),
    ])
    assert rc == 0
    assert (out / "last.ckpt").exists()
    assert (out / "metrics.jsonl").exists()

    rc = main([
        "eval",
        "--set", f"eval.checkpoint={out / 'last.ckpt'}",
        "--set", "data.test=synthetic:16",
        "--set", "data.seed=2",
        "--out", str(tmp_path / "eval"),
        "--format", "json",
    ])
    assert rc == 0
    assert (tmp_path / "eval" / "report.json").exists()

    rc = main([
        "plot",
        "--set", f"plot.report={tmp_path / 'eval' / 'report.json'}",
        "--out", str(tmp_path / "plots"),
    ])
    assert rc == 0
    for angle in ("yaw", "pitch", "roll"):
        assert (tmp_path / "plots" / f"scatter_{angle}.png").exists()
        assert (tmp_path / "plots" / f"scatter_{angle}.csv").exists()


def test_pseudo_label_then_distill(tmp_path):
    torch.manual_seed(0)
    teacher = build_model("tiny-cnn")
    data = PoseDataset(make_synthetic_dataset(64, seed=1))
    cfg = TrainConfig(mode="hard", epochs=1, lr=1e-3, batch_size=32, seed=0, val_fraction=0.0)
    teacher, _ = train_teacher(teacher, data, cfg)
    ckpt = tmp_path / "teacher.ckpt"
    save_checkpoint(teacher, ckpt)

    rc = main([
        "pseudo-label",
        "--set", f"train.teacher_checkpoints=[{ckpt}]",
        "--set", "data.train=synthetic:64",
        "--set", "data.seed=1",
        "--out", str(tmp_path / "pl"),
    ])
    assert rc == 0
    store = tmp_path / "pl" / "pseudo_labels.bin"
    assert store.exists()

    rc = main([
        "distill",
        "--set", "data.train=synthetic:64",
        "--set", "data.seed=1",
        "--set", "train.epochs=1",
        "--set", "train.batch_size=32",
        "--set", "train.val_fraction=0.0",
        "--set", "train.pseudo_mode=precomputed",
        "--set", f"train.pseudo_store={store}",
        "--set", "model.backbone=tiny-cnn",
        "--out", str(tmp_path / "student"),
    ])
    assert rc == 0
    assert (tmp_path / "student" / "last.ckpt").exists()


def test_predict_on_synthetic_crop(tmp_path, capsys):
    import cv2

    torch.manual_seed(0)
    data = PoseDataset(make_synthetic_dataset(256, seed=7))
    model = build_model("tiny-cnn")
    cfg = TrainConfig(mode="hard", epochs=8, lr=1e-3, batch_size=32, seed=0, val_fraction=0.0)
    model, _ = train_teacher(model, data, cfg)
    ckpt = tmp_path / "m.ckpt"
    save_checkpoint(model, ckpt)

    from headpose.data import render_synthetic_image
    from headpose.geometry import EulerPose

    truth = EulerPose(10, -5, 3)
    img = render_synthetic_image(truth)
    path = tmp_path / "sample.png"
    cv2.imwrite(str(path), cv2.cvtColor((img * 255).astype(np.uint8), cv2.COLOR_RGB2BGR))

    rc = main([
        "predict",
        "--set", f"predict.checkpoint={ckpt}",
        "--set", f"predict.image={path}",
        "--set", "predict.box=0,0,112,112",
    ])
    assert rc == 0
    out = capsys.readouterr().out
    vals = [float(tok) for tok in out.split() if tok[0] in "+-"]
    # toy model trained briefly; just require it lands in the right region
    assert abs(vals[0] - 10) < 15 and abs(vals[1] + 5) < 15 and abs(vals[2] - 3) < 15


def test_distill_without_teachers_exits_1(capsys):
    rc = main([
        "distill",
        "--set", "data.train=synthetic:8",
        "--set", "train.epochs=1",
    ])
    assert rc == 1
    assert "teacher_checkpoints" in capsys.readouterr().err


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "[pass]" in out and "[FAIL]" not in out


def test_prepare_writes_crops(tmp_path):
    import cv2

    img_path = tmp_path / "face.png"
    cv2.imwrite(str(img_path), np.full((60, 80, 3), 128, dtype=np.uint8))
    ann = tmp_path / "ann.csv"
    ann.write_text(
        "image,x1,y1,x2,y2,yaw,pitch,roll\n"
        f"{img_path},10,10,50,40,5,6,7\n"
        f"{tmp_path / 'missing.png'},0,0,10,10,1,2,3\n"
    )
    out = tmp_path / "prep"
    rc = main(["prepare", "--set", f"data.annotations={ann}", "--out", str(out)])
    assert rc == 0
    prepared = [json.loads(l) for l in (out / "prepared.jsonl").read_text().splitlines()]
    assert len(prepared) == 1
    crop = cv2.imread(prepared[0]["image"])
    assert crop.shape == (112, 112, 3)
    assert prepared[0]["yaw"] == 5
