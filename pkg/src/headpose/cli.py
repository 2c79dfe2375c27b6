"""Command-line entry point.

Subcommands: prepare, train-teacher, distill, pseudo-label, eval, predict,
plot, selftest. Configuration is a YAML file whose keys mirror TrainConfig
(see README); any key can be overridden on the command line with repeated
`--set key.path=value`. Exit codes: 0 success, 1 validation error, 2
runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import cv2
import numpy as np
import yaml

from . import selftest
from .codec import DEFAULT_GRID
from .data import (
    AugmentationConfig,
    load_annotations,
    filter_pose_range,
    make_synthetic_dataset,
    validate_records,
    write_pseudo_labels,
)
from .evaluation import (
    EvalReport,
    draw_axes,
    evaluate,
    format_results_table,
    load_prediction_pairs,
    report_from_pairs,
    scatter_export,
)
from .geometry import BoundingBox, EulerPose, crop_and_resize, square_box
from .models import build_model, load_checkpoint
from .training import (
    PoseDataset,
    TrainConfig,
    compute_pseudo_labels,
    distill_student,
    train_teacher,
)


class ValidationError(ValueError):
    """Bad config, arguments, or input files (exit code 1)."""


def load_config(path: str | None, overrides: list[str]) -> dict:
    cfg: dict = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ValidationError(f"config file not found: {path}")
        cfg = yaml.safe_load(p.read_text()) or {}
        if not isinstance(cfg, dict):
            raise ValidationError(f"config root must be a mapping: {path}")
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValidationError(f"--set {key}: {part!r} is not a mapping")
        node[parts[-1]] = yaml.safe_load(value)
    return cfg


def _get(cfg: dict, dotted: str, default=None, required: bool = False):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            if required:
                raise ValidationError(f"config key {dotted!r} is required")
            return default
        node = node[part]
    return node


def _train_config(cfg: dict, mode: str, seed_override=None) -> TrainConfig:
    t = dict(_get(cfg, "train", {}) or {})
    aug = _get(cfg, "augmentation")
    aug_cfg = None
    if aug:
        aug = {k: tuple(v) if isinstance(v, list) else v for k, v in aug.items()}
        aug_cfg = AugmentationConfig(**aug)
    defaults = {"hard": 100, "distill": 200}
    t.setdefault("epochs", defaults[mode])
    t["mode"] = mode
    if seed_override is not None:
        t["seed"] = seed_override
    try:
        return TrainConfig(augmentation=aug_cfg, **{k: v for k, v in t.items() if k != "augmentation"})
    except (TypeError, ValueError) as e:
        raise ValidationError(f"bad train config: {e}") from e


def _resolve_dataset(spec, seed: int, pose_filter: bool) -> PoseDataset:
    """`spec` is 'synthetic:N[:SEED]' or an annotation file path."""
    if spec is None:
        raise ValidationError("dataset not specified (config key data.train / data.test)")
    if isinstance(spec, str) and spec.startswith("synthetic:"):
        parts = spec.split(":")
        n = int(parts[1])
        synth_seed = int(parts[2]) if len(parts) > 2 else seed
        return PoseDataset(make_synthetic_dataset(n, synth_seed))
    if not Path(spec).is_file():
        raise ValidationError(f"annotation file not found: {spec}")
    records = load_annotations(spec)
    if pose_filter:
        records = filter_pose_range(records)
    if not records:
        raise ValidationError(f"no usable records in {spec}")
    return PoseDataset(records)


def _parse_box(value) -> BoundingBox:
    if isinstance(value, str):
        value = [int(v) for v in value.split(",")]
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise ValidationError(f"box must be x1,y1,x2,y2, got {value!r}")
    return BoundingBox(*[int(v) for v in value])


def _out_dir(args) -> Path:
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands

def cmd_prepare(args, cfg):
    spec = _get(cfg, "data.annotations", required=True)
    records = load_annotations(spec)
    problems = validate_records(records)
    for p in problems:
        print(f"[prepare] {p}", file=sys.stderr)
    out = _out_dir(args)
    crops_dir = out / "crops"
    crops_dir.mkdir(exist_ok=True)
    kept = []
    bad_paths = {p.split(": ", 1)[1] for p in problems}
    for i, rec in enumerate(records):
        if rec.image_path in bad_paths:
            continue
        bgr = cv2.imread(rec.image_path)
        crop = crop_and_resize(bgr, square_box(rec.box), 112)
        crop_path = crops_dir / f"{i:06d}.png"
        cv2.imwrite(str(crop_path), crop)
        kept.append(
            {
                "image": str(crop_path),
                "x1": 0, "y1": 0, "x2": 112, "y2": 112,
                "yaw": rec.pose.yaw, "pitch": rec.pose.pitch, "roll": rec.pose.roll,
                "split": rec.split, "source": rec.source,
            }
        )
    with open(out / "prepared.jsonl", "w") as f:
        for row in kept:
            f.write(json.dumps(row) + "\n")
    print(f"prepared {len(kept)}/{len(records)} crops -> {out}")
    return 0


def cmd_train_teacher(args, cfg):
    tcfg = _train_config(cfg, "hard", args.seed)
    data_seed = _get(cfg, "data.seed", tcfg.seed)
    pose_filter = bool(_get(cfg, "data.pose_filter", False))
    dataset = _resolve_dataset(_get(cfg, "data.train"), data_seed, pose_filter)
    backbone = _get(cfg, "model.backbone", "tiny-cnn")
    out = _out_dir(args)
    import torch

    torch.manual_seed(tcfg.seed)
    model = build_model(backbone, grid=DEFAULT_GRID)
    model, history = train_teacher(model, dataset, tcfg, out_dir=out,
                                   resume_from=args.resume)
    print(f"final epoch loss {history[-1]['loss']:.4f}; checkpoints in {out}")
    return 0


def cmd_distill(args, cfg):
    tcfg = _train_config(cfg, "distill", args.seed)
    data_seed = _get(cfg, "data.seed", tcfg.seed)
    pose_filter = bool(_get(cfg, "data.pose_filter", False))
    dataset = _resolve_dataset(_get(cfg, "data.train"), data_seed, pose_filter)
    backbone = _get(cfg, "model.backbone", "resnet18")
    out = _out_dir(args)

    if tcfg.pseudo_mode == "precomputed":
        if not tcfg.pseudo_store:
            raise ValidationError("distill with pseudo_mode=precomputed needs train.pseudo_store")
        teachers = tcfg.pseudo_store
    else:
        if not tcfg.teacher_checkpoints:
            raise ValidationError("distill needs train.teacher_checkpoints (>= 1 path)")
        teachers = [load_checkpoint(p) for p in tcfg.teacher_checkpoints]

    import torch

    torch.manual_seed(tcfg.seed)
    student = build_model(backbone, grid=DEFAULT_GRID)
    student, history = distill_student(student, teachers, dataset, tcfg, out_dir=out,
                                       resume_from=args.resume)
    print(f"final epoch loss {history[-1]['loss']:.6f}; checkpoints in {out}")
    return 0


def cmd_pseudo_label(args, cfg):
    paths = _get(cfg, "train.teacher_checkpoints", required=True)
    data_seed = _get(cfg, "data.seed", args.seed or 0)
    dataset = _resolve_dataset(_get(cfg, "data.train"), data_seed,
                               bool(_get(cfg, "data.pose_filter", False)))
    teachers = [load_checkpoint(p) for p in paths]
    labels = compute_pseudo_labels(teachers, dataset)
    out = _out_dir(args)
    store = out / "pseudo_labels.bin"
    write_pseudo_labels(labels, store, [t.spec.name for t in teachers])
    print(f"wrote {labels.shape[0]} soft targets -> {store}")
    return 0


def cmd_eval(args, cfg):
    predictions = _get(cfg, "eval.predictions")
    if predictions:
        pairs = load_prediction_pairs(predictions)
        report = report_from_pairs(pairs)
    else:
        ckpt = _get(cfg, "eval.checkpoint", required=True)
        model = load_checkpoint(ckpt)
        data_seed = _get(cfg, "data.seed", args.seed or 0)
        dataset = _resolve_dataset(_get(cfg, "data.test"), data_seed,
                                   bool(_get(cfg, "data.pose_filter", False)))
        report = evaluate(model, dataset)

    out = _out_dir(args)
    report.to_json(out / "report.json")
    if args.format == "json":
        print(json.dumps({"per_angle_mae": report.per_angle_mae,
                          "mae": report.mae, "count": report.count}, indent=2))
    else:
        rows = [{"model": "evaluated", "dataset": "test",
                 **report.per_angle_mae, "mae": report.mae}]
        print(format_results_table(rows))
    print(f"report written to {out / 'report.json'}")
    return 0


def cmd_predict(args, cfg):
    ckpt = _get(cfg, "predict.checkpoint", required=True)
    image_path = _get(cfg, "predict.image", required=True)
    box = _parse_box(_get(cfg, "predict.box", required=True))
    model = load_checkpoint(ckpt)
    bgr = cv2.imread(str(image_path))
    if bgr is None:
        raise ValidationError(f"cannot read image {image_path}")
    rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
    crop = crop_and_resize(rgb, square_box(box), model.input_size)
    pose = model.predict_pose(crop)
    print(f"yaw {pose.yaw:+.2f}  pitch {pose.pitch:+.2f}  roll {pose.roll:+.2f}")
    return 0


def cmd_plot(args, cfg):
    report_path = _get(cfg, "plot.report", required=True)
    report = EvalReport.from_json(Path(report_path).read_text())
    out = _out_dir(args)
    for angle in ("yaw", "pitch", "roll"):
        csv_path, png_path = scatter_export(report, angle, out / f"scatter_{angle}")
        print(f"wrote {csv_path} and {png_path}")

    overlay = _get(cfg, "plot.overlay")
    if overlay:
        bgr = cv2.imread(str(overlay["image"]))
        if bgr is None:
            raise ValidationError(f"cannot read image {overlay['image']}")
        box = _parse_box(overlay["box"])
        pose = EulerPose(*[float(v) for v in overlay["pose"]])
        rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
        drawn = draw_axes(rgb, box, pose)
        path = out / "overlay.png"
        cv2.imwrite(str(path), cv2.cvtColor(drawn, cv2.COLOR_RGB2BGR))
        print(f"wrote {path}")
    return 0


def cmd_selftest(args, cfg):
    failures = selftest.run()
    return 0 if failures == 0 else 2


COMMANDS = {
    "prepare": cmd_prepare,
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "pseudo-label": cmd_pseudo_label,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "plot": cmd_plot,
    "selftest": cmd_selftest,
}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; keep 2 for runtime failures and use 1
    # for anything the user typed wrong
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="headpose", description="Head pose estimation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="YAML config path")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory (default ./out)")
        p.add_argument("--format", choices=("json", "table"), default="table")
        if name in {"train-teacher", "distill"}:
            p.add_argument("--resume", default=None, help="resume from a train_state.pt")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        return COMMANDS[args.command](args, cfg)
    except (ValidationError, FileNotFoundError) as e:
        print(f"error [{args.command}]: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary, no stack-trace exits
        print(f"runtime failure [{args.command}]: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
