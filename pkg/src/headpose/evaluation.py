"""Evaluation harness: per-angle MAE reports, error scatter exports, and
pose-axis overlays.

The benchmark metric is the mean absolute error per Euler angle over a test
set, plus their mean. No angular wrapping is applied: poses live in
[-93, 93] degrees where wrap-around cannot occur.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import cv2
import numpy as np

from .geometry import BoundingBox, EulerPose

ANGLE_NAMES = ("yaw", "pitch", "roll")


@dataclass
class SampleEval:
    sample_id: str
    truth: EulerPose
    pred: EulerPose

    @property
    def abs_err(self) -> np.ndarray:
        return np.abs(self.pred.as_array() - self.truth.as_array())


@dataclass
class EvalReport:
    per_angle_mae: dict[str, float]
    mae: float
    count: int
    per_sample: list[SampleEval] = field(default_factory=list)

    def to_json(self, path=None) -> str:
        payload = {
            "per_angle_mae": self.per_angle_mae,
            "mae": self.mae,
            "count": self.count,
            "per_sample": [
                {
                    "id": s.sample_id,
                    "truth": list(s.truth.as_array()),
                    "pred": list(s.pred.as_array()),
                    "abs_err": list(s.abs_err),
                }
                for s in self.per_sample
            ],
        }
        text = json.dumps(payload, indent=2)
        if path:
            Path(path).write_text(text)
        return text

    @staticmethod
    def from_json(text: str) -> "EvalReport":
        d = json.loads(text)
        per_sample = [
            SampleEval(s["id"], EulerPose.from_array(s["truth"]), EulerPose.from_array(s["pred"]))
            for s in d["per_sample"]
        ]
        return EvalReport(d["per_angle_mae"], d["mae"], d["count"], per_sample)


def report_from_pairs(pairs: list[tuple[str, EulerPose, EulerPose]]) -> EvalReport:
    """Build an EvalReport from (id, truth, pred) triples."""
    if not pairs:
        raise ValueError("cannot evaluate an empty record list")
    samples = [SampleEval(i, t, p) for i, t, p in pairs]
    errs = np.stack([s.abs_err for s in samples])  # (N, 3)
    per_angle = errs.mean(axis=0)
    mae = {name: float(v) for name, v in zip(ANGLE_NAMES, per_angle)}
    return EvalReport(mae, float(per_angle.mean()), len(samples), samples)


def evaluate(model, dataset, batch_size: int = 64) -> EvalReport:
    """Run `model` over a PoseDataset-like object and compute MAE."""
    import torch

    from .training import PoseDataset, _batch_tensor

    if not isinstance(dataset, PoseDataset):
        dataset = PoseDataset(dataset)
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty record list")

    pairs = []
    for start in range(0, len(dataset), batch_size):
        idx = range(start, min(start + batch_size, len(dataset)))
        images, poses = zip(*(dataset.get(i) for i in idx))
        preds = model.predict_batch(_batch_tensor(list(images)))
        for i, truth, pred in zip(idx, poses, preds):
            pairs.append((str(i), truth, EulerPose.from_array(pred.numpy())))
    return report_from_pairs(pairs)


def load_prediction_pairs(path) -> list[tuple[str, EulerPose, EulerPose]]:
    """Read a predictions CSV: id, yaw, pitch, roll, pred_yaw, pred_pitch, pred_roll."""
    pairs = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            truth = EulerPose(float(row["yaw"]), float(row["pitch"]), float(row["roll"]))
            pred = EulerPose(
                float(row["pred_yaw"]), float(row["pred_pitch"]), float(row["pred_roll"])
            )
            pairs.append((row["id"], truth, pred))
    return pairs


def scatter_export(report: EvalReport, angle: str, path_prefix) -> tuple[Path, Path]:
    """Write (truth value, abs error) pairs for one angle as CSV + scatter PNG."""
    if angle not in ANGLE_NAMES:
        raise ValueError(f"angle must be one of {ANGLE_NAMES}, got {angle!r}")
    if not report.per_sample:
        raise ValueError("report has no per-sample data to plot")
    a = ANGLE_NAMES.index(angle)
    values = np.array([s.truth.as_array()[a] for s in report.per_sample])
    errors = np.array([s.abs_err[a] for s in report.per_sample])

    path_prefix = Path(path_prefix)
    path_prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = path_prefix.with_suffix(".csv")
    png_path = path_prefix.with_suffix(".png")

    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"{angle}_deg", "abs_error_deg"])
        writer.writerows(zip(values, errors))

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(values, errors, s=6, alpha=0.6)
    ax.set_xlabel(f"{angle} (degrees)")
    ax.set_ylabel("absolute error (degrees)")
    ax.set_title(f"{angle} error vs. pose value")
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return csv_path, png_path


def rotation_matrix(pose: EulerPose) -> np.ndarray:
    """World-from-head rotation, intrinsic yaw-pitch-roll (y-x-z order).

    R = Ry(yaw) @ Rx(pitch) @ Rz(roll), angles in degrees, in an image-style
    right-handed frame with x right, y down, z toward the camera. The head
    axes are x = side, y = down, z = front.
    """
    y, p, r = np.deg2rad(pose.as_array())
    cy, sy = np.cos(y), np.sin(y)
    cp, sp = np.cos(p), np.sin(p)
    cr, sr = np.cos(r), np.sin(r)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return ry @ rx @ rz


def draw_axes(image: np.ndarray, box: BoundingBox, pose: EulerPose, thickness: int = 2) -> np.ndarray:
    """Overlay the rotated head axes on a copy of `image`.

    Anchored at the box center with length half the box side: side axis in
    red, down axis in green, front axis in blue (RGB channel order).
    """
    out = np.ascontiguousarray(image.copy())
    rot = rotation_matrix(pose)
    cx = (box.x1 + box.x2) / 2.0
    cy = (box.y1 + box.y2) / 2.0
    length = 0.5 * max(box.width, box.height)

    colors = {0: (255, 0, 0), 1: (0, 255, 0), 2: (0, 0, 255)}  # side, down, front
    if out.dtype != np.uint8:
        colors = {k: tuple(c / 255.0 for c in v) for k, v in colors.items()}
    for axis, color in colors.items():
        v = rot[:, axis]
        end = (int(round(cx + length * v[0])), int(round(cy + length * v[1])))
        cv2.line(out, (int(round(cx)), int(round(cy))), end, color, thickness)
    return out


def axis_endpoints(box: BoundingBox, pose: EulerPose) -> np.ndarray:
    """Projected 2D endpoints of the three axes (rows: side, down, front)."""
    rot = rotation_matrix(pose)
    cx = (box.x1 + box.x2) / 2.0
    cy = (box.y1 + box.y2) / 2.0
    length = 0.5 * max(box.width, box.height)
    return np.stack([[cx + length * rot[0, a], cy + length * rot[1, a]] for a in range(3)])


def load_reference_results() -> list[dict]:
    """Published benchmark rows (per-angle MAE on BIWI / AFLW-2000).

    These are reported numbers shipped for table formatting; they are not
    reproduced by this codebase.
    """
    with resources.files("headpose.fixtures").joinpath("reference_results.json").open() as f:
        return json.load(f)["rows"]


def format_results_table(rows: list[dict]) -> str:
    """Render benchmark rows as a fixed-width text table."""
    header = f"{'model':<22} {'dataset':<10} {'yaw':>7} {'pitch':>7} {'roll':>7} {'mae':>7}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['model']:<22} {r['dataset']:<10} "
            f"{r['yaw']:>7.3f} {r['pitch']:>7.3f} {r['roll']:>7.3f} {r['mae']:>7.3f}"
        )
    return "\n".join(lines)
