"""Dataset ingestion, augmentation, synthetic data, and pseudo-label storage.

Annotation files are CSV or JSONL with columns image, x1, y1, x2, y2, yaw,
pitch, roll (optional split, source). The synthetic dataset draws three
colored bars whose horizontal positions are exact linear functions of the
pose, so labels are recoverable from pixels by construction and serve as a
desk-scale training/eval oracle.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .geometry import BoundingBox, EulerPose, flip_horizontal

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("image", "x1", "y1", "x2", "y2", "yaw", "pitch", "roll")

PSEUDO_MAGIC = b"HPOSEPSL"


@dataclass
class SampleRecord:
    image_path: str
    box: BoundingBox
    pose: EulerPose
    split: str = "train"
    source: str = ""


class SchemaError(ValueError):
    pass


def _record_from_row(row: dict, line_no: int) -> SampleRecord:
    pose_vals = [float(row[k]) for k in ("yaw", "pitch", "roll")]
    if not all(math.isfinite(v) for v in pose_vals):
        raise ValueError(f"line {line_no}: non-finite pose {pose_vals}")
    box = BoundingBox(int(row["x1"]), int(row["y1"]), int(row["x2"]), int(row["y2"]))
    return SampleRecord(
        image_path=str(row["image"]),
        box=box,
        pose=EulerPose(*pose_vals),
        split=str(row.get("split") or "train"),
        source=str(row.get("source") or ""),
    )


def load_annotations(path, fmt: str | None = None) -> list[SampleRecord]:
    """Parse a CSV or JSONL annotation file into SampleRecords.

    `fmt` defaults to the file extension. Rows with non-finite poses or
    degenerate boxes are dropped with a line-numbered warning; a missing
    column raises SchemaError naming it. Row order is preserved.
    """
    path = Path(path)
    if fmt is None:
        fmt = "jsonl" if path.suffix.lower() in {".jsonl", ".json"} else "csv"
    if fmt not in {"csv", "jsonl"}:
        raise ValueError(f"unknown annotation format {fmt!r}")

    rows: list[tuple[int, dict]] = []
    with open(path, newline="") as f:
        if fmt == "csv":
            reader = csv.DictReader(f)
            if reader.fieldnames is None:
                rows = []
            else:
                missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
                if missing:
                    raise SchemaError(f"{path}: missing column(s) {missing}")
                rows = [(i, row) for i, row in enumerate(reader, start=2)]
        else:
            for i, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                row = json.loads(line)
                missing = [c for c in REQUIRED_COLUMNS if c not in row]
                if missing:
                    raise SchemaError(f"{path}:{i}: missing key(s) {missing}")
                rows.append((i, row))

    if not rows:
        warnings.warn(f"{path}: no annotation rows found", RuntimeWarning, stacklevel=2)
        return []

    records = []
    for line_no, row in rows:
        try:
            records.append(_record_from_row(row, line_no))
        except (ValueError, KeyError) as e:
            log.warning("%s: dropping row: %s", path, e)
    return records


def validate_records(records: list[SampleRecord]) -> list[str]:
    """Pre-training validation pass: report unreadable image paths."""
    problems = []
    for rec in records:
        if not Path(rec.image_path).is_file():
            problems.append(f"missing image: {rec.image_path}")
        elif cv2.imread(rec.image_path) is None:
            problems.append(f"unreadable image: {rec.image_path}")
    return problems


def filter_pose_range(records: list[SampleRecord], limit: float = 93.0) -> list[SampleRecord]:
    """Drop records where any |angle| exceeds `limit` (codec range)."""
    return [
        r for r in records
        if max(abs(r.pose.yaw), abs(r.pose.pitch), abs(r.pose.roll)) <= limit
    ]


# ---------------------------------------------------------------------------
# augmentation

@dataclass
class AugmentationConfig:
    """Training-time augmentation knobs. The operations mirror the training
    recipe (random down/upsampling, brightness/contrast, Gaussian blur,
    horizontal flip); the magnitudes are local defaults, config-exposed."""

    downscale_range: tuple[float, float] = (0.2, 1.0)
    brightness_delta: float = 0.25
    contrast_range: tuple[float, float] = (0.75, 1.25)
    blur_sigma_range: tuple[float, float] = (0.0, 2.0)
    flip_prob: float = 0.5

    def __post_init__(self):
        for name in ("downscale_range", "contrast_range", "blur_sigma_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} is empty: ({lo}, {hi})")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob {self.flip_prob} outside [0, 1]")


def augment(
    image: np.ndarray,
    pose: EulerPose,
    cfg: AugmentationConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, EulerPose]:
    """Apply the augmentation stack to one square float [0, 1] crop.

    Order: resolution degradation, photometric jitter, blur, flip. Only the
    flip touches the label (yaw/roll sign). All randomness comes from `rng`,
    so (seed, config, input) fully determines the output.
    """
    size = image.shape[0]
    out = image

    s = rng.uniform(*cfg.downscale_range)
    if s < 1.0:
        small = max(int(s * size), 2)
        out = cv2.resize(out, (small, small), interpolation=cv2.INTER_LINEAR)
        out = cv2.resize(out, (size, size), interpolation=cv2.INTER_LINEAR)

    delta = rng.uniform(-cfg.brightness_delta, cfg.brightness_delta)
    contrast = rng.uniform(*cfg.contrast_range)
    if delta != 0.0 or contrast != 1.0:
        out = np.clip((out - 0.5) * contrast + 0.5 + delta, 0.0, 1.0)

    sigma = rng.uniform(*cfg.blur_sigma_range)
    if sigma > 1e-6:
        out = cv2.GaussianBlur(out, (0, 0), sigma)

    if rng.random() < cfg.flip_prob:
        out, pose = flip_horizontal(out, pose)

    return out, pose


# ---------------------------------------------------------------------------
# synthetic dataset

SYNTH_BAR_HALF_WIDTH = 3.0
SYNTH_MARGIN = 8.0
SYNTH_ANGLE_SPAN = 90.0  # poses drawn from [-90, 90]


@dataclass
class SyntheticSample:
    sample_id: int
    image: np.ndarray  # size x size x 3 float32 in [0, 1]
    pose: EulerPose


def _bar_center(angle: float, size: int) -> float:
    usable = size - 2 * SYNTH_MARGIN
    return SYNTH_MARGIN + (angle + SYNTH_ANGLE_SPAN) / (2 * SYNTH_ANGLE_SPAN) * usable


def _center_to_angle(x: float, size: int) -> float:
    usable = size - 2 * SYNTH_MARGIN
    return (x - SYNTH_MARGIN) / usable * 2 * SYNTH_ANGLE_SPAN - SYNTH_ANGLE_SPAN


def render_synthetic_image(pose: EulerPose, size: int = 112) -> np.ndarray:
    """Draw the canonical three-bar pose image.

    The image is split into three horizontal bands. Each band holds one
    vertical bar, 6 px wide, drawn with subpixel (coverage) antialiasing in
    its own color channel: red encodes yaw (top band), green pitch (middle),
    blue roll (bottom). The bar center moves linearly with the angle, from
    x = 8 at -90 degrees to x = size - 8 at +90. Pose (0, 0, 0) puts all
    three bars at the horizontal center.
    """
    img = np.zeros((size, size, 3), dtype=np.float32)
    band = size // 3
    cols = np.arange(size, dtype=np.float64)
    for channel, angle in enumerate((pose.yaw, pose.pitch, pose.roll)):
        x = _bar_center(angle, size)
        # fractional coverage of [x - hw, x + hw] over each 1 px column
        cover = np.clip(
            np.minimum(cols + 1.0, x + SYNTH_BAR_HALF_WIDTH)
            - np.maximum(cols, x - SYNTH_BAR_HALF_WIDTH),
            0.0,
            1.0,
        )
        r0 = channel * band
        r1 = size if channel == 2 else (channel + 1) * band
        img[r0:r1, :, channel] = cover.astype(np.float32)
    return img


def decode_synthetic_pose(image: np.ndarray) -> EulerPose:
    """Analytic inverse of render_synthetic_image: intensity-weighted bar
    centroids per band/channel, mapped back to degrees."""
    size = image.shape[0]
    band = size // 3
    cols = np.arange(size, dtype=np.float64) + 0.5
    angles = []
    for channel in range(3):
        r0 = channel * band
        r1 = size if channel == 2 else (channel + 1) * band
        profile = image[r0:r1, :, channel].astype(np.float64).sum(axis=0)
        total = profile.sum()
        if total <= 0:
            raise ValueError(f"no bar found in channel {channel}")
        centroid = (profile * cols).sum() / total
        angles.append(_center_to_angle(centroid, size))
    return EulerPose(*angles)


def make_synthetic_dataset(n: int, seed: int, size: int = 112) -> list[SyntheticSample]:
    """Generate `n` bar images with poses drawn uniformly from [-90, 90]^3.

    Deterministic in (n, seed, size); labels are exact by construction."""
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        pose = EulerPose(*rng.uniform(-SYNTH_ANGLE_SPAN, SYNTH_ANGLE_SPAN, size=3))
        samples.append(SyntheticSample(i, render_synthetic_image(pose, size), pose))
    return samples


# ---------------------------------------------------------------------------
# pseudo-label store

PSEUDO_VERSION = 1


def write_pseudo_labels(labels: np.ndarray, path, teacher_names: list[str]) -> None:
    """Write soft targets to disk.

    File layout: 8-byte magic, uint32 little-endian header length, JSON
    header {version, count, num_bins, teacher_names}, then count x 3 x
    num_bins little-endian float32 values in record order.
    """
    labels = np.asarray(labels, dtype=np.float32)
    if labels.ndim != 3 or labels.shape[1] != 3:
        raise ValueError(f"expected (N, 3, num_bins) labels, got {labels.shape}")
    sums = labels.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-3):
        raise ValueError("pseudo-label rows must be normalized")
    header = {
        "version": PSEUDO_VERSION,
        "count": int(labels.shape[0]),
        "num_bins": int(labels.shape[2]),
        "teacher_names": list(teacher_names),
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(PSEUDO_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(labels.astype("<f4").tobytes())


def read_pseudo_labels(path, expected_bins: int | None = None) -> tuple[np.ndarray, dict]:
    """Read a pseudo-label store; returns (labels (N, 3, num_bins), header).

    Raises ValueError on magic/version mismatch, truncation, or a num_bins
    that disagrees with `expected_bins`.
    """
    with open(path, "rb") as f:
        magic = f.read(len(PSEUDO_MAGIC))
        if magic != PSEUDO_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, not a pseudo-label store")
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode("utf-8"))
        if header.get("version") != PSEUDO_VERSION:
            raise ValueError(f"{path}: unsupported store version {header.get('version')}")
        count, num_bins = header["count"], header["num_bins"]
        if expected_bins is not None and num_bins != expected_bins:
            raise ValueError(f"{path}: store has {num_bins} bins, codec expects {expected_bins}")
        payload = f.read()
    expected_bytes = count * 3 * num_bins * 4
    if len(payload) != expected_bytes:
        raise ValueError(
            f"{path}: payload is {len(payload)} bytes, header promises {expected_bytes}"
        )
    labels = np.frombuffer(payload, dtype="<f4").reshape(count, 3, num_bins).copy()
    return labels, header
