"""Face-crop geometry: box squaring, crop-and-resize, horizontal flip.

Loose face boxes are taller than wide, which skews apparent pose when the
crop is stretched to a square input. Padding the short axis instead keeps
the aspect ratio honest; everything downstream assumes these squared crops.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import cv2
import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned face box in pixel coordinates (y down).

    Coordinates may go negative or past the image edge after squaring;
    out-of-image regions are zero-padded at crop time.
    """

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if self.x2 <= self.x1 or self.y2 <= self.y1:
            raise ValueError(
                f"degenerate box: ({self.x1}, {self.y1}, {self.x2}, {self.y2}) "
                "must have positive width and height"
            )

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class EulerPose:
    """Head orientation as (yaw, pitch, roll) in degrees."""

    yaw: float
    pitch: float
    roll: float

    def as_array(self) -> np.ndarray:
        return np.array([self.yaw, self.pitch, self.roll], dtype=np.float64)

    @staticmethod
    def from_array(a) -> "EulerPose":
        y, p, r = (float(v) for v in a)
        return EulerPose(y, p, r)


def square_box(box: BoundingBox) -> BoundingBox:
    """Pad the shorter axis of `box` so width == height == max(w, h).

    The short axis is expanded by floor(k/2) on the low side and
    k - floor(k/2) on the high side, k = |w - h|, so the result is exactly
    square even for odd k. The longer axis is untouched.
    """
    w, h = box.width, box.height
    k = abs(w - h)
    lo = k // 2
    hi = k - lo
    if w >= h:
        return BoundingBox(box.x1, box.y1 - lo, box.x2, box.y2 + hi)
    return BoundingBox(box.x1 - lo, box.y1, box.x2 + hi, box.y2)


def crop_and_resize(image: np.ndarray, box: BoundingBox, size: int = 112) -> np.ndarray:
    """Extract the (square) `box` region, zero-padding outside the image,
    and bilinearly resample to size x size.

    Returns an array with the same dtype and channel count as `image`.
    """
    if size <= 0:
        raise ValueError(f"size must be positive, got {size}")
    h, w = image.shape[:2]
    channels = image.shape[2] if image.ndim == 3 else 1
    side_h = box.height
    side_w = box.width

    canvas_shape = (side_h, side_w, channels) if image.ndim == 3 else (side_h, side_w)
    canvas = np.zeros(canvas_shape, dtype=image.dtype)

    # intersection of box with the image, in both coordinate frames
    ix1, iy1 = max(box.x1, 0), max(box.y1, 0)
    ix2, iy2 = min(box.x2, w), min(box.y2, h)
    if ix2 <= ix1 or iy2 <= iy1:
        warnings.warn(
            f"box {box.as_tuple()} does not intersect a {w}x{h} image; "
            "returning an all-zero crop",
            RuntimeWarning,
            stacklevel=2,
        )
        out_shape = (size, size, channels) if image.ndim == 3 else (size, size)
        return np.zeros(out_shape, dtype=image.dtype)

    canvas[iy1 - box.y1 : iy2 - box.y1, ix1 - box.x1 : ix2 - box.x1] = image[iy1:iy2, ix1:ix2]

    if side_h == size and side_w == size:
        return canvas
    return cv2.resize(canvas, (size, size), interpolation=cv2.INTER_LINEAR)


def flip_horizontal(image: np.ndarray, pose: EulerPose) -> tuple[np.ndarray, EulerPose]:
    """Mirror the image about its vertical axis and relabel yaw/roll to
    -yaw/-roll (pitch is unchanged). Applying it twice is the identity."""
    return image[:, ::-1].copy(), EulerPose(-pose.yaw, pose.pitch, -pose.roll)
