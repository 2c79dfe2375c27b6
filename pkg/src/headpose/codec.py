"""Angle <-> bin codec: 62 bins of 3 degrees tiling [-93, 93].

Each Euler angle is classified into one of 62 contiguous bins and decoded
back to a continuous value as the expectation of the bin-center grid under
the predicted distribution. Bin centers run -91.5 ... +91.5, so a uniform
distribution decodes to exactly 0 and quantization error is at most half a
bin width (1.5 degrees).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NUM_BINS = 62
ANGLE_LO = -93.0
ANGLE_HI = 93.0


@dataclass(frozen=True)
class BinGrid:
    """Uniform bin grid over an angle range."""

    num_bins: int = NUM_BINS
    lo: float = ANGLE_LO
    hi: float = ANGLE_HI

    def __post_init__(self):
        if self.num_bins <= 0 or self.hi <= self.lo:
            raise ValueError(f"invalid grid: {self.num_bins} bins over [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.num_bins

    @property
    def centers(self) -> np.ndarray:
        return self.lo + self.width * (np.arange(self.num_bins) + 0.5)

    def to_dict(self) -> dict:
        return {"num_bins": self.num_bins, "lo": self.lo, "hi": self.hi}

    @staticmethod
    def from_dict(d: dict) -> "BinGrid":
        return BinGrid(num_bins=int(d["num_bins"]), lo=float(d["lo"]), hi=float(d["hi"]))


DEFAULT_GRID = BinGrid()


def encode(angle: float, grid: BinGrid = DEFAULT_GRID) -> int:
    """Map a continuous angle (degrees) to its bin index.

    Bins are half-open [edge, edge + width); angles outside the grid range
    clamp to the boundary bins, so 93.0 lands in bin 61 rather than a
    nonexistent 63rd bin.
    """
    if math.isnan(angle):
        raise ValueError("cannot encode NaN angle")
    idx = math.floor((angle - grid.lo) / grid.width)
    return int(min(max(idx, 0), grid.num_bins - 1))


def one_hot(bin_index: int, grid: BinGrid = DEFAULT_GRID) -> np.ndarray:
    """Hard-label distribution: 1 at `bin_index`, 0 elsewhere."""
    if not 0 <= bin_index < grid.num_bins:
        raise ValueError(f"bin index {bin_index} out of range [0, {grid.num_bins})")
    v = np.zeros(grid.num_bins)
    v[bin_index] = 1.0
    return v


def decode(probs: np.ndarray, grid: BinGrid = DEFAULT_GRID) -> float:
    """Expectation decode: sum_i probs[i] * centers[i], in degrees."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[-1] != grid.num_bins:
        raise ValueError(f"expected {grid.num_bins} probabilities, got {probs.shape[-1]}")
    total = probs.sum(axis=-1)
    if np.any(np.abs(total - 1.0) > 1e-3):
        raise ValueError(f"distribution not normalized (sum={total})")
    return probs @ grid.centers


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max-subtracted)."""
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)
