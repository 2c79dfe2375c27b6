"""Fast invariant self-checks, runnable from the CLI on a fresh checkout.

Covers the codec roundtrip, softmax stability, loss gradients vs. finite
differences, the ensemble mean/expectation identity, and geometry
properties. Each check prints one pass/fail line; run() returns the number
of failures.
"""

from __future__ import annotations

import numpy as np
import torch

from .codec import DEFAULT_GRID, decode, encode, one_hot, softmax
from .geometry import BoundingBox, EulerPose, flip_horizontal, square_box
from .losses import distillation_loss, ensemble, total_loss


def _check(name: str, fn) -> bool:
    try:
        fn()
        print(f"[pass] {name}")
        return True
    except AssertionError as e:
        print(f"[FAIL] {name}: {e}")
        return False


def _codec_roundtrip():
    for a in np.arange(-93.0, 93.0, 0.1):
        back = decode(one_hot(encode(a)), DEFAULT_GRID)
        assert abs(back - a) <= 1.5 + 1e-9, f"roundtrip error {abs(back - a):.3f} at {a:.1f}"


def _softmax_stability():
    z = np.zeros(62)
    z[0] = 1000.0
    p = softmax(z)
    assert np.isfinite(p).all() and abs(p.sum() - 1) < 1e-9, "overflow in softmax"
    np.testing.assert_allclose(softmax(np.arange(62.0)), softmax(np.arange(62.0) + 123.0))


def _gradient_check():
    rng = np.random.default_rng(0)
    for _ in range(3):
        logits = torch.tensor(rng.normal(size=(3, 62)), dtype=torch.float64, requires_grad=True)
        target = torch.tensor(rng.uniform(-90, 90, size=3), dtype=torch.float64)
        loss, _ = total_loss(logits, target, DEFAULT_GRID)
        (grad,) = torch.autograd.grad(loss, logits)
        h = 1e-5
        flat = logits.detach().numpy().ravel()
        for k in rng.choice(flat.size, size=20, replace=False):
            zp, zm = flat.copy(), flat.copy()
            zp[k] += h
            zm[k] -= h
            lp, _ = total_loss(torch.tensor(zp.reshape(3, 62)), target, DEFAULT_GRID)
            lm, _ = total_loss(torch.tensor(zm.reshape(3, 62)), target, DEFAULT_GRID)
            fd = (float(lp) - float(lm)) / (2 * h)
            g = float(grad.reshape(-1)[k])
            assert abs(fd - g) <= 1e-4 * max(1.0, abs(fd)), f"grad mismatch {g} vs {fd}"


def _ensemble_oracle():
    rng = np.random.default_rng(1)
    dists = [
        torch.tensor(softmax(rng.normal(size=(3, 62)), axis=-1)) for _ in range(3)
    ]
    ens = ensemble(dists)
    brute = sum(dists) / 3
    assert torch.allclose(ens, brute, atol=1e-12), "ensemble != elementwise mean"
    dec_ens = decode(ens.numpy(), DEFAULT_GRID)
    dec_mean = np.mean([decode(d.numpy(), DEFAULT_GRID) for d in dists], axis=0)
    assert np.allclose(dec_ens, dec_mean, atol=1e-9), "expectation not linear"


def _distillation_identity():
    z = torch.randn(3, 62, dtype=torch.float64)
    p = torch.softmax(z, dim=-1)
    assert float(distillation_loss(p, ensemble([p]))) < 1e-12, "KL(p||p) != 0"


def _geometry_properties():
    rng = np.random.default_rng(2)
    for _ in range(2000):
        x1, y1 = rng.integers(-50, 200, size=2)
        w, h = rng.integers(1, 300, size=2)
        b = BoundingBox(int(x1), int(y1), int(x1 + w), int(y1 + h))
        s = square_box(b)
        assert s.width == s.height, "not square"
        assert s.x1 <= b.x1 and s.y1 <= b.y1 and s.x2 >= b.x2 and s.y2 >= b.y2, "not containing"
        assert square_box(s) == s, "not idempotent"
    img = rng.random((32, 32, 3)).astype(np.float32)
    pose = EulerPose(30.0, 10.0, -5.0)
    img2, pose2 = flip_horizontal(*flip_horizontal(img, pose))
    assert np.array_equal(img, img2) and pose2 == pose, "flip not an involution"


def run() -> int:
    """Run all self-checks; returns the number of failures."""
    checks = [
        ("codec roundtrip (1860 bins swept at 0.1 deg)", _codec_roundtrip),
        ("softmax stability and shift invariance", _softmax_stability),
        ("loss gradients vs. central finite differences", _gradient_check),
        ("teacher ensemble mean + expectation linearity", _ensemble_oracle),
        ("distillation self-identity KL(p||p) = 0", _distillation_identity),
        ("geometry: squaring and flip properties", _geometry_properties),
    ]
    failures = sum(0 if _check(name, fn) else 1 for name, fn in checks)
    print(f"{len(checks) - failures}/{len(checks)} checks passed")
    return failures
