import math

import numpy as np
import pytest
import torch

from headpose.codec import DEFAULT_GRID, softmax
from headpose.losses import (
    classification_loss,
    distillation_loss,
    ensemble,
    regression_loss,
    total_loss,
)

from oracles import distillation_loss_scalar, total_loss_scalar


def rand_dist(rng, shape=(62,)):
    return torch.tensor(softmax(rng.normal(size=shape), axis=-1))


def test_classification_loss_values():
    one_hot = torch.zeros(62)
    one_hot[10] = 1.0
    assert float(classification_loss(one_hot, 10)) == pytest.approx(0.0, abs=1e-9)

    uniform = torch.full((62,), 1 / 62)
    assert float(classification_loss(uniform, 5)) == pytest.approx(math.log(62), rel=1e-6)

    half = torch.full((62,), 0.5 / 61)
    half[30] = 0.5
    assert float(classification_loss(half, 30)) == pytest.approx(math.log(2), rel=1e-6)


def test_regression_loss_values():
    assert float(regression_loss(3.0, 3.0)) == 0.0
    assert float(regression_loss(4.5, 1.5)) == pytest.approx(9.0)
    assert float(regression_loss(torch.tensor([0.0, 0.0]), torch.tensor([1.0, -1.0]))) == pytest.approx(1.0)


def test_total_loss_uniform_logits():
    loss, breakdown = total_loss(
        torch.zeros(3, 62, dtype=torch.float64), torch.tensor([1.5, 1.5, 1.5], dtype=torch.float64)
    )
    expected = 3 * math.log(62) + 3 * 1.5**2
    assert float(loss) == pytest.approx(expected, rel=1e-12)
    for angle in ("yaw", "pitch", "roll"):
        assert breakdown[angle]["cls"] == pytest.approx(math.log(62), rel=1e-12)
        assert breakdown[angle]["reg"] == pytest.approx(2.25, rel=1e-12)


def test_total_loss_near_zero_for_confident_correct_logits():
    # logits 20 at the target bin, 0 elsewhere, targets at bin centers
    grid = DEFAULT_GRID
    targets = torch.tensor([grid.centers[31], grid.centers[0], grid.centers[61]], dtype=torch.float64)
    logits = torch.zeros(3, 62, dtype=torch.float64)
    for a, b in enumerate((31, 0, 61)):
        logits[a, b] = 20.0
    loss, _ = total_loss(logits, targets, grid)
    oracle = total_loss_scalar(logits.tolist(), targets.tolist())
    assert float(loss) == pytest.approx(oracle, rel=1e-5)
    assert float(loss) < 1e-4


def test_total_loss_shift_invariant():
    rng = np.random.default_rng(0)
    logits = torch.tensor(rng.normal(size=(3, 62)))
    target = torch.tensor([10.0, -5.0, 3.0], dtype=torch.float64)
    base, _ = total_loss(logits, target)
    shifted = logits.clone()
    shifted[1] += 57.0
    after, _ = total_loss(shifted, target)
    assert float(after) == pytest.approx(float(base), rel=1e-12)


def test_total_loss_matches_scalar_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        logits = rng.normal(scale=3.0, size=(3, 62))
        target = rng.uniform(-93, 93, size=3)
        got, _ = total_loss(torch.tensor(logits), torch.tensor(target))
        want = total_loss_scalar(logits.tolist(), target.tolist())
        np.testing.assert_allclose(float(got), want, rtol=1e-10)


def test_distillation_loss_matches_scalar_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        student = softmax(rng.normal(scale=3.0, size=(3, 62)), axis=-1)
        pseudo = softmax(rng.normal(scale=3.0, size=(3, 62)), axis=-1)
        got = distillation_loss(torch.tensor(student), torch.tensor(pseudo))
        want = distillation_loss_scalar(student.tolist(), pseudo.tolist())
        np.testing.assert_allclose(float(got), want, rtol=1e-10, atol=1e-12)


def test_distillation_identities():
    rng = np.random.default_rng(3)
    p = rand_dist(rng, (3, 62))
    assert float(distillation_loss(p, p)) == pytest.approx(0.0, abs=1e-12)
    assert float(distillation_loss(p, ensemble([p]))) == pytest.approx(0.0, abs=1e-12)

    uniform = torch.full((3, 62), 1 / 62, dtype=torch.float64)
    one_hot = torch.zeros(3, 62, dtype=torch.float64)
    one_hot[:, 7] = 1.0
    assert float(distillation_loss(uniform, one_hot)) == pytest.approx(3 * math.log(62), rel=1e-9)

    for _ in range(20):
        s, q = rand_dist(rng, (3, 62)), rand_dist(rng, (3, 62))
        assert float(distillation_loss(s, q)) >= 0.0


def test_ensemble_mean_and_errors():
    rng = np.random.default_rng(4)
    single = rand_dist(rng, (3, 62))
    np.testing.assert_allclose(ensemble([single]).numpy(), single.numpy())

    a = torch.zeros(3, 62, dtype=torch.float64)
    b = torch.zeros(3, 62, dtype=torch.float64)
    a[:, 3] = 1.0
    b[:, 40] = 1.0
    ens = ensemble([a, b])
    assert float(ens[0, 3]) == 0.5 and float(ens[0, 40]) == 0.5
    assert float(ens.sum(dim=-1).max()) == pytest.approx(1.0)

    with pytest.raises(ValueError):
        ensemble([])


def test_ensemble_decode_commutes():
    rng = np.random.default_rng(5)
    centers = torch.tensor(DEFAULT_GRID.centers)
    teachers = [rand_dist(rng, (3, 62)) for _ in range(3)]
    dec_ens = ensemble(teachers) @ centers
    dec_mean = torch.stack([t @ centers for t in teachers]).mean(dim=0)
    np.testing.assert_allclose(dec_ens.numpy(), dec_mean.numpy(), atol=1e-9)


def test_batch_loss_is_mean_of_per_sample_losses():
    rng = np.random.default_rng(6)
    logits = torch.tensor(rng.normal(size=(8, 3, 62)))
    targets = torch.tensor(rng.uniform(-90, 90, size=(8, 3)))
    batch, _ = total_loss(logits, targets)
    singles = [float(total_loss(logits[i], targets[i])[0]) for i in range(8)]
    assert float(batch) == pytest.approx(np.mean(singles), abs=1e-9)

    student = torch.tensor(softmax(rng.normal(size=(8, 3, 62)), axis=-1))
    pseudo = torch.tensor(softmax(rng.normal(size=(8, 3, 62)), axis=-1))
    batch_kl = float(distillation_loss(student, pseudo))
    singles_kl = [float(distillation_loss(student[i], pseudo[i])) for i in range(8)]
    assert batch_kl == pytest.approx(np.mean(singles_kl), abs=1e-9)


def _fd_grad(fn, z, h=1e-5):
    flat = z.ravel().copy()
    grad = np.empty_like(flat)
    for k in range(flat.size):
        zp, zm = flat.copy(), flat.copy()
        zp[k] += h
        zm[k] -= h
        grad[k] = (fn(zp.reshape(z.shape)) - fn(zm.reshape(z.shape))) / (2 * h)
    return grad.reshape(z.shape)


@pytest.mark.parametrize("seed", range(3))
def test_total_loss_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(3, 62))
    target = torch.tensor(rng.uniform(-90, 90, size=3))

    logits = torch.tensor(z, requires_grad=True)
    loss, _ = total_loss(logits, target)
    (grad,) = torch.autograd.grad(loss, logits)

    fd = _fd_grad(lambda zz: float(total_loss(torch.tensor(zz), target)[0]), z)
    np.testing.assert_allclose(grad.numpy(), fd, rtol=1e-4, atol=1e-7)


@pytest.mark.parametrize("seed", range(3))
def test_distillation_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    z = rng.normal(size=(3, 62))
    pseudo = torch.tensor(softmax(rng.normal(size=(3, 62)), axis=-1))

    logits = torch.tensor(z, requires_grad=True)
    loss = distillation_loss(torch.softmax(logits, dim=-1), pseudo)
    (grad,) = torch.autograd.grad(loss, logits)

    fd = _fd_grad(
        lambda zz: float(distillation_loss(torch.softmax(torch.tensor(zz), dim=-1), pseudo)), z
    )
    np.testing.assert_allclose(grad.numpy(), fd, rtol=1e-4, atol=1e-7)


def test_loss_decreases_when_target_bin_logit_grows():
    rng = np.random.default_rng(7)
    z = torch.tensor(rng.normal(size=(3, 62)))
    target = torch.tensor([0.0, 10.0, -20.0], dtype=torch.float64)
    bins = [31, 34, 24]
    base, _ = total_loss(z, target)
    bumped = z.clone()
    for a, b in enumerate(bins):
        bumped[a, b] += 0.5
    after, _ = total_loss(bumped, target)
    assert float(after) < float(base)
