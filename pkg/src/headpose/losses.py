"""Training objectives.

Hard-label training combines, per Euler angle, a cross-entropy term on the
binned pose class with a squared-error term on the expectation-decoded
angle; the total is the sum over yaw, pitch, roll. Distillation replaces
both with the KL divergence from the teacher-ensemble soft target to the
student distribution, again summed over the three angles. Batch reductions
are means over samples.
"""

from __future__ import annotations

import torch

from .codec import BinGrid, DEFAULT_GRID

EPS = 1e-12


def centers_tensor(grid: BinGrid, dtype=torch.float32) -> torch.Tensor:
    return torch.tensor(grid.centers, dtype=dtype)


def expectation(dists: torch.Tensor, grid: BinGrid = DEFAULT_GRID) -> torch.Tensor:
    """Expectation-decode distributions of shape (..., num_bins) to degrees."""
    c = centers_tensor(grid, dtype=dists.dtype)
    return dists @ c


def classification_loss(dist: torch.Tensor, bin_index) -> torch.Tensor:
    """Cross-entropy -log p[target] on one distribution or a batch.

    `dist` is (num_bins,) or (B, num_bins); `bin_index` an int or (B,) of
    ints. Target probabilities are clamped at 1e-12 before the log. Batch
    input returns the mean over samples.
    """
    dist = torch.as_tensor(dist)
    idx = torch.as_tensor(bin_index, dtype=torch.long)
    if dist.dim() == 1:
        p = dist[idx]
    else:
        p = dist.gather(-1, idx.reshape(-1, 1)).squeeze(-1)
    return -torch.log(p.clamp_min(EPS)).mean()


def regression_loss(pred_pose, true_pose) -> torch.Tensor:
    """Squared error on decoded angles; mean over the batch."""
    pred = torch.as_tensor(pred_pose)
    true = torch.as_tensor(true_pose, dtype=pred.dtype if pred.is_floating_point() else None)
    return ((pred - true) ** 2).mean()


def total_loss(
    logits: torch.Tensor,
    target_pose,
    grid: BinGrid = DEFAULT_GRID,
    reg_weight: float = 1.0,
) -> tuple[torch.Tensor, dict]:
    """Hard-label loss: sum over {yaw, pitch, roll} of cross-entropy on the
    target bin plus `reg_weight` times squared error on the decoded angle.

    `logits` is (3, num_bins) or (B, 3, num_bins); `target_pose` is (3,) or
    (B, 3) in degrees. Returns (scalar loss, per-angle breakdown).
    """
    logits = torch.as_tensor(logits)
    squeeze = logits.dim() == 2
    if squeeze:
        logits = logits.unsqueeze(0)
    target = torch.as_tensor(target_pose, dtype=logits.dtype).reshape(logits.shape[0], 3)

    # clamp-encode targets to bins
    width = grid.width
    bins = torch.clamp(((target - grid.lo) / width).floor().long(), 0, grid.num_bins - 1)

    log_probs = torch.log_softmax(logits, dim=-1)
    probs = log_probs.exp()
    pred = expectation(probs, grid)

    names = ("yaw", "pitch", "roll")
    breakdown = {}
    loss = logits.new_zeros(())
    for a, name in enumerate(names):
        cls = -log_probs[:, a, :].gather(-1, bins[:, a : a + 1]).mean()
        reg = ((pred[:, a] - target[:, a]) ** 2).mean()
        breakdown[name] = {"cls": float(cls.detach()), "reg": float(reg.detach())}
        loss = loss + cls + reg_weight * reg
    return loss, breakdown


def ensemble(teacher_dists) -> torch.Tensor:
    """Uniform mean of teacher softmax outputs.

    `teacher_dists` is a sequence of (..., 3, num_bins) tensors (or one
    stacked tensor with teachers on dim 0). Rows stay normalized since the
    mean of distributions is a distribution.
    """
    if isinstance(teacher_dists, torch.Tensor):
        stacked = teacher_dists
        if stacked.dim() < 3:
            raise ValueError("expected teachers stacked on dim 0")
    else:
        teacher_dists = list(teacher_dists)
        if len(teacher_dists) == 0:
            raise ValueError("empty teacher list")
        stacked = torch.stack([torch.as_tensor(t) for t in teacher_dists], dim=0)
    return stacked.mean(dim=0)


def distillation_loss(student_dists: torch.Tensor, pseudo: torch.Tensor) -> torch.Tensor:
    """KL(pseudo || student) summed over the three angles, mean over batch.

    This is the sole objective during distillation. Both inputs are
    (..., 3, num_bins) row-normalized; probabilities are clamped at 1e-12
    inside the logs.
    """
    student = torch.as_tensor(student_dists)
    pseudo = torch.as_tensor(pseudo, dtype=student.dtype)
    kl = pseudo * (torch.log(pseudo.clamp_min(EPS)) - torch.log(student.clamp_min(EPS)))
    per_angle = kl.sum(dim=-1)  # (..., 3)
    per_sample = per_angle.sum(dim=-1)  # sum over yaw/pitch/roll
    return per_sample.mean()
