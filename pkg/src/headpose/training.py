"""Training loops: hard-label teacher training and student distillation.

Both loops share the schedule (Adam, cosine-annealed learning rate from the
initial value to 0 across the epoch budget) and the checkpoint contract.
Per-epoch randomness (shuffle order, augmentation draws) is derived from
(seed, epoch), so an interrupted run resumed from a saved state replays the
same batches as an uninterrupted one.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .codec import BinGrid
from .data import AugmentationConfig, SampleRecord, SyntheticSample, augment, read_pseudo_labels
from .geometry import EulerPose, crop_and_resize, square_box
from .losses import distillation_loss, ensemble, total_loss
from .models import PoseModel, save_checkpoint


@dataclass
class TrainConfig:
    mode: str = "hard"  # hard | distill
    epochs: int = 100  # 100 for hard-label teachers, 200 for distillation
    lr: float = 1e-4
    batch_size: int = 64
    seed: int = 0
    reg_weight: float = 1.0
    hard_aux_weight: float = 0.0  # optional hard-label term during distillation
    weight_decay: float = 0.0
    val_fraction: float = 0.02
    teacher_checkpoints: list[str] = field(default_factory=list)
    pseudo_mode: str = "on_the_fly"  # on_the_fly | precomputed
    pseudo_store: str | None = None
    augmentation: AugmentationConfig | None = None

    def __post_init__(self):
        if self.mode not in {"hard", "distill"}:
            raise ValueError(f"mode must be 'hard' or 'distill', got {self.mode!r}")
        if self.pseudo_mode not in {"on_the_fly", "precomputed"}:
            raise ValueError(f"unknown pseudo_mode {self.pseudo_mode!r}")
        # coerce numeric fields so YAML/CLI strings like "1e-3" work
        for name in ("lr", "reg_weight", "hard_aux_weight", "weight_decay", "val_fraction"):
            setattr(self, name, float(getattr(self, name)))
        for name in ("epochs", "batch_size", "seed"):
            setattr(self, name, int(getattr(self, name)))
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")


def cosine_lr(epoch: int, total_epochs: int, base_lr: float) -> float:
    """Annealed learning rate: base at epoch 0, 0 at epoch == total_epochs."""
    return base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0


class PoseDataset:
    """Uniform access to (image float32 [0,1] HWC, pose) pairs.

    Wraps either in-memory SyntheticSamples or on-disk SampleRecords (crops
    are squared and resized lazily).
    """

    def __init__(self, samples, size: int = 112):
        self.samples = list(samples)
        self.size = size

    def __len__(self):
        return len(self.samples)

    def get(self, i: int) -> tuple[np.ndarray, EulerPose]:
        s = self.samples[i]
        if isinstance(s, SyntheticSample):
            return s.image, s.pose
        if isinstance(s, SampleRecord):
            import cv2

            bgr = cv2.imread(s.image_path)
            if bgr is None:
                raise FileNotFoundError(f"cannot read image {s.image_path}")
            rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
            crop = crop_and_resize(rgb, square_box(s.box), self.size)
            return crop, s.pose
        image, pose = s
        return image, pose


def _batch_tensor(images: list[np.ndarray]) -> torch.Tensor:
    arr = np.stack(images).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(arr))


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch]))


def parameter_checksum(model: torch.nn.Module) -> str:
    """SHA-256 over all parameter and buffer bytes, in state-dict order."""
    h = hashlib.sha256()
    for v in model.state_dict().values():
        h.update(v.detach().cpu().numpy().tobytes())
    return h.hexdigest()


class MetricsLog:
    """Line-delimited JSON metrics writer (one record per epoch)."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, record: dict):
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(record) + "\n")


def _split_train_val(dataset: PoseDataset, fraction: float, seed: int):
    n = len(dataset)
    n_val = int(round(n * fraction))
    if n_val == 0:
        return list(range(n)), []
    rng = np.random.default_rng(np.random.SeedSequence([seed, 987654321]))
    perm = rng.permutation(n)
    return list(perm[n_val:]), list(perm[:n_val])


def _validation_mae(model: PoseModel, dataset: PoseDataset, indices, batch_size: int) -> float:
    errs = []
    for start in range(0, len(indices), batch_size):
        chunk = indices[start : start + batch_size]
        images, poses = zip(*(dataset.get(i) for i in chunk))
        preds = model.predict_batch(_batch_tensor(list(images)))
        truth = torch.tensor(np.stack([p.as_array() for p in poses]), dtype=preds.dtype)
        errs.append((preds - truth).abs().mean(dim=-1))
    return float(torch.cat(errs).mean())


def _load_batch(dataset, indices, aug_cfg, rng):
    images, poses = [], []
    for i in indices:
        image, pose = dataset.get(i)
        if aug_cfg is not None:
            image, pose = augment(image, pose, aug_cfg, rng)
        images.append(image)
        poses.append(pose.as_array())
    return _batch_tensor(images), torch.tensor(np.stack(poses), dtype=torch.float32)


def _save_resume_state(path, model, optimizer, epoch, history):
    torch.save(
        {
            "model": model.state_dict(),
            "optimizer": optimizer.state_dict(),
            "epoch": epoch,
            "history": history,
        },
        path,
    )


def _run_loop(model, dataset, cfg, out_dir, batch_loss_fn, resume_from=None,
              val_dataset=None, stop_after=None):
    """Shared epoch loop. `batch_loss_fn(model, images, poses, indices, rng)`
    returns (loss tensor, extras dict)."""
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    metrics = MetricsLog(out_dir / "metrics.jsonl" if out_dir else None)

    if val_dataset is not None:
        train_idx = list(range(len(dataset)))
        val_idx = list(range(len(val_dataset)))
    else:
        train_idx, val_idx = _split_train_val(dataset, cfg.val_fraction, cfg.seed)
        val_dataset = dataset
    if not train_idx:
        raise ValueError("empty training set")

    torch.manual_seed(cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)

    start_epoch = 0
    history: list[dict] = []
    if resume_from:
        state = torch.load(resume_from, weights_only=True)
        model.load_state_dict(state["model"])
        optimizer.load_state_dict(state["optimizer"])
        start_epoch = state["epoch"] + 1
        history = list(state["history"])

    best_val = math.inf
    end_epoch = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    for epoch in range(start_epoch, end_epoch):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr)
        for group in optimizer.param_groups:
            group["lr"] = lr

        rng = _epoch_rng(cfg.seed, epoch)
        order = rng.permutation(len(train_idx))
        model.train()
        losses = []
        extras_sum: dict[str, float] = {}
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_idx[j] for j in order[start : start + cfg.batch_size]]
            images, poses = _load_batch(dataset, batch, cfg.augmentation, rng)
            loss, extras = batch_loss_fn(model, images, poses, batch)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss {float(loss.detach())} at epoch {epoch}, sample indices {batch}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
            for k, v in extras.items():
                extras_sum[k] = extras_sum.get(k, 0.0) + v

        record = {
            "epoch": epoch,
            "lr": lr,
            "loss": float(np.mean(losses)),
        }
        nb = len(losses)
        record.update({k: v / nb for k, v in extras_sum.items()})
        if val_idx:
            record["val_mae"] = _validation_mae(model, val_dataset, val_idx, cfg.batch_size)
        history.append(record)
        metrics.append(record)

        if out_dir:
            _save_resume_state(out_dir / "train_state.pt", model, optimizer, epoch, history)
            save_checkpoint(model, out_dir / "last.ckpt")
            if val_idx and record["val_mae"] < best_val:
                best_val = record["val_mae"]
                save_checkpoint(model, out_dir / "best.ckpt")

    return model, history


def train_teacher(
    model: PoseModel,
    dataset: PoseDataset,
    cfg: TrainConfig,
    out_dir=None,
    resume_from=None,
    val_dataset: PoseDataset | None = None,
    stop_after: int | None = None,
):
    """Hard-label training: per-angle cross-entropy + expectation regression."""
    if cfg.mode != "hard":
        raise ValueError(f"train_teacher requires mode='hard', got {cfg.mode!r}")

    def batch_loss(model, images, poses, indices):
        logits = model(model.normalize(images))
        loss, breakdown = total_loss(logits, poses, model.grid, reg_weight=cfg.reg_weight)
        cls = sum(b["cls"] for b in breakdown.values())
        reg = sum(b["reg"] for b in breakdown.values())
        return loss, {"cls_loss": cls, "reg_loss": reg}

    return _run_loop(model, dataset, cfg, out_dir, batch_loss,
                     resume_from=resume_from, val_dataset=val_dataset,
                     stop_after=stop_after)


def distill_student(
    student: PoseModel,
    teachers,
    dataset: PoseDataset,
    cfg: TrainConfig,
    out_dir=None,
    resume_from=None,
    val_dataset: PoseDataset | None = None,
    stop_after: int | None = None,
):
    """Distillation: KL from the teacher-ensemble soft targets to the student.

    `teachers` is a list of PoseModels (on-the-fly mode: soft targets are
    computed on each augmented batch with teachers frozen) or a path to a
    pseudo-label store (precomputed mode: targets computed once on clean
    crops; augmentation is disabled since stored targets would not match the
    augmented view). Teacher parameters are never updated.
    """
    if cfg.mode != "distill":
        raise ValueError(f"distill_student requires mode='distill', got {cfg.mode!r}")

    if cfg.pseudo_mode == "precomputed":
        store_path = teachers if isinstance(teachers, (str, Path)) else cfg.pseudo_store
        if store_path is None:
            raise ValueError("precomputed mode needs a pseudo-label store path")
        labels, _ = read_pseudo_labels(store_path, expected_bins=student.grid.num_bins)
        if labels.shape[0] != len(dataset):
            raise ValueError(
                f"store has {labels.shape[0]} records, dataset has {len(dataset)}"
            )
        pseudo_all = torch.from_numpy(labels)
        if cfg.augmentation is not None:
            raise ValueError("precomputed pseudo labels are incompatible with augmentation")

        def batch_loss(model, images, poses, indices):
            dists = torch.softmax(model(model.normalize(images)), dim=-1)
            loss = distillation_loss(dists, pseudo_all[indices])
            return _maybe_add_hard(loss, model, images, poses, cfg)
    else:
        if not teachers:
            raise ValueError("on-the-fly distillation needs at least one teacher")
        for t in teachers:
            if t.grid.to_dict() != student.grid.to_dict():
                raise ValueError(
                    f"teacher grid {t.grid.to_dict()} != student grid {student.grid.to_dict()}"
                )
            t.eval()
            t.requires_grad_(False)

        def batch_loss(model, images, poses, indices):
            x = model.normalize(images)
            with torch.no_grad():
                pseudo = ensemble([torch.softmax(t(x), dim=-1) for t in teachers])
            dists = torch.softmax(model(x), dim=-1)
            loss = distillation_loss(dists, pseudo)
            return _maybe_add_hard(loss, model, images, poses, cfg)

    return _run_loop(student, dataset, cfg, out_dir, batch_loss,
                     resume_from=resume_from, val_dataset=val_dataset,
                     stop_after=stop_after)


def _maybe_add_hard(kl_loss, model, images, poses, cfg):
    extras = {"kl_loss": float(kl_loss.detach())}
    if cfg.hard_aux_weight > 0.0:
        hard, _ = total_loss(model(model.normalize(images)), poses, model.grid,
                             reg_weight=cfg.reg_weight)
        extras["hard_aux"] = float(hard.detach())
        return kl_loss + cfg.hard_aux_weight * hard, extras
    return kl_loss, extras


def compute_pseudo_labels(teachers, dataset: PoseDataset, batch_size: int = 64) -> np.ndarray:
    """Run the frozen teacher ensemble over clean crops; (N, 3, bins) floats."""
    if not teachers:
        raise ValueError("need at least one teacher")
    for t in teachers:
        t.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            images = [dataset.get(i)[0] for i in range(start, min(start + batch_size, len(dataset)))]
            x = teachers[0].normalize(_batch_tensor(images))
            pseudo = ensemble([torch.softmax(t(x), dim=-1) for t in teachers])
            out.append(pseudo.numpy())
    return np.concatenate(out, axis=0)


def initial_distillation_loss(student: PoseModel, teachers, dataset: PoseDataset,
                              batch_size: int = 64) -> float:
    """Mean soft-target loss of the student against the teacher ensemble.

    Both sides run in inference mode on clean crops so the measurement is
    independent of batch-statistic layers; a student that is a parameter-level
    copy of its sole teacher scores (numerically) zero.
    """
    if not teachers:
        raise ValueError("need at least one teacher")
    was_training = student.training
    student.eval()
    for t in teachers:
        t.eval()
    total = 0.0
    count = 0
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            stop = min(start + batch_size, len(dataset))
            images = [dataset.get(i)[0] for i in range(start, stop)]
            x = student.normalize(_batch_tensor(images))
            pseudo = ensemble([torch.softmax(t(x), dim=-1) for t in teachers])
            dists = torch.softmax(student(x), dim=-1)
            total += float(distillation_loss(dists, pseudo)) * (stop - start)
            count += stop - start
    if was_training:
        student.train()
    return total / count
