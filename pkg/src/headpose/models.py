"""Pose network: a pluggable image backbone under three 62-way linear heads.

The backbone maps a normalized 3x112x112 crop to a feature vector; one
affine head per Euler angle produces 62 logits, decoded downstream by
softmax + expectation. Checkpoints are a single-file container: JSON
metadata header (format version, backbone spec, bin grid, normalization)
followed by raw little-endian float32 parameter blobs (layout documented in
the README).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
from torchvision.models import resnet18 as tv_resnet18, resnet101 as tv_resnet101
from torchvision.models.resnet import ResNet, Bottleneck

from .codec import BinGrid, DEFAULT_GRID
from .geometry import EulerPose
from .losses import expectation

CHECKPOINT_MAGIC = b"HPOSECKP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    feature_dim: int
    params: dict = field(default_factory=dict)


class TinyCNN(nn.Module):
    """4 conv blocks + flatten + linear, feature_dim 128.

    Desk-scale backbone: keeps spatial layout through the flatten (no global
    pooling), so position-coded toy images train in minutes on CPU.
    """

    def __init__(self, feature_dim: int = 128, input_size: int = 112):
        super().__init__()
        chans = [3, 16, 32, 64, 128]
        strides = [4, 2, 2, 2]  # aggressive first stride keeps CPU epochs cheap
        blocks = []
        for cin, cout, s in zip(chans[:-1], chans[1:], strides):
            blocks += [
                nn.Conv2d(cin, cout, 3, stride=s, padding=1, bias=False),
                nn.BatchNorm2d(cout),
                nn.ReLU(inplace=True),
            ]
        self.features = nn.Sequential(*blocks)
        with torch.no_grad():
            flat = self.features(torch.zeros(1, 3, input_size, input_size)).numel()
        self.fc = nn.Linear(flat, feature_dim)

    def forward(self, x):
        x = self.features(x)
        return self.fc(torch.flatten(x, 1))


class MultiHeadSelfAttention2d(nn.Module):
    """Content-only 2D self-attention, a drop-in for a 3x3 conv in a
    bottleneck block (BotNet-style last stage; positional terms omitted,
    best effort)."""

    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Conv2d(channels, channels * 3, 1, bias=False)
        self.scale = (channels // heads) ** -0.5

    def forward(self, x):
        b, c, h, w = x.shape
        qkv = self.qkv(x).reshape(b, 3, self.heads, c // self.heads, h * w)
        q, k, v = qkv.unbind(dim=1)
        attn = torch.softmax(q.transpose(-2, -1) @ k * self.scale, dim=-1)
        out = (v @ attn.transpose(-2, -1)).reshape(b, c, h, w)
        return out


class Res2NetBottleneck(Bottleneck):
    """Bottleneck with the 3x3 conv split into hierarchical scale groups."""

    def __init__(self, inplanes, planes, stride=1, downsample=None, groups=1,
                 base_width=64, dilation=1, norm_layer=None, scales=4):
        super().__init__(inplanes, planes, stride=stride, downsample=downsample,
                         groups=groups, base_width=base_width, dilation=dilation,
                         norm_layer=norm_layer)
        norm_layer = norm_layer or nn.BatchNorm2d
        width = int(planes * (base_width / 64.0)) * groups
        self.scales = scales
        chunk = width // scales
        self.conv2 = None  # replaced by the scale convs below
        self.bn2 = None
        self.scale_convs = nn.ModuleList(
            nn.Conv2d(chunk, chunk, 3, stride=stride, padding=1, bias=False)
            for _ in range(scales - 1)
        )
        self.scale_bns = nn.ModuleList(norm_layer(chunk) for _ in range(scales - 1))
        self.pool = nn.AvgPool2d(3, stride=stride, padding=1) if stride > 1 else None

    def forward(self, x):
        identity = x
        out = self.relu(self.bn1(self.conv1(x)))

        chunks = torch.chunk(out, self.scales, dim=1)
        outs = []
        prev = None
        for i, chunk in enumerate(chunks):
            if i == 0:
                outs.append(self.pool(chunk) if self.pool is not None else chunk)
                continue
            y = chunk if prev is None or self.pool is not None else chunk + prev
            y = self.relu(self.scale_bns[i - 1](self.scale_convs[i - 1](y)))
            outs.append(y)
            prev = y
        out = torch.cat(outs, dim=1)

        out = self.bn3(self.conv3(out))
        if self.downsample is not None:
            identity = self.downsample(x)
        return self.relu(out + identity)


def _headless(net: nn.Module) -> nn.Module:
    net.fc = nn.Identity()
    return net


def _build_tiny_cnn(params):
    return TinyCNN(feature_dim=params.get("feature_dim", 128)), params.get("feature_dim", 128)


def _build_resnet18(params):
    weights = "IMAGENET1K_V1" if params.get("pretrained") else None
    return _headless(tv_resnet18(weights=weights)), 512


def _build_resnet101(params):
    weights = "IMAGENET1K_V1" if params.get("pretrained") else None
    return _headless(tv_resnet101(weights=weights)), 2048


def _build_botnet101(params):
    net = tv_resnet101(weights=None)
    # swap the 3x3 conv of every last-stage bottleneck for self-attention;
    # stride-2 handled by average pooling as in the BotNet design
    for block in net.layer4:
        stride = block.conv2.stride[0]
        channels = block.conv2.out_channels
        attn = MultiHeadSelfAttention2d(channels)
        if stride == 1:
            block.conv2 = attn
        else:
            # mirror the 3x3 stride-2 conv geometry so residual shapes match
            block.conv2 = nn.Sequential(attn, nn.AvgPool2d(3, stride=2, padding=1))
    return _headless(net), 2048


def _build_res2net101(params):
    net = ResNet(Res2NetBottleneck, [3, 4, 23, 3], num_classes=1)
    return _headless(net), 2048


BACKBONES = {
    "tiny-cnn": _build_tiny_cnn,
    "resnet18": _build_resnet18,
    "resnet101": _build_resnet101,
    "botnet101": _build_botnet101,
    "res2net101": _build_res2net101,
}


class PoseModel(nn.Module):
    """Backbone + three 62-way heads, with its preprocessing constants."""

    def __init__(
        self,
        spec: BackboneSpec,
        grid: BinGrid = DEFAULT_GRID,
        input_size: int = 112,
        norm_mean: float = 0.5,
        norm_std: float = 0.5,
    ):
        super().__init__()
        if spec.name not in BACKBONES:
            raise ValueError(f"unknown backbone {spec.name!r}; known: {sorted(BACKBONES)}")
        backbone, feature_dim = BACKBONES[spec.name](spec.params)
        if spec.feature_dim != feature_dim:
            raise ValueError(
                f"backbone {spec.name} produces {feature_dim}-d features, "
                f"spec says {spec.feature_dim}"
            )
        self.spec = spec
        self.grid = grid
        self.input_size = input_size
        self.norm_mean = norm_mean
        self.norm_std = norm_std
        self.backbone = backbone
        self.heads = nn.ModuleList(nn.Linear(feature_dim, grid.num_bins) for _ in range(3))
        for head in self.heads:
            nn.init.kaiming_normal_(head.weight)
            nn.init.zeros_(head.bias)

    def normalize(self, images: torch.Tensor) -> torch.Tensor:
        """Map [0, 1] pixel values to the network input range."""
        return (images - self.norm_mean) / self.norm_std

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() != 4 or images.shape[1] != 3:
            raise ValueError(f"expected a Bx3xHxW batch, got {tuple(images.shape)}")
        if images.shape[-2:] != (self.input_size, self.input_size):
            raise ValueError(
                f"expected {self.input_size}x{self.input_size} input, "
                f"got {images.shape[-2]}x{images.shape[-1]} (no silent resize)"
            )
        feats = self.backbone(images)
        return torch.stack([head(feats) for head in self.heads], dim=1)

    @torch.no_grad()
    def predict_batch(self, images: torch.Tensor) -> torch.Tensor:
        """Decoded (B, 3) poses in degrees; inference mode."""
        was_training = self.training
        self.eval()
        try:
            logits = self.forward(self.normalize(images))
            dists = torch.softmax(logits, dim=-1)
            return expectation(dists, self.grid)
        finally:
            self.train(was_training)

    def predict_pose(self, image) -> EulerPose:
        """Predict the pose of one HxWx3 image with values in [0, 1]."""
        if isinstance(image, np.ndarray):
            image = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
        if image.dim() == 3 and image.shape[-1] == 3:
            image = image.permute(2, 0, 1)
        poses = self.predict_batch(image.unsqueeze(0))
        return EulerPose.from_array(poses[0].numpy())

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


FEATURE_DIMS = {
    "tiny-cnn": 128,
    "resnet18": 512,
    "resnet101": 2048,
    "botnet101": 2048,
    "res2net101": 2048,
}


def build_model(backbone: str, grid: BinGrid = DEFAULT_GRID, **params) -> PoseModel:
    """Construct a PoseModel from a registered backbone name."""
    if backbone not in BACKBONES:
        raise ValueError(f"unknown backbone {backbone!r}; known: {sorted(BACKBONES)}")
    feature_dim = params.get("feature_dim", FEATURE_DIMS[backbone])
    return PoseModel(BackboneSpec(backbone, feature_dim, params), grid=grid)


def save_checkpoint(model: PoseModel, path) -> None:
    """Write the single-file checkpoint container.

    Layout: 8-byte magic, uint32 little-endian header length, UTF-8 JSON
    header, then each state-dict tensor as little-endian float32 in header
    order. Integer buffers (batch-norm step counters) are cast to float32
    for storage and restored to their dtype on load.
    """
    state = model.state_dict()
    tensors = [
        {"name": k, "shape": list(v.shape), "dtype": str(v.dtype).replace("torch.", "")}
        for k, v in state.items()
    ]
    header = {
        "format_version": CHECKPOINT_VERSION,
        "backbone": {
            "name": model.spec.name,
            "feature_dim": model.spec.feature_dim,
            "params": model.spec.params,
        },
        "grid": model.grid.to_dict(),
        "normalization": {"mean": model.norm_mean, "std": model.norm_std},
        "input_size": model.input_size,
        "tensors": tensors,
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for v in state.values():
            f.write(v.detach().cpu().numpy().astype("<f4").tobytes())


class CheckpointError(RuntimeError):
    pass


def _require(header: dict, key: str):
    if key not in header:
        raise CheckpointError(f"checkpoint header missing required field {key!r}")
    return header[key]


def load_checkpoint(path, expected_backbone: str | None = None) -> PoseModel:
    """Read a checkpoint file back into a PoseModel.

    Raises CheckpointError naming the offending field on version mismatch,
    missing metadata, or truncation.
    """
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}: not a pose checkpoint")
        (header_len,) = struct.unpack("<I", f.read(4))
        try:
            header = json.loads(f.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"corrupted checkpoint header: {e}") from e

        version = _require(header, "format_version")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"format_version {version} unsupported (want {CHECKPOINT_VERSION})")
        backbone = _require(header, "backbone")
        grid = BinGrid.from_dict(_require(header, "grid"))
        norm = _require(header, "normalization")
        input_size = _require(header, "input_size")
        tensors = _require(header, "tensors")

        if expected_backbone is not None and backbone["name"] != expected_backbone:
            raise CheckpointError(
                f"checkpoint backbone is {backbone['name']!r}, expected {expected_backbone!r}"
            )

        spec = BackboneSpec(backbone["name"], backbone["feature_dim"], backbone.get("params", {}))
        model = PoseModel(
            spec,
            grid=grid,
            input_size=input_size,
            norm_mean=norm["mean"],
            norm_std=norm["std"],
        )

        state = {}
        for entry in tensors:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            raw = f.read(count * 4)
            if len(raw) != count * 4:
                raise CheckpointError(f"truncated blob for tensor {entry['name']!r}")
            arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
            t = torch.from_numpy(arr.copy())
            dtype = getattr(torch, entry["dtype"])
            state[entry["name"]] = t.to(dtype)
        model.load_state_dict(state)
    return model
