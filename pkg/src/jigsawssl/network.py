"""Progressive multi-granularity network wrapper.

A staged backbone exposes an ordered list of feature maps.  Each exposed
stage gets a small conv head that reduces it to a fixed channel width
followed by global max pooling; progressive step ``l`` (1-based) consumes
stage ``l``'s pooled vector, and the final step consumes the channel-wise
concatenation of all pooled stage vectors.  Every step carries its own
projector (embedding head for the correlation objective) and its own linear
classifier (jigsaw-order labels during pretraining, lesion classes during
fine-tuning).

Forwarding a step only executes backbone layers up to that step's stage, so
early-step losses cannot touch late-stage parameters.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn

from .errors import ConfigError, ShapeError, StepError


@dataclass
class NetworkConfig:
    """Architecture knobs; ``num_steps`` must be the stage count + 1, or 1."""

    backbone: str = "small"
    widths: tuple[int, ...] = (8, 16, 32, 64)  # small backbone: stem + stage widths
    head_width: int | None = None  # default: 512 for resnet50, 64 for small
    projector_dim: int = 512
    projector_hidden: int | None = None
    num_steps: int = 4

    def resolved_head_width(self) -> int:
        if self.head_width is not None:
            return self.head_width
        return 512 if self.backbone == "resnet50" else 64

    def resolved_projector_hidden(self) -> int:
        if self.projector_hidden is not None:
            return self.projector_hidden
        return max(64, self.projector_dim)


def granularity_for_step(schedule: Sequence[int], step: int) -> int:
    """Schedule lookup for a 1-based progressive step."""
    if any(g < 1 for g in schedule):
        raise ConfigError(f"granularities must be >= 1, got {tuple(schedule)}")
    if not 1 <= step <= len(schedule):
        raise StepError(f"step {step} outside [1, {len(schedule)}]")
    return int(schedule[step - 1])


def _conv_bn_relu(c_in, c_out, kernel, stride=1):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, kernel, stride=stride, padding=kernel // 2, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


class SmallBackbone(nn.Module):
    """Four-block CNN for CPU-scale runs: stem + three stride-2 stages."""

    def __init__(self, widths: tuple[int, ...] = (8, 16, 32, 64)):
        super().__init__()
        if len(widths) < 2:
            raise ConfigError(f"need a stem width plus stage widths, got {widths}")
        self.stem = _conv_bn_relu(3, widths[0], 3, stride=2)
        stages = []
        c_prev = widths[0]
        for w in widths[1:]:
            stages.append(
                nn.Sequential(_conv_bn_relu(c_prev, w, 3, stride=2), _conv_bn_relu(w, w, 3))
            )
            c_prev = w
        self.stages = nn.ModuleList(stages)
        self.stage_channels = list(widths[1:])

    def forward_until(self, x: torch.Tensor, k: int) -> torch.Tensor:
        out = self.stem(x)
        for stage in self.stages[:k]:
            out = stage(out)
        return out

    def forward_all(self, x: torch.Tensor) -> list[torch.Tensor]:
        out = self.stem(x)
        feats = []
        for stage in self.stages:
            out = stage(out)
            feats.append(out)
        return feats

    def gradcam_layers(self) -> list[tuple[str, nn.Module]]:
        layers = [("stem", self.stem)]
        layers += [(f"stage{i + 1}", s) for i, s in enumerate(self.stages)]
        return layers


class ResNet50Backbone(nn.Module):
    """Residual-50 trunk exposing the 3rd..5th stage outputs (28/14/7 at 224 input)."""

    def __init__(self):
        super().__init__()
        from torchvision.models import resnet50

        net = resnet50(weights=None)
        self.entry = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.blocks = nn.ModuleList([net.layer1, net.layer2, net.layer3, net.layer4])
        self.stage_channels = [512, 1024, 2048]

    def forward_until(self, x: torch.Tensor, k: int) -> torch.Tensor:
        out = self.entry(x)
        for block in self.blocks[: k + 1]:  # layer1 is always traversed
            out = block(out)
        return out

    def forward_all(self, x: torch.Tensor) -> list[torch.Tensor]:
        out = self.entry(x)
        out = self.blocks[0](out)
        feats = []
        for block in self.blocks[1:]:
            out = block(out)
            feats.append(out)
        return feats

    def gradcam_layers(self) -> list[tuple[str, nn.Module]]:
        return [(f"layer{i + 1}", b) for i, b in enumerate(self.blocks)]


def build_backbone(config: NetworkConfig) -> nn.Module:
    if config.backbone == "small":
        return SmallBackbone(tuple(config.widths))
    if config.backbone == "resnet50":
        return ResNet50Backbone()
    raise ConfigError(f"unknown backbone {config.backbone!r}")


class ConvHead(nn.Module):
    """1x1 then 3x3 conv block reducing a stage map to a fixed width."""

    def __init__(self, c_in: int, width: int):
        super().__init__()
        self.reduce = _conv_bn_relu(c_in, width, 1)
        self.mix = _conv_bn_relu(width, width, 3)
        self.pool = nn.AdaptiveMaxPool2d(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.pool(self.mix(self.reduce(x))).flatten(1)


class Projector(nn.Module):
    """Per-step MLP mapping a pooled stage vector to the embedding space."""

    def __init__(self, dim_in: int, hidden: int, dim_out: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim_in, hidden),
            nn.BatchNorm1d(hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, dim_out),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


@dataclass
class StageFeatures:
    """Pooled feature vector produced for one progressive step."""

    step: int
    vector: torch.Tensor  # (B, dim)


class ProgressiveNet(nn.Module):
    """Backbone + conv heads + per-step projectors and classifiers.

    ``label_sizes[l-1]`` is the classifier width of step ``l`` (jigsaw pool
    size during pretraining, class count during fine-tuning).  Both training
    branches forward through this single module, so weight sharing is
    structural.
    """

    def __init__(self, config: NetworkConfig, label_sizes: Sequence[int]):
        super().__init__()
        if config.projector_dim < 2:
            raise ConfigError(f"projector_dim must be >= 2, got {config.projector_dim}")
        self.config = config
        self.backbone = build_backbone(config)
        n_stages = len(self.backbone.stage_channels)
        s = config.num_steps
        if s != 1 and s != n_stages + 1:
            raise ConfigError(
                f"num_steps must be 1 or {n_stages + 1} for a {n_stages}-stage backbone, got {s}"
            )
        if len(label_sizes) != s:
            raise ConfigError(f"expected {s} label sizes, got {len(label_sizes)}")
        self.num_steps = s
        width = config.resolved_head_width()
        hidden = config.resolved_projector_hidden()
        self.conv_heads = nn.ModuleList(
            ConvHead(c, width) for c in self.backbone.stage_channels
        )
        self.step_dims = [width] * (s - 1) + [n_stages * width]
        self.projectors = nn.ModuleList(
            Projector(d, hidden, config.projector_dim) for d in self.step_dims
        )
        self.classifiers = nn.ModuleList(
            nn.Linear(d, int(m)) for d, m in zip(self.step_dims, label_sizes)
        )
        self.label_sizes = [int(m) for m in label_sizes]

    def _check_step(self, step: int) -> None:
        if not 1 <= step <= self.num_steps:
            raise StepError(f"step {step} outside [1, {self.num_steps}]")

    def extract_stage_features(self, x: torch.Tensor, step: int) -> StageFeatures:
        """Pooled conv-head vector of the step's stage; the final step concatenates all."""
        self._check_step(step)
        if step <= self.num_steps - 1:
            feat = self.backbone.forward_until(x, step)
            vec = self.conv_heads[step - 1](feat)
        else:
            maps = self.backbone.forward_all(x)
            vec = torch.cat([head(f) for head, f in zip(self.conv_heads, maps)], dim=1)
        return StageFeatures(step=step, vector=vec)

    def _step_vector(self, features: StageFeatures, step: int) -> torch.Tensor:
        self._check_step(step)
        if features.step != step:
            raise ShapeError(f"features were produced for step {features.step}, not {step}")
        vec = features.vector
        if vec.shape[-1] != self.step_dims[step - 1]:
            raise ShapeError(
                f"step {step} expects dim {self.step_dims[step - 1]}, got {vec.shape[-1]}"
            )
        return vec

    def classify_step(self, features: StageFeatures, step: int) -> torch.Tensor:
        return self.classifiers[step - 1](self._step_vector(features, step))

    def project(self, features: StageFeatures, step: int) -> torch.Tensor:
        return self.projectors[step - 1](self._step_vector(features, step))

    def forward_step(self, x: torch.Tensor, step: int):
        """(features, order/class logits, embedding) for one progressive step."""
        feats = self.extract_stage_features(x, step)
        return feats, self.classify_step(feats, step), self.project(feats, step)

    def combined_logits(self, x: torch.Tensor) -> torch.Tensor:
        """Sum of all step logits; requires a uniform label space (fine-tuned model)."""
        if len(set(self.label_sizes)) != 1:
            raise ShapeError(f"step label spaces differ: {self.label_sizes}")
        total = None
        for step in range(1, self.num_steps + 1):
            feats = self.extract_stage_features(x, step)
            logits = self.classify_step(feats, step)
            total = logits if total is None else total + logits
        return total

    def gradcam_layers(self) -> list[tuple[str, nn.Module]]:
        return self.backbone.gradcam_layers()


def parameter_checksum(model: nn.Module) -> str:
    """SHA-256 over all parameter bytes in named order (weight-sharing witness)."""
    digest = hashlib.sha256()
    for name, param in sorted(model.named_parameters()):
        digest.update(name.encode())
        digest.update(param.detach().cpu().numpy().tobytes())
    return digest.hexdigest()
