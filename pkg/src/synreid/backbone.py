"""Frame encoder, temporal mean pooling and ID classifier.

Any object exposing ``extract_frame_features``, ``aggregate`` and
``classify_id`` with the shapes below can stand in for :class:`TinyVideoNet`
during evaluation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Protocol

import torch
from torch import nn

from .errors import ShapeError


class Backbone(Protocol):
    def extract_frame_features(self, clip: torch.Tensor) -> torch.Tensor: ...

    def aggregate(self, frames: torch.Tensor) -> torch.Tensor: ...

    def classify_id(self, feature: torch.Tensor) -> torch.Tensor: ...


@dataclass(frozen=True)
class BackboneConfig:
    num_classes: int
    in_channels: int = 3
    height: int = 32
    width: int = 16
    dim: int = 64
    widths: tuple = (16, 32, 64)
    dropout: float = 0.0

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return cls(**d)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def aggregate(frames: torch.Tensor) -> torch.Tensor:
    """Mean over the time axis: (..., T, d) -> (..., d)."""
    if frames.shape[-2] < 1:
        raise ShapeError("cannot aggregate an empty clip")
    return frames.mean(dim=-2)


class TinyVideoNet(nn.Module):
    """Three conv stages, global average pool, linear embedding, linear ID head.

    Dropout (if any) sits only in front of the ID classifier, so features are
    deterministic in both train and eval mode.
    """

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        layers = []
        prev = config.in_channels
        for i, w in enumerate(config.widths):
            layers += [nn.Conv2d(prev, w, kernel_size=3, padding=1), nn.ReLU()]
            if i < len(config.widths) - 1:
                layers.append(nn.AvgPool2d(2))
            prev = w
        layers += [nn.AdaptiveAvgPool2d(1), nn.Flatten()]
        self.encoder = nn.Sequential(*layers)
        self.embed = nn.Linear(prev, config.dim)
        self.drop = nn.Dropout(config.dropout)
        self.classifier = nn.Linear(config.dim, config.num_classes)

    @property
    def dim(self):
        return self.config.dim

    def extract_frame_features(self, clip: torch.Tensor) -> torch.Tensor:
        """(..., T, C, H, W) pixels -> (..., T, d) frame features."""
        cfg = self.config
        expected = (cfg.in_channels, cfg.height, cfg.width)
        if clip.dim() < 4 or tuple(clip.shape[-3:]) != expected:
            raise ShapeError(f"frames must have shape (..., T, {expected}), got {tuple(clip.shape)}")
        lead = clip.shape[:-3]
        flat = clip.reshape(-1, *expected)
        feats = self.embed(self.encoder(flat))
        return feats.reshape(*lead, cfg.dim)

    def aggregate(self, frames: torch.Tensor) -> torch.Tensor:
        return aggregate(frames)

    def logits(self, feature: torch.Tensor) -> torch.Tensor:
        if feature.shape[-1] != self.config.dim:
            raise ShapeError(f"feature length {feature.shape[-1]} != backbone dim {self.config.dim}")
        return self.classifier(self.drop(feature))

    def classify_id(self, feature: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(feature), dim=-1)

    def forward(self, clip):
        frames = self.extract_frame_features(clip)
        return frames, self.aggregate(frames)


def reference_backbone(config: BackboneConfig, seed: int | None = None) -> TinyVideoNet:
    if seed is not None:
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            return TinyVideoNet(config)
    return TinyVideoNet(config)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def save_backbone(model: TinyVideoNet, path):
    meta = {"dim": model.config.dim, "num_classes": model.config.num_classes,
            "config": model.config.to_dict(), "config_hash": model.config.digest()}
    torch.save({"state": model.state_dict(), "meta": meta}, Path(path))


def load_backbone(path) -> TinyVideoNet:
    blob = torch.load(Path(path), map_location="cpu", weights_only=True)
    model = TinyVideoNet(BackboneConfig.from_dict(blob["meta"]["config"]))
    model.load_state_dict(blob["state"])
    return model
